use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::losses::OutputDistillMode;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Finetune,
    FeatureExtraction,
    Independent,
    Joint,
    Ewc,
    Lwf,
    Dk,
    Er,
    ErGs,
    ErLs,
    ErGsLs,
}

/// What a strategy switches on during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recipe {
    pub replay: bool,
    pub local: bool,
    pub global: bool,
    pub ewc: bool,
    pub output_distill: Option<OutputDistillMode>,
    /// Only the head trains after the first task.
    pub freeze_body: bool,
    /// A fresh model per task.
    pub independent: bool,
    /// Trains on the union of all tasks seen so far.
    pub joint: bool,
}

impl Strategy {
    pub const ALL: [Strategy; 11] = [
        Strategy::Finetune,
        Strategy::FeatureExtraction,
        Strategy::Independent,
        Strategy::Joint,
        Strategy::Ewc,
        Strategy::Lwf,
        Strategy::Dk,
        Strategy::Er,
        Strategy::ErGs,
        Strategy::ErLs,
        Strategy::ErGsLs,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Strategy::Finetune => "finetune",
            Strategy::FeatureExtraction => "feature_extraction",
            Strategy::Independent => "independent",
            Strategy::Joint => "joint",
            Strategy::Ewc => "ewc",
            Strategy::Lwf => "lwf",
            Strategy::Dk => "dk",
            Strategy::Er => "er",
            Strategy::ErGs => "er_gs",
            Strategy::ErLs => "er_ls",
            Strategy::ErGsLs => "er_gs_ls",
        }
    }

    pub fn recipe(self) -> Recipe {
        let base = Recipe {
            replay: false,
            local: false,
            global: false,
            ewc: false,
            output_distill: None,
            freeze_body: false,
            independent: false,
            joint: false,
        };
        let er = Recipe { replay: true, ..base };
        match self {
            Strategy::Finetune => base,
            Strategy::FeatureExtraction => Recipe { freeze_body: true, ..base },
            Strategy::Independent => Recipe { independent: true, ..base },
            Strategy::Joint => Recipe { joint: true, ..base },
            Strategy::Ewc => Recipe { ewc: true, ..base },
            Strategy::Lwf => Recipe {
                output_distill: Some(OutputDistillMode::Lwf),
                ..base
            },
            Strategy::Dk => Recipe {
                output_distill: Some(OutputDistillMode::Dk),
                ..base
            },
            Strategy::Er => er,
            Strategy::ErGs => Recipe { global: true, ..er },
            Strategy::ErLs => Recipe { local: true, ..er },
            Strategy::ErGsLs => Recipe {
                local: true,
                global: true,
                ..er
            },
        }
    }

    /// Whether the strategy keeps a replay buffer.
    pub fn uses_buffer(self) -> bool {
        self.recipe().replay
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.id() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}
