use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize};

use super::synthetic::{generate_synthetic, SyntheticSpec};
use crate::continual::{run_stream, Strategy, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{io, split_class_incremental, Graph, PreparedGraph, Scenario, SplitOptions, TaskStream};

/// One experiment: a dataset, a task split, strategies, seeds and training
/// hyper-parameters. Training fields sit at the top level of the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// A graphcl-v1 file; when absent the synthetic spec is used.
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// Required with `dataset`; defaults to the synthetic kind otherwise.
    pub scenario: Option<Scenario>,
    pub classes_per_task: usize,
    #[serde(alias = "strategy", deserialize_with = "one_or_many")]
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub train: TrainConfig,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Strategy>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Strategy),
        Many(Vec<Strategy>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            synthetic: None,
            scenario: None,
            classes_per_task: 2,
            strategies: vec![Strategy::Finetune],
            seeds: vec![0],
            output_dir: PathBuf::from("results"),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("at least one strategy is required"));
        }
        if self.classes_per_task == 0 {
            return Err(Error::invalid("classes_per_task must be at least 1"));
        }
        if self.dataset.is_some() && self.synthetic.is_some() {
            return Err(Error::invalid("give either a dataset path or a synthetic spec, not both"));
        }
        self.scenario()?;
        self.train.validate()
    }

    pub fn scenario(&self) -> Result<Scenario> {
        match (&self.dataset, &self.synthetic, self.scenario) {
            (_, Some(spec), Some(s)) if s != spec.kind => Err(Error::invalid(format!(
                "scenario {s} disagrees with synthetic kind {}",
                spec.kind
            ))),
            (_, _, Some(s)) => Ok(s),
            (Some(_), None, None) => Err(Error::invalid("a dataset file needs an explicit scenario")),
            (_, Some(spec), None) => Ok(spec.kind),
            (None, None, None) => Ok(Scenario::Gugc),
        }
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        Ok(match &self.synthetic {
            Some(s) => s.clone(),
            None => SyntheticSpec::for_kind(self.scenario()?),
        })
    }
}

/// A dataset ready for experiments.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: String,
    pub scenario: Scenario,
    pub graphs: Vec<Graph>,
    pub prepared: Vec<Arc<PreparedGraph>>,
}

impl LoadedDataset {
    pub fn new(name: impl Into<String>, scenario: Scenario, graphs: Vec<Graph>) -> Self {
        let prepared = graphs.iter().map(|g| Arc::new(PreparedGraph::from_graph(g.clone()))).collect();
        Self {
            name: name.into(),
            scenario,
            graphs,
            prepared,
        }
    }

    /// The class-incremental stream for one split seed, with OTHER
    /// relabelling for graph-unit node classification.
    pub fn stream(&self, classes_per_task: usize, seed: u64) -> Result<TaskStream> {
        let opts = SplitOptions {
            seed,
            ..SplitOptions::default()
        };
        let stream = split_class_incremental(&self.graphs, classes_per_task, self.scenario, &opts)?;
        if self.scenario == Scenario::Gunc {
            stream.with_other(&self.graphs)
        } else {
            Ok(stream)
        }
    }
}

/// Reads a graphcl-v1 file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Graph>> {
    io::load_dataset(path)
}

pub fn load_experiment_data(config: &ExperimentConfig) -> Result<LoadedDataset> {
    let scenario = config.scenario()?;
    match &config.dataset {
        Some(path) => {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".to_string());
            Ok(LoadedDataset::new(name, scenario, load_dataset(path)?))
        }
        None => {
            let spec = config.synthetic_spec()?;
            Ok(LoadedDataset::new(spec.name(), scenario, generate_synthetic(&spec)?))
        }
    }
}

/// Per-run result file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub scenario: Scenario,
    pub strategy: Strategy,
    pub seed: u64,
    #[serde(rename = "T")]
    pub tasks: usize,
    pub classes_per_task: usize,
    /// Row-major lower triangle of the accuracy matrix.
    pub matrix: Vec<f64>,
    pub ap: f64,
    /// `None` where forgetting does not apply.
    pub af: Option<f64>,
    pub steps: u64,
}

impl RunRecord {
    pub fn file_name(&self) -> String {
        format!("{}_seed{}.json", self.strategy, self.seed)
    }
}

/// Runs one strategy on one seed of a loaded dataset.
pub fn run_one(
    data: &LoadedDataset,
    classes_per_task: usize,
    strategy: Strategy,
    train: &TrainConfig,
    seed: u64,
) -> Result<RunRecord> {
    let stream = data.stream(classes_per_task, seed)?;
    let outcome = run_stream(&stream, &data.prepared, strategy, train, seed)?;
    Ok(RunRecord {
        dataset: data.name.clone(),
        scenario: data.scenario,
        strategy,
        seed,
        tasks: stream.len(),
        classes_per_task,
        matrix: outcome.matrix.lower_triangle(),
        ap: outcome.ap()?,
        af: outcome.af()?,
        steps: outcome.steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub strategy: Strategy,
    pub seed: u64,
    pub status: RunStatus,
    pub file: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub runs: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub manifest: Manifest,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.manifest.runs.iter().filter(|r| r.status == RunStatus::Failed).count()
    }
}

/// Runs every strategy and seed of `config`, writing
/// `runs/<strategy>_seed<seed>.json`, `summary.csv` and `manifest.json` under
/// the output directory. A failed run is recorded in the manifest and the
/// remaining runs still execute.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let data = load_experiment_data(config)?;
    let runs_dir = config.output_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;

    let mut records = Vec::new();
    let mut entries = Vec::new();
    for &strategy in &config.strategies {
        for &seed in &config.seeds {
            let started = Instant::now();
            match run_one(&data, config.classes_per_task, strategy, &config.train, seed) {
                Ok(record) => {
                    let file = record.file_name();
                    fs::write(runs_dir.join(&file), serde_json::to_string_pretty(&record)? + "\n")?;
                    log::info!(
                        "{strategy} seed {seed}: AP {:.1} in {} steps, {:.1}s",
                        record.ap * 100.0,
                        record.steps,
                        started.elapsed().as_secs_f64()
                    );
                    entries.push(ManifestEntry {
                        strategy,
                        seed,
                        status: RunStatus::Ok,
                        file: Some(format!("runs/{file}")),
                        error: None,
                    });
                    records.push(record);
                }
                Err(e) => {
                    log::error!("{strategy} seed {seed} failed: {e}");
                    entries.push(ManifestEntry {
                        strategy,
                        seed,
                        status: RunStatus::Failed,
                        file: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }

    let summaries = super::summarize(&records)?;
    fs::write(config.output_dir.join("summary.csv"), super::summary_csv(&summaries)?)?;
    let manifest = Manifest {
        config: config.clone(),
        runs: entries,
    };
    fs::write(
        config.output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(ExperimentReport { records, manifest })
}

/// Reads every per-run record under `dir/runs`, sorted by strategy and seed.
pub fn read_run_records(dir: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let runs = dir.as_ref().join("runs");
    let mut records = Vec::new();
    for entry in fs::read_dir(&runs)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            records.push(serde_json::from_str::<RunRecord>(&fs::read_to_string(&path)?)?);
        }
    }
    records.sort_by_key(|r| (r.strategy, r.seed));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_field_accepts_one_or_many() {
        let one = ExperimentConfig::from_json(r#"{"strategy": "er_gs_ls", "epochs": 3}"#).unwrap();
        assert_eq!(one.strategies, vec![Strategy::ErGsLs]);
        assert_eq!(one.train.epochs, 3);
        let many = ExperimentConfig::from_json(r#"{"strategies": ["er", "joint"]}"#).unwrap();
        assert_eq!(many.strategies, vec![Strategy::Er, Strategy::Joint]);
        assert!(ExperimentConfig::from_json(r#"{"strategy": "gem"}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig {
            synthetic: Some(SyntheticSpec::for_kind(Scenario::Nunc)),
            seeds: vec![1, 2],
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(cfg.scenario().unwrap(), Scenario::Nunc);
    }

    #[test]
    fn validation_errors() {
        let bad_seeds = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(bad_seeds.validate().is_err());
        let mut bad_weight = ExperimentConfig::default();
        bad_weight.train.alpha = 1.5;
        assert!(bad_weight.validate().is_err());
        let no_scenario = ExperimentConfig {
            dataset: Some("x.jsonl".into()),
            ..ExperimentConfig::default()
        };
        assert!(no_scenario.validate().is_err());
        let clash = ExperimentConfig {
            scenario: Some(Scenario::Gunc),
            synthetic: Some(SyntheticSpec::for_kind(Scenario::Nunc)),
            ..ExperimentConfig::default()
        };
        assert!(clash.validate().is_err());
    }
}
