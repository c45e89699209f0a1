use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GcnModel, ModelShape, Network, ParamId};
use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// Frozen parameter values saved after a task. Forward-only.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    task_id: usize,
    shape: ModelShape,
    tensors: Vec<Tensor2>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    task_id: usize,
    shape: ModelShape,
    tensors: Vec<NamedTensor>,
}

impl ModelCheckpoint {
    pub(crate) fn new(task_id: usize, shape: ModelShape, tensors: Vec<Tensor2>) -> Self {
        Self { task_id, shape, tensors }
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    /// A trainable copy with fresh gradients and zeroed optimizer moments.
    pub fn to_model(&self) -> GcnModel {
        GcnModel::from_parts(self.shape, self.tensors.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            task_id: self.task_id,
            shape: self.shape,
            tensors: ParamId::ALL
                .iter()
                .zip(&self.tensors)
                .map(|(id, t)| NamedTensor {
                    name: id.name().to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.tensors.len() != ParamId::ALL.len() {
            return Err(Error::invalid(format!("checkpoint holds {} tensors", file.tensors.len())));
        }
        let mut tensors = Vec::with_capacity(file.tensors.len());
        for (id, nt) in ParamId::ALL.iter().zip(file.tensors) {
            if nt.name != id.name() {
                return Err(Error::invalid(format!("expected tensor `{}`, found `{}`", id.name(), nt.name)));
            }
            tensors.push(Tensor2::from_vec(nt.rows, nt.cols, nt.data)?);
        }
        let s = file.shape;
        let h = s.hidden;
        let expected = [
            (s.input_dim, h),
            (1, h),
            (h, h),
            (h, h),
            (h, h),
            (h, 1),
            (2 * h, h),
            (1, h),
            (h, s.output_width),
            (1, s.output_width),
        ];
        for ((id, t), want) in ParamId::ALL.iter().zip(&tensors).zip(expected) {
            if t.shape() != want {
                return Err(Error::shape("ModelCheckpoint::from_json", format!("{} {:?}", id.name(), want), format!("{:?}", t.shape())));
            }
        }
        Ok(Self {
            task_id: file.task_id,
            shape: file.shape,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Network for ModelCheckpoint {
    fn shape(&self) -> ModelShape {
        self.shape
    }

    fn tensor(&self, id: ParamId) -> &Tensor2 {
        &self.tensors[id.index()]
    }
}
