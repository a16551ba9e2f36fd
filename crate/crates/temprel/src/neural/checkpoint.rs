//! Model checkpoints: a JSON manifest with parameter names, shapes,
//! hyperparameters and seed, plus flat decimal value arrays. f64 values
//! round-trip bit-exactly through the shortest-decimal JSON encoding.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tape::ParamSet;
use super::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("checkpoint version {0} unsupported (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint kind {found:?}, expected {expected:?}")]
    Kind { expected: String, found: String },
    #[error("parameter {name:?}: shape {shape:?} does not match {len} values")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        len: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub hyper: serde_json::Value,
    pub params: Vec<CheckpointParam>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(
        kind: &str,
        seed: u64,
        hyper: serde_json::Value,
        ps: &ParamSet,
    ) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            seed,
            hyper,
            params: ps
                .params
                .iter()
                .map(|p| CheckpointParam {
                    name: p.name.clone(),
                    shape: p.value.shape.clone(),
                    data: p.value.data.clone(),
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<ParamSet, CheckpointError> {
        let mut ps = ParamSet::new();
        for p in &self.params {
            let expected: usize = p.shape.iter().product();
            if expected != p.data.len() {
                return Err(CheckpointError::ShapeMismatch {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    len: p.data.len(),
                });
            }
            ps.add(
                p.name.clone(),
                Tensor {
                    shape: p.shape.clone(),
                    data: p.data.clone(),
                },
            );
        }
        Ok(ps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let text =
            serde_json::to_string(self).map_err(|e| CheckpointError::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected_kind: &str) -> Result<Checkpoint, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ckpt.version));
        }
        if ckpt.kind != expected_kind {
            return Err(CheckpointError::Kind {
                expected: expected_kind.to_string(),
                found: ckpt.kind,
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ps = ParamSet::new();
        ps.add(
            "w",
            Tensor::vector(vec![0.1, -1.0 / 3.0, 2e-300, 123456.789, f64::MIN_POSITIVE]),
        );
        ps.add("b", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let ckpt = Checkpoint::from_params("test", 42, serde_json::json!({"h": 8}), &ps);
        let f = tempfile::NamedTempFile::new().unwrap();
        ckpt.save(f.path()).unwrap();
        let loaded = Checkpoint::load(f.path(), "test").unwrap();
        let ps2 = loaded.to_params().unwrap();
        for (a, b) in ps.params.iter().zip(&ps2.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape, b.value.shape);
            for (x, y) in a.value.data.iter().zip(&b.value.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(loaded.seed, 42);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let ps = ParamSet::new();
        let ckpt = Checkpoint::from_params("cse", 0, serde_json::Value::Null, &ps);
        let f = tempfile::NamedTempFile::new().unwrap();
        ckpt.save(f.path()).unwrap();
        assert!(matches!(
            Checkpoint::load(f.path(), "classifier"),
            Err(CheckpointError::Kind { .. })
        ));
    }
}
