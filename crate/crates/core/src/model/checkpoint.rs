//! Self-describing JSON checkpoints.
//!
//! Layout:
//!
//! ```json
//! {"format": "wsphen-checkpoint/1",
//!  "config": { ...ModelConfig... },
//!  "tensors": [{"name": "proj.weight", "shape": [16, 16], "values": [...]}, ...]}
//! ```
//!
//! Tensor names, in file order: `proj.weight`, `proj.bias`, `freq.w1`,
//! `freq.b1`, `freq.w2`, `freq.b2`; then per layer `l` (0-based)
//! `layers.{l}.attn.{w_q,w_k,w_v,w_out}`, `layers.{l}.norm1.{gain,bias}`,
//! `layers.{l}.ffn.{w1,b1,w2,b2}`, `layers.{l}.norm2.{gain,bias}`; then
//! `head.weight`, `head.bias`. Matrices are `[out, in]`, values row-major.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_shapes, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_FORMAT: &str = "wsphen-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, params: &ModelParams) -> Self {
        let tensors = params
            .names()
            .into_iter()
            .zip(params.leaves())
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: config.clone(),
            tensors,
        }
    }

    /// Rebuilds parameters, checking every name and shape against the
    /// config. Tensor order in the file does not matter.
    pub fn params(&self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        self.config.validate()?;
        let mut by_name: BTreeMap<&str, &NamedTensor> = BTreeMap::new();
        for t in &self.tensors {
            if by_name.insert(&t.name, t).is_some() {
                return Err(Error::Validation(format!("duplicate tensor {}", t.name)));
            }
        }
        let shapes = param_shapes(&self.config);
        if by_name.len() != shapes.names().len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, config needs {}",
                by_name.len(),
                shapes.names().len()
            )));
        }
        shapes.try_map(|name, shape| {
            let t = by_name
                .get(name)
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {name}")))?;
            if &t.shape != shape {
                return Err(Error::Validation(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            let tensor = Tensor::new(t.shape.clone(), t.values.clone())?;
            if !tensor.is_finite() {
                return Err(Error::Validation(format!("tensor {name} has non-finite values")));
            }
            Ok(tensor)
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Validation(format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })
    }
}
