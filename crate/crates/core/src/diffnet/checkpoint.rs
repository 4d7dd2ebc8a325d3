//! JSON checkpoints of network parameters.
//!
//! Layout (one JSON object per network):
//!
//! ```json
//! {
//!   "format": "hybridctl-checkpoint",
//!   "version": 1,
//!   "kind": "dynamics" | "reward" | "policy",
//!   "attributes": { "state_dim": 3, "action_dim": 1, "hidden": 200, "activation": "sin" },
//!   "tensors": [ { "name": "w1", "shape": [200, 4], "data": [ ... ] }, ... ]
//! }
//! ```
//!
//! `data` is row-major. Numbers are written in shortest round-trip decimal
//! form, so a save/load cycle reproduces every `f64` bit for bit. Tensors
//! appear in the order of [`Parameters::tensors`].

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::Parameters;

pub const CHECKPOINT_FORMAT: &str = "hybridctl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub attributes: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorRecord>,
}

/// Networks that can be written to and rebuilt from a [`CheckpointDoc`].
pub trait Checkpoint: Parameters + Sized {
    const KIND: &'static str;

    fn attributes(&self) -> BTreeMap<String, serde_json::Value>;

    /// Allocates a network of the right shape for the given attributes; the
    /// tensor values are overwritten afterwards.
    fn skeleton(attributes: &BTreeMap<String, serde_json::Value>) -> Result<Self>;

    fn to_checkpoint(&self) -> CheckpointDoc {
        let tensors = self
            .tensors()
            .into_iter()
            .map(|(name, (rows, cols), data)| {
                let m = DMatrix::from_column_slice(rows, cols, data);
                TensorRecord {
                    name: name.to_string(),
                    shape: [rows, cols],
                    data: m.transpose().as_slice().to_vec(),
                }
            })
            .collect();
        CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind: Self::KIND.to_string(),
            attributes: self.attributes(),
            tensors,
        }
    }

    fn from_checkpoint(doc: &CheckpointDoc) -> Result<Self> {
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                doc.format, doc.version
            )));
        }
        if doc.kind != Self::KIND {
            return Err(Error::Checkpoint(format!(
                "expected kind `{}`, found `{}`",
                Self::KIND,
                doc.kind
            )));
        }
        let mut net = Self::skeleton(&doc.attributes)?;
        let expected: Vec<(&'static str, (usize, usize))> =
            net.tensors().iter().map(|t| (t.0, t.1)).collect();
        if expected.len() != doc.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                doc.tensors.len()
            )));
        }
        let mut flat = Vec::with_capacity(net.num_params());
        for ((name, (rows, cols)), rec) in expected.iter().zip(&doc.tensors) {
            if rec.name != *name || rec.shape != [*rows, *cols] || rec.data.len() != rows * cols {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` [{}, {}]",
                    rec.name, rec.shape, name, rows, cols
                )));
            }
            let m = DMatrix::from_row_slice(*rows, *cols, &rec.data);
            flat.extend_from_slice(m.as_slice());
        }
        net.set_flat(&flat);
        Ok(net)
    }

    fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: CheckpointDoc = serde_json::from_str(&text)?;
        Self::from_checkpoint(&doc)
    }
}

pub(crate) fn attr_usize(attrs: &BTreeMap<String, serde_json::Value>, key: &str) -> Result<usize> {
    attrs
        .get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| Error::Checkpoint(format!("missing integer attribute `{key}`")))
}

pub(crate) fn attr_str<'a>(attrs: &'a BTreeMap<String, serde_json::Value>, key: &str) -> Result<&'a str> {
    attrs
        .get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("missing string attribute `{key}`")))
}
