//! Fixed-shape learned models with analytic derivatives.
//!
//! Everything here is hand-differentiated: forward passes, input Jacobians
//! for the adjoint, parameter gradients of the training losses, and the Adam
//! update that consumes them.

mod adam;
mod checkpoint;
mod dynamics;
mod params;
mod reward;

use std::collections::BTreeMap;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, MODEL_LEARNING_RATE};
pub use checkpoint::{Checkpoint, CheckpointDoc, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use dynamics::{DynNet, DYN_HIDDEN};
pub use params::{Activation, Parameters, TensorRef};
pub use reward::{RewardNet, REWARD_HIDDEN, REWARD_TD_DISCOUNT};

pub(crate) use checkpoint::{attr_str, attr_usize};
pub(crate) use params::{uniform_matrix, uniform_vector};

use crate::error::{Error, Result};

impl Checkpoint for DynNet {
    const KIND: &'static str = "dynamics";

    fn attributes(&self) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::from([
            ("state_dim".to_string(), self.state_dim().into()),
            ("action_dim".to_string(), self.action_dim().into()),
            ("hidden".to_string(), self.hidden().into()),
            ("activation".to_string(), self.activation.name().into()),
        ])
    }

    fn skeleton(attrs: &BTreeMap<String, serde_json::Value>) -> Result<Self> {
        let activation = match attr_str(attrs, "activation")? {
            "sin" => Activation::Sin,
            "relu" => Activation::Relu,
            other => return Err(Error::Checkpoint(format!("unknown activation `{other}`"))),
        };
        Ok(DynNet::zeros(
            attr_usize(attrs, "state_dim")?,
            attr_usize(attrs, "action_dim")?,
            attr_usize(attrs, "hidden")?,
            activation,
        ))
    }
}

impl Checkpoint for RewardNet {
    const KIND: &'static str = "reward";

    fn attributes(&self) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::from([
            ("state_dim".to_string(), self.state_dim().into()),
            ("action_dim".to_string(), self.action_dim().into()),
            ("hidden".to_string(), self.hidden().into()),
        ])
    }

    fn skeleton(attrs: &BTreeMap<String, serde_json::Value>) -> Result<Self> {
        Ok(RewardNet::zeros(
            attr_usize(attrs, "state_dim")?,
            attr_usize(attrs, "action_dim")?,
            attr_usize(attrs, "hidden")?,
        ))
    }
}
