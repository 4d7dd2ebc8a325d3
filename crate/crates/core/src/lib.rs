//! Hybrid learning: learned predictive models combined with Gaussian
//! experience-based policies through hybrid control theory.
//!
//! * [`hybrid_det`]: adjoint-based controller (mode insertion gradient and
//!   the closed-form optimal action).
//! * [`hybrid_stoch`]: sampling-based controller (importance-weighted update
//!   of a nominal action sequence).
//! * [`learner`]: outer training loops, experience-based and imitation.
//! * [`oracle`]: independent reference computations used by the tests.

pub mod buffer;
pub mod diffnet;
pub mod env;
pub mod error;
pub mod hybrid_det;
pub mod hybrid_stoch;
pub mod learner;
pub mod models;
pub mod oracle;
pub mod policy;

pub use buffer::{ReplayBuffer, Transition};
pub use env::{EnvId, EnvSpec, EnvState};
pub use error::{Error, Result};
pub use policy::PolicyNet;
