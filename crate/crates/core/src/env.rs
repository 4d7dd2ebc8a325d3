//! Swingup environments with analytic physics.
//!
//! Both tasks integrate with semi-implicit Euler (velocity first, then
//! position) and report observations with angles encoded as `(cos, sin)`
//! pairs. Rewards are evaluated on the pre-step state and the clipped action.
//!
//! Pendulum (rod pendulum, upright is `theta = 0`):
//!
//! ```text
//! theta_ddot = 3 g / (2 l) * sin(theta) + 3 / (m l^2) * u
//! reward     = -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2)
//! obs        = (cos theta, sin theta, theta_dot)
//! ```
//!
//! Cartpole (pole upright is `theta = 0`, force on the cart):
//!
//! ```text
//! tmp        = (F + m_p l theta_dot^2 sin theta) / (m_c + m_p)
//! theta_ddot = (g sin theta - cos theta * tmp) / (l (4/3 - m_p cos^2 theta / (m_c + m_p)))
//! x_ddot     = tmp - m_p l theta_ddot cos theta / (m_c + m_p)
//! reward     = cos theta - 0.01 x^2
//! obs        = (x, x_dot, cos theta, sin theta, theta_dot)
//! ```

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const PENDULUM_GRAVITY: f64 = 10.0;
pub const PENDULUM_MASS: f64 = 1.0;
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;

pub const CARTPOLE_GRAVITY: f64 = 9.8;
pub const CARTPOLE_CART_MASS: f64 = 1.0;
pub const CARTPOLE_POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const CARTPOLE_HALF_LENGTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    Pendulum,
    Cartpole,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::Pendulum => "pendulum",
            EnvId::Cartpole => "cartpole",
        }
    }
}

impl std::str::FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvId::Pendulum),
            "cartpole" => Ok(EnvId::Cartpole),
            other => Err(Error::InvalidArgument(format!(
                "unknown environment `{other}` (expected pendulum or cartpole)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub episode_len: usize,
    /// Half-width of the uniform perturbation applied to the start angle.
    pub init_perturbation: f64,
    /// Pendulum only: clip `|theta_dot|` to [`PENDULUM_MAX_SPEED`]. Turning it
    /// off gives the conservative system used for energy checks.
    pub clip_speed: bool,
}

impl EnvSpec {
    pub fn pendulum() -> Self {
        EnvSpec {
            env_id: EnvId::Pendulum,
            state_dim: 3,
            action_dim: 1,
            dt: 0.05,
            action_low: vec![-2.0],
            action_high: vec![2.0],
            episode_len: 200,
            init_perturbation: 0.05,
            clip_speed: true,
        }
    }

    pub fn cartpole() -> Self {
        EnvSpec {
            env_id: EnvId::Cartpole,
            state_dim: 5,
            action_dim: 1,
            dt: 0.02,
            action_low: vec![-10.0],
            action_high: vec![10.0],
            episode_len: 200,
            init_perturbation: 0.05,
            clip_speed: true,
        }
    }

    pub fn for_id(id: EnvId) -> Self {
        match id {
            EnvId::Pendulum => Self::pendulum(),
            EnvId::Cartpole => Self::cartpole(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.env_id {
            EnvId::Pendulum => (3, 1),
            EnvId::Cartpole => (5, 1),
        };
        check_dim("state_dim", expected.0, self.state_dim)?;
        check_dim("action_dim", expected.1, self.action_dim)?;
        check_dim("action_low", self.action_dim, self.action_low.len())?;
        check_dim("action_high", self.action_dim, self.action_high.len())?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.episode_len == 0 {
            return Err(Error::InvalidArgument("episode_len must be positive".into()));
        }
        if self
            .action_low
            .iter()
            .zip(&self.action_high)
            .any(|(lo, hi)| !(lo < hi))
        {
            return Err(Error::InvalidArgument(
                "action_low must be strictly below action_high".into(),
            ));
        }
        if !(self.init_perturbation >= 0.0) {
            return Err(Error::InvalidArgument(
                "init_perturbation must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Clips `action` element-wise into the action box.
    pub fn clip_action(&self, action: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            action.len(),
            action
                .iter()
                .zip(self.action_low.iter().zip(&self.action_high))
                .map(|(a, (lo, hi))| a.clamp(*lo, *hi)),
        )
    }

    /// Half of the action range per dimension.
    pub fn action_half_range(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.action_dim,
            self.action_low
                .iter()
                .zip(&self.action_high)
                .map(|(lo, hi)| 0.5 * (hi - lo)),
        )
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        PI
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Physical {
    Pendulum { theta: f64, theta_dot: f64 },
    Cartpole { x: f64, x_dot: f64, theta: f64, theta_dot: f64 },
}

#[derive(Debug, Clone)]
pub struct EnvState {
    spec: EnvSpec,
    phys: Physical,
    rng: ChaCha8Rng,
}

/// Starts a new episode. The pole (or pendulum) hangs down with the start
/// angle perturbed by `U(-p, p)`, `p = spec.init_perturbation`.
pub fn reset(spec: &EnvSpec, seed: u64) -> (EnvState, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.init_perturbation;
    let delta = if p > 0.0 { rng.random_range(-p..=p) } else { 0.0 };
    let theta = wrap_angle(PI + delta);
    let phys = match spec.env_id {
        EnvId::Pendulum => Physical::Pendulum { theta, theta_dot: 0.0 },
        EnvId::Cartpole => Physical::Cartpole {
            x: 0.0,
            x_dot: 0.0,
            theta,
            theta_dot: 0.0,
        },
    };
    let state = EnvState {
        spec: spec.clone(),
        phys,
        rng,
    };
    let obs = state.observation();
    (state, obs)
}

impl EnvState {
    /// Builds a state at explicit physical coordinates (angles are wrapped).
    pub fn from_physical(spec: &EnvSpec, phys: Physical, seed: u64) -> Result<Self> {
        let phys = match (spec.env_id, phys) {
            (EnvId::Pendulum, Physical::Pendulum { theta, theta_dot }) => Physical::Pendulum {
                theta: wrap_angle(theta),
                theta_dot,
            },
            (
                EnvId::Cartpole,
                Physical::Cartpole {
                    x,
                    x_dot,
                    theta,
                    theta_dot,
                },
            ) => Physical::Cartpole {
                x,
                x_dot,
                theta: wrap_angle(theta),
                theta_dot,
            },
            _ => {
                return Err(Error::InvalidArgument(
                    "physical coordinates do not match the environment".into(),
                ))
            }
        };
        Ok(EnvState {
            spec: spec.clone(),
            phys,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn physical(&self) -> Physical {
        self.phys
    }

    /// Generator carried with the state; the dynamics themselves are
    /// deterministic and never draw from it.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn observation(&self) -> DVector<f64> {
        match self.phys {
            Physical::Pendulum { theta, theta_dot } => {
                DVector::from_vec(vec![theta.cos(), theta.sin(), theta_dot])
            }
            Physical::Cartpole {
                x,
                x_dot,
                theta,
                theta_dot,
            } => DVector::from_vec(vec![x, x_dot, theta.cos(), theta.sin(), theta_dot]),
        }
    }

    /// Reward of taking the (already clipped) `u` from the current state.
    fn reward(&self, u: f64) -> f64 {
        match self.phys {
            Physical::Pendulum { theta, theta_dot } => {
                let t = wrap_angle(theta);
                -(t * t + 0.1 * theta_dot * theta_dot + 0.001 * u * u)
            }
            Physical::Cartpole { x, theta, .. } => theta.cos() - 0.01 * x * x,
        }
    }

    /// Advances one step of `spec.dt`. Returns the next observation and the
    /// reward of the pre-step state under the clipped action.
    pub fn step(&mut self, action: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        check_dim("action", self.spec.action_dim, action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("environment action"));
        }
        let u = self.spec.clip_action(action)[0];
        let reward = self.reward(u);
        let dt = self.spec.dt;
        self.phys = match self.phys {
            Physical::Pendulum { theta, theta_dot } => {
                let (g, m, l) = (PENDULUM_GRAVITY, PENDULUM_MASS, PENDULUM_LENGTH);
                let acc = 3.0 * g / (2.0 * l) * theta.sin() + 3.0 / (m * l * l) * u;
                let mut theta_dot = theta_dot + acc * dt;
                if self.spec.clip_speed {
                    theta_dot = theta_dot.clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
                }
                Physical::Pendulum {
                    theta: wrap_angle(theta + theta_dot * dt),
                    theta_dot,
                }
            }
            Physical::Cartpole {
                x,
                x_dot,
                theta,
                theta_dot,
            } => {
                let (g, mc, mp, l) = (
                    CARTPOLE_GRAVITY,
                    CARTPOLE_CART_MASS,
                    CARTPOLE_POLE_MASS,
                    CARTPOLE_HALF_LENGTH,
                );
                let total = mc + mp;
                let (sin, cos) = theta.sin_cos();
                let tmp = (u + mp * l * theta_dot * theta_dot * sin) / total;
                let theta_acc = (g * sin - cos * tmp) / (l * (4.0 / 3.0 - mp * cos * cos / total));
                let x_acc = tmp - mp * l * theta_acc * cos / total;
                let x_dot = x_dot + x_acc * dt;
                let theta_dot = theta_dot + theta_acc * dt;
                Physical::Cartpole {
                    x: x + x_dot * dt,
                    x_dot,
                    theta: wrap_angle(theta + theta_dot * dt),
                    theta_dot,
                }
            }
        };
        Ok((self.observation(), reward))
    }

    /// Mechanical energy of the pendulum rod, zero potential at the pivot.
    pub fn pendulum_energy(&self) -> Option<f64> {
        match self.phys {
            Physical::Pendulum { theta, theta_dot } => {
                let (g, m, l) = (PENDULUM_GRAVITY, PENDULUM_MASS, PENDULUM_LENGTH);
                let inertia = m * l * l / 3.0;
                Some(0.5 * inertia * theta_dot * theta_dot + m * g * 0.5 * l * theta.cos())
            }
            Physical::Cartpole { .. } => None,
        }
    }
}

/// Gains of the scripted pendulum swingup expert.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertGains {
    /// Energy pumping gain.
    pub energy: f64,
    pub kp: f64,
    pub kd: f64,
    /// Below this `|wrap(theta)|` the PD stabilizer takes over.
    pub catch_angle: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        ExpertGains {
            energy: 0.1,
            kp: 20.0,
            kd: 5.0,
            catch_angle: 1.3,
        }
    }
}

/// Energy-shaping swingup with a PD catch near the top.
///
/// With `E = theta_dot^2 / 2 + (3g / 2l)(cos theta - 1)` (zero at upright
/// rest) the torque changes energy at rate `3 u theta_dot / (m l^2)`, so
///
/// ```text
/// u = -kp wrap(theta) - kd theta_dot          if |wrap(theta)| < catch_angle
/// u = -k_e E sgn(theta_dot)                   otherwise, sgn(0) = +1
/// ```
///
/// clipped to the action bounds.
pub fn expert_action(state: &EnvState) -> Result<DVector<f64>> {
    expert_action_with(state, &ExpertGains::default())
}

pub fn expert_action_with(state: &EnvState, gains: &ExpertGains) -> Result<DVector<f64>> {
    let Physical::Pendulum { theta, theta_dot } = state.phys else {
        return Err(Error::Unsupported {
            op: "expert_action",
            env: state.spec.env_id.name().to_string(),
        });
    };
    let t = wrap_angle(theta);
    let u = if t.abs() < gains.catch_angle {
        -gains.kp * t - gains.kd * theta_dot
    } else {
        let w = 3.0 * PENDULUM_GRAVITY / (2.0 * PENDULUM_LENGTH);
        let energy = 0.5 * theta_dot * theta_dot + w * (theta.cos() - 1.0);
        let dir = if theta_dot >= 0.0 { 1.0 } else { -1.0 };
        -gains.energy * energy * dir
    };
    Ok(state.spec.clip_action(&DVector::from_element(1, u)))
}
