//! Deterministic hybrid controller.
//!
//! Each control step rolls the learned model forward under the policy mean,
//! integrates the adjoint backwards from `rho(t_H) = 0`,
//!
//! ```text
//! rho_dot = -dr/ds - (df/ds + df/da dmu/ds)' rho
//! rho(tau_{i-1}) = rho(tau_i) - rho_dot(tau_i) dt
//! ```
//!
//! and applies the closed-form improvement over the policy mean
//!
//! ```text
//! a* = Sigma(s) h(s)' rho + mu(s) + eps z,     h(s) = df/da at (s, mu(s))
//! ```
//!
//! Inserting `a*` for an infinitesimal duration changes the objective at the
//! rate `rho' h Sigma h' rho >= 0` (the mode insertion gradient).

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::models::{Dynamics, GaussianPolicy, RewardModel};

/// Per-interaction decay of the exploration noise.
pub const EXPLORATION_DECAY: f64 = 0.999;

/// A forward rollout of the model under the policy mean.
///
/// Index `i` runs over `0..=H`; every field has `H + 1` entries and
/// `states[i + 1] = states[i] + f(states[i], actions[i]) * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub rewards: Vec<f64>,
    pub df_ds: Vec<DMatrix<f64>>,
    pub df_da: Vec<DMatrix<f64>>,
    pub dmu_ds: Vec<DMatrix<f64>>,
    pub dr_ds: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|i| i as f64 * self.dt).collect()
    }

    /// Predicted objective `sum_{i < H} r_i dt`.
    pub fn objective(&self) -> f64 {
        self.rewards[..self.horizon()].iter().sum::<f64>() * self.dt
    }
}

/// `rho[i]` is the adjoint at `tau_i`, `i = 0..=H`, with `rho[H] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrace {
    pub rho: Vec<DVector<f64>>,
}

impl AdjointTrace {
    pub fn terminal_index(&self) -> usize {
        self.rho.len() - 1
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.rho[0]
    }
}

/// Euler rollout of `H` steps under `a = mu(s)`, caching every Jacobian the
/// adjoint needs at each of the `H + 1` states.
pub fn rollout<F, R, P>(
    model: &F,
    reward: &R,
    policy: &P,
    s0: &DVector<f64>,
    horizon_steps: usize,
    dt: f64,
) -> Result<Trajectory>
where
    F: Dynamics + ?Sized,
    R: RewardModel + ?Sized,
    P: GaussianPolicy + ?Sized,
{
    if horizon_steps == 0 {
        return Err(Error::InvalidArgument("horizon_steps must be at least 1".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    check_dim("rollout state", model.state_dim(), s0.len())?;
    let cap = horizon_steps + 1;
    let mut traj = Trajectory {
        dt,
        states: Vec::with_capacity(cap),
        actions: Vec::with_capacity(cap),
        rewards: Vec::with_capacity(cap),
        df_ds: Vec::with_capacity(cap),
        df_da: Vec::with_capacity(cap),
        dmu_ds: Vec::with_capacity(cap),
        dr_ds: Vec::with_capacity(cap),
    };
    let mut s = s0.clone();
    for i in 0..=horizon_steps {
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step: i });
        }
        let (mu, _) = policy.mean_var(&s)?;
        let (fs, fa) = model.jacobians(&s, &mu)?;
        traj.rewards.push(reward.reward(&s, &mu)?);
        traj.dr_ds.push(reward.grad_s(&s, &mu)?);
        traj.dmu_ds.push(policy.mean_jacobian(&s)?);
        traj.df_ds.push(fs);
        traj.df_da.push(fa);
        let next = if i < horizon_steps {
            Some(&s + model.rate(&s, &mu)? * dt)
        } else {
            None
        };
        traj.actions.push(mu);
        traj.states.push(s);
        match next {
            Some(n) => s = n,
            None => break,
        }
    }
    Ok(traj)
}

/// Backward Euler sweep of the adjoint equation over a cached trajectory.
pub fn backward_adjoint(traj: &Trajectory) -> Result<AdjointTrace> {
    let len = traj.states.len();
    if len == 0 {
        return Err(Error::EmptyBatch("trajectory"));
    }
    let cached = [traj.df_ds.len(), traj.df_da.len(), traj.dmu_ds.len(), traj.dr_ds.len()];
    if let Some(&have) = cached.iter().find(|&&c| c != len) {
        return Err(Error::MissingJacobians(have.min(len)));
    }
    let n = traj.states[0].len();
    let mut rho = vec![DVector::zeros(n); len];
    for i in (1..len).rev() {
        let closed_loop = &traj.df_ds[i] + &traj.df_da[i] * &traj.dmu_ds[i];
        let rho_dot = -&traj.dr_ds[i] - closed_loop.tr_mul(&rho[i]);
        rho[i - 1] = &rho[i] - rho_dot * traj.dt;
        if rho[i - 1].iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("adjoint"));
        }
    }
    Ok(AdjointTrace { rho })
}

/// `rho' (f2 - f1)`: rate of change of the objective when `f2` replaces `f1`
/// for an infinitesimal duration.
pub fn mode_insertion_gradient(rho: &DVector<f64>, f1: &DVector<f64>, f2: &DVector<f64>) -> Result<f64> {
    check_dim("insertion f1", rho.len(), f1.len())?;
    check_dim("insertion f2", rho.len(), f2.len())?;
    Ok(rho.dot(&(f2 - f1)))
}

/// `0.999^t`.
pub fn exploration_scale(total_env_steps: u64) -> f64 {
    EXPLORATION_DECAY.powf(total_env_steps as f64)
}

/// The pieces of the optimal hybrid action at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridAction {
    /// `a*`, unclipped.
    pub action: DVector<f64>,
    pub mean: DVector<f64>,
    /// `Sigma h' rho`.
    pub correction: DVector<f64>,
    /// `rho' h Sigma h' rho`, the insertion gradient of the noise-free `a*`
    /// under the local affine model.
    pub insertion_gradient: f64,
}

/// `a* = Sigma(s) h(s)' rho + mu(s) + eps_scale * z`.
///
/// `z` is a standard-normal draw (ignored when `eps_scale` is zero).
pub fn hybrid_action<F, P>(
    s: &DVector<f64>,
    rho: &DVector<f64>,
    policy: &P,
    model: &F,
    eps_scale: f64,
    z: &DVector<f64>,
) -> Result<HybridAction>
where
    F: Dynamics + ?Sized,
    P: GaussianPolicy + ?Sized,
{
    check_dim("adjoint", model.state_dim(), rho.len())?;
    check_dim("exploration noise", policy.action_dim(), z.len())?;
    let (mu, var) = policy.mean_var(s)?;
    let (_, h) = model.jacobians(s, &mu)?;
    let h_rho = h.tr_mul(rho);
    let correction = var.component_mul(&h_rho);
    let insertion_gradient = h_rho.dot(&correction);
    let mut action = &mu + &correction;
    if eps_scale != 0.0 {
        action += z * eps_scale;
    }
    if action.iter().any(|x| !x.is_finite()) || !insertion_gradient.is_finite() {
        return Err(Error::NonFinite("hybrid action"));
    }
    Ok(HybridAction {
        action,
        mean: mu,
        correction,
        insertion_gradient,
    })
}

/// What the deterministic controller did at one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct DetDecision {
    /// Action to send to the environment (still unclipped).
    pub action: DVector<f64>,
    pub mean: DVector<f64>,
    /// `None` when planning fell back to the policy mean.
    pub insertion_gradient: Option<f64>,
    pub correction_norm: f64,
    pub fallback: bool,
}

/// One receding-horizon planning step.
///
/// `noise` is the exploration term already scaled (`eps(t) * z`). When the
/// model rollout or adjoint diverges the step falls back to
/// `mu(s) + noise`.
pub fn plan_step<F, R, P>(
    model: &F,
    reward: &R,
    policy: &P,
    s: &DVector<f64>,
    horizon_steps: usize,
    dt: f64,
    noise: &DVector<f64>,
) -> Result<DetDecision>
where
    F: Dynamics + ?Sized,
    R: RewardModel + ?Sized,
    P: GaussianPolicy + ?Sized,
{
    let planned = rollout(model, reward, policy, s, horizon_steps, dt)
        .and_then(|traj| backward_adjoint(&traj))
        .and_then(|adj| hybrid_action(s, adj.initial(), policy, model, 0.0, noise));
    match planned {
        Ok(h) => Ok(DetDecision {
            action: &h.action + noise,
            correction_norm: h.correction.norm(),
            insertion_gradient: Some(h.insertion_gradient),
            mean: h.mean,
            fallback: false,
        }),
        Err(Error::Diverged { .. }) | Err(Error::NonFinite(_)) => {
            log::debug!("planning diverged; falling back to the policy mean");
            let (mean, _) = policy.mean_var(s)?;
            Ok(DetDecision {
                action: &mean + noise,
                mean,
                insertion_gradient: None,
                correction_norm: 0.0,
                fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}
