//! Stochastic hybrid controller.
//!
//! `K` action sequences are drawn from the policy through the learned model.
//! Each sample gets, per step `tau`, the weight
//!
//! ```text
//! w_tau^k  proportional to  exp(J(v_tau^k) / temperature) p(v^k)
//! ```
//!
//! where `J(v_tau^k)` is the predicted reward summed from `tau` to the end of
//! the horizon and `p(v^k) = prod_t pi(v_t^k | s_t^k)` is the density of the
//! whole sampled sequence. The nominal sequence then moves to
//! `a*_tau = a_tau + sum_k w_tau^k (v_tau^k - a_tau)`.
//!
//! Weights are computed in log space with max subtraction. Each sample draws
//! its noise from its own stream derived from one seed, so results do not
//! depend on evaluation order.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::models::{Dynamics, GaussianPolicy, RewardModel};
use crate::policy::gaussian_log_density;

/// How sample actions are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingMode {
    /// `v ~ pi(. | s)` at each predicted state.
    Policy,
    /// `v = mu(s)`: the policy with its noise switched off. Log-densities
    /// are still evaluated under the policy.
    PolicyMean,
    /// `v = a_tau + std * z` around the nominal sequence, ignoring the
    /// policy. `log p` is taken as 0 for every sample, so weights depend on
    /// predicted reward alone. `std = 0` reproduces the nominal exactly.
    Nominal { std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub temperature: f64,
    /// `a_0 .. a_{H-1}`.
    pub nominal: Vec<DVector<f64>>,
    /// `actions[k][tau]`.
    pub actions: Vec<Vec<DVector<f64>>>,
    /// `states[k][tau]`, `tau = 0..=H` (truncated for diverged samples).
    pub states: Vec<Vec<DVector<f64>>>,
    /// `rewards[k][tau]`.
    pub rewards: Vec<Vec<f64>>,
    /// `cost_to_go[k][tau]`; empty until [`cost_to_go`] runs.
    pub cost_to_go: Vec<Vec<f64>>,
    pub log_p: Vec<f64>,
    /// `weights[tau][k]`; empty until [`importance_weights`] runs.
    pub weights: Vec<Vec<f64>>,
    pub diverged: Vec<bool>,
}

impl SampleBatch {
    pub fn samples(&self) -> usize {
        self.actions.len()
    }

    pub fn horizon(&self) -> usize {
        self.nominal.len()
    }

    /// `v_tau^k - a_tau`.
    pub fn delta(&self, k: usize, tau: usize) -> DVector<f64> {
        &self.actions[k][tau] - &self.nominal[tau]
    }

    /// Builds a batch from explicit samples, for tests and offline analysis.
    pub fn from_parts(
        temperature: f64,
        nominal: Vec<DVector<f64>>,
        actions: Vec<Vec<DVector<f64>>>,
        rewards: Vec<Vec<f64>>,
        log_p: Vec<f64>,
    ) -> Result<Self> {
        let k = actions.len();
        check_dim("sample rewards", k, rewards.len())?;
        check_dim("sample log densities", k, log_p.len())?;
        for (acts, rews) in actions.iter().zip(&rewards) {
            check_dim("sample actions", nominal.len(), acts.len())?;
            check_dim("sample rewards", nominal.len(), rews.len())?;
        }
        Ok(SampleBatch {
            temperature,
            nominal,
            states: vec![Vec::new(); k],
            actions,
            rewards,
            cost_to_go: Vec::new(),
            log_p,
            weights: Vec::new(),
            diverged: vec![false; k],
        })
    }
}

/// The noise stream of sample `k` for a planning call seeded with `base`.
pub fn sample_stream(base: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(k as u64);
    rng
}

/// Rolls out `samples` sequences of `nominal.len()` steps from `s0`.
///
/// `s_{tau+1} = s_tau + f(s_tau, v_tau) dt`, `j_tau = r(s_tau, v_tau)`. A
/// sample whose state, action or reward becomes non-finite is marked
/// diverged; its remaining actions are filled with the nominal.
#[allow(clippy::too_many_arguments)]
pub fn sample_rollouts<F, R, P>(
    model: &F,
    reward: &R,
    policy: &P,
    s0: &DVector<f64>,
    nominal: &[DVector<f64>],
    samples: usize,
    temperature: f64,
    dt: f64,
    mode: SamplingMode,
    rng: &mut dyn RngCore,
) -> Result<SampleBatch>
where
    F: Dynamics + ?Sized,
    R: RewardModel + ?Sized,
    P: GaussianPolicy + ?Sized,
{
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if nominal.is_empty() {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    check_dim("sampling state", model.state_dim(), s0.len())?;
    let m = model.action_dim();
    for a in nominal {
        check_dim("nominal action", m, a.len())?;
    }
    let h = nominal.len();
    let base = rng.next_u64();
    let mut batch = SampleBatch {
        temperature,
        nominal: nominal.to_vec(),
        actions: Vec::with_capacity(samples),
        states: Vec::with_capacity(samples),
        rewards: Vec::with_capacity(samples),
        cost_to_go: Vec::new(),
        log_p: Vec::with_capacity(samples),
        weights: Vec::new(),
        diverged: Vec::with_capacity(samples),
    };
    for k in 0..samples {
        let mut stream = sample_stream(base, k);
        let mut s = s0.clone();
        let mut states = vec![s.clone()];
        let mut actions = Vec::with_capacity(h);
        let mut rewards = Vec::with_capacity(h);
        let mut log_p = 0.0;
        let mut diverged = false;
        for a_nom in nominal {
            let z = DVector::from_fn(m, |_, _| stream.sample::<f64, _>(StandardNormal));
            let step = (|| -> Result<(DVector<f64>, f64, DVector<f64>, f64)> {
                let (v, lp) = match mode {
                    SamplingMode::Policy | SamplingMode::PolicyMean => {
                        let (mu, var) = policy.mean_var(&s)?;
                        let v = if mode == SamplingMode::Policy {
                            &mu + var.map(f64::sqrt).component_mul(&z)
                        } else {
                            mu.clone()
                        };
                        let lp = gaussian_log_density(&v, &mu, &var);
                        (v, lp)
                    }
                    SamplingMode::Nominal { std } => (a_nom + &z * std, 0.0),
                };
                let r = reward.reward(&s, &v)?;
                let next = &s + model.rate(&s, &v)? * dt;
                Ok((v, lp, next, r))
            })();
            match step {
                Ok((v, lp, next, r))
                    if r.is_finite()
                        && lp.is_finite()
                        && v.iter().all(|x| x.is_finite())
                        && next.iter().all(|x| x.is_finite()) =>
                {
                    actions.push(v);
                    rewards.push(r);
                    log_p += lp;
                    states.push(next.clone());
                    s = next;
                }
                Ok(_) | Err(Error::NonFinite(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if diverged {
            log::debug!("sample {k} diverged after {} steps", actions.len());
            actions.extend_from_slice(&nominal[actions.len()..]);
            rewards.resize(h, f64::NEG_INFINITY);
            log_p = 0.0;
        }
        batch.actions.push(actions);
        batch.states.push(states);
        batch.rewards.push(rewards);
        batch.log_p.push(log_p);
        batch.diverged.push(diverged);
    }
    Ok(batch)
}

/// Fills `J(v_tau^k) = sum_{t >= tau} j_t^k`; diverged samples get `-inf`.
pub fn cost_to_go(batch: &mut SampleBatch) {
    batch.cost_to_go = batch
        .rewards
        .iter()
        .zip(&batch.diverged)
        .map(|(rews, &diverged)| {
            if diverged {
                return vec![f64::NEG_INFINITY; rews.len()];
            }
            let mut out = vec![0.0; rews.len()];
            let mut acc = 0.0;
            for tau in (0..rews.len()).rev() {
                acc += rews[tau];
                out[tau] = acc;
            }
            out
        })
        .collect();
}

/// Fills `weights[tau][k] = softmax_k(J(v_tau^k) / temperature + log p(v^k))`.
pub fn importance_weights(batch: &mut SampleBatch) -> Result<()> {
    if !(batch.temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {}",
            batch.temperature
        )));
    }
    if batch.cost_to_go.len() != batch.samples() {
        cost_to_go(batch);
    }
    let k = batch.samples();
    let mut weights = Vec::with_capacity(batch.horizon());
    for tau in 0..batch.horizon() {
        let log_w: Vec<f64> = (0..k)
            .map(|i| batch.cost_to_go[i][tau] / batch.temperature + batch.log_p[i])
            .collect();
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Diverged { step: tau });
        }
        if !max.is_finite() {
            return Err(Error::NonFinite("importance log-weight"));
        }
        let shifted: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
        let log_norm = shifted.iter().sum::<f64>().ln();
        weights.push(log_w.iter().map(|lw| (lw - max - log_norm).exp()).collect());
    }
    batch.weights = weights;
    Ok(())
}

/// `a*_tau = a_tau + sum_k w_tau^k (v_tau^k - a_tau)`.
pub fn update_action_sequence(batch: &SampleBatch) -> Result<Vec<DVector<f64>>> {
    if batch.weights.len() != batch.horizon() {
        return Err(Error::InvalidArgument("importance weights not computed".into()));
    }
    Ok((0..batch.horizon())
        .map(|tau| {
            let mut a = batch.nominal[tau].clone();
            for k in 0..batch.samples() {
                let w = batch.weights[tau][k];
                if w != 0.0 {
                    a += batch.delta(k, tau) * w;
                }
            }
            a
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochDecision {
    /// `a*_0`, unclipped.
    pub action: DVector<f64>,
    pub mean: DVector<f64>,
    /// `|a*_0 - mu(s)|`.
    pub correction_norm: f64,
    /// All samples diverged and the policy mean was used instead.
    pub fallback: bool,
    pub diverged_samples: usize,
}

/// Receding-horizon sampling controller holding the warm-started nominal
/// sequence between steps.
#[derive(Debug, Clone)]
pub struct StochController {
    pub samples: usize,
    pub temperature: f64,
    pub dt: f64,
    pub mode: SamplingMode,
    nominal: Vec<DVector<f64>>,
}

impl StochController {
    pub fn new(
        horizon: usize,
        samples: usize,
        temperature: f64,
        dt: f64,
        action_dim: usize,
        mode: SamplingMode,
    ) -> Self {
        StochController {
            samples,
            temperature,
            dt,
            mode,
            nominal: vec![DVector::zeros(action_dim); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.nominal.len()
    }

    pub fn nominal(&self) -> &[DVector<f64>] {
        &self.nominal
    }

    /// Zeroes the nominal sequence (episode start).
    pub fn reset(&mut self) {
        for a in &mut self.nominal {
            a.fill(0.0);
        }
    }

    /// Samples, weights and updates once, returns `a*_0`, and shifts the
    /// sequence left, appending `mu` at the state the model predicts at the
    /// end of `a*`.
    pub fn step<F, R, P>(
        &mut self,
        model: &F,
        reward: &R,
        policy: &P,
        s: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<StochDecision>
    where
        F: Dynamics + ?Sized,
        R: RewardModel + ?Sized,
        P: GaussianPolicy + ?Sized,
    {
        let (mean, _) = policy.mean_var(s)?;
        let mut batch = sample_rollouts(
            model,
            reward,
            policy,
            s,
            &self.nominal,
            self.samples,
            self.temperature,
            self.dt,
            self.mode,
            rng,
        )?;
        let diverged_samples = batch.diverged.iter().filter(|&&d| d).count();
        cost_to_go(&mut batch);
        match importance_weights(&mut batch) {
            Ok(()) => {}
            Err(Error::Diverged { .. }) => {
                log::debug!("all {} samples diverged; using the policy mean", self.samples);
                self.reset();
                return Ok(StochDecision {
                    action: mean.clone(),
                    mean,
                    correction_norm: 0.0,
                    fallback: true,
                    diverged_samples,
                });
            }
            Err(e) => return Err(e),
        }
        let updated = update_action_sequence(&batch)?;
        let action = updated[0].clone();
        let tail = predicted_terminal(model, s, &updated, self.dt)
            .and_then(|s_end| policy.mean_var(&s_end).map(|(mu, _)| mu))
            .unwrap_or_else(|_| updated[updated.len() - 1].clone());
        self.nominal = updated.into_iter().skip(1).chain(std::iter::once(tail)).collect();
        Ok(StochDecision {
            correction_norm: (&action - &mean).norm(),
            action,
            mean,
            fallback: false,
            diverged_samples,
        })
    }
}

fn predicted_terminal<F: Dynamics + ?Sized>(
    model: &F,
    s0: &DVector<f64>,
    actions: &[DVector<f64>],
    dt: f64,
) -> Result<DVector<f64>> {
    let mut s = s0.clone();
    for a in actions {
        s = &s + model.rate(&s, a)? * dt;
    }
    if s.iter().all(|x| x.is_finite()) {
        Ok(s)
    } else {
        Err(Error::NonFinite("predicted terminal state"))
    }
}
