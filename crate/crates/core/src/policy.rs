//! Gaussian experience-based policy and its updaters.
//!
//! The mean head is a single sin layer, the variance head a single relu
//! layer; both read the raw state:
//!
//! ```text
//! mu(s)  = Wm2 sin(Wm1 s + bm1) + bm2
//! var(s) = relu(Wv2 relu(Wv1 s + bv1) + bv2) + 1e-3
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::buffer::{ReplayBuffer, Transition};
use crate::diffnet::{
    attr_usize, uniform_matrix, uniform_vector, AdamState, Checkpoint, Parameters, TensorRef,
};
use crate::error::{check_dim, Error, Result};
use crate::models::GaussianPolicy;

pub const POLICY_HIDDEN: usize = 128;
pub const VARIANCE_FLOOR: f64 = 1e-3;
pub const BC_LEARNING_RATE: f64 = 0.01;
/// Discount used for the return estimates that weight RWR samples.
pub const RWR_DISCOUNT: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub mean_w1: DMatrix<f64>,
    pub mean_b1: DVector<f64>,
    pub mean_w2: DMatrix<f64>,
    pub mean_b2: DVector<f64>,
    pub var_w1: DMatrix<f64>,
    pub var_b1: DVector<f64>,
    pub var_w2: DMatrix<f64>,
    pub var_b2: DVector<f64>,
    state_dim: usize,
    action_dim: usize,
}

struct Forward {
    mean_z: DVector<f64>,
    var_z: DVector<f64>,
    raw_var: DVector<f64>,
    mu: DVector<f64>,
    var: DVector<f64>,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: usize, rng: &mut R) -> Self {
        PolicyNet {
            mean_w1: uniform_matrix(hidden, state_dim, state_dim, rng),
            mean_b1: uniform_vector(hidden, state_dim, rng),
            mean_w2: uniform_matrix(action_dim, hidden, hidden, rng),
            mean_b2: uniform_vector(action_dim, hidden, rng),
            var_w1: uniform_matrix(hidden, state_dim, state_dim, rng),
            var_b1: uniform_vector(hidden, state_dim, rng),
            var_w2: uniform_matrix(action_dim, hidden, hidden, rng),
            var_b2: uniform_vector(action_dim, hidden, rng),
            state_dim,
            action_dim,
        }
    }

    pub fn zeros(state_dim: usize, action_dim: usize, hidden: usize) -> Self {
        PolicyNet {
            mean_w1: DMatrix::zeros(hidden, state_dim),
            mean_b1: DVector::zeros(hidden),
            mean_w2: DMatrix::zeros(action_dim, hidden),
            mean_b2: DVector::zeros(action_dim),
            var_w1: DMatrix::zeros(hidden, state_dim),
            var_b1: DVector::zeros(hidden),
            var_w2: DMatrix::zeros(action_dim, hidden),
            var_b2: DVector::zeros(action_dim),
            state_dim,
            action_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.state_dim, self.action_dim, self.hidden())
    }

    /// Shifts the variance-head output bias so the raw variance starts
    /// around `var` instead of around zero.
    pub fn with_initial_variance(mut self, var: f64) -> Self {
        self.var_b2.add_scalar_mut(var);
        self
    }

    pub fn hidden(&self) -> usize {
        self.mean_b1.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn forward(&self, s: &DVector<f64>) -> Result<Forward> {
        check_dim("policy state", self.state_dim, s.len())?;
        let mean_z = &self.mean_w1 * s + &self.mean_b1;
        let mu = &self.mean_w2 * mean_z.map(f64::sin) + &self.mean_b2;
        let var_z = &self.var_w1 * s + &self.var_b1;
        let raw_var = &self.var_w2 * var_z.map(|z| z.max(0.0)) + &self.var_b2;
        let var = raw_var.map(|r| r.max(0.0) + VARIANCE_FLOOR);
        Ok(Forward {
            mean_z,
            var_z,
            raw_var,
            mu,
            var,
        })
    }

    pub fn mean_var(&self, s: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let f = self.forward(s)?;
        Ok((f.mu, f.var))
    }

    pub fn mean(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("policy state", self.state_dim, s.len())?;
        let z = &self.mean_w1 * s + &self.mean_b1;
        Ok(&self.mean_w2 * z.map(f64::sin) + &self.mean_b2)
    }

    /// `mu(s) + sqrt(var(s)) * z` with `z ~ N(0, I)`. Not clipped.
    pub fn sample<R: Rng + ?Sized>(&self, s: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let z = DVector::from_fn(self.action_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        self.sample_with_noise(s, &z)
    }

    /// Sampling with an explicit standard-normal draw.
    pub fn sample_with_noise(&self, s: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("policy noise", self.action_dim, z.len())?;
        let (mu, var) = self.mean_var(s)?;
        Ok(mu + var.map(f64::sqrt).component_mul(z))
    }

    pub fn log_prob(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<f64> {
        check_dim("policy action", self.action_dim, a.len())?;
        let (mu, var) = self.mean_var(s)?;
        Ok(gaussian_log_density(a, &mu, &var))
    }

    /// `d mu / d s = Wm2 diag(cos z) Wm1`, shape `m x n`.
    pub fn mean_jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("policy state", self.state_dim, s.len())?;
        let z = &self.mean_w1 * s + &self.mean_b1;
        let mut scaled = self.mean_w2.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= z[j].cos();
        }
        Ok(scaled * &self.mean_w1)
    }

    /// Weighted negative log-likelihood `sum_j w_j (-log pi(a_j | s_j))` and
    /// its parameter gradient.
    pub fn weighted_nll(&self, pairs: &[(&DVector<f64>, &DVector<f64>)], weights: &[f64]) -> Result<(f64, PolicyNet)> {
        if pairs.is_empty() {
            return Err(Error::EmptyBatch("policy nll"));
        }
        check_dim("policy weights", pairs.len(), weights.len())?;
        let mut grads = self.zeros_like();
        let mut loss = 0.0;
        for ((s, a), &w) in pairs.iter().zip(weights) {
            check_dim("policy action", self.action_dim, a.len())?;
            let f = self.forward(s)?;
            loss -= w * gaussian_log_density(a, &f.mu, &f.var);
            if w == 0.0 {
                continue;
            }
            let diff = *a - &f.mu;
            let d_mu = DVector::from_fn(self.action_dim, |i, _| -w * diff[i] / f.var[i]);
            let d_raw = DVector::from_fn(self.action_dim, |i, _| {
                if f.raw_var[i] > 0.0 {
                    let v = f.var[i];
                    w * 0.5 * (1.0 / v - diff[i] * diff[i] / (v * v))
                } else {
                    0.0
                }
            });

            let mean_h = f.mean_z.map(f64::sin);
            grads.mean_w2 += &d_mu * mean_h.transpose();
            grads.mean_b2 += &d_mu;
            let d_mean_z = self.mean_w2.tr_mul(&d_mu).component_mul(&f.mean_z.map(f64::cos));
            grads.mean_w1 += &d_mean_z * s.transpose();
            grads.mean_b1 += &d_mean_z;

            let var_h = f.var_z.map(|z| z.max(0.0));
            grads.var_w2 += &d_raw * var_h.transpose();
            grads.var_b2 += &d_raw;
            let gate = f.var_z.map(|z| if z > 0.0 { 1.0 } else { 0.0 });
            let d_var_z = self.var_w2.tr_mul(&d_raw).component_mul(&gate);
            grads.var_w1 += &d_var_z * s.transpose();
            grads.var_b1 += &d_var_z;
        }
        Ok((loss, grads))
    }
}

/// `log N(a; mu, diag(var))`.
pub fn gaussian_log_density(a: &DVector<f64>, mu: &DVector<f64>, var: &DVector<f64>) -> f64 {
    a.iter()
        .zip(mu.iter())
        .zip(var.iter())
        .map(|((a, m), v)| -0.5 * ((2.0 * PI * v).ln() + (a - m) * (a - m) / v))
        .sum()
}

impl Parameters for PolicyNet {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            ("mean_w1", self.mean_w1.shape(), self.mean_w1.as_slice()),
            ("mean_b1", self.mean_b1.shape(), self.mean_b1.as_slice()),
            ("mean_w2", self.mean_w2.shape(), self.mean_w2.as_slice()),
            ("mean_b2", self.mean_b2.shape(), self.mean_b2.as_slice()),
            ("var_w1", self.var_w1.shape(), self.var_w1.as_slice()),
            ("var_b1", self.var_b1.shape(), self.var_b1.as_slice()),
            ("var_w2", self.var_w2.shape(), self.var_w2.as_slice()),
            ("var_b2", self.var_b2.shape(), self.var_b2.as_slice()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.mean_w1.as_mut_slice(),
            self.mean_b1.as_mut_slice(),
            self.mean_w2.as_mut_slice(),
            self.mean_b2.as_mut_slice(),
            self.var_w1.as_mut_slice(),
            self.var_b1.as_mut_slice(),
            self.var_w2.as_mut_slice(),
            self.var_b2.as_mut_slice(),
        ]
    }
}

impl Checkpoint for PolicyNet {
    const KIND: &'static str = "policy";

    fn attributes(&self) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::from([
            ("state_dim".to_string(), self.state_dim.into()),
            ("action_dim".to_string(), self.action_dim.into()),
            ("hidden".to_string(), self.hidden().into()),
        ])
    }

    fn skeleton(attrs: &BTreeMap<String, serde_json::Value>) -> Result<Self> {
        Ok(PolicyNet::zeros(
            attr_usize(attrs, "state_dim")?,
            attr_usize(attrs, "action_dim")?,
            attr_usize(attrs, "hidden")?,
        ))
    }
}

impl GaussianPolicy for PolicyNet {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn action_dim(&self) -> usize {
        self.action_dim
    }
    fn mean_var(&self, s: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        PolicyNet::mean_var(self, s)
    }
    fn mean_jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        PolicyNet::mean_jacobian(self, s)
    }
}

/// One epoch of Adam over the demonstrations, in shuffled minibatches,
/// minimizing the mean negative log-likelihood. Returns the mean minibatch
/// loss of the epoch.
pub fn bc_update(
    net: &mut PolicyNet,
    demos: &[Transition],
    adam: &mut AdamState,
    batch_size: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if demos.is_empty() {
        return Err(Error::EmptyBatch("bc_update"));
    }
    let mut order: Vec<usize> = (0..demos.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch_size.max(1)) {
        let pairs: Vec<_> = chunk.iter().map(|&i| (&demos[i].s, &demos[i].a)).collect();
        let w = vec![1.0 / pairs.len() as f64; pairs.len()];
        let (loss, grads) = net.weighted_nll(&pairs, &w)?;
        adam.step(net, &grads)?;
        total += loss;
        batches += 1;
    }
    if !net.all_finite() {
        return Err(Error::NonFinite("policy parameters after bc_update"));
    }
    Ok(total / batches as f64)
}

/// Softmax of `returns / temperature`, computed with max subtraction.
pub fn rwr_weights(returns: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rwr temperature must be positive, got {temperature}"
        )));
    }
    if returns.is_empty() {
        return Err(Error::EmptyBatch("rwr_weights"));
    }
    let max = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = returns.iter().map(|r| ((r - max) / temperature).exp()).collect();
    let sum: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / sum).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwrConfig {
    pub batch_size: usize,
    /// Adam steps per call, each on a freshly sampled batch.
    pub steps: usize,
    pub temperature: f64,
}

/// Reward-weighted regression.
///
/// Each step samples `batch_size` transitions uniformly with replacement,
/// weights them by `softmax(ret / temperature)` where `ret` is the
/// discounted return-to-go stored with the transition, and takes one Adam
/// step on the weighted Gaussian negative log-likelihood of the stored
/// actions. Returns the mean weighted loss over the steps.
pub fn rwr_update(
    net: &mut PolicyNet,
    buffer: &ReplayBuffer,
    adam: &mut AdamState,
    cfg: &RwrConfig,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if buffer.len() < cfg.batch_size {
        return Err(Error::Insufficient {
            need: cfg.batch_size,
            have: buffer.len(),
        });
    }
    let mut total = 0.0;
    for _ in 0..cfg.steps {
        let batch = buffer.sample(cfg.batch_size, rng)?;
        let (loss, grads) = rwr_gradient(net, &batch, cfg.temperature)?;
        adam.step(net, &grads)?;
        total += loss;
    }
    if !net.all_finite() {
        return Err(Error::NonFinite("policy parameters after rwr_update"));
    }
    Ok(total / cfg.steps.max(1) as f64)
}

/// Weighted loss and gradient of one RWR batch.
pub fn rwr_gradient(net: &PolicyNet, batch: &[Transition], temperature: f64) -> Result<(f64, PolicyNet)> {
    let returns: Vec<f64> = batch.iter().map(|t| t.ret).collect();
    let w = rwr_weights(&returns, temperature)?;
    let pairs: Vec<_> = batch.iter().map(|t| (&t.s, &t.a)).collect();
    net.weighted_nll(&pairs, &w)
}

/// Pluggable experience-based policy update.
pub trait PolicyUpdater {
    fn update(&mut self, policy: &mut PolicyNet, data: &ReplayBuffer, rng: &mut dyn RngCore) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct BehaviorCloning {
    pub adam: AdamState,
    pub batch_size: usize,
    pub epochs: usize,
}

impl BehaviorCloning {
    pub fn new(policy: &PolicyNet, lr: f64, batch_size: usize, epochs: usize) -> Self {
        BehaviorCloning {
            adam: AdamState::for_params(policy, lr),
            batch_size,
            epochs,
        }
    }
}

impl PolicyUpdater for BehaviorCloning {
    fn update(&mut self, policy: &mut PolicyNet, data: &ReplayBuffer, rng: &mut dyn RngCore) -> Result<f64> {
        let demos = data.to_vec();
        let mut loss = 0.0;
        for _ in 0..self.epochs {
            loss = bc_update(policy, &demos, &mut self.adam, self.batch_size, rng)?;
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct RewardWeightedRegression {
    pub adam: AdamState,
    pub config: RwrConfig,
}

impl RewardWeightedRegression {
    pub fn new(policy: &PolicyNet, lr: f64, config: RwrConfig) -> Self {
        RewardWeightedRegression {
            adam: AdamState::for_params(policy, lr),
            config,
        }
    }
}

impl PolicyUpdater for RewardWeightedRegression {
    fn update(&mut self, policy: &mut PolicyNet, data: &ReplayBuffer, rng: &mut dyn RngCore) -> Result<f64> {
        if data.len() < self.config.batch_size {
            // Not enough experience yet; leave the policy as is.
            return Ok(f64::NAN);
        }
        rwr_update(policy, data, &mut self.adam, &self.config, rng)
    }
}
