use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::buffer::Transition;
use crate::error::{check_dim, Error, Result};
use crate::models::RewardModel;

use super::params::{uniform_matrix, uniform_vector, Parameters, TensorRef};

pub const REWARD_HIDDEN: usize = 200;

/// Discount of the bootstrap term in the reward loss.
pub const REWARD_TD_DISCOUNT: f64 = 0.95;

/// Two-layer relu network `r(s, a) = w2 . relu(W1 [s; a] + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNet {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    /// Output bias, stored as a length-1 vector.
    pub b2: DVector<f64>,
    state_dim: usize,
    action_dim: usize,
}

impl RewardNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let input = state_dim + action_dim;
        RewardNet {
            w1: uniform_matrix(hidden, input, input, rng),
            b1: uniform_vector(hidden, input, rng),
            w2: uniform_vector(hidden, hidden, rng),
            b2: uniform_vector(1, hidden, rng),
            state_dim,
            action_dim,
        }
    }

    pub fn zeros(state_dim: usize, action_dim: usize, hidden: usize) -> Self {
        RewardNet {
            w1: DMatrix::zeros(hidden, state_dim + action_dim),
            b1: DVector::zeros(hidden),
            w2: DVector::zeros(hidden),
            b2: DVector::zeros(1),
            state_dim,
            action_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.state_dim, self.action_dim, self.hidden())
    }

    /// Zeroes the action columns of the first layer so that the output
    /// depends on the state alone.
    pub fn make_state_only(&mut self) {
        let n = self.state_dim;
        self.w1.columns_mut(n, self.action_dim).fill(0.0);
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn pre_activation(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim("reward state", self.state_dim, s.len())?;
        check_dim("reward action", self.action_dim, a.len())?;
        let mut x = DVector::zeros(self.state_dim + self.action_dim);
        x.rows_mut(0, self.state_dim).copy_from(s);
        x.rows_mut(self.state_dim, self.action_dim).copy_from(a);
        let z = &self.w1 * &x + &self.b1;
        Ok((x, z))
    }

    pub fn forward(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<f64> {
        let (_, z) = self.pre_activation(s, a)?;
        Ok(z.iter().zip(self.w2.iter()).map(|(z, w)| w * z.max(0.0)).sum::<f64>() + self.b2[0])
    }

    /// Gradient of the output with respect to the full input `[s; a]`.
    pub fn grad_input(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, z) = self.pre_activation(s, a)?;
        let gate = DVector::from_iterator(
            z.len(),
            z.iter().zip(self.w2.iter()).map(|(z, w)| if *z > 0.0 { *w } else { 0.0 }),
        );
        Ok(self.w1.tr_mul(&gate))
    }

    pub fn grad_s(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.grad_input(s, a)?.rows(0, self.state_dim).into_owned())
    }

    /// Semi-gradient temporal-difference loss
    ///
    /// ```text
    /// L = mean (r + 0.95 r(s', a') - r(s, a))^2
    /// ```
    ///
    /// The bootstrap term is a constant target. Transitions without a next
    /// action (episode ends) use the target `r` alone.
    pub fn td_loss(&self, batch: &[Transition]) -> Result<(f64, RewardNet)> {
        self.td_loss_with(batch, REWARD_TD_DISCOUNT)
    }

    pub fn td_loss_with(&self, batch: &[Transition], discount: f64) -> Result<(f64, RewardNet)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("reward_loss"));
        }
        let bsz = batch.len() as f64;
        let mut grads = self.zeros_like();
        let mut loss = 0.0;
        for t in batch {
            let bootstrap = match &t.a_next {
                Some(a_next) => discount * self.forward(&t.s_next, a_next)?,
                None => 0.0,
            };
            let (x, z) = self.pre_activation(&t.s, &t.a)?;
            let pred = z.iter().zip(self.w2.iter()).map(|(z, w)| w * z.max(0.0)).sum::<f64>() + self.b2[0];
            let delta = t.r + bootstrap - pred;
            loss += delta * delta;
            // dL/dpred
            let d_out = -2.0 * delta / bsz;
            grads.b2[0] += d_out;
            for j in 0..z.len() {
                if z[j] > 0.0 {
                    grads.w2[j] += d_out * z[j];
                    let dz = d_out * self.w2[j];
                    grads.b1[j] += dz;
                    for (k, xk) in x.iter().enumerate() {
                        grads.w1[(j, k)] += dz * xk;
                    }
                }
            }
        }
        Ok((loss / bsz, grads))
    }

    /// Plain squared error against the observed rewards (no bootstrap).
    pub fn reward_mse(&self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("reward mse"));
        }
        let mut total = 0.0;
        for t in batch {
            let e = self.forward(&t.s, &t.a)? - t.r;
            total += e * e;
        }
        Ok(total / batch.len() as f64)
    }
}

impl Parameters for RewardNet {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            ("w1", self.w1.shape(), self.w1.as_slice()),
            ("b1", self.b1.shape(), self.b1.as_slice()),
            ("w2", self.w2.shape(), self.w2.as_slice()),
            ("b2", self.b2.shape(), self.b2.as_slice()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }
}

impl RewardModel for RewardNet {
    fn reward(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<f64> {
        self.forward(s, a)
    }
    fn grad_s(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        RewardNet::grad_s(self, s, a)
    }
}
