use crate::error::{Error, Result};

use super::params::Parameters;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate of the dynamics and reward models.
pub const MODEL_LEARNING_RATE: f64 = 0.003;

/// Adam with bias correction, holding one moment pair per scalar parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn for_params<P: Parameters>(params: &P, lr: f64) -> Self {
        Self::new(params.num_params(), lr)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Applies one update in place.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.flat();
        if g.len() != self.m.len() || params.num_params() != self.m.len() {
            return Err(Error::Dimension {
                what: "adam parameters",
                expected: self.m.len(),
                got: g.len().max(params.num_params()),
            });
        }
        self.step_slices(params.tensors_mut(), &g);
        Ok(())
    }

    /// Update over raw slices whose concatenation matches the moment layout.
    pub fn step_slices(&mut self, params: Vec<&mut [f64]>, grads: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut i = 0;
        for tensor in params {
            for p in tensor.iter_mut() {
                let g = grads[i];
                let m = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                self.m[i] = m;
                self.v[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                i += 1;
            }
        }
    }
}
