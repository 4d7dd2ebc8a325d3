use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::buffer::Transition;
use crate::error::{check_dim, Error, Result};
use crate::models::Dynamics;

use super::params::{uniform_matrix, uniform_vector, Activation, Parameters, TensorRef};

pub const DYN_HIDDEN: usize = 200;

/// One-hidden-layer residual model `f(s, a) = W2 phi(W1 [s; a] + b1) + b2`
/// with a learned diagonal log-variance for the prediction error.
///
/// `f` is a rate: a rollout advances `s + f(s, a) dt`, and training targets
/// are `(s' - s) / dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynNet {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub log_var: DVector<f64>,
    pub activation: Activation,
    state_dim: usize,
    action_dim: usize,
}

impl DynNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let input = state_dim + action_dim;
        DynNet {
            w1: uniform_matrix(hidden, input, input, rng),
            b1: uniform_vector(hidden, input, rng),
            w2: uniform_matrix(state_dim, hidden, hidden, rng),
            b2: uniform_vector(state_dim, hidden, rng),
            log_var: DVector::zeros(state_dim),
            activation,
            state_dim,
            action_dim,
        }
    }

    pub fn zeros(state_dim: usize, action_dim: usize, hidden: usize, activation: Activation) -> Self {
        DynNet {
            w1: DMatrix::zeros(hidden, state_dim + action_dim),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(state_dim, hidden),
            b2: DVector::zeros(state_dim),
            log_var: DVector::zeros(state_dim),
            activation,
            state_dim,
            action_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.state_dim, self.action_dim, self.hidden(), self.activation)
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

    fn input(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("dynamics state", self.state_dim, s.len())?;
        check_dim("dynamics action", self.action_dim, a.len())?;
        let mut x = DVector::zeros(self.state_dim + self.action_dim);
        x.rows_mut(0, self.state_dim).copy_from(s);
        x.rows_mut(self.state_dim, self.action_dim).copy_from(a);
        Ok(x)
    }

    /// The residual rate `f(s, a)`.
    pub fn forward(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.input(s, a)?;
        let z = &self.w1 * x + &self.b1;
        let act = self.activation;
        let h = z.map(|v| act.apply(v));
        Ok(&self.w2 * h + &self.b2)
    }

    /// `(df/ds, df/da) = W2 diag(phi'(z)) W1`, split by input block.
    pub fn jacobians(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let x = self.input(s, a)?;
        let z = &self.w1 * x + &self.b1;
        let act = self.activation;
        let mut scaled = self.w2.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= act.derivative(z[j]);
        }
        let full = scaled * &self.w1;
        let n = self.state_dim;
        Ok((
            full.columns(0, n).into_owned(),
            full.columns(n, self.action_dim).into_owned(),
        ))
    }

    /// One Euler step of the learned model.
    pub fn predict_next(&self, s: &DVector<f64>, a: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        Ok(s + self.forward(s, a)? * dt)
    }

    /// Mean Gaussian negative log-likelihood of the rate targets
    /// `(s' - s) / dt` under `N(f(s, a), diag(exp(log_var)))`, and its
    /// gradient with respect to every parameter.
    pub fn loss(&self, batch: &[Transition], dt: f64) -> Result<(f64, DynNet)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("dynamics_loss"));
        }
        let n = self.state_dim;
        let m = self.action_dim;
        let bsz = batch.len();
        for t in batch {
            check_dim("dynamics state", n, t.s.len())?;
            check_dim("dynamics action", m, t.a.len())?;
            check_dim("dynamics next state", n, t.s_next.len())?;
        }
        let mut x = DMatrix::zeros(n + m, bsz);
        let mut y = DMatrix::zeros(n, bsz);
        for (j, t) in batch.iter().enumerate() {
            x.view_mut((0, j), (n, 1)).copy_from(&t.s);
            x.view_mut((n, j), (m, 1)).copy_from(&t.a);
            y.column_mut(j).copy_from(&((&t.s_next - &t.s) / dt));
        }
        let act = self.activation;
        let mut z = &self.w1 * &x;
        for mut col in z.column_iter_mut() {
            col += &self.b1;
        }
        let h = z.map(|v| act.apply(v));
        let mut f = &self.w2 * &h;
        for mut col in f.column_iter_mut() {
            col += &self.b2;
        }
        let err = f - y;

        let inv_var = self.log_var.map(|lv| (-lv).exp());
        let ln2pi = (2.0 * PI).ln();
        let mut loss = 0.0;
        let mut g_log_var = DVector::zeros(n);
        let mut d_f = err.clone();
        let scale = 1.0 / bsz as f64;
        for j in 0..bsz {
            for i in 0..n {
                let e = err[(i, j)];
                let q = e * e * inv_var[i];
                loss += 0.5 * (q + self.log_var[i] + ln2pi);
                g_log_var[i] += 0.5 * (1.0 - q) * scale;
                d_f[(i, j)] = e * inv_var[i] * scale;
            }
        }
        loss *= scale;

        let mut grads = self.zeros_like();
        grads.w2 = &d_f * h.transpose();
        grads.b2 = d_f.column_sum();
        let mut d_z = self.w2.transpose() * &d_f;
        d_z.zip_apply(&z, |dz, zz| *dz *= act.derivative(zz));
        grads.w1 = &d_z * x.transpose();
        grads.b1 = d_z.column_sum();
        grads.log_var = g_log_var;
        Ok((loss, grads))
    }

    /// Mean squared error of the one-step rate prediction (no variance term).
    pub fn mse(&self, batch: &[Transition], dt: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("dynamics mse"));
        }
        let mut total = 0.0;
        for t in batch {
            let target = (&t.s_next - &t.s) / dt;
            total += (self.forward(&t.s, &t.a)? - target).norm_squared();
        }
        Ok(total / batch.len() as f64)
    }
}

impl Parameters for DynNet {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            ("w1", self.w1.shape(), self.w1.as_slice()),
            ("b1", self.b1.shape(), self.b1.as_slice()),
            ("w2", self.w2.shape(), self.w2.as_slice()),
            ("b2", self.b2.shape(), self.b2.as_slice()),
            ("log_var", self.log_var.shape(), self.log_var.as_slice()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.log_var.as_mut_slice(),
        ]
    }
}

impl Dynamics for DynNet {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn action_dim(&self) -> usize {
        self.action_dim
    }
    fn rate(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward(s, a)
    }
    fn jacobians(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        DynNet::jacobians(self, s, a)
    }
}
