//! Interfaces the controllers plan against, plus scripted analytic models.
//!
//! The learned networks implement these traits; so do the closed-form
//! linear/quadratic systems used to check the controllers in isolation.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};

/// Continuous-time dynamics `s_dot = f(s, a)`.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn rate(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>>;
    /// `(df/ds, df/da)`, shapes `n x n` and `n x m`.
    fn jacobians(&self, s: &DVector<f64>, a: &DVector<f64>)
        -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

pub trait RewardModel {
    fn reward(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<f64>;
    fn grad_s(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>>;
}

/// A diagonal Gaussian policy `N(mu(s), diag(var(s)))`.
pub trait GaussianPolicy {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn mean_var(&self, s: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)>;
    /// `d mu / d s`, shape `m x n`.
    fn mean_jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>>;
}

impl<T: Dynamics + ?Sized> Dynamics for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn rate(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).rate(s, a)
    }
    fn jacobians(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        (**self).jacobians(s, a)
    }
}

/// `f(s, a) = A s + B a`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        assert!(a.is_square() && a.nrows() == b.nrows());
        LinearDynamics { a, b }
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn action_dim(&self) -> usize {
        self.b.ncols()
    }
    fn rate(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), s.len())?;
        check_dim("action", self.action_dim(), a.len())?;
        Ok(&self.a * s + &self.b * a)
    }
    fn jacobians(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dim("state", self.state_dim(), s.len())?;
        check_dim("action", self.action_dim(), a.len())?;
        Ok((self.a.clone(), self.b.clone()))
    }
}

/// `r(s, a) = -(s - s_ref)' Q (s - s_ref) - a' R a + c' s`.
#[derive(Debug, Clone)]
pub struct QuadraticReward {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s_ref: DVector<f64>,
    pub linear: DVector<f64>,
}

impl QuadraticReward {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        let n = q.nrows();
        QuadraticReward {
            q,
            r,
            s_ref: DVector::zeros(n),
            linear: DVector::zeros(n),
        }
    }

    /// `r(s, a) = c' s`.
    pub fn linear(c: DVector<f64>, action_dim: usize) -> Self {
        let n = c.len();
        QuadraticReward {
            q: DMatrix::zeros(n, n),
            r: DMatrix::zeros(action_dim, action_dim),
            s_ref: DVector::zeros(n),
            linear: c,
        }
    }
}

impl RewardModel for QuadraticReward {
    fn reward(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<f64> {
        check_dim("state", self.q.nrows(), s.len())?;
        check_dim("action", self.r.nrows(), a.len())?;
        let e = s - &self.s_ref;
        Ok(-(e.dot(&(&self.q * &e))) - a.dot(&(&self.r * a)) + self.linear.dot(s))
    }
    fn grad_s(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.q.nrows(), s.len())?;
        check_dim("action", self.r.nrows(), a.len())?;
        let e = s - &self.s_ref;
        Ok(-(&self.q + self.q.transpose()) * e + &self.linear)
    }
}

/// `mu(s) = K s + k0` with a state-independent diagonal variance.
#[derive(Debug, Clone)]
pub struct LinearGaussianPolicy {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub var: DVector<f64>,
}

impl LinearGaussianPolicy {
    pub fn new(gain: DMatrix<f64>, offset: DVector<f64>, var: DVector<f64>) -> Self {
        assert_eq!(gain.nrows(), offset.len());
        assert_eq!(gain.nrows(), var.len());
        LinearGaussianPolicy { gain, offset, var }
    }

    /// Zero-mean policy with no state feedback.
    pub fn zero(state_dim: usize, action_dim: usize, var: f64) -> Self {
        LinearGaussianPolicy {
            gain: DMatrix::zeros(action_dim, state_dim),
            offset: DVector::zeros(action_dim),
            var: DVector::from_element(action_dim, var),
        }
    }
}

impl GaussianPolicy for LinearGaussianPolicy {
    fn state_dim(&self) -> usize {
        self.gain.ncols()
    }
    fn action_dim(&self) -> usize {
        self.gain.nrows()
    }
    fn mean_var(&self, s: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim("state", self.state_dim(), s.len())?;
        Ok((&self.gain * s + &self.offset, self.var.clone()))
    }
    fn mean_jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("state", self.state_dim(), s.len())?;
        Ok(self.gain.clone())
    }
}
