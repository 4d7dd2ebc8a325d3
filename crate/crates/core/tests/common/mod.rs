//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use hybridctl::diffnet::{Activation, DynNet, RewardNet};
use hybridctl::models::Dynamics;
use hybridctl::{PolicyNet, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn uniform_vec<R: Rng>(n: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn uniform_mat<R: Rng>(r: usize, c: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Small seeded networks for a 3-state, 1-action system.
pub struct Nets {
    pub dynamics: DynNet,
    pub reward: RewardNet,
    pub policy: PolicyNet,
}

pub fn small_nets(seed: u64, hidden: usize) -> Nets {
    let mut r = rng(seed);
    Nets {
        dynamics: DynNet::new(3, 1, hidden, Activation::Sin, &mut r),
        reward: RewardNet::new(3, 1, hidden, &mut r),
        policy: PolicyNet::new(3, 1, hidden, &mut r).with_initial_variance(0.5),
    }
}

/// `f(s, a) = A s + c * sin(s) + (B + D diag-sin(s)) a`: nonlinear in the
/// state, exactly affine in the action.
#[derive(Debug, Clone)]
pub struct ControlAffine {
    pub a: DMatrix<f64>,
    pub c: f64,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl ControlAffine {
    pub fn random<R: Rng>(n: usize, m: usize, rng: &mut R) -> Self {
        ControlAffine {
            a: uniform_mat(n, n, 1.0, rng),
            c: rng.random_range(-0.5..0.5),
            b: uniform_mat(n, m, 1.0, rng),
            d: uniform_mat(n, m, 0.5, rng),
        }
    }

    pub fn h(&self, s: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.b.clone();
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                h[(i, j)] += self.d[(i, j)] * s[i].sin();
            }
        }
        h
    }
}

impl Dynamics for ControlAffine {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn action_dim(&self) -> usize {
        self.b.ncols()
    }
    fn rate(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * s + s.map(f64::sin) * self.c + self.h(s) * a)
    }
    fn jacobians(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut fs = self.a.clone();
        for i in 0..s.len() {
            let da: f64 = (0..a.len()).map(|j| self.d[(i, j)] * a[j]).sum();
            fs[(i, i)] += (self.c + da) * s[i].cos();
        }
        Ok((fs, self.h(s)))
    }
}

/// Outcome of comparing an analytic derivative against finite differences
/// on a possibly piecewise-linear function.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub checked: usize,
    /// Coordinates whose difference stencil straddled a relu kink.
    pub skipped: usize,
    pub worst: f64,
}

impl FdStats {
    pub fn merge(&mut self, other: FdStats) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.worst = self.worst.max(other.worst);
    }
}

/// Compares `analytic[j]` with the central difference of `f` along `x_j`
/// for each `j` in `coords`, skipping coordinates where the one-sided
/// differences disagree (a kink lies inside the stencil). The error of a
/// coordinate is `|analytic - fd| / max(1, |fd|)`.
pub fn check_scalar_gradient<F>(f: F, x: &[f64], analytic: &[f64], coords: &[usize], step: f64) -> FdStats
where
    F: Fn(&[f64]) -> f64,
{
    let f0 = f(x);
    let mut stats = FdStats::default();
    let mut xp = x.to_vec();
    for &j in coords {
        xp[j] = x[j] + step;
        let fp = f(&xp);
        xp[j] = x[j] - step;
        let fm = f(&xp);
        xp[j] = x[j];
        let fwd = (fp - f0) / step;
        let bwd = (f0 - fm) / step;
        let central = (fp - fm) / (2.0 * step);
        // Smooth functions give one-sided differences within O(step) of each
        // other; a kink gives an O(1) jump.
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1.0) {
            stats.skipped += 1;
            continue;
        }
        let err = (analytic[j] - central).abs() / central.abs().max(1.0);
        stats.checked += 1;
        stats.worst = stats.worst.max(err);
    }
    stats
}

/// Same as [`check_scalar_gradient`] for every output of a vector map, with
/// the analytic Jacobian given row-major by output.
pub fn check_jacobian<F>(f: F, x: &DVector<f64>, analytic: &DMatrix<f64>, step: f64) -> FdStats
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut stats = FdStats::default();
    let coords: Vec<usize> = (0..x.len()).collect();
    for i in 0..analytic.nrows() {
        let row: Vec<f64> = analytic.row(i).iter().copied().collect();
        let s = check_scalar_gradient(|y| f(&DVector::from_column_slice(y))[i], x.as_slice(), &row, &coords, step);
        stats.merge(s);
    }
    stats
}

/// `count` distinct random indices below `n` (all of them when `n <= count`).
pub fn pick_coords<R: Rng>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    rand::seq::index::sample(rng, n, count).into_vec()
}
