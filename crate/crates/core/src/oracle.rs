//! Independent reference computations for the test suites.
//!
//! Nothing here calls into the controllers it is used to check: rollouts,
//! suffix sums, weight normalization and adjoint solutions are all written
//! out again from their defining formulas.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::hybrid_stoch::SampleBatch;
use crate::models::{Dynamics, GaussianPolicy, RewardModel};

/// Central differences, one column per input coordinate.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += step;
        minus[j] -= step;
        cols.push((f(&plus) - f(&minus)) / (2.0 * step));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, x.len(), |i, j| cols[j][i])
}

/// Forward differences `(f(x + h e_j) - f(x)) / h`, first-order accurate.
pub fn fd_jacobian_forward<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(x);
    let mut out = DMatrix::zeros(f0.len(), x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp[j] += step;
        let fp = f(&xp);
        for i in 0..f0.len() {
            out[(i, j)] = (fp[i] - f0[i]) / step;
        }
    }
    out
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, step: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    DVector::from_fn(x.len(), |j, _| {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += step;
        minus[j] -= step;
        (f(&plus) - f(&minus)) / (2.0 * step)
    })
}

/// Finite-difference estimate of the mode insertion gradient.
///
/// Simulates `steps` Euler steps of size `dt` from `s0` twice: once under
/// `mu(s)` throughout, once with `a_hat` applied on the window
/// `[tau dt, tau dt + lambda_fd)`. The objective is `sum_k r(s_k, a_k) dt`
/// over the applied actions. Returns `(J_switched - J_nominal) / lambda_fd`.
#[allow(clippy::too_many_arguments)]
pub fn insertion_objective_delta<F, R, P>(
    model: &F,
    reward: &R,
    policy: &P,
    s0: &DVector<f64>,
    tau: usize,
    a_hat: &DVector<f64>,
    lambda_fd: f64,
    dt: f64,
    steps: usize,
) -> Result<f64>
where
    F: Dynamics + ?Sized,
    R: RewardModel + ?Sized,
    P: GaussianPolicy + ?Sized,
{
    let window = (lambda_fd / dt).round();
    if window < 1.0 || (lambda_fd / dt - window).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "insertion window {lambda_fd} is not a positive multiple of dt {dt}"
        )));
    }
    let window = window as usize;
    if tau + window > steps {
        return Err(Error::InvalidArgument(format!(
            "insertion at step {tau} with width {window} exceeds horizon {steps}"
        )));
    }
    check_dim("insertion action", model.action_dim(), a_hat.len())?;
    let simulate = |switched: bool| -> Result<f64> {
        let mut s = s0.clone();
        let mut total = 0.0;
        for k in 0..steps {
            let a = if switched && k >= tau && k < tau + window {
                a_hat.clone()
            } else {
                policy.mean_var(&s)?.0
            };
            total += reward.reward(&s, &a)? * dt;
            let ds = model.rate(&s, &a)?;
            for i in 0..s.len() {
                s[i] += ds[i] * dt;
            }
        }
        Ok(total)
    };
    let nominal = simulate(false)?;
    let switched = simulate(true)?;
    Ok((switched - nominal) / lambda_fd)
}

/// The sample-form update `a*_t = sum_k w_k v_t^k / sum_k w_k` with
/// `w_k = exp(J_t^k / temperature) * exp(log p^k)`, computed directly
/// (no log-space shift).
///
/// Cost-to-go values are re-derived from the per-step rewards. Fails when
/// the plain exponentials overflow or all underflow.
pub fn brute_force_sample_update(batch: &SampleBatch) -> Result<Vec<DVector<f64>>> {
    brute_force_with(batch, |xs| xs.iter().sum())
}

/// As [`brute_force_sample_update`] but with compensated (Neumaier) summation for
/// every sum.
pub fn brute_force_sample_update_compensated(batch: &SampleBatch) -> Result<Vec<DVector<f64>>> {
    brute_force_with(batch, neumaier_sum)
}

fn brute_force_with(batch: &SampleBatch, sum: impl Fn(&[f64]) -> f64) -> Result<Vec<DVector<f64>>> {
    let k = batch.actions.len();
    if k == 0 {
        return Err(Error::EmptyBatch("brute force batch"));
    }
    let h = batch.nominal.len();
    let m = batch.nominal[0].len();
    let mut out = Vec::with_capacity(h);
    for t in 0..h {
        let mut w = Vec::with_capacity(k);
        for j in 0..k {
            let tail: Vec<f64> = batch.rewards[j][t..].to_vec();
            let cost = sum(&tail);
            w.push((cost / batch.temperature).exp() * batch.log_p[j].exp());
        }
        let total = sum(&w);
        if !total.is_finite() || total == 0.0 {
            return Err(Error::NonFinite("brute-force weight normalizer"));
        }
        let a = DVector::from_fn(m, |i, _| {
            let terms: Vec<f64> = (0..k).map(|j| w[j] * batch.actions[j][t][i]).collect();
            sum(&terms) / total
        });
        out.push(a);
    }
    Ok(out)
}

/// Neumaier's compensated sum.
pub fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Reference solution of `rho_dot = -source(t) - A' rho`, `rho(t_h) = 0`:
///
/// ```text
/// rho(tau) = integral_tau^t_h exp(A' (t - tau)) source(t) dt
/// ```
///
/// evaluated at each of `taus` with composite Simpson quadrature on
/// `panels` (rounded up to even) subintervals.
pub fn linear_adjoint_reference<S>(
    a: &DMatrix<f64>,
    source: S,
    t_h: f64,
    taus: &[f64],
    panels: usize,
) -> Vec<DVector<f64>>
where
    S: Fn(f64) -> DVector<f64>,
{
    let n = a.nrows();
    let panels = (panels.max(2) + 1) / 2 * 2;
    taus.iter()
        .map(|&tau| {
            let len = t_h - tau;
            if len <= 0.0 {
                return DVector::zeros(n);
            }
            let step = len / panels as f64;
            let e = (a.transpose() * step).exp();
            let mut phi = DMatrix::<f64>::identity(n, n);
            let mut acc = DVector::zeros(n);
            for j in 0..=panels {
                let coef = if j == 0 || j == panels {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += &phi * source(tau + j as f64 * step) * coef;
                phi = &phi * &e;
            }
            acc * (step / 3.0)
        })
        .collect()
}
