//! Analytic Jacobians and loss gradients against central finite differences.
//!
//! Sin networks must agree to 1e-5, relu networks to 1e-4 wherever the
//! difference stencil does not straddle a kink. Each check runs over 100
//! seeds.

mod common;

use common::{check_jacobian, check_scalar_gradient, pick_coords, rng, uniform_vec, FdStats};
use hybridctl::diffnet::{Activation, DynNet, Parameters, RewardNet};
use hybridctl::policy::rwr_gradient;
use hybridctl::{PolicyNet, Transition};
use nalgebra::DVector;
use rand::Rng;

const SEEDS: u64 = 100;
const STEP: f64 = 1e-5;
const SIN_TOL: f64 = 1e-5;
const RELU_TOL: f64 = 1e-4;

fn report(name: &str, stats: FdStats, tol: f64) {
    eprintln!("{name}: checked {} skipped {} worst {:.3e}", stats.checked, stats.skipped, stats.worst);
    assert!(stats.checked > 0, "{name}: nothing checked");
    assert!(
        stats.skipped * 10 <= stats.checked,
        "{name}: too many kink rejections ({} of {})",
        stats.skipped,
        stats.checked + stats.skipped
    );
    assert!(stats.worst <= tol, "{name}: worst error {:.3e} > {tol:e}", stats.worst);
}

fn transitions<R: Rng>(n: usize, m: usize, count: usize, rng: &mut R) -> Vec<Transition> {
    (0..count)
        .map(|i| {
            let s = uniform_vec(n, 2.0, rng);
            let a = uniform_vec(m, 2.0, rng);
            let s_next = &s + uniform_vec(n, 0.2, rng);
            let mut t = Transition::new(s, a, rng.random_range(-3.0..1.0), s_next);
            if i % 3 != 0 {
                t.a_next = Some(uniform_vec(m, 2.0, rng));
            }
            t.ret = rng.random_range(-20.0..0.0);
            t
        })
        .collect()
}

#[test]
fn dynamics_jacobians_sin() {
    let mut stats = FdStats::default();
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let net = DynNet::new(3, 1, 200, Activation::Sin, &mut r);
        let s = uniform_vec(3, 2.0, &mut r);
        let a = uniform_vec(1, 2.0, &mut r);
        let (fs, fa) = net.jacobians(&s, &a).unwrap();
        stats.merge(check_jacobian(|x| net.forward(x, &a).unwrap(), &s, &fs, STEP));
        stats.merge(check_jacobian(|x| net.forward(&s, x).unwrap(), &a, &fa, STEP));
    }
    report("dynamics jacobians (sin)", stats, SIN_TOL);
}

#[test]
fn dynamics_jacobians_relu() {
    let mut stats = FdStats::default();
    for seed in 0..SEEDS {
        let mut r = rng(1000 + seed);
        let net = DynNet::new(4, 2, 64, Activation::Relu, &mut r);
        let s = uniform_vec(4, 2.0, &mut r);
        let a = uniform_vec(2, 2.0, &mut r);
        let (fs, fa) = net.jacobians(&s, &a).unwrap();
        stats.merge(check_jacobian(|x| net.forward(x, &a).unwrap(), &s, &fs, STEP));
        stats.merge(check_jacobian(|x| net.forward(&s, x).unwrap(), &a, &fa, STEP));
    }
    report("dynamics jacobians (relu)", stats, RELU_TOL);
}

#[test]
fn reward_state_gradient() {
    let mut stats = FdStats::default();
    for seed in 0..SEEDS {
        let mut r = rng(2000 + seed);
        let net = RewardNet::new(3, 1, 200, &mut r);
        let s = uniform_vec(3, 2.0, &mut r);
        let a = uniform_vec(1, 2.0, &mut r);
        let g = net.grad_s(&s, &a).unwrap();
        let coords = [0, 1, 2];
        stats.merge(check_scalar_gradient(
            |x| net.forward(&DVector::from_column_slice(x), &a).unwrap(),
            s.as_slice(),
            g.as_slice(),
            &coords,
            STEP,
        ));
        let full = net.grad_input(&s, &a).unwrap();
        let mut x = s.as_slice().to_vec();
        x.push(a[0]);
        stats.merge(check_scalar_gradient(
            |x| {
                net.forward(&DVector::from_column_slice(&x[..3]), &DVector::from_column_slice(&x[3..]))
                    .unwrap()
            },
            &x,
            full.as_slice(),
            &[0, 1, 2, 3],
            STEP,
        ));
    }
    report("reward gradient", stats, SIN_TOL);
}

#[test]
fn policy_mean_jacobian() {
    let mut stats = FdStats::default();
    for seed in 0..SEEDS {
        let mut r = rng(3000 + seed);
        let net = PolicyNet::new(3, 2, 128, &mut r);
        let s = uniform_vec(3, 3.0, &mut r);
        let j = net.mean_jacobian(&s).unwrap();
        stats.merge(check_jacobian(|x| net.mean(x).unwrap(), &s, &j, STEP));
    }
    report("policy mean jacobian", stats, SIN_TOL);
}

/// FD over a random subset of the flat parameter vector.
fn check_param_gradient<P, F>(net: &P, grads: &P, loss: F, coords: &[usize]) -> FdStats
where
    P: Parameters + Clone,
    F: Fn(&P) -> f64,
{
    let x = net.flat();
    let g = grads.flat();
    check_scalar_gradient(
        |p| {
            let mut probe = net.clone();
            probe.set_flat(p);
            loss(&probe)
        },
        &x,
        &g,
        coords,
        STEP,
    )
}

#[test]
fn dynamics_loss_gradient() {
    let mut stats = FdStats::default();
    for seed in 0..SEEDS {
        let mut r = rng(4000 + seed);
        let mut net = DynNet::new(3, 1, 16, Activation::Sin, &mut r);
        net.log_var = uniform_vec(3, 0.5, &mut r);
        let batch = transitions(3, 1, 6, &mut r);
        let (_, grads) = net.loss(&batch, 0.05).unwrap();
        let coords = pick_coords(net.num_params(), 40, &mut r);
        // Always include the log-variances (the last tensor).
        let n = net.num_params();
        let mut coords = coords;
        coords.extend([n - 3, n - 2, n - 1]);
        coords.sort_unstable();
        coords.dedup();
        stats.merge(check_param_gradient(&net, &grads, |p| p.loss(&batch, 0.05).unwrap().0, &coords));
    }
    report("dynamics loss", stats, RELU_TOL);
}

#[test]
fn reward_td_loss_gradient() {
    let mut stats = FdStats::default();
    for seed in 0..SEEDS {
        let mut r = rng(5000 + seed);
        let net = RewardNet::new(3, 1, 16, &mut r);
        let batch = transitions(3, 1, 6, &mut r);
        let (_, grads) = net.td_loss(&batch).unwrap();
        // The bootstrap target is held fixed, so differentiate a loss whose
        // target is frozen at the current parameters.
        let targets: Vec<f64> = batch
            .iter()
            .map(|t| t.r + t.a_next.as_ref().map_or(0.0, |a| 0.95 * net.forward(&t.s_next, a).unwrap()))
            .collect();
        let frozen = |p: &RewardNet| {
            batch
                .iter()
                .zip(&targets)
                .map(|(t, y)| (y - p.forward(&t.s, &t.a).unwrap()).powi(2))
                .sum::<f64>()
                / batch.len() as f64
        };
        let coords = pick_coords(net.num_params(), 40, &mut r);
        stats.merge(check_param_gradient(&net, &grads, frozen, &coords));
    }
    report("reward td loss", stats, RELU_TOL);
}

#[test]
fn policy_nll_gradients() {
    let mut bc = FdStats::default();
    let mut rwr = FdStats::default();
    for seed in 0..SEEDS {
        let mut r = rng(6000 + seed);
        let net = PolicyNet::new(3, 1, 16, &mut r).with_initial_variance(0.7);
        let batch = transitions(3, 1, 6, &mut r);
        let pairs: Vec<_> = batch.iter().map(|t| (&t.s, &t.a)).collect();
        let w = vec![1.0 / pairs.len() as f64; pairs.len()];
        let (_, grads) = net.weighted_nll(&pairs, &w).unwrap();
        let coords = pick_coords(net.num_params(), 40, &mut r);
        bc.merge(check_param_gradient(&net, &grads, |p| p.weighted_nll(&pairs, &w).unwrap().0, &coords));

        let (_, grads) = rwr_gradient(&net, &batch, 5.0).unwrap();
        rwr.merge(check_param_gradient(&net, &grads, |p| rwr_gradient(p, &batch, 5.0).unwrap().0, &coords));
    }
    report("behavior cloning loss", bc, RELU_TOL);
    report("reward-weighted loss", rwr, RELU_TOL);
}

#[test]
fn one_sided_and_central_differences_agree() {
    // The oracle itself, cross-checked against a first-order stencil.
    for seed in 0..20 {
        let mut r = rng(7000 + seed);
        let net = DynNet::new(3, 1, 200, Activation::Sin, &mut r);
        let s = uniform_vec(3, 2.0, &mut r);
        let a = uniform_vec(1, 2.0, &mut r);
        let f = |x: &DVector<f64>| net.forward(x, &a).unwrap();
        let central = hybridctl::oracle::fd_jacobian(f, &s, 1e-5);
        let forward = hybridctl::oracle::fd_jacobian_forward(f, &s, 1e-7);
        assert!((central - forward).abs().max() < 1e-5);
    }
}
