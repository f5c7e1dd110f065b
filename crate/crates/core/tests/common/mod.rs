#![allow(dead_code)]

use fbpinn::decomp::{ConstraintOp, Decomposition, Decomposition1D, Decomposition2D};
use fbpinn::model::{FbpinnModel, PinnModel};
use fbpinn::net::InitKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fourth-order central difference for f'.
pub fn fd1(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Fourth-order central difference for f''.
pub fn fd2(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h))
        / (12.0 * h * h)
}

pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs)
}

/// Replaces all parameters by U[-1, 1] draws so biases are nonzero too.
pub fn randomize<M: PinnModel>(model: &mut M, seed: u64) {
    let mut r = rng(seed);
    let p: Vec<f64> = (0..model.num_params()).map(|_| r.gen_range(-1.0..1.0)).collect();
    model.set_params(&p).unwrap();
}

pub fn ode_model(k: usize, hidden: usize, seed: u64) -> FbpinnModel {
    let mut m = FbpinnModel::new(
        Decomposition::D1(Decomposition1D::new(k, 0.5).unwrap()),
        &[1, hidden, 1],
        InitKind::UniformWeightsZeroBias,
        seed,
        ConstraintOp::TanhScaled { kappa: 16.0 },
    )
    .unwrap();
    randomize(&mut m, seed ^ 0xA5A5);
    m
}

pub fn helmholtz_model(hidden: usize, seed: u64) -> FbpinnModel {
    let mut m = FbpinnModel::new(
        Decomposition::D2(Decomposition2D::new(2, 2, 0.5, 0.5).unwrap()),
        &[2, hidden, 1],
        InitKind::UniformWeightsZeroBias,
        seed,
        ConstraintOp::ProductBubble,
    )
    .unwrap();
    randomize(&mut m, seed ^ 0x5A5A);
    m
}

/// Distance from `x` to the nearest window breakpoint of `d`, where the
/// windows are only C¹.
pub fn breakpoint_distance(d: &Decomposition1D, x: f64) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..d.count() {
        let r = d.ramp_width();
        for b in [d.lower(k), d.lower(k) + r, d.upper(k) - r, d.upper(k)] {
            best = best.min((x - b).abs());
        }
    }
    best
}
