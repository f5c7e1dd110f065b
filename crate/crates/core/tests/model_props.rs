mod common;

use common::{breakpoint_distance, close, fd1, fd2, helmholtz_model, ode_model, randomize, rng};
use fbpinn::decomp::{ConstraintOp, Decomposition, Decomposition1D};
use fbpinn::model::{
    field_eval, field_value, loss, loss_gradient, residual_row, residual_row_tangent,
    residual_value, FbpinnModel, PinnModel, ResidualSystem, VanillaPinnModel,
};
use fbpinn::net::InitKind;
use fbpinn::problems::{
    collocation_random, collocation_uniform, helmholtz_problem, ode_problem, seeded_point,
};
use rand::Rng;

fn shifted(x: &[f64], axis: usize, d: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    p[axis] += d;
    p
}

fn check_field_jets<M: PinnModel>(model: &M, x: &[f64], h: f64) {
    for axis in 0..model.dim() {
        let j = field_eval(model, x, axis);
        let f = |t: f64| field_value(model, &shifted(x, axis, t));
        assert!(close(j.val, f(0.0), 1e-14, 1e-14));
        let (d1, d2) = (fd1(f, 0.0, h), fd2(f, 0.0, h));
        assert!(close(j.d1, d1, 1e-5, 1e-7), "d1[{axis}] at {x:?}: {} vs {d1}", j.d1);
        assert!(close(j.d2, d2, 1e-5, 1e-5), "d2[{axis}] at {x:?}: {} vs {d2}", j.d2);
    }
}

#[test]
fn ode_field_jets_match_finite_differences() {
    let m = ode_model(24, 20, 1);
    let d = Decomposition1D::new(24, 0.5).unwrap();
    let mut r = rng(10);
    let mut n = 0;
    while n < 100 {
        let x = r.gen_range(-0.999..0.999);
        if breakpoint_distance(&d, x) > 1e-3 {
            check_field_jets(&m, &[x], 1e-4);
            n += 1;
        }
    }
}

#[test]
fn helmholtz_field_jets_match_finite_differences() {
    let m = helmholtz_model(20, 2);
    let d = Decomposition1D::new(2, 0.5).unwrap();
    let mut r = rng(11);
    let mut n = 0;
    while n < 100 {
        let x = [r.gen_range(-0.999..0.999), r.gen_range(-0.999..0.999)];
        if x.iter().all(|&v| breakpoint_distance(&d, v) > 5e-3) {
            check_field_jets(&m, &x, 1e-3);
            n += 1;
        }
    }
}

/// Tape rows against central differences of the residual in one parameter.
fn check_row_gradients<M: PinnModel + Clone>(
    model: &M,
    problem: &fbpinn::problems::Problem,
    points: &[Vec<f64>],
    seed: u64,
) {
    let mut r = rng(seed);
    let layout = model.layout().clone();
    for x in points {
        let row = residual_row(model, problem, x).unwrap();
        assert_eq!(row.blocks, model.covering(x));
        let entries: Vec<(usize, f64)> = row.entries(&layout).collect();
        let (j, g) = entries[r.gen_range(0..entries.len())];
        let base = model.params();
        let f = |d: f64| {
            let mut m = model.clone();
            let mut p = base.clone();
            p[j] += d;
            m.set_params(&p).unwrap();
            residual_value(&m, problem, x)
        };
        let fd = fd1(f, 0.0, 1e-4);
        assert!(close(g, fd, 1e-5, 1e-7), "param {j} at {x:?}: {g} vs {fd}");
    }
}

#[test]
fn residual_gradients_match_finite_differences() {
    let m = ode_model(24, 20, 3);
    let pts: Vec<Vec<f64>> = collocation_random(1, &[100], 4).unwrap().iter().map(<[f64]>::to_vec).collect();
    check_row_gradients(&m, &ode_problem(), &pts, 5);

    let m = helmholtz_model(20, 6);
    let pts: Vec<Vec<f64>> =
        collocation_random(2, &[10, 10], 7).unwrap().iter().map(<[f64]>::to_vec).collect();
    check_row_gradients(&m, &helmholtz_problem(), &pts, 8);
}

#[test]
fn vanilla_rows_are_dense_and_correct() {
    let mut m = VanillaPinnModel::new(
        &[1, 6, 6, 1],
        InitKind::GlorotUniform,
        0,
        ConstraintOp::TanhScaled { kappa: 16.0 },
    )
    .unwrap();
    randomize(&mut m, 9);
    let p = ode_problem();
    let row = residual_row(&m, &p, &[0.3]).unwrap();
    assert_eq!(row.grad.len(), m.num_params());
    let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![-0.95 + 0.065 * i as f64]).collect();
    check_row_gradients(&m, &p, &pts, 10);
    check_field_jets(&m, &[0.123], 1e-4);
}

#[test]
fn tape_rows_agree_with_tangent_rows() {
    let m = helmholtz_model(8, 12);
    let p = helmholtz_problem();
    for x in collocation_random(2, &[6, 6], 13).unwrap().iter() {
        let a = residual_row(&m, &p, x).unwrap();
        let b = residual_row_tangent(&m, &p, x);
        assert_eq!(a.blocks, b.blocks);
        assert!(close(a.value, b.value, 1e-12, 1e-12));
        for (u, v) in a.grad.iter().zip(&b.grad) {
            assert!(close(*u, *v, 1e-10, 1e-12), "{u} vs {v}");
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences_and_fast_path() {
    let m = ode_model(8, 10, 14);
    let p = ode_problem();
    let colloc = collocation_uniform(1, &[200]).unwrap();
    let g = loss_gradient(&m, &p, &colloc).unwrap();
    let sys = ResidualSystem::new(&m, &p, &colloc).unwrap();
    let (l, g_fast) = sys.loss_and_gradient(&m);
    assert!(close(l, loss(&m, &p, &colloc), 1e-12, 0.0));
    for (a, b) in g.iter().zip(&g_fast) {
        assert!(close(*a, *b, 1e-12, 1e-12));
    }
    let mut r = rng(15);
    let base = m.params();
    for _ in 0..20 {
        let j = r.gen_range(0..base.len());
        let f = |d: f64| {
            let mut mm = m.clone();
            let mut q = base.clone();
            q[j] += d;
            mm.set_params(&q).unwrap();
            loss(&mm, &p, &colloc)
        };
        let fd = fd1(f, 0.0, 1e-4);
        assert!(close(g[j], fd, 1e-4, 1e-8), "param {j}: {} vs {fd}", g[j]);
    }
}

#[test]
fn row_support_is_local() {
    let m = ode_model(24, 20, 16);
    let p = ode_problem();
    let layout = m.layout().clone();
    for x in collocation_uniform(1, &[301]).unwrap().iter() {
        let row = residual_row(&m, &p, x).unwrap();
        let allowed: Vec<usize> = m.covering(x).iter().flat_map(|&k| layout.range(k)).collect();
        for (j, _) in row.entries(&layout) {
            assert!(allowed.contains(&j));
        }
    }
}

#[test]
fn exact_solutions_have_zero_residual() {
    let p = ode_problem();
    for x in collocation_uniform(1, &[101]).unwrap().iter() {
        let r = p.residual(x, &[p.exact_jet(&seeded_point(x, 0))]);
        assert!(r.abs() <= 1e-10, "{r} at {x:?}");
    }
    let p = helmholtz_problem();
    for x in collocation_uniform(2, &[51, 51]).unwrap().iter() {
        let jets: Vec<_> = (0..2).map(|a| p.exact_jet(&seeded_point(x, a))).collect();
        assert!(p.residual(x, &jets).abs() <= 1e-10);
    }
}

#[test]
fn zero_parameters_give_zero_field() {
    let mut m = ode_model(6, 5, 17);
    m.set_params(&vec![0.0; m.num_params()]).unwrap();
    for x in [-0.7, 0.0, 0.31] {
        let j = field_eval(&m, &[x], 0);
        assert_eq!((j.val, j.d1, j.d2), (0.0, 0.0, 0.0));
    }
}

#[test]
fn single_subdomain_is_constrained_network() {
    let m = FbpinnModel::new(
        Decomposition::D1(Decomposition1D::new(1, 0.3).unwrap()),
        &[1, 5, 1],
        InitKind::UniformWeightsZeroBias,
        4,
        ConstraintOp::TanhScaled { kappa: 2.0 },
    )
    .unwrap();
    let Decomposition::D1(d) = *m.decomposition() else { unreachable!() };
    for x in [-1.0, -0.2, 0.6, 1.0] {
        let n = d.normalize(0, fbpinn::jet::jet_const(x)).val;
        let expected = (2.0 * std::f64::consts::PI * x).tanh() * m.subnets()[0].forward(&[n]).unwrap();
        assert!(close(field_value(&m, &[x]), expected, 1e-14, 1e-15));
    }
}
