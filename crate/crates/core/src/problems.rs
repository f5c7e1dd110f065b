//! Model boundary-value problems and collocation grids.
//!
//! Every problem is written as `r = L[ũ] - f`, with `L` a linear differential
//! operator acting on the per-direction jets of the constrained field `ũ`
//! and `f` a forcing term that depends on position only. Linearity of `L` is
//! relied on by the model to precompute per-point sensitivities.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::decomp::ConstraintOp;
use crate::jet::{Jet2, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem {0:?} (expected \"ode1d_hf\" or \"helmholtz2d\")")]
    UnknownProblem(String),
    #[error("collocation needs at least 2 points per axis, got {0}")]
    TooFewPoints(usize),
    #[error("expected {expected} per-axis count(s), got {got}")]
    CountArity { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProblemKind {
    /// `u' = fπ·cos(fπx)` on `[-1, 1]` with `u(0) = 0`; exact `u = sin(fπx)`.
    Ode1d { freq: f64 },
    /// `Δu + k²u = g` on `[-1, 1]²`, homogeneous Dirichlet data, exact
    /// `u = (1 - x²)(1 - y²)`.
    Helmholtz2d { wavenumber: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Problem {
    pub kind: ProblemKind,
    pub constraint: ConstraintOp,
}

pub fn ode_problem() -> Problem {
    Problem {
        kind: ProblemKind::Ode1d { freq: 16.0 },
        constraint: ConstraintOp::TanhScaled { kappa: 16.0 },
    }
}

pub fn helmholtz_problem() -> Problem {
    Problem {
        kind: ProblemKind::Helmholtz2d { wavenumber: 1.0 },
        constraint: ConstraintOp::ProductBubble,
    }
}

impl Problem {
    pub fn by_name(name: &str) -> Result<Self, ProblemError> {
        match name {
            "ode1d_hf" => Ok(ode_problem()),
            "helmholtz2d" => Ok(helmholtz_problem()),
            other => Err(ProblemError::UnknownProblem(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ProblemKind::Ode1d { .. } => "ode1d_hf",
            ProblemKind::Helmholtz2d { .. } => "helmholtz2d",
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ProblemKind::Ode1d { .. } => 1,
            ProblemKind::Helmholtz2d { .. } => 2,
        }
    }

    /// `L[ũ]` from the field jets, `jets[axis]` seeded along `axis`.
    pub fn operator<S: Scalar>(&self, jets: &[Jet2<S>]) -> S {
        match self.kind {
            ProblemKind::Ode1d { .. } => jets[0].d1,
            ProblemKind::Helmholtz2d { wavenumber } => {
                jets[0].d2 + jets[1].d2 + jets[0].val * S::from_f64(wavenumber * wavenumber)
            }
        }
    }

    pub fn forcing(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Ode1d { freq } => freq * PI * (freq * PI * x[0]).cos(),
            ProblemKind::Helmholtz2d { wavenumber } => {
                let (x, y) = (x[0], x[1]);
                -4.0 + 2.0 * (x * x + y * y) + wavenumber * wavenumber * (1.0 - x * x) * (1.0 - y * y)
            }
        }
    }

    pub fn residual(&self, x: &[f64], jets: &[Jet2]) -> f64 {
        self.operator(jets) - self.forcing(x)
    }

    /// Exact solution evaluated through jet arithmetic.
    pub fn exact_jet<S: Scalar>(&self, x: &[Jet2<S>]) -> Jet2<S> {
        match self.kind {
            ProblemKind::Ode1d { freq } => x[0].scale(S::from_f64(freq * PI)).sin(),
            ProblemKind::Helmholtz2d { .. } => {
                let one = Jet2::constant(S::one());
                (one - x[0].powi(2)) * (one - x[1].powi(2))
            }
        }
    }

    pub fn exact(&self, x: &[f64]) -> f64 {
        let jets: Vec<Jet2> = x.iter().map(|&v| Jet2::constant(v)).collect();
        self.exact_jet(&jets).val
    }
}

/// Coordinate jets at `x`, seeded along `axis`.
pub fn seeded_point(x: &[f64], axis: usize) -> Vec<Jet2> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| if i == axis { Jet2::var(v) } else { Jet2::constant(v) })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollocationScheme {
    UniformGrid,
    RandomUniform { seed: u64 },
}

/// Points in `[-1, 1]^dim`, stored flat and sorted lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    dim: usize,
    coords: Vec<f64>,
    pub scheme: CollocationScheme,
}

impl CollocationSet {
    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Self {
        Self {
            dim,
            coords: points.iter().flat_map(|p| p.iter().copied()).collect(),
            scheme: CollocationScheme::UniformGrid,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }
}

fn check_counts(dim: usize, counts: &[usize]) -> Result<(), ProblemError> {
    if counts.len() != dim {
        return Err(ProblemError::CountArity {
            expected: dim,
            got: counts.len(),
        });
    }
    if let Some(&n) = counts.iter().find(|&&n| n < 2) {
        return Err(ProblemError::TooFewPoints(n));
    }
    Ok(())
}

pub fn linspace(n: usize) -> Vec<f64> {
    let h = 2.0 / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { 1.0 } else { -1.0 + h * i as f64 })
        .collect()
}

/// Equispaced tensor grid including the endpoints.
pub fn collocation_uniform(dim: usize, counts: &[usize]) -> Result<CollocationSet, ProblemError> {
    check_counts(dim, counts)?;
    let axes: Vec<Vec<f64>> = counts.iter().map(|&n| linspace(n)).collect();
    let mut coords = Vec::with_capacity(counts.iter().product::<usize>() * dim);
    match dim {
        1 => coords.extend_from_slice(&axes[0]),
        _ => {
            for &x in &axes[0] {
                for &y in &axes[1] {
                    coords.push(x);
                    coords.push(y);
                }
            }
        }
    }
    Ok(CollocationSet {
        dim,
        coords,
        scheme: CollocationScheme::UniformGrid,
    })
}

/// `Π counts` independent uniform samples, sorted lexicographically.
pub fn collocation_random(
    dim: usize,
    counts: &[usize],
    seed: u64,
) -> Result<CollocationSet, ProblemError> {
    check_counts(dim, counts)?;
    let n: usize = counts.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut set = CollocationSet::from_points(dim, &points);
    set.scheme = CollocationScheme::RandomUniform { seed };
    Ok(set)
}
