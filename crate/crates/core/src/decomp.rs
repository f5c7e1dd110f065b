//! Overlapping decomposition of `[-1, 1]^d`, cosine partition-of-unity windows,
//! per-subdomain input normalization and hard boundary constraints.
//!
//! In 1D, subdomain `k` of `K` is the interval `(a_k, b_k)` with
//! `a_k = (2k - δ)/K - 1` and `b_k = (2(k+1) + δ)/K - 1`. Its window rises as
//! `½(1 - cos(π(x - a_k)/r))` over `(a_k, a_k + r)`, equals one on the plateau
//! `[a_k + r, b_k - r]` and falls as `½(1 - cos(π(x - b_k)/r))` over
//! `(b_k - r, b_k)`, where `r = 2δ/K`. The falling ramp of `k` and the rising
//! ramp of `k + 1` occupy the same interval and sum to one.
//!
//! The outermost ramps are clamped: subdomain `0` has no rising ramp and
//! subdomain `K - 1` no falling ramp, so the windows form a partition of unity
//! on the whole closed domain. Ramps are open intervals and plateaus closed,
//! which makes the window jets sum to `(1, 0, 0)` exactly at breakpoints too.
//!
//! 2D decompositions are tensor products; subdomain `(i, j)` has the flat
//! index `i * ky + j`.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::{Jet2, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum DecompError {
    #[error("at least one subdomain is required")]
    NoSubdomains,
    #[error("overlap must lie in (0, 1), got {0}")]
    Overlap(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition1D {
    count: usize,
    delta: f64,
}

impl Decomposition1D {
    pub fn new(count: usize, delta: f64) -> Result<Self, DecompError> {
        if count == 0 {
            return Err(DecompError::NoSubdomains);
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DecompError::Overlap(delta));
        }
        Ok(Self { count, delta })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lower(&self, k: usize) -> f64 {
        self.edge(k, false)
    }

    pub fn upper(&self, k: usize) -> f64 {
        self.edge(k + 1, true)
    }

    pub fn ramp_width(&self) -> f64 {
        2.0 * self.delta / self.count as f64
    }

    /// `(k, a_k, b_k)` for every subdomain.
    pub fn bounds_table(&self) -> Vec<(usize, f64, f64)> {
        (0..self.count)
            .map(|k| (k, self.lower(k), self.upper(k)))
            .collect()
    }

    /// Ramp edges `(2j ∓ δ)/K - 1`. Shared by neighbouring windows so that
    /// breakpoint comparisons agree bit for bit.
    fn edge(&self, j: usize, upper: bool) -> f64 {
        let shift = if upper { self.delta } else { -self.delta };
        (2.0 * j as f64 + shift) / self.count as f64 - 1.0
    }

    pub fn window<S: Scalar>(&self, k: usize, x: Jet2<S>) -> Jet2<S> {
        let r = self.ramp_width();
        let (a, rise_end) = (self.edge(k, false), self.edge(k, true));
        let (fall_start, b) = (self.edge(k + 1, false), self.edge(k + 1, true));
        let rising = k > 0;
        let falling = k + 1 < self.count;
        let v = x.val.re();
        let half_cos_ramp = |edge: f64| {
            let arg = (x - Jet2::constant(S::from_f64(edge))).scale(S::from_f64(PI / r));
            (Jet2::constant(S::one()) - arg.cos()).scale(S::from_f64(0.5))
        };
        if (rising && v <= a) || (falling && v >= b) {
            Jet2::zero()
        } else if rising && v < rise_end {
            half_cos_ramp(a)
        } else if falling && v > fall_start {
            half_cos_ramp(b)
        } else {
            Jet2::constant(S::one())
        }
    }

    pub fn window_value(&self, k: usize, x: f64) -> f64 {
        self.window(k, Jet2::constant(x)).val
    }

    /// Affine map of `(a_k, b_k)` onto `(-1, 1)`.
    pub fn normalize<S: Scalar>(&self, k: usize, x: Jet2<S>) -> Jet2<S> {
        let (a, b) = (self.lower(k), self.upper(k));
        let s = S::from_f64(2.0 / (b - a));
        Jet2::new(
            (x.val - S::from_f64(a)) * s - S::one(),
            x.d1 * s,
            x.d2 * s,
        )
    }

    pub fn denormalize(&self, k: usize, y: f64) -> f64 {
        let (a, b) = (self.lower(k), self.upper(k));
        a + (y + 1.0) * 0.5 * (b - a)
    }

    pub fn covering(&self, x: f64) -> Vec<usize> {
        (0..self.count)
            .filter(|&k| self.window_value(k, x) > 0.0)
            .collect()
    }

    /// Open support of window `k` clipped to the domain.
    fn support(&self, k: usize) -> (f64, f64) {
        let lo = if k == 0 { -1.0 } else { self.lower(k).max(-1.0) };
        let hi = if k + 1 == self.count { 1.0 } else { self.upper(k).min(1.0) };
        (lo, hi)
    }

    pub fn overlaps(&self, k: usize, l: usize) -> bool {
        let (a0, b0) = self.support(k);
        let (a1, b1) = self.support(l);
        a0.max(a1) < b0.min(b1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition2D {
    pub x: Decomposition1D,
    pub y: Decomposition1D,
}

impl Decomposition2D {
    pub fn new(kx: usize, ky: usize, deltax: f64, deltay: f64) -> Result<Self, DecompError> {
        Ok(Self {
            x: Decomposition1D::new(kx, deltax)?,
            y: Decomposition1D::new(ky, deltay)?,
        })
    }

    pub fn count(&self) -> usize {
        self.x.count() * self.y.count()
    }

    pub fn split_index(&self, k: usize) -> (usize, usize) {
        (k / self.y.count(), k % self.y.count())
    }

    pub fn flat_index(&self, i: usize, j: usize) -> usize {
        i * self.y.count() + j
    }

    pub fn window<S: Scalar>(&self, k: usize, x: Jet2<S>, y: Jet2<S>) -> Jet2<S> {
        let (i, j) = self.split_index(k);
        self.x.window(i, x) * self.y.window(j, y)
    }

    pub fn covering(&self, x: f64, y: f64) -> Vec<usize> {
        let cx = self.x.covering(x);
        let cy = self.y.covering(y);
        cx.iter()
            .flat_map(|&i| cy.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.flat_index(i, j))
            .collect()
    }
}

/// A 1D or 2D decomposition, addressed by flat subdomain index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decomposition {
    D1(Decomposition1D),
    D2(Decomposition2D),
}

impl Decomposition {
    pub fn dim(&self) -> usize {
        match self {
            Decomposition::D1(_) => 1,
            Decomposition::D2(_) => 2,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            Decomposition::D1(d) => d.count(),
            Decomposition::D2(d) => d.count(),
        }
    }

    /// Window jet of subdomain `k`, with coordinate jets `x[axis]` seeded along
    /// a common direction.
    pub fn window<S: Scalar>(&self, k: usize, x: &[Jet2<S>]) -> Jet2<S> {
        match self {
            Decomposition::D1(d) => d.window(k, x[0]),
            Decomposition::D2(d) => d.window(k, x[0], x[1]),
        }
    }

    pub fn window_value(&self, k: usize, x: &[f64]) -> f64 {
        let jets: Vec<Jet2> = x.iter().map(|&v| Jet2::constant(v)).collect();
        self.window(k, &jets).val
    }

    /// Normalized network inputs for subdomain `k`.
    pub fn normalize<S: Scalar>(&self, k: usize, x: &[Jet2<S>]) -> Vec<Jet2<S>> {
        match self {
            Decomposition::D1(d) => vec![d.normalize(k, x[0])],
            Decomposition::D2(d) => {
                let (i, j) = d.split_index(k);
                vec![d.x.normalize(i, x[0]), d.y.normalize(j, x[1])]
            }
        }
    }

    /// All `k` with `ω_k(x) > 0`, ascending.
    pub fn covering(&self, x: &[f64]) -> Vec<usize> {
        match self {
            Decomposition::D1(d) => d.covering(x[0]),
            Decomposition::D2(d) => d.covering(x[0], x[1]),
        }
    }

    /// Pairs `(k, l)`, `k <= l`, whose window supports intersect inside the domain.
    pub fn adjacency(&self) -> BTreeSet<(usize, usize)> {
        let n = self.count();
        let mut set = BTreeSet::new();
        for k in 0..n {
            for l in k..n {
                let hit = match self {
                    Decomposition::D1(d) => d.overlaps(k, l),
                    Decomposition::D2(d) => {
                        let (ik, jk) = d.split_index(k);
                        let (il, jl) = d.split_index(l);
                        d.x.overlaps(ik, il) && d.y.overlaps(jk, jl)
                    }
                };
                if hit {
                    set.insert((k, l));
                }
            }
        }
        set
    }
}

/// Hard boundary constraint `ũ(x) = c(x)·u(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintOp {
    /// `c(x) = tanh(κπx)`, vanishing at `x = 0`.
    TanhScaled { kappa: f64 },
    /// `c(x, y) = (1 - x²)(1 - y²)`, vanishing on the boundary of `[-1, 1]²`.
    ProductBubble,
}

impl ConstraintOp {
    pub fn dim(&self) -> usize {
        match self {
            ConstraintOp::TanhScaled { .. } => 1,
            ConstraintOp::ProductBubble => 2,
        }
    }

    pub fn jet<S: Scalar>(&self, x: &[Jet2<S>]) -> Jet2<S> {
        match *self {
            ConstraintOp::TanhScaled { kappa } => x[0].scale(S::from_f64(kappa * PI)).tanh(),
            ConstraintOp::ProductBubble => bubble(x[0]) * bubble(x[1]),
        }
    }

    pub fn apply<S: Scalar>(&self, x: &[Jet2<S>], u: Jet2<S>) -> Jet2<S> {
        self.jet(x) * u
    }
}

fn bubble<S: Scalar>(s: Jet2<S>) -> Jet2<S> {
    Jet2::constant(S::one()) - s.powi(2)
}
