//! Second-order Taylor jets along a single coordinate direction.
//!
//! A [`Jet2`] carries `(f, f', f'')` of a scalar function restricted to one
//! spatial direction. Arithmetic follows the product and chain rules, so any
//! expression built from the primitives below yields exact first and second
//! directional derivatives. A 2D Laplacian is obtained by evaluating twice,
//! once seeded along `x` and once along `y`, and summing the `d2` parts.
//!
//! The component type is generic over [`Scalar`]. Plain `f64` is the common
//! case; [`Dual`] adds one forward-mode tangent channel, which is how the
//! derivative of a whole jet with respect to a single network parameter is
//! obtained.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Minimal real-number interface shared by `f64` and [`Dual`].
pub trait Scalar:
    Copy
    + fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Primal part, used for branching on piecewise definitions.
    fn re(self) -> f64;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// First-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    pub const fn constant(re: f64) -> Self {
        Self { re, eps: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual::new(t, (1.0 - t * t) * self.eps)
    }
    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.re.cos() * self.eps)
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.re.sin() * self.eps)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Dual::constant(1.0);
        }
        Dual::new(
            self.re.powi(n),
            f64::from(n) * self.re.powi(n - 1) * self.eps,
        )
    }
}

/// Truncated second-order Taylor value: `(f, df/ds, d²f/ds²)` along one direction `s`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Jet2<S = f64> {
    pub val: S,
    pub d1: S,
    pub d2: S,
}

impl<S: Scalar> Jet2<S> {
    #[inline]
    pub fn new(val: S, d1: S, d2: S) -> Self {
        Self { val, d1, d2 }
    }

    /// The coordinate variable itself, seeded along its own direction.
    #[inline]
    pub fn var(x: S) -> Self {
        Self::new(x, S::one(), S::zero())
    }

    #[inline]
    pub fn constant(c: S) -> Self {
        Self::new(c, S::zero(), S::zero())
    }

    #[inline]
    pub fn zero() -> Self {
        Self::constant(S::zero())
    }

    #[inline]
    pub fn scale(self, k: S) -> Self {
        Self::new(self.val * k, self.d1 * k, self.d2 * k)
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.val`: `(g(u))' = g'·u'` and `(g(u))'' = g''·u'² + g'·u''`.
    #[inline]
    pub fn chain(self, g: S, dg: S, ddg: S) -> Self {
        Self::new(g, dg * self.d1, ddg * self.d1 * self.d1 + dg * self.d2)
    }

    pub fn tanh(self) -> Self {
        let t = self.val.tanh();
        let s = S::one() - t * t;
        // tanh'' = -2·t·s
        self.chain(t, s, S::from_f64(-2.0) * t * s)
    }

    pub fn sin(self) -> Self {
        let (s, c) = (self.val.sin(), self.val.cos());
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = (self.val.sin(), self.val.cos());
        self.chain(c, -s, -c)
    }

    pub fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::constant(S::one()),
            1 => self,
            _ => {
                let nf = S::from_f64(f64::from(n));
                let dg = nf * self.val.powi(n - 1);
                let ddg = nf * S::from_f64(f64::from(n - 1)) * self.val.powi(n - 2);
                self.chain(self.val.powi(n), dg, ddg)
            }
        }
    }
}

/// Seeds a coordinate variable: `(x, 1, 0)`.
pub fn jet_var(x: f64) -> Jet2 {
    Jet2::var(x)
}

/// A constant with vanishing derivatives: `(c, 0, 0)`.
pub fn jet_const(c: f64) -> Jet2 {
    Jet2::constant(c)
}

impl<S: Scalar> Add for Jet2<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.val + o.val, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl<S: Scalar> Sub for Jet2<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.val - o.val, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl<S: Scalar> Mul for Jet2<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let two = S::from_f64(2.0);
        Self::new(
            self.val * o.val,
            self.val * o.d1 + self.d1 * o.val,
            self.val * o.d2 + two * self.d1 * o.d1 + self.d2 * o.val,
        )
    }
}

impl<S: Scalar> Neg for Jet2<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.val, -self.d1, -self.d2)
    }
}
