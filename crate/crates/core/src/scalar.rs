use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Arithmetic element for tensors and network kernels.
///
/// Implemented for `f32`, `f64` and [`Dual`]. Every kernel in this crate is
/// written against this trait so the same code path can run plain training
/// (f32), high-precision gradient checks (f64) and forward-mode tangent
/// propagation (`Dual<f64>`, `Dual<f32>`).
pub trait Scalar:
    Copy
    + Clone
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;

    /// Primal value. For duals this drops the tangent.
    fn value(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;

    /// Branch select on primal values: returns `self` if its value is at
    /// least `other`'s, else `other`. Duals carry the chosen branch's tangent.
    fn max_by_value(self, other: Self) -> Self;

    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn value(self) -> f64 {
        self as f64
    }
    #[inline]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f32::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    #[inline]
    fn max_by_value(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn max_by_value(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Forward-mode dual number `v + t*dr` truncated at first order in `dr`.
///
/// Running a computation on duals yields, alongside every primal value, its
/// directional derivative with respect to whatever perturbation direction the
/// inputs' tangents encode. Comparisons and branch selection look only at
/// primal values, so control flow matches the plain-scalar run exactly.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Dual<S> {
    pub v: S,
    pub t: S,
}

impl<S: Scalar> Dual<S> {
    #[inline]
    pub fn new(v: S, t: S) -> Self {
        Dual { v, t }
    }

    /// Constant: primal value with zero tangent.
    #[inline]
    pub fn constant(v: S) -> Self {
        Dual { v, t: S::ZERO }
    }
}

impl<S: Scalar> PartialOrd for Dual<S> {
    #[inline]
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.v.partial_cmp(&other.v)
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.v + rhs.v, self.t + rhs.t)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.v - rhs.v, self.t - rhs.t)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.v * rhs.v, self.t * rhs.v + self.v * rhs.t)
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = S::ONE / rhs.v;
        Dual::new(self.v * inv, (self.t - self.v * inv * rhs.t) * inv)
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.v, -self.t)
    }
}

impl<S: Scalar> AddAssign for Dual<S> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<S: Scalar> SubAssign for Dual<S> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<S: Scalar> MulAssign for Dual<S> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    const ZERO: Self = Dual { v: S::ZERO, t: S::ZERO };
    const ONE: Self = Dual { v: S::ONE, t: S::ZERO };

    #[inline]
    fn from_f64(x: f64) -> Self {
        Dual::constant(S::from_f64(x))
    }

    #[inline]
    fn value(self) -> f64 {
        self.v.value()
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual::new(e, self.t * e)
    }

    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.v.ln(), self.t / self.v)
    }

    #[inline]
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        let half = S::from_f64(0.5);
        Dual::new(r, self.t * half / r)
    }

    #[inline]
    fn tanh(self) -> Self {
        let th = self.v.tanh();
        Dual::new(th, self.t * (S::ONE - th * th))
    }

    #[inline]
    fn max_by_value(self, other: Self) -> Self {
        if self.v >= other.v {
            self
        } else {
            other
        }
    }

    #[inline]
    fn is_finite(self) -> bool {
        self.v.is_finite() && self.t.is_finite()
    }
}

/// Relu on any scalar; duals in the dead region get a zero tangent.
#[inline]
pub fn relu<S: Scalar>(x: S) -> S {
    x.max_by_value(S::ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dual_of(v: f64, t: f64) -> Dual<f64> {
        Dual::new(v, t)
    }

    /// Central finite difference of f at x.
    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn dual_matches_finite_differences_on_composite() {
        // f(x) = tanh(sqrt(exp(x) + x*x)) / (x + 2) + ln(x + 3)
        let f = |x: f64| (x.exp() + x * x).sqrt().tanh() / (x + 2.0) + (x + 3.0).ln();
        let fe = |x: Dual<f64>| {
            let two = Dual::from_f64(2.0);
            let three = Dual::from_f64(3.0);
            (x.exp() + x * x).sqrt().tanh() / (x + two) + (x + three).ln()
        };
        for &x in &[0.3, 1.7, -0.9, 2.5] {
            let d = fe(dual_of(x, 1.0));
            assert!((d.v - f(x)).abs() < 1e-12);
            assert!(
                (d.t - fd(f, x)).abs() < 1e-6,
                "x={x}: dual {} vs fd {}",
                d.t,
                fd(f, x)
            );
        }
    }

    #[test]
    fn dual_relu_zeroes_tangent_in_dead_region() {
        let alive = relu(dual_of(0.5, 3.0));
        assert_eq!(alive.v, 0.5);
        assert_eq!(alive.t, 3.0);
        let dead = relu(dual_of(-0.5, 3.0));
        assert_eq!(dead.v, 0.0);
        assert_eq!(dead.t, 0.0);
    }

    #[test]
    fn dual_division_quotient_rule() {
        let a = dual_of(2.0, 0.7);
        let b = dual_of(4.0, -0.3);
        let q = a / b;
        assert!((q.v - 0.5).abs() < 1e-15);
        // (a'b - ab') / b^2 = (0.7*4 - 2*(-0.3)) / 16
        assert!((q.t - (0.7 * 4.0 + 2.0 * 0.3) / 16.0).abs() < 1e-15);
    }

    #[test]
    fn comparisons_use_primal_only() {
        let a = dual_of(1.0, -100.0);
        let b = dual_of(2.0, 100.0);
        assert!(a < b);
        assert_eq!(a.max_by_value(b).v, 2.0);
        assert_eq!(a.max_by_value(b).t, 100.0);
    }
}
