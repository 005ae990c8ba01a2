//! Differentiation machinery for the surrogate: a small vector-level tape
//! over a closed primitive set, generic over the scalar type. Running the
//! tape on plain `f64` gives reverse-mode first derivatives (forces);
//! running it on [`Dual`] numbers with seeded tangents gives
//! forward-over-reverse second derivatives (parameter gradients of the
//! force loss, Hessian rows).

mod fd;
mod tape;

pub use fd::{fd_check, fd_gradient, FdReport};
pub use tape::{Gradients, Graph, NodeId, ParameterSet, ValueBuffer};

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction the tape is generic over.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Primal value.
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// First-order dual number: value plus one tangent component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub t: f64,
}

impl Dual {
    pub fn new(v: f64, t: f64) -> Self {
        Self { v, t }
    }
    pub fn constant(v: f64) -> Self {
        Self { v, t: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.v + o.v, self.t + o.t)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.v - o.v, self.t - o.t)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.v * o.v, self.t * o.v + self.v * o.t)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        Dual::new(self.v * inv, (self.t - self.v * o.t * inv) * inv)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.t)
    }
}

impl Real for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual::new(e, self.t * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.v.ln(), self.t / self.v)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Dual::new(s, self.t / (2.0 * s))
    }
}

const LN_2: f64 = std::f64::consts::LN_2;

/// Shifted softplus ln(e^x + 1) - ln 2, with overflow-safe branches.
/// The branch is taken on the primal value, so dual tangents flow through
/// the smooth expression on either side.
pub fn ssp<S: Real>(x: S) -> S {
    if x.value() >= 0.0 {
        // x + ln(1 + e^-x) - ln 2
        x + (S::one() + (-x).exp()).ln() - S::from_f64(LN_2)
    } else {
        (S::one() + x.exp()).ln() - S::from_f64(LN_2)
    }
}

/// ssp'(x) = logistic(x).
pub fn ssp_prime<S: Real>(x: S) -> S {
    if x.value() >= 0.0 {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ssp_basics() {
        assert_eq!(ssp(0.0f64), 0.0);
        // Asymptotes.
        assert!((ssp(50.0) - (50.0 - LN_2)).abs() < 1e-15);
        assert!((ssp(-50.0) + LN_2).abs() < 1e-15);
        // No overflow far out.
        assert!(ssp(1e4).is_finite() && ssp(-1e4).is_finite());
    }

    #[test]
    fn ssp_derivatives_match_fd() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0, 31.0, -31.0] {
            let h = 1e-5;
            let fd1 = (ssp(x + h) - ssp(x - h)) / (2.0 * h);
            assert!((ssp_prime(x) - fd1).abs() < 1e-8, "x = {x}");
            // Second derivative through the dual type.
            let d = ssp_prime(Dual::new(x, 1.0));
            let fd2 = (ssp_prime(x + h) - ssp_prime(x - h)) / (2.0 * h);
            assert!((d.t - fd2).abs() < 1e-8, "x = {x}");
        }
        // ssp'(0) = 1/2 exactly.
        assert_eq!(ssp_prime(0.0f64), 0.5);
    }

    #[test]
    fn dual_arithmetic_chain_rule() {
        // f(x) = sqrt(ln(exp(x) * x)) at x = 2.
        let f = |x: Dual| (x.exp() * x).ln().sqrt();
        let x = Dual::new(2.0, 1.0);
        let y = f(x);
        let h = 1e-7;
        let g = |x: f64| ((x.exp() * x).ln()).sqrt();
        let fd = (g(2.0 + h) - g(2.0 - h)) / (2.0 * h);
        assert!((y.t - fd).abs() < 1e-8);
    }
}
