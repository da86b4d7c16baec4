//! Dual-number scalars for forward-mode differentiation.
//!
//! Expressions evaluate generically over [`Scalar`]. Plain `f64` gives values,
//! `Dual<f64>` gives one directional derivative per pass, and nesting
//! (`Dual<Dual<f64>>`) gives second derivatives, so gradients and Hessians
//! share a single evaluator.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn from_f64(c: f64) -> Self;
    /// Innermost value component, used for domain checks.
    fn primal(self) -> f64;
    fn div_checked(self, rhs: Self) -> Result<Self>;
    fn sqrt_checked(self) -> Result<Self>;
    fn powi_checked(self, n: i32) -> Result<Self>;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
}

/// Exponentiation by squaring; the same multiplication chain is used for every
/// scalar type so values and derivative primals agree bitwise.
fn powi_positive<T: Scalar>(base: T, n: u32) -> T {
    let mut acc = T::from_f64(1.0);
    let mut sq = base;
    let mut k = n;
    while k > 0 {
        if k & 1 == 1 {
            acc = acc * sq;
        }
        k >>= 1;
        if k > 0 {
            sq = sq * sq;
        }
    }
    acc
}

fn powi_generic<T: Scalar>(base: T, n: i32) -> Result<T> {
    if n >= 0 {
        Ok(powi_positive(base, n as u32))
    } else {
        if base.primal() == 0.0 {
            return Err(Error::Domain("zero raised to a negative power"));
        }
        T::from_f64(1.0).div_checked(powi_positive(base, n.unsigned_abs()))
    }
}

impl Scalar for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }

    fn primal(self) -> f64 {
        self
    }

    fn div_checked(self, rhs: Self) -> Result<Self> {
        if rhs == 0.0 {
            return Err(Error::Domain("division by zero"));
        }
        Ok(self / rhs)
    }

    fn sqrt_checked(self) -> Result<Self> {
        if self < 0.0 {
            return Err(Error::Domain("square root of a negative value"));
        }
        Ok(self.sqrt())
    }

    fn powi_checked(self, n: i32) -> Result<Self> {
        powi_generic(self, n)
    }

    fn sin(self) -> Self {
        f64::sin(self)
    }

    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// First-order dual number over any scalar: value plus one tangent slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub val: T,
    pub der: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(val: T, der: T) -> Self {
        Dual { val, der }
    }

    pub fn constant(c: f64) -> Self {
        Dual {
            val: T::from_f64(c),
            der: T::from_f64(0.0),
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.val + o.val, self.der + o.der)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.val - o.val, self.der - o.der)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.val * o.val, self.der * o.val + self.val * o.der)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.val, -self.der)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(c: f64) -> Self {
        Dual::constant(c)
    }

    fn primal(self) -> f64 {
        self.val.primal()
    }

    fn div_checked(self, rhs: Self) -> Result<Self> {
        let val = self.val.div_checked(rhs.val)?;
        let num = self.der * rhs.val - self.val * rhs.der;
        let der = num.div_checked(rhs.val * rhs.val)?;
        Ok(Dual::new(val, der))
    }

    fn sqrt_checked(self) -> Result<Self> {
        let root = self.val.sqrt_checked()?;
        // d(sqrt u) = du / (2 sqrt u); fails at u = 0 like the quotient it is.
        let der = self.der.div_checked(root + root)?;
        Ok(Dual::new(root, der))
    }

    fn powi_checked(self, n: i32) -> Result<Self> {
        powi_generic(self, n)
    }

    fn sin(self) -> Self {
        Dual::new(self.val.sin(), self.der * self.val.cos())
    }

    fn cos(self) -> Self {
        Dual::new(self.val.cos(), -(self.der * self.val.sin()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(val: f64, der: f64) -> Dual<f64> {
        Dual::new(val, der)
    }

    #[test]
    fn product_rule() {
        let x = d(3.0, 1.0);
        let y = d(5.0, 0.0);
        let p = x * y;
        assert_eq!(p.val, 15.0);
        assert_eq!(p.der, 5.0);
    }

    #[test]
    fn quotient_rule() {
        let x = d(1.0, 1.0);
        let q = Dual::constant(1.0).div_checked(x).unwrap();
        assert_eq!(q.val, 1.0);
        assert_eq!(q.der, -1.0);
    }

    #[test]
    fn powi_matches_monomial_derivative() {
        // d/dx x^4 = 4 x^3
        let x = d(2.0, 1.0);
        let p = x.powi_checked(4).unwrap();
        assert_eq!(p.val, 16.0);
        assert_eq!(p.der, 32.0);
        let inv = x.powi_checked(-2).unwrap();
        assert_eq!(inv.val, 0.25);
        assert_eq!(inv.der, -2.0 / 8.0);
    }

    #[test]
    fn sqrt_domain() {
        assert!(d(-1.0, 1.0).sqrt_checked().is_err());
        assert!(d(0.0, 1.0).sqrt_checked().is_err());
        let s = d(4.0, 1.0).sqrt_checked().unwrap();
        assert_eq!(s.val, 2.0);
        assert_eq!(s.der, 0.25);
    }

    #[test]
    fn second_order_via_nesting() {
        // f(x) = x^3 at x=2: f''=12
        let x: Dual<Dual<f64>> = Dual::new(d(2.0, 1.0), d(1.0, 0.0));
        let f = x * x * x;
        assert_eq!(f.val.val, 8.0);
        assert_eq!(f.val.der, 12.0);
        assert_eq!(f.der.val, 12.0);
        assert_eq!(f.der.der, 12.0);
    }

    #[test]
    fn trig_chain() {
        let x = d(0.3, 1.0);
        let s = x.sin();
        assert!((s.val - 0.3f64.sin()).abs() < 1e-15);
        assert!((s.der - 0.3f64.cos()).abs() < 1e-15);
    }
}
