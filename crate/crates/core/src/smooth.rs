//! Real functions carried together with their derivatives.
//!
//! Reward functions `f`, `g`, `h`, intensities and closed-form value
//! functions are all represented as a [`SmoothFn`]: a value closure plus
//! optional closures for the first three derivatives. Polynomials keep their
//! coefficients so that closed-form moment formulas can be applied to them.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Dense polynomial `c[0] + c[1] x + c[2] x^2 + ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(p, &c)| p as f64 * c)
            .collect();
        Polynomial { coeffs }
    }
}

/// A function with optionally supplied derivatives up to third order.
#[derive(Clone)]
pub struct SmoothFn {
    value: RealFn,
    d1: Option<RealFn>,
    d2: Option<RealFn>,
    d3: Option<RealFn>,
    poly: Option<Polynomial>,
}

impl fmt::Debug for SmoothFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFn")
            .field("d1", &self.d1.is_some())
            .field("d2", &self.d2.is_some())
            .field("d3", &self.d3.is_some())
            .field("poly", &self.poly)
            .finish()
    }
}

impl SmoothFn {
    pub fn new(value: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            d1: None,
            d2: None,
            d3: None,
            poly: None,
        }
    }

    pub fn with_d1(mut self, d1: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.d1 = Some(Arc::new(d1));
        self
    }

    pub fn with_d2(mut self, d2: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.d2 = Some(Arc::new(d2));
        self
    }

    pub fn with_d3(mut self, d3: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.d3 = Some(Arc::new(d3));
        self
    }

    /// Polynomial with all derivatives filled in exactly.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        let p0 = Polynomial::new(coeffs.to_vec());
        let p1 = p0.derivative();
        let p2 = p1.derivative();
        let p3 = p2.derivative();
        let keep = p0.clone();
        Self {
            value: Arc::new(move |x| p0.eval(x)),
            d1: Some(Arc::new(move |x| p1.eval(x))),
            d2: Some(Arc::new(move |x| p2.eval(x))),
            d3: Some(Arc::new(move |x| p3.eval(x))),
            poly: Some(keep),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::polynomial(&[c])
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        self.poly.as_ref()
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    /// Derivative of the given order (0 returns the value).
    pub fn derivative(&self, order: u8, x: f64) -> Result<f64> {
        let f = match order {
            0 => return Ok(self.value(x)),
            1 => &self.d1,
            2 => &self.d2,
            3 => &self.d3,
            _ => &None,
        };
        f.as_ref()
            .map(|f| f(x))
            .ok_or(Error::MissingDerivative { order })
    }

    pub fn d1(&self, x: f64) -> Result<f64> {
        self.derivative(1, x)
    }

    pub fn d2(&self, x: f64) -> Result<f64> {
        self.derivative(2, x)
    }

    pub fn d3(&self, x: f64) -> Result<f64> {
        self.derivative(3, x)
    }

    pub fn has_derivative(&self, order: u8) -> bool {
        match order {
            0 => true,
            1 => self.d1.is_some(),
            2 => self.d2.is_some(),
            3 => self.d3.is_some(),
            _ => false,
        }
    }

    /// Spot-checks every supplied derivative against a central difference of
    /// the next lower order, with step `1e-5 * max(1, |x|)` and relative
    /// tolerance `1e-5`.
    pub fn check_derivatives(&self, points: &[f64]) -> Result<()> {
        for &x in points {
            let step = 1e-5 * x.abs().max(1.0);
            for order in 1..=3u8 {
                if !self.has_derivative(order) {
                    break;
                }
                let lower = |y: f64| self.derivative(order - 1, y);
                let numerical = (lower(x + step)? - lower(x - step)?) / (2.0 * step);
                let supplied = self.derivative(order, x)?;
                if (numerical - supplied).abs() > 1e-5 * supplied.abs().max(1.0) {
                    return Err(Error::InconsistentDerivative {
                        order,
                        x,
                        supplied,
                        numerical,
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_derivatives() {
        // 1 - 2x + 3x^3
        let p = SmoothFn::polynomial(&[1.0, -2.0, 0.0, 3.0]);
        assert_eq!(p.value(2.0), 1.0 - 4.0 + 24.0);
        assert_eq!(p.d1(2.0).unwrap(), -2.0 + 36.0);
        assert_eq!(p.d2(2.0).unwrap(), 36.0);
        assert_eq!(p.d3(2.0).unwrap(), 18.0);
        p.check_derivatives(&[-3.0, -0.5, 0.0, 0.7, 4.0]).unwrap();
    }

    #[test]
    fn missing_derivative_is_reported() {
        let f = SmoothFn::new(|x| x.sin());
        assert_eq!(f.d2(0.0), Err(Error::MissingDerivative { order: 2 }));
    }

    #[test]
    fn wrong_derivative_is_caught() {
        let f = SmoothFn::new(|x| x.sin()).with_d1(|x| x.cos() * 1.001);
        assert!(matches!(
            f.check_derivatives(&[0.3]),
            Err(Error::InconsistentDerivative { order: 1, .. })
        ));
        let g = SmoothFn::new(|x| x.exp())
            .with_d1(|x| x.exp())
            .with_d2(|x| x.exp());
        g.check_derivatives(&[-1.0, 0.0, 2.5]).unwrap();
    }
}
