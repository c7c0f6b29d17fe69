//! Scalar functions on the ambient space together with their analytic
//! gradients. Constraint functions and surface functions share this
//! representation.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub trait ScalarFn: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
}

pub type SharedFn = Arc<dyn ScalarFn>;

/// A function given by a pair of closures.
pub struct Analytic<F, G> {
    value: F,
    gradient: G,
}

impl<F, G> ScalarFn for Analytic<F, G>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64]) -> DVector<f64> + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        (self.gradient)(x)
    }
}

pub fn analytic<F, G>(value: F, gradient: G) -> SharedFn
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    G: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
{
    Arc::new(Analytic { value, gradient })
}

/// `x[index]`.
pub fn coordinate(dim: usize, index: usize) -> SharedFn {
    analytic(
        move |x: &[f64]| x[index],
        move |_: &[f64]| {
            let mut g = DVector::zeros(dim);
            g[index] = 1.0;
            g
        },
    )
}

/// One term `coeff * prod x_i^e_i` of a sparse polynomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub exponents: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    /// Fails when a term's exponent list does not match `dim`.
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self, String> {
        for (i, t) in terms.iter().enumerate() {
            if t.exponents.len() != dim {
                return Err(format!(
                    "term {i} has {} exponents, expected {dim}",
                    t.exponents.len()
                ));
            }
            if !t.coeff.is_finite() {
                return Err(format!("term {i} has a non-finite coefficient"));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }
}

impl ScalarFn for Polynomial {
    fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.exponents
                    .iter()
                    .zip(x)
                    .fold(t.coeff, |acc, (&e, &xi)| acc * xi.powi(e as i32))
            })
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for t in &self.terms {
            for (d, &e) in t.exponents.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let mut term = t.coeff * e as f64;
                for (i, (&ei, &xi)) in t.exponents.iter().zip(x).enumerate() {
                    let power = if i == d { ei - 1 } else { ei };
                    term *= xi.powi(power as i32);
                }
                g[d] += term;
            }
        }
        g
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "polynomial({} terms in {} vars)", self.terms.len(), self.dim)
    }
}

/// `exp(1 / (1 - x^2 - y^2))` outside the unit disk and zero inside.
/// Smooth everywhere but not real-analytic on the unit circle.
pub fn bump(x: f64, y: f64) -> f64 {
    let s = x * x + y * y;
    if s > 1.0 {
        (1.0 / (1.0 - s)).exp()
    } else {
        0.0
    }
}

/// The surface function `4 - (x^2 + y^2) * bump(x, y)` on the plane. Its
/// gradient vanishes identically on the closed unit disk.
#[derive(Clone, Copy, Debug, Default)]
pub struct BumpSurface;

impl ScalarFn for BumpSurface {
    fn value(&self, x: &[f64]) -> f64 {
        4.0 - (x[0] * x[0] + x[1] * x[1]) * bump(x[0], x[1])
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let s = x[0] * x[0] + x[1] * x[1];
        if s <= 1.0 {
            return DVector::zeros(2);
        }
        let b = bump(x[0], x[1]);
        let d = 1.0 - s;
        // d/dx [s b] = 2x b + s b 2x / (1-s)^2
        let radial = 2.0 * b * (1.0 + s / (d * d));
        DVector::from_vec(vec![-radial * x[0], -radial * x[1]])
    }
}
