//! Rotation matrices and the column-stacked embedding of SO(3) in R^9.

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

pub fn rot(axis: Axis, theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Columns of `a` stacked into `(a11, a21, a31, a12, ..., a33)`.
pub fn vectorize(a: &Matrix3<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

pub fn matrix(x: &DVector<f64>) -> Matrix3<f64> {
    Matrix3::from_column_slice(&x.as_slice()[..9])
}

/// `max |A^T A - I|` entrywise, plus `|det A - 1|`.
pub fn orthonormality_residual(x: &DVector<f64>) -> f64 {
    let a = matrix(x);
    let gram = a.transpose() * a - Matrix3::identity();
    gram.amax().max((a.determinant() - 1.0).abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    P1,
    P2,
    Neither,
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Component::P1 => "P1",
            Component::P2 => "P2",
            Component::Neither => "neither",
        })
    }
}

/// Which component of `{Rz(t)} U {Rx(pi) Rz(t)}` contains `x`, if any.
pub fn membership(x: &DVector<f64>, tol: f64) -> Component {
    let a = matrix(x);
    let off = [a[(0, 2)], a[(1, 2)], a[(2, 0)], a[(2, 1)]];
    if off.iter().any(|v| v.abs() > tol) {
        return Component::Neither;
    }
    if a[(2, 2)] >= 1.0 - tol {
        Component::P1
    } else if a[(2, 2)] <= -(1.0 - tol) {
        Component::P2
    } else {
        Component::Neither
    }
}

/// `Rz(psi) Ry(theta) Rx(phi)`.
pub fn euler_zyx(psi: f64, theta: f64, phi: f64) -> Matrix3<f64> {
    rot(Axis::Z, psi) * rot(Axis::Y, theta) * rot(Axis::X, phi)
}

/// Parses a product like `rx(0.78)ry(-0.78)rz(1)` into its matrix.
pub fn parse_product(spec: &str) -> Result<Matrix3<f64>, String> {
    let mut rest = spec.trim();
    let mut out = Matrix3::identity();
    if rest.is_empty() {
        return Err("empty rotation product".into());
    }
    while !rest.is_empty() {
        let axis = match rest.get(..3) {
            Some("rx(") => Axis::X,
            Some("ry(") => Axis::Y,
            Some("rz(") => Axis::Z,
            _ => return Err(format!("expected rx(..), ry(..) or rz(..) at '{rest}'")),
        };
        let close = rest.find(')').ok_or_else(|| format!("missing ')' in '{rest}'"))?;
        let angle: f64 = rest[3..close]
            .trim()
            .parse()
            .map_err(|_| format!("bad angle '{}'", &rest[3..close]))?;
        out *= rot(axis, angle);
        rest = rest[close + 1..].trim_start();
    }
    Ok(out)
}
