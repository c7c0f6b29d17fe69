//! The guiding vector field
//!
//! ```text
//! chi(x) = bot(x) - sum_i k_i phi_i(x) grad phi_i(x)
//! ```
//!
//! on an embedded manifold. `grad phi_i` is the tangent projection of the
//! ambient gradient of the extension of `phi_i`, and `bot` is the formal
//! determinant
//!
//! ```text
//! det[ grad f_1, ..., grad f_k, grad phi_1, ..., grad phi_{n-1}, (b_1 .. b_m)^T ]
//! ```
//!
//! expanded along the basis column. With `k = 0` and `n = 2` it is the
//! 90 degree rotation of the gradient; with `n = 3` it is the cross product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GvfError, Result};
use crate::functions::SharedFn;
use crate::linalg;
use crate::manifold::{ConstraintSystem, RetractionSettings, TangentFrame};

/// Direction of travel along the path. Flipping it negates `bot`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PropagationSign {
    #[default]
    Forward,
    Backward,
}

impl PropagationSign {
    pub fn value(self) -> f64 {
        match self {
            PropagationSign::Forward => 1.0,
            PropagationSign::Backward => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            PropagationSign::Forward => PropagationSign::Backward,
            PropagationSign::Backward => PropagationSign::Forward,
        }
    }
}

/// The `n - 1` surface functions (as ambient extensions) whose common zero
/// set is the desired path, with their gains.
#[derive(Clone)]
pub struct SurfaceStack {
    surfaces: Vec<SharedFn>,
    gains: Vec<f64>,
    sign: PropagationSign,
}

impl SurfaceStack {
    pub fn new(surfaces: Vec<SharedFn>, gains: Vec<f64>, sign: PropagationSign) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(GvfError::InvalidConfig("no surface functions".into()));
        }
        if surfaces.len() != gains.len() {
            return Err(GvfError::DimensionMismatch(format!(
                "{} surface functions but {} gains",
                surfaces.len(),
                gains.len()
            )));
        }
        if let Some(k) = gains.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(GvfError::InvalidConfig(format!(
                "gains must be positive and finite, got {k}"
            )));
        }
        Ok(Self {
            surfaces,
            gains,
            sign,
        })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn sign(&self) -> PropagationSign {
        self.sign
    }

    pub fn surfaces(&self) -> &[SharedFn] {
        &self.surfaces
    }
}

/// Everything one field evaluation produces at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub x: DVector<f64>,
    pub chi: DVector<f64>,
    /// Riemannian gradients `grad phi_i`, tangent to the manifold.
    pub grads: Vec<DVector<f64>>,
    /// The orthogonal (propagation) term.
    pub bot: DVector<f64>,
    /// Path-following error `(phi_1, ..., phi_{n-1})`.
    pub e: DVector<f64>,
    /// `e^T K e`.
    pub v: f64,
    /// `-2 ||sum_i k_i phi_i grad phi_i||^2`.
    pub v_dot: f64,
    /// `sum_i k_i phi_i grad phi_i`.
    pub conv_term: DVector<f64>,
}

/// A guiding vector field: constraint system plus surface stack.
#[derive(Clone)]
pub struct GuidingField {
    constraints: ConstraintSystem,
    surfaces: SurfaceStack,
}

impl GuidingField {
    pub fn new(constraints: ConstraintSystem, surfaces: SurfaceStack) -> Result<Self> {
        let expected = constraints.manifold_dim() - 1;
        if surfaces.len() != expected {
            return Err(GvfError::DimensionMismatch(format!(
                "manifold of dimension {} needs {expected} surface functions, got {}",
                constraints.manifold_dim(),
                surfaces.len()
            )));
        }
        Ok(Self {
            constraints,
            surfaces,
        })
    }

    pub fn constraints(&self) -> &ConstraintSystem {
        &self.constraints
    }

    pub fn surfaces(&self) -> &SurfaceStack {
        &self.surfaces
    }

    pub fn ambient_dim(&self) -> usize {
        self.constraints.ambient_dim()
    }

    /// The same field with the opposite direction of travel.
    pub fn with_sign(&self, sign: PropagationSign) -> Self {
        let mut out = self.clone();
        out.surfaces.sign = sign;
        out
    }

    pub fn path_error(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.surfaces.len(),
            self.surfaces.surfaces.iter().map(|f| f.value(x.as_slice())),
        )
    }

    /// `V = e^T K e`.
    pub fn lyapunov(&self, x: &DVector<f64>) -> f64 {
        self.lyapunov_of_error(&self.path_error(x))
    }

    fn lyapunov_of_error(&self, e: &DVector<f64>) -> f64 {
        e.iter()
            .zip(&self.surfaces.gains)
            .map(|(ei, k)| k * ei * ei)
            .sum()
    }

    pub fn riemannian_gradient(&self, x: &DVector<f64>, i: usize) -> Result<DVector<f64>> {
        let f = self.surfaces.surfaces.get(i).ok_or_else(|| {
            GvfError::DimensionMismatch(format!("surface index {i} out of range"))
        })?;
        let frame = self.constraints.frame(x)?;
        Ok(frame.project(&f.gradient(x.as_slice())))
    }

    pub fn riemannian_gradients(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let frame = self.constraints.frame(x)?;
        Ok(self.gradients_in(&frame, x))
    }

    fn gradients_in(&self, frame: &TangentFrame, x: &DVector<f64>) -> Vec<DVector<f64>> {
        self.surfaces
            .surfaces
            .iter()
            .map(|f| frame.project(&f.gradient(x.as_slice())))
            .collect()
    }

    pub fn orthogonal_term(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let frame = self.constraints.frame(x)?;
        let grads = self.gradients_in(&frame, x);
        Ok(self.orthogonal_from(&frame, &grads))
    }

    fn orthogonal_from(&self, frame: &TangentFrame, grads: &[DVector<f64>]) -> DVector<f64> {
        let m = self.ambient_dim();
        let mut columns = DMatrix::zeros(m, m - 1);
        let mut next = 0;
        if let Some(jac) = frame.jacobian() {
            columns.columns_mut(0, jac.nrows()).copy_from(&jac.transpose());
            next = jac.nrows();
        }
        for (offset, g) in grads.iter().enumerate() {
            columns.set_column(next + offset, g);
        }
        let mut bot = cofactor_of_columns(&columns);
        bot *= self.surfaces.sign.value();
        bot
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<FieldSample> {
        let frame = self.constraints.frame(x)?;
        let grads = self.gradients_in(&frame, x);
        let bot = self.orthogonal_from(&frame, &grads);
        let e = self.path_error(x);
        let mut conv_term = DVector::zeros(self.ambient_dim());
        for ((g, ei), k) in grads.iter().zip(e.iter()).zip(&self.surfaces.gains) {
            conv_term.axpy(k * ei, g, 1.0);
        }
        let chi = &bot - &conv_term;
        let v = self.lyapunov_of_error(&e);
        let v_dot = -2.0 * conv_term.norm_squared();
        if !(linalg::all_finite(&chi) && v.is_finite()) {
            return Err(GvfError::NumericFailure(format!(
                "field evaluation at {:?}",
                x.as_slice()
            )));
        }
        Ok(FieldSample {
            x: x.clone(),
            chi,
            grads,
            bot,
            e,
            v,
            v_dot,
            conv_term,
        })
    }

    /// `chi(x)` alone.
    pub fn chi(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(x)?.chi)
    }

    /// Analytic `V_dot` next to a forward difference of `V` over one
    /// retracted Euler step of size `h` along `chi`.
    pub fn lyapunov_rate_fd_check(&self, x: &DVector<f64>, h: f64) -> Result<(f64, f64)> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(GvfError::InvalidConfig(format!("step must be positive, got {h}")));
        }
        let sample = self.evaluate(x)?;
        let stepped = x + &sample.chi * h;
        let tight = RetractionSettings {
            tol: 1e-15,
            ..self.constraints.retraction_settings()
        };
        let next = match self.constraints.retract_with(&stepped, tight) {
            Ok(p) => p.x,
            // Residual floor reached before 1e-15; take the default tolerance.
            Err(GvfError::RetractionDiverged { .. }) => self.constraints.retract(&stepped)?.x,
            Err(err) => return Err(err),
        };
        let fd = (self.lyapunov(&next) - sample.v) / h;
        Ok((sample.v_dot, fd))
    }
}

/// Expands `det[c_1, ..., c_{m-1}, (b_1 .. b_m)^T]` along the basis column:
/// component `i` (1-based) is `(-1)^(i+m) det(M_i)` where `M_i` drops row
/// `i` of the `m x (m-1)` matrix of columns.
pub fn cofactor_vector(columns: &[DVector<f64>], m: usize) -> DVector<f64> {
    assert_eq!(columns.len() + 1, m, "need m - 1 columns");
    let mut mat = DMatrix::zeros(m, m - 1);
    for (c, col) in columns.iter().enumerate() {
        mat.set_column(c, col);
    }
    cofactor_of_columns(&mat)
}

/// [`cofactor_vector`] for the columns of an `m x (m - 1)` matrix.
pub fn cofactor_of_columns(columns: &DMatrix<f64>) -> DVector<f64> {
    let m = columns.nrows();
    assert_eq!(columns.ncols() + 1, m, "need m - 1 columns");
    let n = m - 1;
    // P A = L U with partial pivoting. The last row of U vanishes, so
    // det[A | v] = sign(P) prod(U_ii) (L^-1 P v)_m and the cofactor vector
    // is sign(P) prod(U_ii) P^T L^-T e_m.
    let mut a: Vec<f64> = (0..m)
        .flat_map(|r| (0..n).map(move |c| columns[(r, c)]))
        .collect();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut scale = 1.0;
    for col in 0..n {
        let pivot = (col..m)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        let p = a[pivot * n + col];
        if p == 0.0 {
            return DVector::zeros(m);
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            perm.swap(col, pivot);
            scale = -scale;
        }
        scale *= p;
        for row in (col + 1)..m {
            let factor = a[row * n + col] / p;
            a[row * n + col] = factor;
            if factor != 0.0 {
                for j in (col + 1)..n {
                    a[row * n + j] -= factor * a[col * n + j];
                }
            }
        }
    }
    let mut y = vec![0.0; m];
    y[n] = 1.0;
    for i in (0..n).rev() {
        y[i] = -((i + 1)..m).map(|r| a[r * n + i] * y[r]).sum::<f64>();
    }
    let mut out = DVector::zeros(m);
    for (i, &row) in perm.iter().enumerate() {
        out[row] = scale * y[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{analytic, coordinate};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn ellipse() -> GuidingField {
        let phi = analytic(
            |x: &[f64]| x[0] * x[0] / 4.0 + x[1] * x[1] - 1.0,
            |x: &[f64]| v(&[x[0] / 2.0, 2.0 * x[1]]),
        );
        GuidingField::new(
            ConstraintSystem::euclidean("plane", 2).unwrap(),
            SurfaceStack::new(vec![phi], vec![1.0], PropagationSign::Forward).unwrap(),
        )
        .unwrap()
    }

    fn sphere_field() -> GuidingField {
        let f = analytic(
            |x: &[f64]| x[0] * x[0] + x[1] * x[1] + x[2] * x[2],
            |x: &[f64]| v(&[2.0 * x[0], 2.0 * x[1], 2.0 * x[2]]),
        );
        GuidingField::new(
            ConstraintSystem::new("sphere", 3, vec![f], vec![1.0]).unwrap(),
            SurfaceStack::new(vec![coordinate(3, 2)], vec![1.0], PropagationSign::Forward)
                .unwrap(),
        )
        .unwrap()
    }

    fn assert_close(a: &DVector<f64>, b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn cross_product_is_cofactor_expansion() {
        let p = v(&[1.0, 2.0, 3.0]);
        let q = v(&[-4.0, 0.5, 2.0]);
        let bot = cofactor_vector(&[p.clone(), q.clone()], 3);
        assert_close(&bot, p.cross(&q).as_slice(), 1e-14);
    }

    #[test]
    fn matches_the_laplace_expansion() {
        let m = 6;
        let cols: Vec<DVector<f64>> = (0..m - 1)
            .map(|c| DVector::from_fn(m, |r, _| ((3 * r + 7 * c) as f64 * 0.37).sin() + 0.1 * c as f64))
            .collect();
        let b = cofactor_vector(&cols, m);
        for (i, bi) in b.iter().enumerate() {
            let mut full = DMatrix::zeros(m, m);
            for (c, col) in cols.iter().enumerate() {
                full.set_column(c, col);
            }
            full[(i, m - 1)] = 1.0;
            let expected = full.determinant();
            assert!((bi - expected).abs() < 1e-12 * (1.0 + expected.abs()), "{i}: {bi} vs {expected}");
        }
    }

    #[test]
    fn rank_deficient_columns_give_zero() {
        let p = v(&[1.0, 2.0, 3.0]);
        assert_close(&cofactor_vector(&[p.clone(), &p * 2.0], 3), &[0.0, 0.0, 0.0], 1e-15);
    }

    #[test]
    fn rotation_in_the_plane() {
        // E = [[0, -1], [1, 0]]
        assert_close(&cofactor_vector(&[v(&[1.0, 0.0])], 2), &[0.0, 1.0], 0.0);
        assert_close(&cofactor_vector(&[v(&[0.0, 1.0])], 2), &[-1.0, 0.0], 0.0);
    }

    #[test]
    fn ellipse_gradient_and_orthogonal_term() {
        let f = ellipse();
        let x = v(&[2.0, 0.0]);
        assert_close(&f.riemannian_gradient(&x, 0).unwrap(), &[1.0, 0.0], 0.0);
        assert_close(&f.orthogonal_term(&x).unwrap(), &[0.0, 1.0], 0.0);
        assert_close(&f.path_error(&x), &[0.0], 0.0);
        assert_close(&f.path_error(&v(&[0.0, 0.0])), &[-1.0], 0.0);
    }

    #[test]
    fn sphere_gradient_and_orthogonal_term() {
        let f = sphere_field();
        let x = v(&[0.0, 0.6, 0.8]);
        assert_close(&f.riemannian_gradient(&x, 0).unwrap(), &[0.0, -0.48, 0.36], 1e-15);
        assert_close(&f.orthogonal_term(&x).unwrap(), &[1.2, 0.0, 0.0], 1e-15);
        let s = f.evaluate(&x).unwrap();
        assert_close(&s.chi, &[1.2, 0.384, -0.288], 1e-15);
        assert!((s.v_dot + 0.4608).abs() < 1e-15);
        let pole = f.riemannian_gradient(&v(&[0.0, 0.0, 1.0]), 0).unwrap();
        assert_close(&pole, &[0.0, 0.0, 0.0], 0.0);
    }

    #[test]
    fn on_path_field_is_pure_propagation() {
        let f = ellipse();
        let s = f.evaluate(&v(&[2.0, 0.0])).unwrap();
        assert_eq!(s.chi, s.bot);
        assert_eq!(s.v, 0.0);
        assert_eq!(s.v_dot, 0.0);
    }

    #[test]
    fn sign_flip_negates_only_the_propagation_term() {
        let f = sphere_field();
        let g = f.with_sign(PropagationSign::Backward);
        let x = v(&[0.36, 0.48, 0.8]);
        let a = f.evaluate(&x).unwrap();
        let b = g.evaluate(&x).unwrap();
        assert_eq!(a.bot, -b.bot);
        assert_eq!(a.conv_term, b.conv_term);
    }

    #[test]
    fn lyapunov_rate_matches_forward_difference() {
        let f = ellipse();
        let (analytic, fd) = f.lyapunov_rate_fd_check(&v(&[3.0, 0.1]), 1e-6).unwrap();
        assert!(analytic < 0.0 && fd < 0.0);
        assert!((analytic - fd).abs() <= 1e-3 * analytic.abs());
        let (on_path, _) = f.lyapunov_rate_fd_check(&v(&[2.0, 0.0]), 1e-6).unwrap();
        assert_eq!(on_path, 0.0);
    }

    #[test]
    fn rejects_wrong_surface_count() {
        let stack = SurfaceStack::new(
            vec![coordinate(3, 1), coordinate(3, 2)],
            vec![1.0, 1.0],
            PropagationSign::Forward,
        )
        .unwrap();
        let c = ConstraintSystem::euclidean("plane", 2).unwrap();
        assert!(GuidingField::new(c, stack).is_err());
    }

    #[test]
    fn rejects_nonpositive_gain() {
        assert!(SurfaceStack::new(vec![coordinate(2, 1)], vec![0.0], PropagationSign::Forward)
            .is_err());
    }
}
