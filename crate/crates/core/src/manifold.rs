//! Embedded manifolds `M = F^{-1}(a)` in `R^m`, described by `k` scalar
//! constraints with analytic gradients.
//!
//! Tangent projection uses the Gram matrix of the constraint gradients, so
//! it is exact whether or not the gradients are mutually orthogonal.
//! Retraction is Gauss-Newton on `F(x) - a` with the minimum-norm step.

use nalgebra::{DMatrix, DVector};

use crate::error::{GvfError, Result};
use crate::functions::SharedFn;
use crate::linalg;

/// Maximum constraint residual accepted as "on the manifold".
pub const ON_MANIFOLD_TOL: f64 = 1e-10;
/// Largest residual from which a retraction is attempted.
pub const CAPTURE_THRESHOLD: f64 = 0.5;
pub const MAX_NEWTON_ITERS: usize = 50;
/// Relative threshold on the smallest singular value of the constraint
/// Jacobian, scaled by `max(1, ||J||)`.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetractionSettings {
    pub tol: f64,
    pub capture: f64,
    pub max_iters: usize,
}

impl Default for RetractionSettings {
    fn default() -> Self {
        Self {
            tol: ON_MANIFOLD_TOL,
            capture: CAPTURE_THRESHOLD,
            max_iters: MAX_NEWTON_ITERS,
        }
    }
}

/// A point together with its constraint residual `max_j |f_j(x) - a_j|`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    pub x: DVector<f64>,
    pub residual: f64,
}

#[derive(Clone)]
pub struct ConstraintSystem {
    name: String,
    ambient_dim: usize,
    constraints: Vec<SharedFn>,
    regular_value: Vec<f64>,
    retraction: RetractionSettings,
}

impl std::fmt::Debug for ConstraintSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstraintSystem")
            .field("name", &self.name)
            .field("ambient_dim", &self.ambient_dim)
            .field("constraints", &self.constraints.len())
            .field("regular_value", &self.regular_value)
            .finish()
    }
}

impl ConstraintSystem {
    /// `M = R^m` with no constraints.
    pub fn euclidean(name: impl Into<String>, ambient_dim: usize) -> Result<Self> {
        Self::new(name, ambient_dim, Vec::new(), Vec::new())
    }

    pub fn new(
        name: impl Into<String>,
        ambient_dim: usize,
        constraints: Vec<SharedFn>,
        regular_value: Vec<f64>,
    ) -> Result<Self> {
        let k = constraints.len();
        if regular_value.len() != k {
            return Err(GvfError::DimensionMismatch(format!(
                "{k} constraints but {} regular values",
                regular_value.len()
            )));
        }
        if k >= ambient_dim || ambient_dim - k < 2 {
            return Err(GvfError::InvalidConfig(format!(
                "manifold dimension m - k = {} - {k} must be at least 2",
                ambient_dim
            )));
        }
        Ok(Self {
            name: name.into(),
            ambient_dim,
            constraints,
            regular_value,
            retraction: RetractionSettings::default(),
        })
    }

    pub fn with_retraction(mut self, settings: RetractionSettings) -> Self {
        self.retraction = settings;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// `n = m - k`.
    pub fn manifold_dim(&self) -> usize {
        self.ambient_dim - self.constraints.len()
    }

    pub fn is_euclidean(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn retraction_settings(&self) -> RetractionSettings {
        self.retraction
    }

    pub fn constraint_gradients(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        self.constraints
            .iter()
            .map(|f| f.gradient(x.as_slice()))
            .collect()
    }

    /// `F(x) - a`; empty when `k = 0`.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints
                .iter()
                .zip(&self.regular_value)
                .map(|(f, a)| f.value(x.as_slice()) - a),
        )
    }

    /// `max_j |f_j(x) - a_j|`, zero when `k = 0`.
    pub fn residual_norm(&self, x: &DVector<f64>) -> f64 {
        self.residual(x).iter().fold(0.0, |acc, r| acc.max(r.abs()))
    }

    /// The `k x m` constraint Jacobian.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.constraints.len(), self.ambient_dim);
        for (row, f) in self.constraints.iter().enumerate() {
            jac.set_row(row, &f.gradient(x.as_slice()).transpose());
        }
        jac
    }

    /// Smallest singular value of the constraint Jacobian; `+inf` when
    /// there are no constraints.
    pub fn check_regularity(&self, x: &DVector<f64>) -> f64 {
        if self.is_euclidean() {
            return f64::INFINITY;
        }
        let jac = self.jacobian(x);
        let gram = &jac * jac.transpose();
        let (lo, _) = linalg::symmetric_extremes(&gram);
        lo.max(0.0).sqrt()
    }

    /// Constraint geometry at `x`, reusable for several projections.
    pub fn frame(&self, x: &DVector<f64>) -> Result<TangentFrame> {
        if self.is_euclidean() {
            return Ok(TangentFrame {
                ambient_dim: self.ambient_dim,
                jacobian: None,
            });
        }
        let jac = self.jacobian(x);
        if !jac.iter().all(|v| v.is_finite()) {
            return Err(GvfError::NumericFailure(
                "constraint Jacobian is not finite".into(),
            ));
        }
        let gram = &jac * jac.transpose();
        let rank_threshold = |hi: f64| RANK_TOL * hi.max(0.0).sqrt().max(1.0);
        // the eigenvalue solve is only needed when the cheap enclosure
        // cannot certify full rank
        let (g_lo, g_hi) = linalg::gershgorin_bounds(&gram);
        let (sigma_min, threshold) = if g_lo > 0.0 && g_lo.sqrt() >= rank_threshold(g_hi) {
            (g_lo.sqrt(), rank_threshold(g_hi))
        } else {
            let (lo, hi) = linalg::symmetric_extremes(&gram);
            (lo.max(0.0).sqrt(), rank_threshold(hi))
        };
        if sigma_min < threshold {
            return Err(GvfError::RankDeficient {
                sigma_min,
                threshold,
            });
        }
        let chol = gram.cholesky().ok_or(GvfError::RankDeficient {
            sigma_min,
            threshold,
        })?;
        Ok(TangentFrame {
            ambient_dim: self.ambient_dim,
            jacobian: Some((jac, chol)),
        })
    }

    /// Orthogonal projection of `v` onto `T_x M`.
    pub fn project_to_tangent(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.frame(x)?.project(v))
    }

    /// Columns form an orthonormal basis of `T_x M`.
    pub fn tangent_basis(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let frame = self.frame(x)?;
        if self.is_euclidean() {
            return Ok(DMatrix::identity(self.ambient_dim, self.ambient_dim));
        }
        let projector = frame.projector();
        Ok(linalg::projector_range(&projector, self.manifold_dim()))
    }

    pub fn retract(&self, x: &DVector<f64>) -> Result<ManifoldPoint> {
        self.retract_with(x, self.retraction)
    }

    /// Gauss-Newton iterations `x <- x - J^T (J J^T)^{-1} (F(x) - a)` until
    /// the residual is within `settings.tol`.
    pub fn retract_with(
        &self,
        x: &DVector<f64>,
        settings: RetractionSettings,
    ) -> Result<ManifoldPoint> {
        if !linalg::all_finite(x) {
            return Err(GvfError::NumericFailure("retraction input".into()));
        }
        if self.is_euclidean() {
            return Ok(ManifoldPoint {
                x: x.clone(),
                residual: 0.0,
            });
        }
        let mut current = x.clone();
        let mut r = self.residual(&current);
        let mut res = r.amax();
        if res <= settings.tol {
            return Ok(ManifoldPoint {
                x: current,
                residual: res,
            });
        }
        if res.is_nan() || res > settings.capture {
            return Err(GvfError::OutsideCaptureBasin {
                residual: res,
                capture: settings.capture,
            });
        }
        for _ in 0..settings.max_iters {
            let frame = self.frame(&current)?;
            current -= frame.normal_correction(&r);
            r = self.residual(&current);
            res = r.amax();
            if !res.is_finite() {
                return Err(GvfError::NumericFailure("retraction residual".into()));
            }
            if res <= settings.tol {
                return Ok(ManifoldPoint {
                    x: current,
                    residual: res,
                });
            }
        }
        Err(GvfError::RetractionDiverged {
            iters: settings.max_iters,
            residual: res,
        })
    }
}

/// Constraint Jacobian and its Gram factorisation at one point.
pub struct TangentFrame {
    ambient_dim: usize,
    jacobian: Option<(DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)>,
}

impl TangentFrame {
    /// `v - J^T (J J^T)^{-1} J v`; the identity without constraints.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.jacobian {
            None => v.clone(),
            Some((jac, chol)) => {
                let mut lambda = jac * v;
                chol.solve_mut(&mut lambda);
                v - jac.transpose() * lambda
            }
        }
    }

    /// Minimum-norm `d` with `J d = r`.
    pub fn normal_correction(&self, r: &DVector<f64>) -> DVector<f64> {
        match &self.jacobian {
            None => DVector::zeros(self.ambient_dim),
            Some((jac, chol)) => {
                let mut lambda = r.clone();
                chol.solve_mut(&mut lambda);
                jac.transpose() * lambda
            }
        }
    }

    /// The `m x m` tangent projector.
    pub fn projector(&self) -> DMatrix<f64> {
        let mut p = DMatrix::identity(self.ambient_dim, self.ambient_dim);
        if let Some((jac, chol)) = &self.jacobian {
            let mut inner = jac.clone();
            chol.solve_mut(&mut inner);
            p -= jac.transpose() * inner;
        }
        p
    }

    /// Constraint gradients as the rows of the Jacobian.
    pub fn jacobian(&self) -> Option<&DMatrix<f64>> {
        self.jacobian.as_ref().map(|(j, _)| j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::analytic;

    fn sphere() -> ConstraintSystem {
        let f = analytic(
            |x: &[f64]| x[0] * x[0] + x[1] * x[1] + x[2] * x[2],
            |x: &[f64]| DVector::from_vec(vec![2.0 * x[0], 2.0 * x[1], 2.0 * x[2]]),
        );
        ConstraintSystem::new("sphere", 3, vec![f], vec![1.0]).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn residual_examples() {
        let s = sphere();
        assert_eq!(s.residual(&v(&[0.0, 0.0, 1.0])).as_slice(), &[0.0]);
        assert_eq!(s.residual(&v(&[1.0, 1.0, 1.0])).as_slice(), &[2.0]);
        let e = ConstraintSystem::euclidean("plane", 2).unwrap();
        assert_eq!(e.residual(&v(&[3.0, 4.0])).len(), 0);
    }

    #[test]
    fn projection_onto_north_pole_tangent_plane() {
        let s = sphere();
        let w = s
            .project_to_tangent(&v(&[0.0, 0.0, 1.0]), &v(&[1.0, 2.0, 3.0]))
            .unwrap();
        assert_eq!(w.as_slice(), &[1.0, 2.0, 0.0]);
        let w = s
            .project_to_tangent(&v(&[1.0, 0.0, 0.0]), &v(&[0.0, 0.0, 1.0]))
            .unwrap();
        assert_eq!(w.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn euclidean_projection_is_identity() {
        let e = ConstraintSystem::euclidean("r3", 3).unwrap();
        let x = v(&[0.3, -1.0, 2.0]);
        let u = v(&[5.0, 6.0, -7.0]);
        assert_eq!(e.project_to_tangent(&x, &u).unwrap(), u);
        assert_eq!(e.retract(&x).unwrap().x, x);
        assert_eq!(e.check_regularity(&x), f64::INFINITY);
    }

    #[test]
    fn radial_retraction_onto_sphere() {
        let p = sphere().retract(&v(&[0.0, 0.0, 1.001])).unwrap();
        assert!((p.x - v(&[0.0, 0.0, 1.0])).norm() < 1e-12);
        assert!(p.residual <= ON_MANIFOLD_TOL);
    }

    #[test]
    fn retraction_leaves_on_manifold_points_alone() {
        let x = v(&[0.0, 0.6, 0.8]);
        let p = sphere().retract(&x).unwrap();
        assert_eq!(p.x, x);
    }

    #[test]
    fn regularity_values() {
        let s = sphere();
        assert!((s.check_regularity(&v(&[0.0, 0.0, 1.0])) - 2.0).abs() < 1e-15);
        assert_eq!(s.check_regularity(&v(&[0.0, 0.0, 0.0])), 0.0);
    }

    #[test]
    fn rank_deficient_at_origin() {
        let s = sphere();
        let err = s
            .project_to_tangent(&v(&[0.0, 0.0, 0.0]), &v(&[1.0, 0.0, 0.0]))
            .unwrap_err();
        assert!(matches!(err, GvfError::RankDeficient { .. }));
    }

    #[test]
    fn capture_basin_is_enforced() {
        let err = sphere().retract(&v(&[0.0, 0.0, 2.0])).unwrap_err();
        assert!(matches!(err, GvfError::OutsideCaptureBasin { .. }));
    }

    #[test]
    fn too_few_dimensions_rejected() {
        let f = analytic(|x: &[f64]| x[0], |_: &[f64]| DVector::from_vec(vec![1.0, 0.0]));
        assert!(ConstraintSystem::new("line", 2, vec![f], vec![0.0]).is_err());
    }

    #[test]
    fn tangent_basis_is_orthonormal_and_tangent() {
        let s = sphere();
        let x = v(&[0.0, 0.6, 0.8]);
        let q = s.tangent_basis(&x).unwrap();
        assert_eq!(q.ncols(), 2);
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-12);
        let normal = v(&[0.0, 1.2, 1.6]);
        assert!((q.transpose() * normal).norm() < 1e-12);
    }
}
