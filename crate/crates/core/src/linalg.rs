//! Small dense helpers that the hot evaluation paths use without going
//! through nalgebra's general decompositions.

use nalgebra::{DMatrix, DVector};

/// Solves the symmetric positive definite system `g x = b` in place by
/// Cholesky factorisation. Returns `false` when `g` is not numerically
/// positive definite.
pub fn spd_solve(g: &DMatrix<f64>, b: &mut DVector<f64>) -> bool {
    match g.clone().cholesky() {
        Some(chol) => {
            chol.solve_mut(b);
            b.iter().all(|v| v.is_finite())
        }
        None => false,
    }
}

/// Extreme eigenvalues of a symmetric matrix, `(min, max)`.
pub fn symmetric_extremes(g: &DMatrix<f64>) -> (f64, f64) {
    let n = g.nrows();
    match n {
        0 => (f64::INFINITY, 0.0),
        1 => (g[(0, 0)], g[(0, 0)]),
        2 => {
            let (a, b, d) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (mean - rad, mean + rad)
        }
        _ => {
            let eigenvalues = g.symmetric_eigenvalues();
            let min = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = eigenvalues
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            (min, max)
        }
    }
}

/// Gershgorin enclosure `(lo, hi)` of the spectrum of a symmetric matrix.
pub fn gershgorin_bounds(g: &DMatrix<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..g.nrows() {
        let radius: f64 = (0..g.ncols()).filter(|&j| j != i).map(|j| g[(i, j)].abs()).sum();
        lo = lo.min(g[(i, i)] - radius);
        hi = hi.max(g[(i, i)] + radius);
    }
    (lo, hi)
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Orthonormal basis (as columns) for the `dim`-dimensional dominant
/// eigenspace of the symmetric projector `p`.
pub fn projector_range(p: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let eig = p.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..p.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut basis = DMatrix::zeros(p.nrows(), dim);
    for (col, &idx) in order.iter().take(dim).enumerate() {
        basis.set_column(col, &eig.eigenvectors.column(idx));
    }
    basis
}
