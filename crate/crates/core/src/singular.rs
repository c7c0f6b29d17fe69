//! Search for zeros of the guiding field: grid scan, Newton refinement,
//! spectral classification and numeric checks of the standing
//! assumptions (singular points off the path, error bounded away from
//! zero away from the path).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GvfError, Result};
use crate::gvf::GuidingField;
use crate::integrate::worker_pool;
use crate::path::PathCloud;
use crate::so3;

pub const REFINE_TOL: f64 = 1e-10;
pub const LAMBDA_TOL: f64 = 1e-6;
pub const ASSUMPTION1_TOL: f64 = 1e-3;
/// Below this, the minimum error over a shell counts as zero.
pub const FLOOR_TOL: f64 = 1e-6;
pub const SEED_FRACTION: f64 = 1e-2;
pub const MERGE_CELLS: usize = 2;
pub const FD_STEP: f64 = 1e-5;
const NEWTON_FD_STEP: f64 = 1e-7;
const MAX_NEWTON_ITERS: usize = 50;
/// Refined points closer than this are the same point.
const DEDUP_RADIUS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Source,
    Sink,
    Saddle,
    Degenerate,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Source => "Source",
            Label::Sink => "Sink",
            Label::Saddle => "Saddle",
            Label::Degenerate => "Degenerate",
        })
    }
}

/// Label implied by real parts of a spectrum.
pub fn label_for(real_parts: &[f64]) -> Label {
    if real_parts.is_empty() || real_parts.iter().any(|r| r.abs() <= LAMBDA_TOL) {
        Label::Degenerate
    } else if real_parts.iter().all(|&r| r > LAMBDA_TOL) {
        Label::Source
    } else if real_parts.iter().all(|&r| r < -LAMBDA_TOL) {
        Label::Sink
    } else {
        Label::Saddle
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularPoint {
    pub x: Vec<f64>,
    pub chi_norm: f64,
    pub eigen_real_parts: Vec<f64>,
    pub label: Label,
    pub dist_to_path: f64,
    /// Full spectrum as `(re, im)`, same order as `eigen_real_parts`.
    #[serde(skip)]
    pub spectrum: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chart {
    /// Grid coordinates are ambient coordinates.
    Ambient,
    /// `(polar, azimuth)` on the unit sphere in R^3.
    SphereAngles,
    /// `(psi, theta, phi)` for `Rz(psi) Ry(theta) Rx(phi)` in R^9.
    EulerZyx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    /// Periodic axes sample `[min, max)`; others include both ends.
    #[serde(default)]
    pub periodic: bool,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count, periodic: false }
    }

    pub fn periodic(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count, periodic: true }
    }

    pub fn value(&self, i: usize) -> f64 {
        let span = self.max - self.min;
        if self.periodic {
            self.min + span * i as f64 / self.count as f64
        } else {
            self.min + span * i as f64 / (self.count - 1) as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
    pub chart: Chart,
}

impl GridSpec {
    pub fn ambient(axes: Vec<GridAxis>) -> Self {
        Self { axes, chart: Chart::Ambient }
    }

    pub fn validate(&self, ambient_dim: usize) -> Result<()> {
        if self.axes.iter().any(|a| a.count < 2 || a.max.partial_cmp(&a.min) != Some(std::cmp::Ordering::Greater)) {
            return Err(GvfError::InvalidConfig(
                "grid axes need count >= 2 and max > min".into(),
            ));
        }
        let (needed_axes, needed_dim) = match self.chart {
            Chart::Ambient => (ambient_dim, ambient_dim),
            Chart::SphereAngles => (2, 3),
            Chart::EulerZyx => (3, 9),
        };
        if self.axes.len() != needed_axes || ambient_dim != needed_dim {
            return Err(GvfError::DimensionMismatch(format!(
                "{:?} grid with {} axes does not fit ambient dimension {ambient_dim}",
                self.chart,
                self.axes.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of flat node `i`; the last axis varies fastest.
    pub fn unflatten(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (d, a) in self.axes.iter().enumerate().rev() {
            idx[d] = i % a.count;
            i /= a.count;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.count + i)
    }

    pub fn coords(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().zip(&self.axes).map(|(&i, a)| a.value(i)).collect()
    }

    /// Ambient point of a node.
    pub fn point(&self, idx: &[usize]) -> DVector<f64> {
        let c = self.coords(idx);
        match self.chart {
            Chart::Ambient => DVector::from_vec(c),
            Chart::SphereAngles => {
                let (st, ct) = c[0].sin_cos();
                let (sp, cp) = c[1].sin_cos();
                DVector::from_vec(vec![st * cp, st * sp, ct])
            }
            Chart::EulerZyx => so3::vectorize(&so3::euler_zyx(c[0], c[1], c[2])),
        }
    }

    /// Whether an ambient point lies in the box of an ambient grid. Chart
    /// grids cover their whole manifold.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match self.chart {
            Chart::Ambient => x.iter().zip(&self.axes).all(|(v, a)| {
                let slack = 1e-9 * (a.max - a.min);
                *v >= a.min - slack && *v <= a.max + slack
            }),
            _ => true,
        }
    }

    /// Face neighbours, wrapping on periodic axes.
    pub fn neighbors(&self, idx: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * idx.len());
        for (d, a) in self.axes.iter().enumerate() {
            for delta in [-1i64, 1] {
                let j = idx[d] as i64 + delta;
                let j = if a.periodic {
                    j.rem_euclid(a.count as i64)
                } else if j < 0 || j >= a.count as i64 {
                    continue;
                } else {
                    j
                };
                let mut n = idx.to_vec();
                n[d] = j as usize;
                out.push(self.flatten(&n));
            }
        }
        out
    }

    /// Largest per-axis index offset between two nodes, wrap aware.
    pub fn index_distance(&self, a: &[usize], b: &[usize]) -> usize {
        a.iter()
            .zip(b)
            .zip(&self.axes)
            .map(|((&i, &j), ax)| {
                let d = i.abs_diff(j);
                if ax.periodic {
                    d.min(ax.count - d)
                } else {
                    d
                }
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seed {
    pub index: Vec<usize>,
    pub x: DVector<f64>,
    pub chi_norm: f64,
}

/// A set of grid nodes where the field vanishes on an open patch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularRegion {
    pub points: Vec<Vec<f64>>,
    /// Convex hull area of the cloud; planar scenarios only.
    pub hull_area: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ScanResult {
    /// Isolated local minima of `||chi||` below the seed tolerance.
    pub seeds: Vec<Seed>,
    pub region: Option<SingularRegion>,
    pub seed_tol: f64,
    pub median_chi: f64,
    /// `||chi||` at every node, flat index order.
    pub norms: Vec<f64>,
}

/// Grid search for candidate zeros of the field.
pub fn scan(field: &GuidingField, grid: &GridSpec) -> Result<ScanResult> {
    grid.validate(field.ambient_dim())?;
    let c = field.constraints();
    let norms: Vec<f64> = worker_pool().install(|| {
        (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let p = grid.point(&grid.unflatten(i));
                let p = if c.is_euclidean() {
                    Ok(p)
                } else {
                    c.retract(&p).map(|r| r.x)
                };
                p.and_then(|p| field.chi(&p))
                    .map(|v| v.norm())
                    .unwrap_or(f64::INFINITY)
            })
            .collect()
    });
    let mut sorted: Vec<f64> = norms.iter().cloned().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let median_chi = if sorted.is_empty() {
        0.0
    } else if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let seed_tol = SEED_FRACTION * median_chi;

    let below = |i: usize| norms[i] <= seed_tol;
    let mut plateau = vec![false; norms.len()];
    let mut minima = Vec::new();
    for i in 0..norms.len() {
        if !below(i) {
            continue;
        }
        let idx = grid.unflatten(i);
        let nbrs = grid.neighbors(&idx);
        if nbrs.iter().all(|&j| norms[j] == 0.0) && norms[i] == 0.0 {
            plateau[i] = true;
        }
        if nbrs.iter().all(|&j| norms[i] <= norms[j]) {
            minima.push(i);
        }
    }

    // Everything connected below tolerance to a plateau node is region.
    let mut in_region = vec![false; norms.len()];
    let mut stack: Vec<usize> = (0..norms.len()).filter(|&i| plateau[i]).collect();
    for &i in &stack {
        in_region[i] = true;
    }
    while let Some(i) = stack.pop() {
        for j in grid.neighbors(&grid.unflatten(i)) {
            if !in_region[j] && below(j) {
                in_region[j] = true;
                stack.push(j);
            }
        }
    }

    let region = if in_region.iter().any(|&r| r) {
        let points: Vec<Vec<f64>> = (0..norms.len())
            .filter(|&i| in_region[i])
            .map(|i| grid.point(&grid.unflatten(i)).iter().cloned().collect())
            .collect();
        let hull_area = (field.ambient_dim() == 2).then(|| hull_area(&points));
        Some(SingularRegion { points, hull_area })
    } else {
        None
    };

    minima.retain(|&i| !in_region[i]);
    minima.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
    let mut seeds: Vec<Seed> = Vec::new();
    for i in minima {
        let index = grid.unflatten(i);
        let x = grid.point(&index);
        let duplicate = seeds.iter().any(|s| {
            grid.index_distance(&s.index, &index) <= MERGE_CELLS || (&s.x - &x).norm() <= 1e-9
        });
        if !duplicate {
            seeds.push(Seed { index, x, chi_norm: norms[i] });
        }
    }

    Ok(ScanResult { seeds, region, seed_tol, median_chi, norms })
}

/// Area of the convex hull of planar points (monotone chain).
pub fn hull_area(points: &[Vec<f64>]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let n = hull.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
}

fn augmented_residual(field: &GuidingField, x: &DVector<f64>) -> Result<DVector<f64>> {
    let chi = field.chi(x)?;
    let r = field.constraints().residual(x);
    let mut out = DVector::zeros(chi.len() + r.len());
    out.rows_mut(0, chi.len()).copy_from(&chi);
    out.rows_mut(chi.len(), r.len()).copy_from(&r);
    Ok(out)
}

/// Newton (Gauss-Newton with backtracking) on `[chi; F - a] = 0` from a
/// seed, followed by classification.
pub fn refine(field: &GuidingField, seed: &DVector<f64>, path: &PathCloud) -> Result<SingularPoint> {
    let c = field.constraints();
    let mut x = if c.is_euclidean() { seed.clone() } else { c.retract(seed)?.x };
    let converged = |x: &DVector<f64>| -> Result<bool> {
        Ok(field.chi(x)?.norm() <= REFINE_TOL && c.residual_norm(x) <= REFINE_TOL)
    };
    let mut done = converged(&x)?;
    let mut iters = 0;
    while !done {
        if iters == MAX_NEWTON_ITERS {
            return Err(GvfError::NewtonDiverged(format!(
                "no convergence from seed {:?} after {MAX_NEWTON_ITERS} iterations",
                seed.as_slice()
            )));
        }
        iters += 1;
        let r = augmented_residual(field, &x)?;
        let m = x.len();
        let mut jac = DMatrix::zeros(r.len(), m);
        for j in 0..m {
            let h = NEWTON_FD_STEP * (1.0 + x[j].abs());
            let mut p = x.clone();
            let mut q = x.clone();
            p[j] += h;
            q[j] -= h;
            let col = (augmented_residual(field, &p)? - augmented_residual(field, &q)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smax.is_nan() || smax <= 0.0 || smin <= 1e-10 * smax {
            let chi_norm = field.chi(&x)?.norm();
            return Ok(SingularPoint {
                x: x.iter().cloned().collect(),
                chi_norm,
                eigen_real_parts: Vec::new(),
                label: Label::Degenerate,
                dist_to_path: path.distance(&x),
                spectrum: Vec::new(),
            });
        }
        let dx = svd
            .solve(&(-&r), 0.0)
            .map_err(|e| GvfError::NumericFailure(e.to_string()))?;
        let r0 = r.norm();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            let trial = &x + &dx * scale;
            if let Ok(rt) = augmented_residual(field, &trial) {
                if rt.norm() < r0 || rt.norm() == 0.0 {
                    accepted = Some(trial);
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            if converged(&x)? {
                break;
            }
            return Err(GvfError::NewtonDiverged(format!(
                "line search stalled at {:?}",
                x.as_slice()
            )));
        };
        x = next;
        if !x.iter().all(|v| v.is_finite()) || (&x - seed).norm() > 1e3 * (1.0 + seed.norm()) {
            return Err(GvfError::NewtonDiverged("iterate left the region".into()));
        }
        if !c.is_euclidean() {
            if let Ok(p) = c.retract(&x) {
                x = p.x;
            }
        }
        done = converged(&x)?;
    }
    let chi_norm = field.chi(&x)?.norm();
    let spectrum = classify(field, &x, FD_STEP)?;
    let eigen_real_parts: Vec<f64> = spectrum.iter().map(|z| z.0).collect();
    Ok(SingularPoint {
        label: label_for(&eigen_real_parts),
        x: x.iter().cloned().collect(),
        chi_norm,
        eigen_real_parts,
        dist_to_path: path.distance(&x),
        spectrum,
    })
}

/// Spectrum `(re, im)` of the tangent-restricted Jacobian of the field,
/// sorted by descending real part.
pub fn classify(field: &GuidingField, x: &DVector<f64>, fd_step: f64) -> Result<Vec<(f64, f64)>> {
    let c = field.constraints();
    let basis = c.tangent_basis(x)?;
    let n = basis.ncols();
    let eval = |p: DVector<f64>| -> Result<DVector<f64>> {
        if c.is_euclidean() {
            field.chi(&p)
        } else {
            field.chi(&c.retract(&p)?.x)
        }
    };
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let q = basis.column(j).into_owned();
        let plus = eval(x + &q * fd_step)?;
        let minus = eval(x - &q * fd_step)?;
        let d = (plus - minus) / (2.0 * fd_step);
        jac.set_column(j, &(basis.transpose() * d));
    }
    let mut spectrum: Vec<(f64, f64)> = jac
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect();
    spectrum.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    Ok(spectrum)
}

/// Refines every seed, drops failures and points that leave the grid's
/// box, and merges duplicates.
pub fn refine_all(
    field: &GuidingField,
    seeds: &[Seed],
    grid: &GridSpec,
    path: &PathCloud,
) -> (Vec<SingularPoint>, Vec<String>) {
    let results: Vec<Result<SingularPoint>> = worker_pool().install(|| {
        seeds.par_iter().map(|s| refine(field, &s.x, path)).collect()
    });
    let mut points: Vec<SingularPoint> = Vec::new();
    let mut diagnostics = Vec::new();
    for r in results {
        match r {
            Ok(p) if !grid.contains(&DVector::from_column_slice(&p.x)) => {
                diagnostics.push(format!("refined point {:?} left the scan box", p.x));
            }
            Ok(p) => {
                let dup = points.iter().any(|q| {
                    q.x.iter().zip(&p.x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                        <= DEDUP_RADIUS
                });
                if !dup {
                    points.push(p);
                }
            }
            Err(e) => diagnostics.push(e.to_string()),
        }
    }
    (points, diagnostics)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShellResult {
    pub kappa: f64,
    pub samples: usize,
    pub min_e_norm: f64,
    pub argmin: Option<Vec<f64>>,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// Smallest distance from a singular point (or region node) to the path.
    pub min_singular_distance: Option<f64>,
    pub assumption1_passed: bool,
    pub shells: Vec<ShellResult>,
    pub floor_tol: f64,
}

impl AssumptionReport {
    pub fn flagged(&self) -> bool {
        !self.assumption1_passed || self.shells.iter().any(|s| s.flagged)
    }
}

/// Assumption 1 from the singular set, Assumption 2 as the minimum of
/// `||e||` over candidates at sampled distance `>= kappa` from the path.
pub fn check_assumptions(
    field: &GuidingField,
    singular: &[DVector<f64>],
    path: &PathCloud,
    shells: &[f64],
    candidates: &[DVector<f64>],
) -> AssumptionReport {
    let min_singular_distance = singular
        .iter()
        .map(|p| path.distance(p))
        .min_by(f64::total_cmp);
    let assumption1_passed = min_singular_distance.is_none_or(|d| d > ASSUMPTION1_TOL);
    let scored: Vec<(f64, f64)> = worker_pool().install(|| {
        candidates
            .par_iter()
            .map(|x| (path.distance(x), field.path_error(x).norm()))
            .collect()
    });
    let shells = shells
        .iter()
        .map(|&kappa| {
            let mut best: Option<(f64, usize)> = None;
            let mut samples = 0;
            for (i, &(d, e)) in scored.iter().enumerate() {
                if d >= kappa {
                    samples += 1;
                    if best.is_none_or(|(b, _)| e < b) {
                        best = Some((e, i));
                    }
                }
            }
            let min_e_norm = best.map_or(f64::INFINITY, |b| b.0);
            ShellResult {
                kappa,
                samples,
                min_e_norm,
                argmin: best.map(|(_, i)| candidates[i].iter().cloned().collect()),
                flagged: min_e_norm < FLOOR_TOL,
            }
        })
        .collect();
    AssumptionReport {
        min_singular_distance,
        assumption1_passed,
        shells,
        floor_tol: FLOOR_TOL,
    }
}

/// Points displaced from path samples within the manifold, at the given
/// radii. Directions: the surface gradients (both signs) and random
/// directions normal to the path, all inside the tangent space.
pub fn shell_offsets(
    field: &GuidingField,
    path: &PathCloud,
    radii: &[f64],
    stride: usize,
    random_directions: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let c = field.constraints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for p in path.points().iter().step_by(stride.max(1)) {
        let Ok(sample) = field.evaluate(p) else { continue };
        let Ok(basis) = c.tangent_basis(p) else { continue };
        let tangent = sample.bot.normalize();
        let normal_part = |v: DVector<f64>| -> Option<DVector<f64>> {
            let t = &basis * (basis.transpose() * v);
            let t = if tangent.iter().all(|v| v.is_finite()) {
                &t - &tangent * tangent.dot(&t)
            } else {
                t
            };
            let n = t.norm();
            (n > 1e-12).then(|| t / n)
        };
        let mut dirs: Vec<DVector<f64>> = Vec::new();
        for g in &sample.grads {
            if let Some(d) = normal_part(g.clone()) {
                dirs.push(-&d);
                dirs.push(d);
            }
        }
        for _ in 0..random_directions {
            let v = DVector::from_fn(p.len(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
            if let Some(d) = normal_part(v) {
                dirs.push(d);
            }
        }
        for d in &dirs {
            for &r in radii {
                let q = p + d * r;
                let q = if c.is_euclidean() {
                    Some(q)
                } else {
                    c.retract(&q).ok().map(|m| m.x)
                };
                if let Some(q) = q {
                    out.push(q);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{analytic, coordinate};
    use crate::gvf::{PropagationSign, SurfaceStack};
    use crate::manifold::ConstraintSystem;

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

    fn ellipse_path() -> PathCloud {
        PathCloud::new(
            (0..4096)
                .map(|i| {
                    let t = i as f64 * std::f64::consts::TAU / 4096.0;
                    v(&[2.0 * t.cos(), t.sin()])
                })
                .collect(),
        )
    }

    fn box2(n: usize) -> GridSpec {
        GridSpec::ambient(vec![GridAxis::new(-3.0, 3.0, n), GridAxis::new(-3.0, 3.0, n)])
    }

    #[test]
    fn labels_follow_real_parts() {
        assert_eq!(label_for(&[1.0, 0.5]), Label::Source);
        assert_eq!(label_for(&[-1.0, -0.5]), Label::Sink);
        assert_eq!(label_for(&[1.0, -0.5]), Label::Saddle);
        assert_eq!(label_for(&[1.0, 1e-9]), Label::Degenerate);
    }

    #[test]
    fn grid_indexing_round_trips() {
        let g = GridSpec::ambient(vec![
            GridAxis::new(0.0, 1.0, 3),
            GridAxis::periodic(0.0, 1.0, 4),
        ]);
        for i in 0..g.len() {
            assert_eq!(g.flatten(&g.unflatten(i)), i);
        }
        assert_eq!(g.neighbors(&[0, 0]).len(), 3);
        assert_eq!(g.index_distance(&[0, 0], &[0, 3]), 1);
        assert_eq!(g.axes[1].value(3), 0.75);
        assert_eq!(g.axes[0].value(2), 1.0);
    }

    #[test]
    fn ellipse_scan_finds_origin_only() {
        let result = scan(&ellipse(), &box2(61)).unwrap();
        assert_eq!(result.seeds.len(), 1);
        assert!(result.seeds[0].x.norm() < 1e-12);
        assert!(result.region.is_none());
    }

    #[test]
    fn line_scan_is_empty() {
        let f = GuidingField::new(
            ConstraintSystem::euclidean("plane", 2).unwrap(),
            SurfaceStack::new(vec![coordinate(2, 1)], vec![1.0], PropagationSign::Forward)
                .unwrap(),
        )
        .unwrap();
        assert!(scan(&f, &box2(61)).unwrap().seeds.is_empty());
    }

    #[test]
    fn refine_from_offset_seed_reaches_origin() {
        let p = refine(&ellipse(), &v(&[0.05, -0.04]), &ellipse_path()).unwrap();
        assert!(p.x.iter().all(|c| c.abs() < 1e-9));
        assert!(p.chi_norm <= REFINE_TOL);
        assert_eq!(p.label, Label::Source);
        assert!((p.dist_to_path - 1.0).abs() < 1e-3);
    }

    #[test]
    fn ellipse_origin_spectrum() {
        // J = [[0.5, -2], [0.5, 2]] at the origin: 1.25 +- i sqrt(0.4375)
        let s = classify(&ellipse(), &v(&[0.0, 0.0]), FD_STEP).unwrap();
        assert!((s[0].0 - 1.25).abs() < 1e-6 && (s[1].0 - 1.25).abs() < 1e-6);
        assert!((s[0].1.abs() - 0.4375f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn hull_of_unit_square() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
        ];
        assert!((hull_area(&pts) - 1.0).abs() < 1e-15);
        assert_eq!(hull_area(&pts[..2]), 0.0);
    }

    #[test]
    fn ellipse_assumptions_pass() {
        let f = ellipse();
        let path = ellipse_path();
        let cands = shell_offsets(&f, &path, &[0.5, 0.75, 1.0], 16, 4, 1);
        let report = check_assumptions(&f, &[v(&[0.0, 0.0])], &path, &[0.5], &cands);
        assert!((report.min_singular_distance.unwrap() - 1.0).abs() < 1e-3);
        assert!(!report.flagged());
        assert!(report.shells[0].samples > 0);
    }

    #[test]
    fn bad_grid_is_rejected() {
        let g = GridSpec::ambient(vec![GridAxis::new(-1.0, 1.0, 1)]);
        assert!(scan(&ellipse(), &g).is_err());
    }
}
