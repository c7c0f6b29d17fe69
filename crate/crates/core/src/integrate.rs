//! Forward integration of `x' = chi(x)` on the manifold and the
//! path/singular verdict for each run.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GvfError, Result};
use crate::gvf::{FieldSample, GuidingField};
use crate::path::PathCloud;

/// Per-step slack allowed on `V` before a step counts as an increase.
pub const LYAPUNOV_SLACK: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Steps between retractions of the RK4 result (stage points are
    /// always retracted).
    pub retract_every: usize,
    /// Threshold on `||e||` for path convergence.
    pub tol_path: f64,
    /// Threshold on `||chi||` for singular convergence.
    pub tol_singular: f64,
    /// How long a threshold must hold before a verdict is declared.
    pub dwell_time: f64,
    pub escape_radius: f64,
    /// Keep every `sample_stride`-th step in the trajectory record.
    pub sample_stride: usize,
    /// Stop at the first verdict instead of running to `t_max`.
    pub stop_on_verdict: bool,
    /// Depth limit for splitting a step whose result raises `V`.
    pub max_halvings: u32,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_max: 200.0,
            retract_every: 1,
            tol_path: 1e-3,
            tol_singular: 1e-6,
            dwell_time: 1.0,
            escape_radius: 1e6,
            sample_stride: 1,
            stop_on_verdict: true,
            max_halvings: 8,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GvfError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("t_max", self.t_max)?;
        positive("tol_path", self.tol_path)?;
        positive("tol_singular", self.tol_singular)?;
        positive("escape_radius", self.escape_radius)?;
        if !(self.dwell_time >= 0.0 && self.dwell_time.is_finite()) {
            return Err(GvfError::InvalidConfig(format!(
                "dwell_time must be non-negative, got {}",
                self.dwell_time
            )));
        }
        if self.retract_every == 0 || self.sample_stride == 0 {
            return Err(GvfError::InvalidConfig(
                "retract_every and sample_stride must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    PathConverging,
    SingularConverging,
    Inconclusive,
    Diverged,
    NumericFailure,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::PathConverging => "PathConverging",
            Verdict::SingularConverging => "SingularConverging",
            Verdict::Inconclusive => "Inconclusive",
            Verdict::Diverged => "Diverged",
            Verdict::NumericFailure => "NumericFailure",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub e_norm: f64,
    pub v: f64,
    pub chi_norm: f64,
    pub residual: f64,
}

/// Per-step record of `V` increases beyond [`LYAPUNOV_SLACK`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LyapunovAudit {
    pub steps: usize,
    pub violations: usize,
    /// Largest `V_{n+1} - V_n - slack (1 + V_n)` seen; negative when none.
    pub worst_excess: f64,
    /// Steps that were split because the full step raised `V`.
    pub split_steps: usize,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub verdict: Verdict,
    /// Time at which the verdict's dwell requirement was met.
    pub verdict_time: Option<f64>,
    pub audit: LyapunovAudit,
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least the initial sample")
    }

    /// Largest constraint residual over the retained samples.
    pub fn max_residual(&self) -> f64 {
        self.samples.iter().fold(0.0, |acc, s| acc.max(s.residual))
    }

    /// CSV with header `t,x_0,...,x_{m-1},e_norm,V,chi_norm,residual`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.samples.first().map_or(0, |s| s.x.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..m).map(|i| format!("x_{i}")));
        header.extend(["e_norm", "V", "chi_norm", "residual"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![fmt17(s.t)];
            row.extend(s.x.iter().map(|v| fmt17(*v)));
            row.extend([s.e_norm, s.v, s.chi_norm, s.residual].map(fmt17));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// One RK4 step with every stage point retracted and the result
/// retracted onto the manifold.
pub fn step(field: &GuidingField, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    let start = field.constraints().retract(x)?.x;
    let k1 = field.chi(&start)?;
    rk4(field, &start, &k1, dt, true)
}

fn rk4(
    field: &GuidingField,
    x: &DVector<f64>,
    k1: &DVector<f64>,
    dt: f64,
    retract_result: bool,
) -> Result<DVector<f64>> {
    let c = field.constraints();
    let stage = |p: DVector<f64>| -> Result<DVector<f64>> {
        if c.is_euclidean() {
            field.chi(&p)
        } else {
            field.chi(&c.retract(&p)?.x)
        }
    };
    let k2 = stage(x + k1 * (0.5 * dt))?;
    let k3 = stage(x + &k2 * (0.5 * dt))?;
    let k4 = stage(x + &k3 * dt)?;
    let mut next = x.clone();
    next.axpy(dt / 6.0, k1, 1.0);
    next.axpy(dt / 3.0, &k2, 1.0);
    next.axpy(dt / 3.0, &k3, 1.0);
    next.axpy(dt / 6.0, &k4, 1.0);
    if !next.iter().all(|v| v.is_finite()) {
        return Err(GvfError::NumericFailure("RK4 step produced non-finite state".into()));
    }
    if retract_result && !c.is_euclidean() {
        next = c.retract(&next)?.x;
    }
    Ok(next)
}

/// Advances by `dt`, splitting the step in halves whenever the full step
/// fails or raises `V` by more than its share of the slack.
fn advance(
    field: &GuidingField,
    from: &FieldSample,
    dt: f64,
    retract_result: bool,
    depth: u32,
    max_depth: u32,
    splits: &mut usize,
) -> Result<FieldSample> {
    let attempt = rk4(field, &from.x, &from.chi, dt, retract_result)
        .and_then(|next| field.evaluate(&next));
    let allowed = LYAPUNOV_SLACK * (1.0 + from.v) / f64::from(1u32 << depth.min(30));
    match attempt {
        Ok(next) if next.v <= from.v + allowed => Ok(next),
        Ok(next) if depth >= max_depth => Ok(next),
        Err(err) if depth >= max_depth => Err(err),
        _ => {
            *splits += 1;
            let mid = advance(field, from, 0.5 * dt, retract_result, depth + 1, max_depth, splits)?;
            advance(field, &mid, 0.5 * dt, retract_result, depth + 1, max_depth, splits)
        }
    }
}

struct VerdictTracker {
    tol_path: f64,
    tol_singular: f64,
    dwell: f64,
    path_since: Option<f64>,
    singular_since: Option<f64>,
}

impl VerdictTracker {
    fn observe(&mut self, t: f64, e_norm: f64, chi_norm: f64) -> Option<Verdict> {
        let on_path = e_norm <= self.tol_path;
        let near_singular = chi_norm <= self.tol_singular && !on_path;
        self.path_since = if on_path { self.path_since.or(Some(t)) } else { None };
        self.singular_since = if near_singular {
            self.singular_since.or(Some(t))
        } else {
            None
        };
        // absorbs rounding in t = i * dt
        let held = |since: Option<f64>| since.is_some_and(|s| t - s >= self.dwell * (1.0 - 1e-12));
        if held(self.path_since) {
            Some(Verdict::PathConverging)
        } else if held(self.singular_since) {
            Some(Verdict::SingularConverging)
        } else {
            None
        }
    }
}

fn to_sample(t: f64, field: &GuidingField, s: &FieldSample) -> Sample {
    Sample {
        t,
        x: s.x.clone(),
        e_norm: s.e.norm(),
        v: s.v,
        chi_norm: s.chi.norm(),
        residual: field.constraints().residual_norm(&s.x),
    }
}

/// Integrates from `x0` (retracted first) until a verdict or `t_max`.
///
/// Numeric failures during the run end it with
/// [`Verdict::NumericFailure`]; only an invalid configuration or an
/// unretractable `x0` is returned as an error.
pub fn integrate(
    field: &GuidingField,
    cfg: &IntegratorConfig,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    cfg.validate()?;
    if x0.len() != field.ambient_dim() {
        return Err(GvfError::DimensionMismatch(format!(
            "start has {} coordinates, scenario needs {}",
            x0.len(),
            field.ambient_dim()
        )));
    }
    let start = field.constraints().retract(x0)?.x;
    let mut current = field.evaluate(&start)?;
    let mut samples = vec![to_sample(0.0, field, &current)];
    let mut tracker = VerdictTracker {
        tol_path: cfg.tol_path,
        tol_singular: cfg.tol_singular,
        dwell: cfg.dwell_time,
        path_since: None,
        singular_since: None,
    };
    let mut audit = LyapunovAudit {
        worst_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut verdict = None;
    let mut verdict_time = None;
    let mut failure = None;
    let first = &samples[0];
    if let Some(v) = tracker.observe(0.0, first.e_norm, first.chi_norm) {
        verdict = Some(v);
        verdict_time = Some(0.0);
    }

    let n_steps = (cfg.t_max / cfg.dt).round().max(1.0) as usize;
    let mut i = 0;
    while i < n_steps && !(cfg.stop_on_verdict && verdict.is_some()) {
        i += 1;
        let t = i as f64 * cfg.dt;
        let retract_result = i % cfg.retract_every == 0;
        let next = match advance(
            field,
            &current,
            cfg.dt,
            retract_result,
            0,
            cfg.max_halvings,
            &mut audit.split_steps,
        ) {
            Ok(next) => next,
            Err(err) => {
                failure = Some(err.to_string());
                verdict = Some(Verdict::NumericFailure);
                verdict_time = Some(t);
                break;
            }
        };
        let excess = next.v - current.v - LYAPUNOV_SLACK * (1.0 + current.v);
        audit.steps += 1;
        audit.worst_excess = audit.worst_excess.max(excess);
        if excess > 0.0 {
            audit.violations += 1;
        }
        current = next;
        let sample = to_sample(t, field, &current);
        let escaped = current.x.norm() > cfg.escape_radius;
        let seen = tracker.observe(t, sample.e_norm, sample.chi_norm);
        if verdict.is_none() {
            if let Some(v) = seen {
                verdict = Some(v);
                verdict_time = Some(t);
            }
        }
        let keep = i % cfg.sample_stride == 0
            || i == n_steps
            || escaped
            || (cfg.stop_on_verdict && verdict.is_some());
        if keep {
            samples.push(sample);
        }
        if escaped {
            verdict = Some(Verdict::Diverged);
            verdict_time = Some(t);
            break;
        }
    }
    // make sure the final state is on record
    if samples.last().map(|s| s.x != current.x).unwrap_or(true) && failure.is_none() {
        samples.push(to_sample(i as f64 * cfg.dt, field, &current));
    }

    Ok(Trajectory {
        samples,
        verdict: verdict.unwrap_or(Verdict::Inconclusive),
        verdict_time,
        audit,
        failure,
    })
}

/// `(t, nearest sampled distance to the path)` for each retained sample.
pub fn audit_distance(trajectory: &Trajectory, path: &PathCloud) -> Vec<(f64, f64)> {
    trajectory
        .samples
        .iter()
        .map(|s| (s.t, path.distance(&s.x)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchItem {
    pub x0: Vec<f64>,
    pub verdict: Verdict,
    pub final_e_norm: f64,
    pub final_x: Vec<f64>,
    pub lyapunov: LyapunovAudit,
}

/// Worker pool bounded by the `GVF_THREADS` environment variable.
pub fn worker_pool() -> rayon::ThreadPool {
    let threads = std::env::var("GVF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// Element-wise [`integrate`], order preserving. Each run only keeps its
/// end points in memory.
pub fn batch(
    field: &GuidingField,
    cfg: &IntegratorConfig,
    x0s: &[DVector<f64>],
) -> Vec<Result<BatchItem>> {
    let mut lean = cfg.clone();
    lean.sample_stride = usize::MAX;
    worker_pool().install(|| {
        x0s.par_iter()
            .map(|x0| {
                let traj = integrate(field, &lean, x0)?;
                let last = traj.last();
                Ok(BatchItem {
                    x0: x0.iter().cloned().collect(),
                    verdict: traj.verdict,
                    final_e_norm: last.e_norm,
                    final_x: last.x.iter().cloned().collect(),
                    lyapunov: traj.audit,
                })
            })
            .collect()
    })
}
