//! Command-line front end. Every command writes its results under
//! `--out` and returns the process exit code:
//! 0 success, 1 usage error, 2 numeric failure, 3 assumption finding.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::error::GvfError;
use crate::gvf::PropagationSign;
use crate::integrate::{self, fmt17, IntegratorConfig, Verdict};
use crate::path::PathCloud;
use crate::scenarios::{self, Scenario};
use crate::singular::{self, AssumptionReport, Chart, GridAxis, GridSpec, SingularPoint, SingularRegion};
use crate::so3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;

/// Tolerance for reporting which path component an SO(3) state is on.
pub const MEMBERSHIP_TOL: f64 = 1e-2;
/// Relative tolerance of the pointwise invariant battery.
pub const INVARIANT_TOL: f64 = 1e-9;

#[derive(Parser, Debug)]
#[command(name = "gvf", version, about = "Guiding vector fields on manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List the built-in scenarios
    List,
    /// Integrate one trajectory
    Run(RunArgs),
    /// Sample the field on a grid
    Field(FieldArgs),
    /// Scan, refine and classify singular points
    Singular(CommonArgs),
    /// Integrate from quasi-uniform points on a sphere around the path
    ProbeSphere(ProbeArgs),
    /// Run the invariant battery and assumption checks
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Built-in scenario name or path to a JSON scenario file
    scenario: String,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Start point `a,b,...` or a rotation product such as `@rx(0.78)ry(-0.78)`
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    tol_path: Option<f64>,
    #[arg(long)]
    tol_singular: Option<f64>,
    #[arg(long)]
    dwell: Option<f64>,
    #[arg(long)]
    escape_radius: Option<f64>,
    #[arg(long)]
    retract_every: Option<usize>,
    /// Keep every n-th step in traj.csv
    #[arg(long)]
    stride: Option<usize>,
    /// Integrate to t_max even after a verdict
    #[arg(long)]
    full: bool,
    /// Travel the path in the opposite direction
    #[arg(long)]
    backward: bool,
}

#[derive(Args, Debug)]
struct FieldArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Ambient box `lo:hi:n` per axis, comma separated
    #[arg(long, allow_hyphen_values = true, conflicts_with = "angles")]
    r#box: Option<String>,
    /// Angle counts for the scenario chart (`azimuth,polar` on the sphere,
    /// `psi,theta,phi` on SO(3))
    #[arg(long)]
    angles: Option<String>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long = "R")]
    radius: f64,
    #[arg(long = "N")]
    samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Random on-manifold points for the pointwise invariants
    #[arg(long, default_value_t = 1000)]
    points: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::List => cmd_list(),
        Command::Run(a) => cmd_run(a),
        Command::Field(a) => cmd_field(a),
        Command::Singular(a) => cmd_singular(a),
        Command::ProbeSphere(a) => cmd_probe(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &GvfError) -> i32 {
    match e {
        GvfError::UnknownScenario(_)
        | GvfError::InvalidConfig(_)
        | GvfError::DimensionMismatch(_)
        | GvfError::ScenarioFile(_)
        | GvfError::OutsideCaptureBasin { .. }
        | GvfError::Io(_) => EXIT_USAGE,
        _ => EXIT_NUMERIC,
    }
}

fn usage(msg: impl Into<String>) -> GvfError {
    GvfError::InvalidConfig(msg.into())
}

fn prepare_out(dir: &Path) -> Result<(), GvfError> {
    fs::create_dir_all(dir).map_err(|e| GvfError::Io(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), GvfError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| GvfError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| GvfError::Io(format!("{}: {e}", path.display())))
}

fn cmd_list() -> Result<i32, GvfError> {
    for name in scenarios::list() {
        let s = scenarios::get(name)?;
        println!("{name:<16} m={} {}", s.ambient_dim(), s.notes);
    }
    Ok(EXIT_OK)
}

/// Parses `a,b,c` or `@rx(..)ry(..)..`.
pub fn parse_point(text: &str, dim: usize) -> Result<DVector<f64>, GvfError> {
    let x = if let Some(product) = text.strip_prefix('@') {
        let m = so3::parse_product(product).map_err(usage)?;
        so3::vectorize(&m)
    } else {
        let values = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| usage(format!("cannot parse point '{text}'")))?;
        DVector::from_vec(values)
    };
    if x.len() != dim {
        return Err(GvfError::DimensionMismatch(format!(
            "point has {} coordinates, scenario needs {dim}",
            x.len()
        )));
    }
    Ok(x)
}

fn config_from(a: &RunArgs) -> IntegratorConfig {
    let d = IntegratorConfig::default();
    IntegratorConfig {
        dt: a.dt.unwrap_or(d.dt),
        t_max: a.t_max.unwrap_or(d.t_max),
        retract_every: a.retract_every.unwrap_or(d.retract_every),
        tol_path: a.tol_path.unwrap_or(d.tol_path),
        tol_singular: a.tol_singular.unwrap_or(d.tol_singular),
        dwell_time: a.dwell.unwrap_or(d.dwell_time),
        escape_radius: a.escape_radius.unwrap_or(d.escape_radius),
        sample_stride: a.stride.unwrap_or(d.sample_stride),
        stop_on_verdict: !a.full,
        ..d
    }
}

fn cmd_run(a: RunArgs) -> Result<i32, GvfError> {
    let scenario = scenarios::resolve(&a.common.scenario)?;
    let cfg = config_from(&a);
    cfg.validate()?;
    let x0 = parse_point(&a.x0, scenario.ambient_dim())?;
    let field = if a.backward {
        scenario.field.with_sign(PropagationSign::Backward)
    } else {
        scenario.field.clone()
    };
    let traj = integrate::integrate(&field, &cfg, &x0)?;
    prepare_out(&a.common.out)?;
    let csv_path = a.common.out.join("traj.csv");
    let file = fs::File::create(&csv_path)
        .map_err(|e| GvfError::Io(format!("{}: {e}", csv_path.display())))?;
    let mut w = BufWriter::new(file);
    traj.write_csv(&mut w)?;
    w.flush()?;

    let last = traj.last();
    let mut meta = json!({
        "scenario": scenario.name,
        "ambient_dim": scenario.ambient_dim(),
        "gains": scenario.gains(),
        "sign": if a.backward { "Backward" } else { "Forward" },
        "config": cfg,
        "x0": x0.as_slice(),
        "verdict": traj.verdict,
        "verdict_time": traj.verdict_time,
        "final_t": last.t,
        "final_x": last.x.as_slice(),
        "final_e_norm": last.e_norm,
        "final_chi_norm": last.chi_norm,
        "max_residual": traj.max_residual(),
        "lyapunov": traj.audit,
        "failure": traj.failure,
        "samples": traj.samples.len(),
        "columns": csv_columns(scenario.ambient_dim()),
    });
    if scenario.name == "so3_path" {
        meta["so3_component"] = json!(so3::membership(&last.x, MEMBERSHIP_TOL));
        meta["max_orthonormality_residual"] = json!(traj
            .samples
            .iter()
            .map(|s| so3::orthonormality_residual(&s.x))
            .fold(0.0, f64::max));
    }
    if scenario.name == "torus_arm_lift" {
        meta["final_torus_angles"] = json!(scenarios::covering_project(last.x.as_slice()));
    }
    write_json(&a.common.out.join("meta.json"), &meta)?;
    println!(
        "{}: {} at t = {} (||e|| = {:.3e})",
        scenario.name, traj.verdict, last.t, last.e_norm
    );
    Ok(if traj.verdict == Verdict::NumericFailure {
        EXIT_NUMERIC
    } else {
        EXIT_OK
    })
}

fn csv_columns(m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..m).map(|i| format!("x_{i}")));
    cols.extend(["e_norm", "V", "chi_norm", "residual"].map(String::from));
    cols
}

/// Parses `lo:hi:n,lo:hi:n,...`.
pub fn parse_box(text: &str) -> Result<Vec<GridAxis>, GvfError> {
    text.split(',')
        .map(|axis| {
            let parts: Vec<&str> = axis.split(':').collect();
            if parts.len() != 3 {
                return Err(usage(format!("axis '{axis}' is not lo:hi:n")));
            }
            let lo: f64 = parts[0].trim().parse().map_err(|_| usage(format!("bad bound in '{axis}'")))?;
            let hi: f64 = parts[1].trim().parse().map_err(|_| usage(format!("bad bound in '{axis}'")))?;
            let n: usize = parts[2].trim().parse().map_err(|_| usage(format!("bad count in '{axis}'")))?;
            Ok(GridAxis::new(lo, hi, n))
        })
        .collect()
}

fn angle_grid(scenario: &Scenario, text: &str) -> Result<GridSpec, GvfError> {
    let counts = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("cannot parse angle counts '{text}'")))?;
    match (scenario.scan_grid.chart, counts.as_slice()) {
        (Chart::SphereAngles, &[azimuth, polar]) => Ok(GridSpec {
            axes: vec![
                GridAxis::new(0.0, std::f64::consts::PI, polar),
                GridAxis::periodic(0.0, std::f64::consts::TAU, azimuth),
            ],
            chart: Chart::SphereAngles,
        }),
        (Chart::EulerZyx, &[psi, theta, phi]) => Ok(GridSpec {
            axes: vec![
                GridAxis::periodic(-std::f64::consts::PI, std::f64::consts::PI, psi),
                GridAxis::new(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, theta),
                GridAxis::periodic(-std::f64::consts::PI, std::f64::consts::PI, phi),
            ],
            chart: Chart::EulerZyx,
        }),
        (Chart::Ambient, _) => Err(usage("--angles needs a scenario on the sphere or SO(3); use --box")),
        _ => Err(usage(format!("wrong number of angle counts in '{text}'"))),
    }
}

fn cmd_field(a: FieldArgs) -> Result<i32, GvfError> {
    let scenario = scenarios::resolve(&a.common.scenario)?;
    let m = scenario.ambient_dim();
    let grid = match (&a.r#box, &a.angles) {
        (Some(b), None) => GridSpec::ambient(parse_box(b)?),
        (None, Some(t)) => angle_grid(&scenario, t)?,
        (None, None) => scenario.scan_grid.clone(),
        (Some(_), Some(_)) => return Err(usage("--box and --angles are exclusive")),
    };
    grid.validate(m)?;
    let c = scenario.field.constraints();
    prepare_out(&a.common.out)?;
    let path = a.common.out.join("field.csv");
    let file = fs::File::create(&path).map_err(|e| GvfError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = (0..m).map(|i| format!("x_{i}")).collect();
    header.extend((0..m).map(|i| format!("chi_{i}")));
    header.extend(["e_norm", "V"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for i in 0..grid.len() {
        let p = grid.point(&grid.unflatten(i));
        let p = if c.is_euclidean() { p } else { c.retract(&p)?.x };
        let s = scenario.field.evaluate(&p)?;
        let mut row: Vec<String> = s.x.iter().map(|v| fmt17(*v)).collect();
        row.extend(s.chi.iter().map(|v| fmt17(*v)));
        row.push(fmt17(s.e.norm()));
        row.push(fmt17(s.v));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    println!("{}: {} field samples", scenario.name, grid.len());
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, Serialize)]
pub struct Census {
    pub scenario: String,
    pub points: Vec<SingularPoint>,
    pub region: Option<SingularRegion>,
    pub seeds: usize,
    pub seed_tol: f64,
    pub diagnostics: Vec<String>,
}

/// Scan on the scenario grid, then refine and classify every seed.
pub fn census(scenario: &Scenario) -> Result<Census, GvfError> {
    let scan = singular::scan(&scenario.field, &scenario.scan_grid)?;
    let (points, diagnostics) = singular::refine_all(&scenario.field, &scan.seeds, &scenario.scan_grid, &scenario.path);
    Ok(Census {
        scenario: scenario.name.clone(),
        points,
        region: scan.region,
        seeds: scan.seeds.len(),
        seed_tol: scan.seed_tol,
        diagnostics,
    })
}

fn cmd_singular(a: CommonArgs) -> Result<i32, GvfError> {
    let scenario = scenarios::resolve(&a.scenario)?;
    let report = census(&scenario)?;
    prepare_out(&a.out)?;
    write_json(&a.out.join("singular.json"), &report.points)?;
    if let Some(region) = &report.region {
        write_json(&a.out.join("singular_region.json"), region)?;
    }
    println!("{}: {} singular point(s)", scenario.name, report.points.len());
    for p in &report.points {
        println!("  {} at {:?} (real parts {:?})", p.label, p.x, p.eigen_real_parts);
    }
    if let Some(region) = &report.region {
        println!(
            "  singular region: {} grid nodes, hull area {:?}",
            region.points.len(),
            region.hull_area
        );
    }
    for d in &report.diagnostics {
        eprintln!("  discarded seed: {d}");
    }
    Ok(EXIT_OK)
}

/// Radical inverse of `i` in `base`.
pub fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `n` low-discrepancy points on the sphere of radius `r` in R^m
/// (m = 2 or 3), with a seeded random shift of the sequence.
pub fn sphere_samples(m: usize, r: f64, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 2] = [rng.random(), rng.random()];
    (0..n)
        .map(|i| {
            let u = (halton(i + 1, 2) + shift[0]).fract();
            if m == 2 {
                let t = std::f64::consts::TAU * u;
                DVector::from_vec(vec![r * t.cos(), r * t.sin()])
            } else {
                let w = (halton(i + 1, 3) + shift[1]).fract();
                let z = 1.0 - 2.0 * u;
                let s = (1.0 - z * z).max(0.0).sqrt();
                let t = std::f64::consts::TAU * w;
                DVector::from_vec(vec![r * s * t.cos(), r * s * t.sin(), r * z])
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeStart {
    pub x0: Vec<f64>,
    pub candidate: bool,
    pub verdict: Verdict,
    pub final_e_norm: f64,
    pub final_x: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub scenario: String,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub includes_candidates: bool,
    pub hypothesis_met: bool,
    pub note: Option<String>,
    pub starts: Vec<ProbeStart>,
    pub non_converging: Vec<ProbeStart>,
}

pub fn probe_sphere(
    scenario: &Scenario,
    radius: f64,
    n: usize,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<ProbeReport, GvfError> {
    let m = scenario.ambient_dim();
    if !scenario.field.constraints().is_euclidean() || !(m == 2 || m == 3) {
        return Err(usage("probe-sphere needs a scenario in the plane or in R^3"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(usage("--R must be positive"));
    }
    if !scenario.compact_path {
        return Err(usage(format!("{} has an unbounded path", scenario.name)));
    }
    let reach = scenario.path.points().iter().map(|p| p.norm()).fold(0.0, f64::max);
    if reach >= radius {
        return Err(usage(format!(
            "the path reaches radius {reach:.3}; the ball of radius {radius} must enclose it"
        )));
    }
    let candidates = scenario.probe_candidates.map(|f| f(radius)).unwrap_or_default();
    let n_candidates = candidates.len();
    let mut x0s = candidates;
    x0s.extend(sphere_samples(m, radius, n, seed));
    let results = integrate::batch(&scenario.field, cfg, &x0s);
    let mut starts = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let item = r?;
        starts.push(ProbeStart {
            x0: item.x0,
            candidate: i < n_candidates,
            verdict: item.verdict,
            final_e_norm: item.final_e_norm,
            final_x: item.final_x,
        });
    }
    let non_converging = starts
        .iter()
        .filter(|s| s.verdict != Verdict::PathConverging)
        .cloned()
        .collect();
    let hypothesis_met = m >= 3;
    Ok(ProbeReport {
        scenario: scenario.name.clone(),
        radius,
        samples: n,
        seed,
        includes_candidates: n_candidates > 0,
        hypothesis_met,
        note: (!hypothesis_met).then(|| "2D: hypothesis n >= 3 not met".to_string()),
        starts,
        non_converging,
    })
}

fn cmd_probe(a: ProbeArgs) -> Result<i32, GvfError> {
    let scenario = scenarios::resolve(&a.common.scenario)?;
    let report = probe_sphere(&scenario, a.radius, a.samples, a.seed, &IntegratorConfig::default())?;
    prepare_out(&a.common.out)?;
    write_json(&a.common.out.join("probe.json"), &report)?;
    println!(
        "{}: {} of {} starts do not converge to the path",
        scenario.name,
        report.non_converging.len(),
        report.starts.len()
    );
    if let Some(note) = &report.note {
        println!("  {note}");
    }
    Ok(if report.starts.iter().any(|s| s.verdict == Verdict::NumericFailure) {
        EXIT_NUMERIC
    } else {
        EXIT_OK
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InvariantResult {
    pub name: String,
    pub checked: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub scenario: String,
    pub invariants: Vec<InvariantResult>,
    pub singular_points: usize,
    pub singular_region: bool,
    pub assumptions: AssumptionReport,
}

impl CheckReport {
    pub fn invariants_passed(&self) -> bool {
        self.invariants.iter().all(|i| i.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if !self.invariants_passed() {
            EXIT_NUMERIC
        } else if self.assumptions.flagged() {
            EXIT_ASSUMPTION
        } else {
            EXIT_OK
        }
    }
}

struct Worst {
    name: &'static str,
    tolerance: f64,
    checked: usize,
    worst: f64,
}

impl Worst {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self { name, tolerance, checked: 0, worst: 0.0 }
    }

    /// Records `|value| / scale`.
    fn record(&mut self, value: f64, scale: f64) {
        self.checked += 1;
        let r = value.abs() / scale;
        self.worst = if r.is_nan() { f64::INFINITY } else { self.worst.max(r) };
    }

    fn finish(self) -> InvariantResult {
        InvariantResult {
            name: self.name.to_string(),
            checked: self.checked,
            worst: self.worst,
            tolerance: self.tolerance,
            passed: self.worst <= self.tolerance,
        }
    }
}

/// Orthogonality of the propagation term to every surface gradient and
/// to the convergence term, tangency of the field and of its parts, and
/// a closed form where the scenario has one. Scaled by `1 + |a||b|`.
pub fn pointwise_invariants(scenario: &Scenario, points: &[DVector<f64>]) -> Vec<InvariantResult> {
    let field = &scenario.field;
    let c = field.constraints();
    let mut ortho = Worst::new("orthogonality", INVARIANT_TOL);
    let mut tangency = Worst::new("tangency", INVARIANT_TOL);
    let mut closed = Worst::new("closed_form", 1e-10);
    let mut failures = Worst::new("evaluation", 0.0);
    for x in points {
        let s = match field.evaluate(x) {
            Ok(s) => s,
            Err(_) => {
                failures.record(1.0, 1.0);
                continue;
            }
        };
        for g in &s.grads {
            ortho.record(s.bot.dot(g), 1.0 + s.bot.norm() * g.norm());
        }
        ortho.record(s.bot.dot(&s.conv_term), 1.0 + s.bot.norm() * s.conv_term.norm());
        for n in c.constraint_gradients(x) {
            for v in [&s.chi, &s.bot, &s.conv_term] {
                tangency.record(n.dot(v), 1.0 + n.norm() * v.norm());
            }
        }
        if let Some(f) = scenario.closed_form {
            let expected = f(x, scenario.gains());
            closed.record((&s.chi - expected).amax(), 1.0);
        }
    }
    let mut out = vec![ortho.finish()];
    if !c.is_euclidean() {
        out.push(tangency.finish());
    }
    if scenario.closed_form.is_some() {
        out.push(closed.finish());
    }
    let failures = failures.finish();
    if failures.checked > 0 {
        out.push(failures);
    }
    out
}

/// `dV/dt` from the formula against a forward difference along a short
/// retracted step.
pub fn lyapunov_rate_invariant(scenario: &Scenario, points: &[DVector<f64>]) -> InvariantResult {
    let mut w = Worst::new("lyapunov_rate_fd", 1e-3);
    for x in points {
        match scenario.field.lyapunov_rate_fd_check(x, 1e-7) {
            Ok((formula, fd)) => w.record(formula - fd, 1.0 + formula.abs()),
            Err(_) => w.record(f64::INFINITY, 1.0),
        }
    }
    w.finish()
}

/// Candidates for the error-floor check: shell offsets from the path and
/// random points, restricted to the scenario's start region.
pub fn assumption_candidates(scenario: &Scenario, seed: u64) -> Vec<DVector<f64>> {
    let radii: Vec<f64> = scenario
        .shells
        .iter()
        .flat_map(|k| [1.0, 1.25, 1.5, 2.0].map(|f| k * f))
        .collect();
    let inside = PathCloud::new(
        scenario
            .path
            .points()
            .iter()
            .filter(|p| scenario.start_region.contains(p))
            .cloned()
            .collect(),
    );
    let stride = (inside.len() / 512).max(1);
    let mut out = singular::shell_offsets(&scenario.field, &inside, &radii, stride, 4, seed);
    out.extend(scenario.random_starts(2000, seed ^ 0x9e37_79b9));
    out.retain(|x| scenario.start_region.contains(x));
    out
}

pub fn check(scenario: &Scenario, points: usize, seed: u64) -> Result<CheckReport, GvfError> {
    let sample = scenario.random_starts(points, seed);
    let mut invariants = pointwise_invariants(scenario, &sample);
    let rate_points: Vec<DVector<f64>> = sample.iter().take(50).cloned().collect();
    invariants.push(lyapunov_rate_invariant(scenario, &rate_points));
    let census = census(scenario)?;
    let mut singular_set: Vec<DVector<f64>> = census
        .points
        .iter()
        .map(|p| DVector::from_column_slice(&p.x))
        .collect();
    if let Some(region) = &census.region {
        singular_set.extend(region.points.iter().map(|p| DVector::from_column_slice(p)));
    }
    let candidates = assumption_candidates(scenario, seed);
    let assumptions = singular::check_assumptions(
        &scenario.field,
        &singular_set,
        &scenario.path,
        &scenario.shells,
        &candidates,
    );
    Ok(CheckReport {
        scenario: scenario.name.clone(),
        invariants,
        singular_points: census.points.len(),
        singular_region: census.region.is_some(),
        assumptions,
    })
}

fn cmd_check(a: CheckArgs) -> Result<i32, GvfError> {
    let scenario = scenarios::resolve(&a.common.scenario)?;
    let report = check(&scenario, a.points, a.seed)?;
    prepare_out(&a.common.out)?;
    write_json(&a.common.out.join("check.json"), &report)?;
    println!("{}:", scenario.name);
    for i in &report.invariants {
        println!(
            "  {:<18} {} (worst {:.3e}, tol {:.0e}, n = {})",
            i.name,
            if i.passed { "pass" } else { "FAIL" },
            i.worst,
            i.tolerance,
            i.checked
        );
    }
    let a1 = &report.assumptions;
    match a1.min_singular_distance {
        Some(d) => println!(
            "  singular set vs path: min distance {d:.6} -> {}",
            if a1.assumption1_passed { "pass" } else { "FLAGGED" }
        ),
        None => println!("  singular set vs path: no singular points -> pass"),
    }
    for s in &a1.shells {
        println!(
            "  error floor at distance >= {}: min ||e|| = {:.3e} over {} samples -> {}",
            s.kappa,
            s.min_e_norm,
            s.samples,
            if s.flagged { "FLAGGED" } else { "pass" }
        );
    }
    Ok(report.exit_code())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_prefix() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_samples_have_the_radius() {
        for x in sphere_samples(3, 3.0, 50, 42) {
            assert!((x.norm() - 3.0).abs() < 1e-12);
        }
        assert_eq!(sphere_samples(3, 3.0, 10, 42), sphere_samples(3, 3.0, 10, 42));
        assert_ne!(sphere_samples(3, 3.0, 10, 42), sphere_samples(3, 3.0, 10, 43));
    }

    #[test]
    fn parses_points() {
        assert_eq!(parse_point("3,0.1", 2).unwrap().as_slice(), &[3.0, 0.1]);
        assert!(parse_point("3,x", 2).is_err());
        assert!(matches!(parse_point("1,2,3", 2), Err(GvfError::DimensionMismatch(_))));
        let r = parse_point("@rz(0)", 9).unwrap();
        assert_eq!(r, so3::vectorize(&nalgebra::Matrix3::identity()));
    }

    #[test]
    fn parses_boxes() {
        let b = parse_box("-3:3:41,-1:1:3").unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!((b[1].min, b[1].max, b[1].count), (-1.0, 1.0, 3));
        assert!(parse_box("-3:3").is_err());
        assert!(parse_box("a:3:4").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["gvf", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["gvf", "run", "nope", "--x0", "1,2"]), EXIT_USAGE);
    }

    #[test]
    fn probe_with_candidates_only() {
        let s = scenarios::get("tilted_circle3d").unwrap();
        let report = probe_sphere(&s, 3.0, 0, 42, &IntegratorConfig::default()).unwrap();
        assert_eq!(report.starts.len(), 2);
        assert!(report.starts.iter().all(|p| p.candidate));
        assert!(report.starts.iter().all(|p| p.verdict == Verdict::SingularConverging));
    }
}
