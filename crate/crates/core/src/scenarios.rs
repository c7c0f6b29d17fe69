//! Registry of the concrete setups: constraint systems, surface
//! functions, gains, path samplers, suggested starts and scan grids.
//! User scenarios with polynomial data can be loaded from JSON.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GvfError, Result};
use crate::functions::{analytic, coordinate, BumpSurface, Monomial, Polynomial, SharedFn};
use crate::gvf::{GuidingField, PropagationSign, SurfaceStack};
use crate::integrate::Verdict;
use crate::manifold::ConstraintSystem;
use crate::path::PathCloud;
use crate::singular::{Chart, GridAxis, GridSpec};
use crate::so3::{self, Axis};

pub const NAMES: [&str; 11] = [
    "circle2d",
    "line2d",
    "ellipse2d",
    "cassini2d",
    "line3d_good",
    "line3d_bad",
    "tilted_circle3d",
    "sphere_circle",
    "bump_disk",
    "torus_arm_lift",
    "so3_path",
];

/// Samples per closed path or per path component.
const PATH_SAMPLES: usize = 4096;

pub fn list() -> Vec<&'static str> {
    NAMES.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuggestedStart {
    pub x0: Vec<f64>,
    pub expected: Option<Verdict>,
}

/// Where random starts are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum StartRegion {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    UnitSphere,
    Rotations,
}

impl StartRegion {
    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        match self {
            StartRegion::Box { lo, hi } => DVector::from_iterator(
                lo.len(),
                lo.iter().zip(hi).map(|(a, b)| a + (b - a) * rng.random::<f64>()),
            ),
            StartRegion::UnitSphere => {
                let z = 2.0 * rng.random::<f64>() - 1.0;
                let az = TAU * rng.random::<f64>();
                let r = (1.0 - z * z).max(0.0).sqrt();
                DVector::from_vec(vec![r * az.cos(), r * az.sin(), z])
            }
            StartRegion::Rotations => {
                // uniform unit quaternion from three uniforms
                let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
                let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
                let q = Vector4::new(a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos());
                let r = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q));
                so3::vectorize(r.to_rotation_matrix().matrix())
            }
        }
    }

    /// Whether `x` lies in the region (boxes only; manifolds always do).
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match self {
            StartRegion::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= *a && *v <= *b),
            _ => true,
        }
    }
}

/// Which global condition makes the sublevel sets of `V` compact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GlobalHypothesis {
    CompactManifold,
    RadiallyUnbounded,
    Neither,
}

pub type ClosedForm = fn(&DVector<f64>, &[f64]) -> DVector<f64>;
pub type Candidates = fn(f64) -> Vec<DVector<f64>>;

#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub field: GuidingField,
    pub path: PathCloud,
    pub starts: Vec<SuggestedStart>,
    pub scan_grid: GridSpec,
    pub start_region: StartRegion,
    pub compact_path: bool,
    pub hypothesis: GlobalHypothesis,
    /// Distances used for the error-floor check away from the path.
    pub shells: Vec<f64>,
    /// Named constants of the surface functions.
    pub constants: Vec<(String, f64)>,
    /// Known starts whose trajectories miss the path, given a ball radius.
    pub probe_candidates: Option<Candidates>,
    pub closed_form: Option<ClosedForm>,
    pub notes: String,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("ambient_dim", &self.field.ambient_dim())
            .field("path_samples", &self.path.len())
            .finish()
    }
}

impl Scenario {
    pub fn ambient_dim(&self) -> usize {
        self.field.ambient_dim()
    }

    pub fn gains(&self) -> &[f64] {
        self.field.surfaces().gains()
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// `n` seeded random starts from the start region, on the manifold.
    pub fn random_starts(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = self.field.constraints();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let x = self.start_region.sample(&mut rng);
            if c.is_euclidean() {
                out.push(x);
            } else if let Ok(p) = c.retract(&x) {
                out.push(p.x);
            }
        }
        out
    }
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn plane(name: &str) -> ConstraintSystem {
    ConstraintSystem::euclidean(name, 2).expect("plane")
}

fn space(name: &str) -> ConstraintSystem {
    ConstraintSystem::euclidean(name, 3).expect("space")
}

fn stack(surfaces: Vec<SharedFn>, gains: Vec<f64>) -> SurfaceStack {
    SurfaceStack::new(surfaces, gains, PropagationSign::Forward).expect("valid stack")
}

fn closed_curve(f: impl Fn(f64) -> DVector<f64>) -> PathCloud {
    PathCloud::new(
        (0..PATH_SAMPLES)
            .map(|i| f(TAU * i as f64 / PATH_SAMPLES as f64))
            .collect(),
    )
}

fn segment(from: f64, to: f64, count: usize, f: impl Fn(f64) -> DVector<f64>) -> PathCloud {
    PathCloud::new(
        (0..count)
            .map(|i| f(from + (to - from) * i as f64 / (count - 1) as f64))
            .collect(),
    )
}

fn square_box(lo: f64, hi: f64, dim: usize, count: usize) -> GridSpec {
    GridSpec::ambient((0..dim).map(|_| GridAxis::new(lo, hi, count)).collect())
}

fn start(x0: &[f64], expected: Verdict) -> SuggestedStart {
    SuggestedStart {
        x0: x0.to_vec(),
        expected: Some(expected),
    }
}

fn base(
    name: &str,
    field: GuidingField,
    path: PathCloud,
    scan_grid: GridSpec,
    start_region: StartRegion,
) -> Scenario {
    Scenario {
        name: name.to_string(),
        field,
        path,
        starts: Vec::new(),
        scan_grid,
        start_region,
        compact_path: true,
        hypothesis: GlobalHypothesis::RadiallyUnbounded,
        shells: vec![0.5, 1.0],
        constants: Vec::new(),
        probe_candidates: None,
        closed_form: None,
        notes: String::new(),
    }
}

fn planar_box(lo: f64, hi: f64) -> StartRegion {
    StartRegion::Box {
        lo: vec![lo; 2],
        hi: vec![hi; 2],
    }
}

/// Returns the named built-in scenario.
pub fn get(name: &str) -> Result<Scenario> {
    match name {
        "circle2d" => Ok(circle2d()),
        "line2d" => Ok(line2d()),
        "ellipse2d" => Ok(ellipse2d()),
        "cassini2d" => Ok(cassini2d()),
        "line3d_good" => Ok(line3d(false)),
        "line3d_bad" => Ok(line3d(true)),
        "tilted_circle3d" => Ok(tilted_circle3d()),
        "sphere_circle" => Ok(sphere_circle()),
        "bump_disk" => Ok(bump_disk()),
        "torus_arm_lift" => Ok(torus_arm_lift()),
        "so3_path" => Ok(so3_path()),
        other => Err(GvfError::UnknownScenario(other.to_string())),
    }
}

/// A built-in name, or a path to a JSON scenario file.
pub fn resolve(name_or_path: &str) -> Result<Scenario> {
    if NAMES.contains(&name_or_path) {
        return get(name_or_path);
    }
    let p = Path::new(name_or_path);
    if p.extension().is_some_and(|e| e == "json") || p.is_file() {
        return load_user_scenario(p);
    }
    Err(GvfError::UnknownScenario(name_or_path.to_string()))
}

fn circle2d() -> Scenario {
    let phi = analytic(
        |x: &[f64]| x[0] * x[0] + x[1] * x[1] - 1.0,
        |x: &[f64]| v(&[2.0 * x[0], 2.0 * x[1]]),
    );
    let field = GuidingField::new(plane("R2"), stack(vec![phi], vec![1.0])).unwrap();
    let mut s = base(
        "circle2d",
        field,
        closed_curve(|t| v(&[t.cos(), t.sin()])),
        square_box(-2.0, 2.0, 2, 41),
        planar_box(-2.0, 2.0),
    );
    s.starts = vec![
        start(&[2.0, 0.0], Verdict::PathConverging),
        start(&[0.0, 0.0], Verdict::SingularConverging),
    ];
    s.notes = "unit circle, phi = x^2 + y^2 - 1; singular point at the origin".into();
    s
}

fn line2d() -> Scenario {
    let field = GuidingField::new(plane("R2"), stack(vec![coordinate(2, 1)], vec![1.0])).unwrap();
    let mut s = base(
        "line2d",
        field,
        segment(-400.0, 400.0, 1 << 14, |t| v(&[t, 0.0])),
        square_box(-3.0, 3.0, 2, 61),
        planar_box(-3.0, 3.0),
    );
    s.compact_path = false;
    s.hypothesis = GlobalHypothesis::Neither;
    s.starts = vec![start(&[0.0, 1.0], Verdict::PathConverging)];
    s.notes = "x-axis, phi = y; empty singular set".into();
    s
}

fn ellipse2d() -> Scenario {
    let phi = analytic(
        |x: &[f64]| x[0] * x[0] / 4.0 + x[1] * x[1] - 1.0,
        |x: &[f64]| v(&[x[0] / 2.0, 2.0 * x[1]]),
    );
    let field = GuidingField::new(plane("R2"), stack(vec![phi], vec![1.0])).unwrap();
    let mut s = base(
        "ellipse2d",
        field,
        closed_curve(|t| v(&[2.0 * t.cos(), t.sin()])),
        square_box(-3.0, 3.0, 2, 61),
        planar_box(-3.0, 3.0),
    );
    s.starts = vec![
        start(&[3.0, 0.1], Verdict::PathConverging),
        start(&[0.0, 0.0], Verdict::SingularConverging),
    ];
    s.notes = "ellipse x^2/4 + y^2 = 1; the origin is a source".into();
    s
}

/// Points of the quartic level set along polar rays.
fn cassini_point(a: f64, b: f64, t: f64) -> DVector<f64> {
    let (s, c) = t.sin_cos();
    let qa = c.powi(4) + s.powi(4);
    let qb = 2.0 * a * a * (s * s - c * c);
    let qc = a.powi(4) - b.powi(4);
    let r2 = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
    let r = r2.sqrt();
    v(&[r * c, r * s])
}

fn cassini2d() -> Scenario {
    let (a, b): (f64, f64) = (2.0, 2.1);
    let a2 = a * a;
    let shift = f64::powi(a, 4) - f64::powi(b, 4);
    let phi = analytic(
        move |x: &[f64]| {
            x[0].powi(4) + x[1].powi(4) - 2.0 * a2 * (x[0] * x[0] - x[1] * x[1]) + shift
        },
        move |x: &[f64]| {
            v(&[
                4.0 * x[0].powi(3) - 4.0 * a2 * x[0],
                4.0 * x[1].powi(3) + 4.0 * a2 * x[1],
            ])
        },
    );
    let field = GuidingField::new(plane("R2"), stack(vec![phi], vec![0.1])).unwrap();
    let mut s = base(
        "cassini2d",
        field,
        closed_curve(|t| cassini_point(a, b, t)),
        square_box(-3.0, 3.0, 2, 61),
        planar_box(-3.0, 3.0),
    );
    s.constants = vec![("a".into(), a), ("b".into(), b)];
    s.starts = vec![
        start(&[0.0, 0.0], Verdict::SingularConverging),
        start(&[1.0, 0.05], Verdict::PathConverging),
    ];
    s.notes = "quartic x^4 + y^4 - 2a^2(x^2 - y^2) + a^4 - b^4 with a = 2, b = 2.1; \
               saddle at the origin, sources at (+-a, 0)"
        .into();
    s
}

fn line3d(bad: bool) -> Scenario {
    let phi1 = if bad {
        analytic(
            |x: &[f64]| x[1] * (-x[0]).exp(),
            |x: &[f64]| {
                let e = (-x[0]).exp();
                v(&[-x[1] * e, e, 0.0])
            },
        )
    } else {
        coordinate(3, 1)
    };
    let field = GuidingField::new(space("R3"), stack(vec![phi1, coordinate(3, 2)], vec![1.0, 1.0])).unwrap();
    let name = if bad { "line3d_bad" } else { "line3d_good" };
    let grid = GridSpec::ambient(vec![
        GridAxis::new(-3.0, 20.0, 47),
        GridAxis::new(-3.0, 3.0, 13),
        GridAxis::new(-3.0, 3.0, 13),
    ]);
    let mut s = base(
        name,
        field,
        segment(-50.0, 250.0, 1 << 15, |t| v(&[t, 0.0, 0.0])),
        grid,
        StartRegion::Box {
            lo: vec![-3.0, -3.0, -3.0],
            hi: vec![20.0, 3.0, 3.0],
        },
    );
    s.compact_path = false;
    s.hypothesis = GlobalHypothesis::Neither;
    s.shells = vec![1.0];
    if bad {
        s.starts = vec![SuggestedStart {
            x0: vec![0.0, 1.0, 0.5],
            expected: Some(Verdict::Inconclusive),
        }];
        s.notes = "x-axis as the zero set of y exp(-x) and z; the error vanishes along \
                   y = 1 as x grows, so trajectories drift away from the path"
            .into();
    } else {
        s.starts = vec![start(&[0.0, 1.0, 0.5], Verdict::PathConverging)];
        s.notes = "x-axis as the zero set of y and z".into();
    }
    s
}

fn tilted_circle_candidates(radius: f64) -> Vec<DVector<f64>> {
    let c = radius * FRAC_1_SQRT_2;
    vec![v(&[0.0, c, -c]), v(&[0.0, -c, c])]
}

fn tilted_circle3d() -> Scenario {
    let phi1 = analytic(
        |x: &[f64]| x[0] * x[0] + 0.5 * (x[1] + x[2]).powi(2) - 1.0,
        |x: &[f64]| {
            let s = x[1] + x[2];
            v(&[2.0 * x[0], s, s])
        },
    );
    let phi2 = analytic(|x: &[f64]| x[1] - x[2], |_: &[f64]| v(&[0.0, 1.0, -1.0]));
    let field = GuidingField::new(space("R3"), stack(vec![phi1, phi2], vec![1.0, 1.0])).unwrap();
    let h = FRAC_1_SQRT_2;
    let mut s = base(
        "tilted_circle3d",
        field,
        closed_curve(|t| v(&[t.cos(), h * t.sin(), h * t.sin()])),
        square_box(-3.0, 3.0, 3, 31),
        StartRegion::Box {
            lo: vec![-3.0; 3],
            hi: vec![3.0; 3],
        },
    );
    s.starts = vec![
        start(&[0.0, 1.0, -1.0], Verdict::SingularConverging),
        start(&[2.0, 0.0, 0.0], Verdict::PathConverging),
    ];
    s.probe_candidates = Some(tilted_circle_candidates);
    s.notes = "circle x^2 + 2y^2 = 1 in the plane y = z; the line x = 0, y = -z \
               flows into the singular point at the origin"
        .into();
    s
}

fn sphere_closed_form(x: &DVector<f64>, gains: &[f64]) -> DVector<f64> {
    let k = gains[0];
    let (a, b, c) = (x[0], x[1], x[2]);
    v(&[
        2.0 * b + k * a * c * c,
        -2.0 * a + k * b * c * c,
        k * c * (c * c - 1.0),
    ])
}

fn sphere_circle() -> Scenario {
    let sphere = analytic(
        |x: &[f64]| x[0] * x[0] + x[1] * x[1] + x[2] * x[2],
        |x: &[f64]| v(&[2.0 * x[0], 2.0 * x[1], 2.0 * x[2]]),
    );
    let c = ConstraintSystem::new("S2", 3, vec![sphere], vec![1.0]).unwrap();
    let field = GuidingField::new(c, stack(vec![coordinate(3, 2)], vec![1.0])).unwrap();
    let grid = GridSpec {
        axes: vec![GridAxis::new(0.0, PI, 33), GridAxis::periodic(0.0, TAU, 64)],
        chart: Chart::SphereAngles,
    };
    let mut s = base(
        "sphere_circle",
        field,
        closed_curve(|t| v(&[t.cos(), t.sin(), 0.0])),
        grid,
        StartRegion::UnitSphere,
    );
    s.hypothesis = GlobalHypothesis::CompactManifold;
    s.shells = vec![0.25, 0.5];
    s.starts = vec![
        start(&[0.0, 0.6, 0.8], Verdict::PathConverging),
        start(&[0.0, 0.0, 1.0], Verdict::SingularConverging),
    ];
    s.closed_form = Some(sphere_closed_form);
    s.notes = "equator of the unit sphere, phi = z; singular points at both poles".into();
    s
}

/// Zero of `x -> 4 - x^2 bump(x, 0)` on `(1, 3)` by bisection.
pub fn bump_path_radius() -> f64 {
    let f = |r: f64| crate::functions::ScalarFn::value(&BumpSurface, &[r, 0.0]);
    let (mut lo, mut hi) = (1.5, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn bump_disk() -> Scenario {
    let field = GuidingField::new(plane("R2"), stack(vec![Arc::new(BumpSurface)], vec![1.0])).unwrap();
    let r = bump_path_radius();
    let mut s = base(
        "bump_disk",
        field,
        closed_curve(|t| v(&[r * t.cos(), r * t.sin()])),
        square_box(-3.0, 3.0, 2, 61),
        planar_box(-3.0, 3.0),
    );
    s.constants = vec![("path_radius".into(), r)];
    s.starts = vec![
        start(&[0.5, 0.0], Verdict::SingularConverging),
        start(&[3.0, 0.0], Verdict::PathConverging),
    ];
    s.notes = "phi = 4 - (x^2 + y^2) b(x, y) with the flat bump b; the field vanishes \
               on the closed unit disk"
        .into();
    s
}

/// Wraps each angle into `[0, 2 pi)`.
pub fn covering_project(theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .map(|t| {
            let w = t.rem_euclid(TAU);
            if w >= TAU {
                0.0
            } else {
                w
            }
        })
        .collect()
}

fn torus_arm_lift() -> Scenario {
    let phi = analytic(
        |x: &[f64]| x[0] + x[1] - FRAC_PI_2,
        |_: &[f64]| v(&[1.0, 1.0]),
    );
    let field = GuidingField::new(plane("R2 (covering space of the torus)"), stack(vec![phi], vec![1.0])).unwrap();
    let grid = GridSpec::ambient(vec![GridAxis::new(-PI, TAU, 61), GridAxis::new(-PI, TAU, 61)]);
    let mut s = base(
        "torus_arm_lift",
        field,
        segment(-400.0, 400.0, 1 << 14, |t| v(&[FRAC_PI_4 + t, FRAC_PI_4 - t])),
        grid,
        planar_box(-PI, TAU),
    );
    s.compact_path = false;
    s.hypothesis = GlobalHypothesis::Neither;
    s.constants = vec![("link1".into(), 1.0), ("link2".into(), 1.0)];
    s.starts = vec![
        start(&[0.0, 0.0], Verdict::PathConverging),
        start(&[0.3 * PI, 0.0], Verdict::PathConverging),
        start(&[1.5 * PI, 0.5 * PI], Verdict::PathConverging),
    ];
    s.notes = "two-link arm joint angles lifted to the plane; path theta1 + theta2 = pi/2".into();
    s
}

/// Column dot product `A_i . A_j` of the stacked matrix.
fn column_dot(i: usize, j: usize) -> SharedFn {
    analytic(
        move |x: &[f64]| (0..3).map(|r| x[3 * i + r] * x[3 * j + r]).sum(),
        move |x: &[f64]| {
            let mut g = DVector::zeros(9);
            for r in 0..3 {
                g[3 * i + r] += x[3 * j + r];
                g[3 * j + r] += x[3 * i + r];
            }
            g
        },
    )
}

pub fn so3_initial_condition() -> DVector<f64> {
    so3::vectorize(&(so3::rot(Axis::X, FRAC_PI_4) * so3::rot(Axis::Y, -FRAC_PI_4)))
}

fn so3_path() -> Scenario {
    let constraints = vec![
        column_dot(0, 1),
        column_dot(0, 2),
        column_dot(1, 2),
        column_dot(0, 0),
        column_dot(1, 1),
        column_dot(2, 2),
    ];
    let c = ConstraintSystem::new("SO(3)", 9, constraints, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    // a13 and a23 are the first two entries of the third column
    let field = GuidingField::new(c, stack(vec![coordinate(9, 6), coordinate(9, 7)], vec![1.0, 1.0])).unwrap();
    let half = PATH_SAMPLES / 2;
    let mut points = Vec::with_capacity(PATH_SAMPLES);
    for i in 0..half {
        let t = TAU * i as f64 / half as f64;
        points.push(so3::vectorize(&so3::rot(Axis::Z, t)));
    }
    for i in 0..half {
        let t = TAU * i as f64 / half as f64;
        points.push(so3::vectorize(&(so3::rot(Axis::X, PI) * so3::rot(Axis::Z, t))));
    }
    let grid = GridSpec {
        axes: vec![
            GridAxis::periodic(-PI, PI, 24),
            GridAxis::new(-FRAC_PI_2, FRAC_PI_2, 13),
            GridAxis::periodic(-PI, PI, 24),
        ],
        chart: Chart::EulerZyx,
    };
    let mut s = base("so3_path", field, PathCloud::new(points), grid, StartRegion::Rotations);
    s.hypothesis = GlobalHypothesis::CompactManifold;
    s.shells = vec![0.25, 0.5];
    s.starts = vec![SuggestedStart {
        x0: so3_initial_condition().iter().cloned().collect(),
        expected: Some(Verdict::PathConverging),
    }];
    s.notes = "rotations about the z-axis (and their flip by Rx(pi)) as the zero set of \
               a13 and a23 on SO(3), state is the column-stacked matrix"
        .into();
    s
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum UserSurface {
    Named(String),
    Terms(Vec<Monomial>),
}

#[derive(Clone, Debug, Deserialize)]
struct UserStart {
    x0: Vec<f64>,
    #[serde(default)]
    expected: Option<Verdict>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserScenarioFile {
    name: String,
    ambient_dim: usize,
    #[serde(default)]
    constraints: Vec<Vec<Monomial>>,
    #[serde(default)]
    regular_value: Vec<f64>,
    surfaces: Vec<UserSurface>,
    gains: Vec<f64>,
    scan_box: Vec<GridAxis>,
    #[serde(default)]
    starts: Vec<UserStart>,
}

pub fn load_user_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GvfError::ScenarioFile(format!("{}: {e}", path.display())))?;
    parse_user_scenario(&text)
}

pub fn parse_user_scenario(text: &str) -> Result<Scenario> {
    let file: UserScenarioFile =
        serde_json::from_str(text).map_err(|e| GvfError::ScenarioFile(e.to_string()))?;
    let m = file.ambient_dim;
    let poly = |terms: Vec<Monomial>| -> Result<SharedFn> {
        Ok(Arc::new(Polynomial::new(m, terms).map_err(GvfError::ScenarioFile)?))
    };
    let constraints = file
        .constraints
        .into_iter()
        .map(poly)
        .collect::<Result<Vec<_>>>()?;
    let c = ConstraintSystem::new(file.name.clone(), m, constraints, file.regular_value)?;
    let surfaces = file
        .surfaces
        .into_iter()
        .map(|s| match s {
            UserSurface::Terms(t) => poly(t),
            UserSurface::Named(n) if n == "bump" && m == 2 => Ok(Arc::new(BumpSurface) as SharedFn),
            UserSurface::Named(n) => Err(GvfError::ScenarioFile(format!(
                "unknown special surface '{n}' (only \"bump\" on the plane)"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let field = GuidingField::new(c, SurfaceStack::new(surfaces, file.gains, PropagationSign::Forward)?)?;
    if file.scan_box.len() != m {
        return Err(GvfError::ScenarioFile(format!(
            "scan_box has {} axes, expected {m}",
            file.scan_box.len()
        )));
    }
    let grid = GridSpec::ambient(file.scan_box);
    grid.validate(m)?;
    let region = StartRegion::Box {
        lo: grid.axes.iter().map(|a| a.min).collect(),
        hi: grid.axes.iter().map(|a| a.max).collect(),
    };
    let path = sample_path(&field, &region, 2048, 0x5eed)?;
    let mut s = base(&file.name, field, path, grid, region);
    s.compact_path = false;
    s.hypothesis = GlobalHypothesis::Neither;
    s.starts = file
        .starts
        .into_iter()
        .map(|u| SuggestedStart { x0: u.x0, expected: u.expected })
        .collect();
    s.notes = "user scenario".into();
    Ok(s)
}

/// Minimum-norm Gauss-Newton projection onto `{F = a, phi = 0}`.
pub fn project_to_path(field: &GuidingField, x0: &DVector<f64>) -> Option<DVector<f64>> {
    let c = field.constraints();
    let stacked = |x: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let r = c.residual(x);
        let e = field.path_error(x);
        let mut g = DVector::zeros(r.len() + e.len());
        g.rows_mut(0, r.len()).copy_from(&r);
        g.rows_mut(r.len(), e.len()).copy_from(&e);
        let mut rows: Vec<DVector<f64>> = c.constraint_gradients(x);
        rows.extend(field.surfaces().surfaces().iter().map(|f| f.gradient(x.as_slice())));
        let j = DMatrix::from_fn(rows.len(), x.len(), |i, k| rows[i][k]);
        (g, j)
    };
    let mut x = x0.clone();
    for _ in 0..100 {
        let (g, j) = stacked(&x);
        if g.amax() <= 1e-12 {
            return Some(x);
        }
        let svd = j.svd(true, true);
        let dx = svd.solve(&g, 1e-12).ok()?;
        x -= dx;
        if !x.iter().all(|v| v.is_finite()) || x.norm() > 1e6 {
            return None;
        }
    }
    let (g, _) = stacked(&x);
    (c.residual_norm(&x) <= 1e-10 && field.path_error(&x).amax() <= 1e-9 && g.amax().is_finite()).then_some(x)
}

fn sample_path(field: &GuidingField, region: &StartRegion, count: usize, seed: u64) -> Result<PathCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut attempts = 0;
    while points.len() < count && attempts < 50 * count {
        attempts += 1;
        if let Some(p) = project_to_path(field, &region.sample(&mut rng)) {
            points.push(p);
        }
    }
    if points.len() < count {
        return Err(GvfError::ScenarioFile(format!(
            "could only place {} of {count} path samples; is the path inside scan_box?",
            points.len()
        )));
    }
    Ok(PathCloud::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::Component;

    #[test]
    fn registry_contents() {
        assert_eq!(list().len(), 11);
        for name in list() {
            let s = get(name).unwrap();
            assert_eq!(s.name, name);
            assert!(s.path.len() >= 2048, "{name}");
        }
        assert_eq!(get("nope").unwrap_err(), GvfError::UnknownScenario("nope".into()));
    }

    #[test]
    fn path_samples_lie_on_path_and_manifold() {
        for name in list() {
            let s = get(name).unwrap();
            for p in s.path.points().iter().step_by(7) {
                assert!(s.field.path_error(p).norm() <= 1e-9, "{name} {p}");
                assert!(s.field.constraints().residual_norm(p) <= 1e-10, "{name}");
            }
        }
    }

    #[test]
    fn cassini_constants() {
        let s = get("cassini2d").unwrap();
        assert_eq!(s.gains(), &[0.1]);
        assert_eq!(s.constant("a"), Some(2.0));
        assert_eq!(s.constant("b"), Some(2.1));
    }

    #[test]
    fn torus_path_is_the_anti_diagonal() {
        let s = get("torus_arm_lift").unwrap();
        let e = s.field.path_error(&v(&[FRAC_PI_2, 0.0]));
        assert_eq!(e[0], 0.0);
    }

    #[test]
    fn covering_projection() {
        assert_eq!(covering_project(&[0.0, 0.0]), vec![0.0, 0.0]);
        let p = covering_project(&[1.5 * PI, 0.5 * PI]);
        assert!((p[0] - 1.5 * PI).abs() < 1e-15 && (p[1] - 0.5 * PI).abs() < 1e-15);
        let p = covering_project(&[2.5 * PI, -0.5 * PI]);
        assert!((p[0] - 0.5 * PI).abs() < 1e-12 && (p[1] - 1.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn so3_initial_condition_is_on_the_manifold() {
        let s = get("so3_path").unwrap();
        let xi0 = so3_initial_condition();
        assert!(s.field.constraints().residual_norm(&xi0) <= 1e-14);
        assert_eq!(so3::membership(&xi0, 1e-9), Component::Neither);
    }

    #[test]
    fn bump_radius_by_bisection() {
        use crate::functions::ScalarFn;
        let r = bump_path_radius();
        assert!(BumpSurface.value(&[r, 0.0]).abs() < 1e-12);
        // independent check: r^2 exp(1/(1 - r^2)) = 4 solved by Newton in r^2
        let mut s: f64 = 5.0;
        for _ in 0..50 {
            let g = s * (1.0 / (1.0 - s)).exp() - 4.0;
            let dg = (1.0 / (1.0 - s)).exp() * (1.0 + s / ((1.0 - s) * (1.0 - s)));
            s -= g / dg;
        }
        assert!((r - s.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bump_is_c1_across_the_unit_circle() {
        use crate::functions::ScalarFn;
        let f = BumpSurface;
        let h = 1e-4;
        let d = |r: f64| (f.value(&[r + h, 0.0]) - f.value(&[r - h, 0.0])) / (2.0 * h);
        assert!((d(1.0 - 2.0 * h) - d(1.0 + 2.0 * h)).abs() <= 1e-5);
    }

    #[test]
    fn random_starts_are_reproducible_and_on_manifold() {
        let s = get("so3_path").unwrap();
        let a = s.random_starts(5, 7);
        assert_eq!(a, s.random_starts(5, 7));
        for x in &a {
            assert!(so3::orthonormality_residual(x) < 1e-10);
        }
        let s = get("sphere_circle").unwrap();
        for x in s.random_starts(10, 1) {
            assert!((x.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn user_scenario_round_trip() {
        let text = r#"{
            "name": "unit_circle_json",
            "ambient_dim": 2,
            "surfaces": [[
                {"coeff": 1.0, "exponents": [2, 0]},
                {"coeff": 1.0, "exponents": [0, 2]},
                {"coeff": -1.0, "exponents": [0, 0]}
            ]],
            "gains": [1.0],
            "scan_box": [{"min": -2, "max": 2, "count": 41}, {"min": -2, "max": 2, "count": 41}],
            "starts": [{"x0": [2.0, 0.0], "expected": "PathConverging"}]
        }"#;
        let s = parse_user_scenario(text).unwrap();
        assert_eq!(s.path.len(), 2048);
        for p in s.path.points() {
            assert!((p.norm() - 1.0).abs() < 1e-9);
        }
        assert_eq!(s.starts[0].expected, Some(Verdict::PathConverging));
    }

    #[test]
    fn user_scenario_errors() {
        assert!(parse_user_scenario("{").is_err());
        let bad = r#"{"name": "x", "ambient_dim": 3, "surfaces": ["bump", "bump"],
                      "gains": [1, 1], "scan_box": []}"#;
        assert!(parse_user_scenario(bad).is_err());
    }
}
