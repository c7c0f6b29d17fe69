//! Guiding vector fields on smooth manifolds: construction, integration,
//! singular point analysis and a scenario library.

pub mod cli;
pub mod error;
pub mod functions;
pub mod gvf;
pub mod integrate;
pub mod linalg;
pub mod manifold;
pub mod path;
pub mod scenarios;
pub mod singular;
pub mod so3;

pub use error::{GvfError, Result};
pub use gvf::{GuidingField, PropagationSign, SurfaceStack};
pub use integrate::{IntegratorConfig, Trajectory, Verdict};
pub use manifold::ConstraintSystem;
