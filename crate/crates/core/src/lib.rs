//! Equilibrium dividend barriers under pseudo-exponential discounting with a
//! running-minimum scarring cost.

pub mod boundary;
pub mod config;
pub mod error;
pub mod integral;
pub mod io;
pub mod mc;
pub mod model;
pub mod path;
pub mod quad;
pub mod reflect;
pub mod surface;
pub mod sweep;

pub use boundary::{check_boundary_conditions, integrate_boundary, BoundarySolution};
pub use error::{Error, Result};
pub use model::{CostThreshold, LambdaQuad, ModelParams};
pub use path::{DiscretePath, Jump};
