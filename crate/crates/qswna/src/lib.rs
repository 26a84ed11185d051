//! Weakly nonlinear analysis of a chemically structured quorum-sensing model, with a
//! finite-volume PDE solver and continuation to check it.

pub mod continuation;
pub mod dispersion;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod mp;
pub mod params;
pub mod pde;
pub mod quad;
pub mod series;
pub mod stokes;
pub mod sweep;
pub mod wna;
pub mod wna_oracle;

pub use error::{Error, Result};
pub use params::{ModelParams, MotilitySpec, ProductionSpec, SteadyState};
