//! Threshold curves, Lyapunov test functions and Monte Carlo solvers for
//! scalar BSDEs whose generators grow like `|y|(ln|y|)^δ + |z||ln|z||^λ`.

pub mod bsde_engine;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod growth_inequalities;
pub mod numerics;
pub mod test_functions;
pub mod threshold_odes;

pub use error::{Error, Result};
