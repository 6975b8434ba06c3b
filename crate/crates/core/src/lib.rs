//! Coupled phase separation, linear elasticity and unidirectional damage on
//! structured grids, advanced by constrained incremental minimization and
//! audited against the scheme's discrete energy and conservation identities.

pub mod cli;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod grid;
pub mod oracle;
pub mod simplex;
pub mod solve;
pub mod stepper;

pub use error::{Error, Result};
