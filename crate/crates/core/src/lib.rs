//! Many-body dispersion (MBD) toolkit: an analytical energy/force engine used
//! as a dataset oracle, a trimmed graph-convolutional surrogate that predicts
//! the MBD force on the center atom of a fixed-size cutoff cluster, and the
//! training / evaluation / Hessian-analysis pipeline around them.

pub mod diff;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mbd;
pub mod parallel;
pub mod surrogate;
pub mod train;

pub use error::{Error, Result};

/// Conversion factor used at file boundaries; all internal math is in
/// atomic units (Hartree, Bohr).
pub const BOHR_PER_ANGSTROM: f64 = 1.889_725_988_6;
