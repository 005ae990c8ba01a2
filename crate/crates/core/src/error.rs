use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate lattice: rows are linearly dependent or volume is non-positive")]
    DegenerateLattice,

    #[error("cluster extraction: need {needed} atoms within safe radius {radius:.4} Bohr of atom {center}, found {found}")]
    InsufficientAtoms {
        center: usize,
        needed: usize,
        found: usize,
        radius: f64,
    },

    #[error("melt generation: could not place chain {chain} after {retries} retries")]
    ChainPlacement { chain: usize, retries: usize },

    #[error("species '{0}' has no dispersion parameters")]
    MissingSpecies(String),

    #[error("unknown species symbol '{0}'")]
    UnknownSymbol(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("parameter file {path}:{line}: {reason}")]
    ParamFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("interaction matrix is not positive definite: smallest eigenvalue {0:.6e}")]
    NonPositiveEigenvalue(f64),

    #[error("eigendecomposition residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    EigenResidual { residual: f64, tol: f64 },

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite value in tensor '{0}'")]
    NonFinite(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("atom index {index} out of range for cluster of {len} atoms")]
    AtomIndex { index: usize, len: usize },

    #[error("xyz parse error at {path}:{line}: {reason}")]
    XyzParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("dataset file {path}: {reason} (byte offset {offset})")]
    DatasetFormat {
        path: PathBuf,
        reason: String,
        offset: u64,
    },

    #[error("checkpoint file {path}: {reason}")]
    CheckpointFormat { path: PathBuf, reason: String },

    #[error("metric normalizer is zero: all reference components vanish")]
    ZeroNormalizer,

    #[error("tail fit window holds {0} points; at least 5 required")]
    FitWindowTooSmall(usize),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
