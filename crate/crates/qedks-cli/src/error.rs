//! Error-to-exit-code mapping.
//!
//! Exit 0: run completed and every invariant passed.
//! Exit 1: a physics invariant failed (named in the diagnostic).
//! Exit 2: usage, schema or I/O problems.

use qedks_core::CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Configuration, usage or I/O problem (exit 2).
    Schema(String),
    /// A named physics invariant failed (exit 1).
    Invariant(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Invariant(m) => write!(f, "invariant failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Invariant(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            // problems with the run definition itself
            CoreError::InvalidSpec(_)
            | CoreError::InvalidConfiguration(_)
            | CoreError::DimensionOverflow { .. }
            | CoreError::UnsupportedSpinorDim(_)
            | CoreError::Io(_)
            | CoreError::ArrayFormat(_) => CliError::Schema(e.to_string()),
            // physics invariants, named for the exit-1 diagnostic
            CoreError::LeakageExceeded { .. } => {
                CliError::Invariant(format!("photon-truncation leakage: {e}"))
            }
            CoreError::UnitarityViolated { .. } => CliError::Invariant(format!("unitarity: {e}")),
            CoreError::InitialMismatch { .. } => {
                CliError::Invariant(format!("initial-configuration match: {e}"))
            }
            CoreError::SingularKernel { .. } => {
                CliError::Invariant(format!("inversion-kernel regularity: {e}"))
            }
            CoreError::FixedPointDiverged { .. } => {
                CliError::Invariant(format!("fixed-point convergence: {e}"))
            }
            CoreError::StepTooLarge { .. } => {
                CliError::Invariant(format!("step-size admissibility: {e}"))
            }
            CoreError::FieldInstability { .. } => {
                CliError::Invariant(format!("field-energy stability: {e}"))
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Schema(format!("io: {e}"))
    }
}
