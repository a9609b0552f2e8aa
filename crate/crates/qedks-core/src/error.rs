use thiserror::Error;

/// Errors surfaced by the core pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("Fock dimension {dim} exceeds the configured cap {cap}")]
    DimensionOverflow { dim: usize, cap: usize },

    #[error("unsupported spinor dimension {0} (expected 2 or 4)")]
    UnsupportedSpinorDim(usize),

    #[error("photon truncation leakage {leak:.3e} exceeds leak_max {leak_max:.3e} at step {step}")]
    LeakageExceeded {
        leak: f64,
        leak_max: f64,
        step: usize,
    },

    #[error("unitarity violated at step {step}: |norm - 1| = {drift:.3e}")]
    UnitarityViolated { step: usize, drift: f64 },

    #[error("initial configuration mismatch in {component}: |delta| = {norm:.3e} > tol {tol:.3e}")]
    InitialMismatch {
        component: &'static str,
        norm: f64,
        tol: f64,
    },

    #[error("singular inversion kernel at site {site}: |<n'>| = {magnitude:.3e} below floor {floor:.3e}")]
    SingularKernel {
        site: usize,
        magnitude: f64,
        floor: f64,
    },

    #[error("fixed-point corrector failed to converge at t = {t}: |delta a| = {residual:.3e} after {iters} iterations")]
    FixedPointDiverged { t: f64, residual: f64, iters: usize },

    #[error("time step {dt} too large for operator norm {norm:.3e} (dt*norm = {product:.3e})")]
    StepTooLarge { dt: f64, norm: f64, product: f64 },

    #[error("classical field energy grew by factor {factor:.1} (instability); reduce dt")]
    FieldInstability { factor: f64 },

    #[error("invalid initial configuration: {0}")]
    InvalidConfiguration(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed array file: {0}")]
    ArrayFormat(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
