//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by mesh construction, decomposition, correction and the
/// sweep/filter machinery.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not unitary: max |UU\u{2020} - I| = {deviation:.3e} exceeds {tol:.1e}")]
    NotUnitary { deviation: f64, tol: f64 },

    #[error("splitter deviation {0} rad outside (-pi/4, pi/4)")]
    SplitterOutOfRange(f64),

    #[error("theta = {0} rad outside [0, pi]")]
    ThetaOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("frequency grid too coarse: phase step {step:.3} rad at sample {index} exceeds pi")]
    GridTooCoarse { index: usize, step: f64 },

    #[error("optimizer did not converge: best objective {best:.3e} after {evals} evaluations")]
    NonConvergence { best: f64, evals: usize },
}

/// Errors raised by the on-chip calibration simulator and protocol drivers.
#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("port {port} lacks {needed} detection capability")]
    CapabilityMismatch { port: usize, needed: &'static str },

    #[error("insufficient optical power at device {device}: {power:.3e} below floor {floor:.3e}")]
    InsufficientPower { device: usize, power: f64, floor: f64 },

    #[error("visibility {0:.3e} below resolvable floor; |alpha - beta| or |alpha + beta| degenerate")]
    DegenerateVisibility(f64),

    #[error("local-oscillator distribution failed: residual imbalance {0:.3e}")]
    LoDistributionFailure(f64),

    #[error("calibration of device {device} failed: {source}")]
    PropagatedFailure {
        device: usize,
        #[source]
        source: Box<CalibrationError>,
    },

    #[error(transparent)]
    Mesh(#[from] MeshError),
}
