use thiserror::Error;

/// Errors raised by the phase-error, oracle, channel and key-rate layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QkdError {
    #[error("affine slice model is inconsistent: value {value} at delta={delta} lies outside [0, 1]")]
    InconsistentModel { value: f64, delta: f64 },

    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("port counts are empty (n_L + n_R = 0)")]
    EmptyCounts,

    #[error("Fock cutoff {cutoff} leaves Poisson tail mass {tail:e} for mean photon number {mean}")]
    CutoffTooSmall { cutoff: usize, mean: f64, tail: f64 },

    #[error("outcome {index} has probability {probability:e}, too small to condition on")]
    ZeroProbability { index: usize, probability: f64 },

    #[error("decoy intensities out of order: weak {weak} must be below strong {strong}")]
    IntensityOrder { weak: f64, strong: f64 },

    #[error("zero denominator while evaluating {0}")]
    ZeroDenominator(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub type Result<T> = std::result::Result<T, QkdError>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(QkdError::Domain {
            name,
            value,
            domain: "[0, 1]",
        })
    }
}
