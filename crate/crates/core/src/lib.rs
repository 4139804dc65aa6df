//! Phase-error analysis and key-rate simulation for QKD protocols with phase
//! postselection (sending-or-not-sending twin-field QKD and mode-pairing QKD).

pub mod channel;
pub mod decoy;
pub mod error;
pub mod mp;
pub mod oracle;
pub mod phase_error;
pub mod quad;
pub mod rate;
pub mod sns;

pub use error::{QkdError, Result};
pub use rate::{KeyRateResult, MaxDistance};
pub use phase_error::{
    binary_entropy, combine_ports, precise_from_loose, sinc, slice_average, slice_value, AffineSliceModel, Clamped,
    PhaseErrorBounds, PhaseSlice,
};

/// Which phase-error estimate feeds the key rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Window-averaged bound.
    Loose,
    /// Window-corrected pointwise bound.
    Precise,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Loose => "loose",
            Mode::Precise => "precise",
        })
    }
}
