//! Key-rate result with an audit trail, and the maximum-distance search.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::phase_error::binary_entropy_unchecked;
use crate::{Mode, Result};

/// Audit keys that [`KeyRateResult::recombine`] reads.
pub mod keys {
    pub const TOTAL_ROUNDS: &str = "total_rounds";
    pub const N_SECURE: &str = "n_secure_final";
    pub const E_PH: &str = "e_ph_final";
    pub const N_SIFTED: &str = "n_sifted_final";
    pub const E_BIT: &str = "e_bit_final";
    pub const EC_INEFFICIENCY: &str = "ec_inefficiency";
}

/// Per-round secret key rate together with every intermediate quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateResult {
    pub rate_per_round: f64,
    /// Single-photon (untagged) count entering privacy amplification, before post-processing.
    pub n_untagged: f64,
    /// Phase error of the untagged bits: the loose or the precise bound.
    pub e_ph_used: f64,
    pub e_z: f64,
    pub mode: Mode,
    pub audit: BTreeMap<String, f64>,
    /// Clamp events and other non-fatal conditions.
    pub flags: Vec<String>,
}

impl KeyRateResult {
    /// `R = max(0, (n₁(1 − H(e_ph)) − f·n_t·H(E)) / N)` from the final audited quantities.
    pub fn recombine(&self) -> Option<f64> {
        self.unfloored_rate().map(|r| r.max(0.0))
    }

    /// The rate formula before the floor at zero; `None` when the pipeline stopped
    /// before the entropy terms (no single-photon yield).
    ///
    /// Negative values still say how far a parameter point is from producing key.
    pub fn unfloored_rate(&self) -> Option<f64> {
        let get = |k: &str| self.audit.get(k).copied();
        let n = get(keys::TOTAL_ROUNDS)?;
        let n1 = get(keys::N_SECURE)?;
        let e_ph = get(keys::E_PH)?;
        let nt = get(keys::N_SIFTED)?;
        let e_bit = get(keys::E_BIT)?;
        let f = get(keys::EC_INEFFICIENCY)?;
        Some(raw_rate(n, n1, e_ph, nt, e_bit, f))
    }
}

fn raw_rate(total_rounds: f64, n1: f64, e_ph: f64, nt: f64, e_bit: f64, f: f64) -> f64 {
    (n1 * (1.0 - binary_entropy_unchecked(e_ph)) - f * nt * binary_entropy_unchecked(e_bit)) / total_rounds
}

pub(crate) fn secret_rate(total_rounds: f64, n1: f64, e_ph: f64, nt: f64, e_bit: f64, f: f64) -> f64 {
    let raw = raw_rate(total_rounds, n1, e_ph, nt, e_bit, f);
    if raw > 0.0 {
        raw
    } else {
        0.0
    }
}

/// Accumulates the audit map and flags while a key-rate pipeline runs.
#[derive(Debug, Default)]
pub(crate) struct Audit {
    pub map: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

impl Audit {
    pub fn put(&mut self, key: &str, value: f64) -> f64 {
        self.map.insert(key.to_owned(), value);
        value
    }

    pub fn flag(&mut self, condition: bool, what: &str) {
        if condition {
            self.flags.push(what.to_owned());
        }
    }
}

/// Outcome of the maximum-distance search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxDistance {
    /// Largest distance with a positive rate, to the search resolution; `None` if the
    /// rate already vanishes at the lower end.
    pub km: Option<f64>,
    /// The rate is still positive at the upper end of the search range.
    pub ceiling_hit: bool,
}

pub const DISTANCE_RESOLUTION_KM: f64 = 0.1;

/// Bisection for the last distance in `[lo, hi]` where `rate` is positive.
///
/// Assumes the rate is nonincreasing in distance.
pub fn max_distance_by(mut rate: impl FnMut(f64) -> Result<f64>, lo: f64, hi: f64, resolution: f64) -> Result<MaxDistance> {
    if rate(hi)? > 0.0 {
        return Ok(MaxDistance {
            km: Some(hi),
            ceiling_hit: true,
        });
    }
    if rate(lo)? <= 0.0 {
        return Ok(MaxDistance {
            km: None,
            ceiling_hit: false,
        });
    }
    let (mut good, mut bad) = (lo, hi);
    while bad - good > resolution {
        let mid = 0.5 * (good + bad);
        if rate(mid)? > 0.0 {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(MaxDistance {
        km: Some(good),
        ceiling_hit: false,
    })
}
