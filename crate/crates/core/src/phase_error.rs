//! Closed-form phase-error machinery for protocols with phase postselection.
//!
//! A phase error measured with Bob's ancilla read out in the rotated basis
//! `X_δ = {(|0⟩ ± e^{-iδ}|1⟩)/√2}` is affine in `cos δ` and `sin δ`:
//!
//! ```text
//! e(δ) = e_ph·cos δ + (1 − cos δ)/2 + A·sin δ
//! ```
//!
//! Averaging over a symmetric window `[-w, w]` removes the `sin δ` term and
//! leaves `(1 − sinc w)/2 + e_ph·sinc w`. Inverting that map recovers the
//! pointwise (`δ = 0`) phase error from a window-averaged upper bound, which is
//! always at least as tight as the window average itself when it is below 1/2.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, QkdError, Result};

const SINC_SERIES_RADIUS: f64 = 1e-4;
const SLICE_TOLERANCE: f64 = 1e-12;

/// A value that may have been clamped into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamped {
    pub value: f64,
    pub clamped: bool,
}

impl Clamped {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            clamped: false,
        }
    }

    /// Clamp `raw` into `[0, 1]`, recording whether anything moved.
    pub fn unit(raw: f64) -> Self {
        let value = raw.clamp(0.0, 1.0);
        Self {
            value,
            clamped: value != raw,
        }
    }
}

/// Postselection window: phase offsets within `half_width` of `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSlice {
    half_width: f64,
    center: f64,
}

impl PhaseSlice {
    pub fn new(half_width: f64, center: f64) -> Result<Self> {
        check_half_width(half_width)?;
        if !(0.0..2.0 * std::f64::consts::PI).contains(&center) {
            return Err(QkdError::Domain {
                name: "center",
                value: center,
                domain: "[0, 2π)",
            });
        }
        Ok(Self { half_width, center })
    }

    /// Window around zero phase difference.
    pub fn in_phase(half_width: f64) -> Result<Self> {
        Self::new(half_width, 0.0)
    }

    /// Window around a phase difference of π.
    pub fn anti_phase(half_width: f64) -> Result<Self> {
        Self::new(half_width, std::f64::consts::PI)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn full_width(&self) -> f64 {
        2.0 * self.half_width
    }
}

/// Phase error as a function of the basis rotation δ for one ancilla state
/// (or a probability-weighted mixture of announcement classes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineSliceModel {
    /// Phase error at δ = 0.
    pub e_ph: f64,
    /// Coefficient of `sin δ`; independent of δ.
    pub a_coeff: f64,
}

impl AffineSliceModel {
    pub fn new(e_ph: f64, a_coeff: f64) -> Result<Self> {
        check_probability("e_ph", e_ph)?;
        if !(-0.5..=0.5).contains(&a_coeff) {
            return Err(QkdError::Domain {
                name: "a_coeff",
                value: a_coeff,
                domain: "[-1/2, 1/2]",
            });
        }
        Ok(Self { e_ph, a_coeff })
    }

    /// Unchecked evaluation of the affine form.
    pub fn eval(&self, delta: f64) -> f64 {
        let (s, c) = delta.sin_cos();
        self.e_ph * c + 0.5 * (1.0 - c) + self.a_coeff * s
    }
}

/// Loose (window-averaged) and precise (pointwise) phase-error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseErrorBounds {
    pub loose: f64,
    pub window: PhaseSlice,
    pub precise: f64,
    /// The precise value left `[0, 1]` and was clamped.
    pub clamped: bool,
}

impl PhaseErrorBounds {
    pub fn from_loose(loose: f64, window: PhaseSlice) -> Result<Self> {
        let precise = precise_from_loose(loose, window.half_width())?;
        Ok(Self {
            loose,
            window,
            precise: precise.value,
            clamped: precise.clamped,
        })
    }
}

fn check_half_width(w: f64) -> Result<f64> {
    if w > 0.0 && w < FRAC_PI_2 {
        Ok(w)
    } else {
        Err(QkdError::Domain {
            name: "half_width",
            value: w,
            domain: "(0, π/2)",
        })
    }
}

/// `sin(x)/x` with the removable singularity at zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < SINC_SERIES_RADIUS {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

/// Phase error with Bob's ancilla measured in `X_δ`.
pub fn slice_value(model: &AffineSliceModel, delta: f64) -> Result<f64> {
    let value = model.eval(delta);
    if !(-SLICE_TOLERANCE..=1.0 + SLICE_TOLERANCE).contains(&value) {
        return Err(QkdError::InconsistentModel { value, delta });
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Average of the slice value over the symmetric window `[-w, w]`.
///
/// The `sin δ` coefficient integrates to zero and does not enter.
pub fn slice_average(e_ph: f64, window: &PhaseSlice) -> f64 {
    average_over_half_width(e_ph, window.half_width())
}

pub(crate) fn average_over_half_width(e_ph: f64, w: f64) -> f64 {
    let s = sinc(w);
    0.5 * (1.0 - s) + e_ph * s
}

/// Recover the pointwise phase error from a window-averaged bound.
///
/// SNS callers pass `w = Δ/2`; MP callers pass `w = Δ`.
pub fn precise_from_loose(loose: f64, w: f64) -> Result<Clamped> {
    check_probability("loose", loose)?;
    check_half_width(w)?;
    let inv = 1.0 / sinc(w);
    // (loose - 1/2)/sinc + 1/2 is the same map and keeps loose = 1/2 exact.
    Ok(Clamped::unit((loose - 0.5) * inv + 0.5))
}

/// Shannon entropy of a Bernoulli(x) variable, in bits.
pub fn binary_entropy(x: f64) -> Result<f64> {
    check_probability("x", x)?;
    Ok(binary_entropy_unchecked(x))
}

pub(crate) fn binary_entropy_unchecked(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Count-weighted combination of per-port phase errors.
pub fn combine_ports(e_l: f64, e_r: f64, n_l: f64, n_r: f64) -> Result<f64> {
    if n_l < 0.0 || n_r < 0.0 {
        return Err(QkdError::InvalidParam(format!(
            "negative port count (n_L={n_l}, n_R={n_r})"
        )));
    }
    let total = n_l + n_r;
    if total <= 0.0 {
        return Err(QkdError::EmptyCounts);
    }
    Ok((n_l * e_l + n_r * e_r) / total)
}
