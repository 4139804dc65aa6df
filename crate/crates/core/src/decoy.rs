//! Decoy-state bounds and multiplicative Chernoff fluctuation bounds.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, QkdError, Result};
use crate::phase_error::{precise_from_loose, Clamped};

/// Finite-size parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteKeyParams {
    pub total_rounds: f64,
    /// Failure probability spent on each estimated quantity.
    pub epsilon: f64,
    /// Target composable security level; reported alongside our own budget.
    pub security_level: f64,
    pub ec_inefficiency: f64,
    /// Route observed counts through Chernoff bounds. Off gives the asymptotic rate.
    #[serde(default = "default_true")]
    pub fluctuations: bool,
}

fn default_true() -> bool {
    true
}

impl FiniteKeyParams {
    pub fn sns_default() -> Self {
        Self {
            total_rounds: 1e12,
            epsilon: 1e-20,
            security_level: 4.66e-9,
            ec_inefficiency: 1.1,
            fluctuations: true,
        }
    }

    pub fn mp_default() -> Self {
        Self {
            total_rounds: 1e13,
            epsilon: 1e-23,
            security_level: 1e-10,
            ec_inefficiency: 1.1,
            fluctuations: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(QkdError::Domain {
                name: "epsilon",
                value: self.epsilon,
                domain: "(0, 1)",
            });
        }
        if !(self.total_rounds >= 1.0) {
            return Err(QkdError::Domain {
                name: "total_rounds",
                value: self.total_rounds,
                domain: "[1, ∞)",
            });
        }
        if !(self.ec_inefficiency >= 1.0) {
            return Err(QkdError::Domain {
                name: "ec_inefficiency",
                value: self.ec_inefficiency,
                domain: "[1, ∞)",
            });
        }
        Ok(())
    }

    /// Lower bound on an expected count, or the count itself without fluctuations.
    pub fn lower(&self, observed: f64) -> f64 {
        if self.fluctuations {
            chernoff_lower(observed, self.epsilon)
        } else {
            observed
        }
    }

    pub fn upper(&self, observed: f64) -> f64 {
        if self.fluctuations {
            chernoff_upper(observed, self.epsilon)
        } else {
            observed
        }
    }
}

/// Observed gain at one intensity (one party sends, the other sends vacuum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityGain {
    pub intensity: f64,
    pub gain: f64,
}

/// Vacuum yield plus a weak and a strong decoy gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyObservations {
    pub vacuum_yield: f64,
    pub weak: IntensityGain,
    pub strong: IntensityGain,
}

/// Two-decoy lower bound on the single-photon yield.
///
/// With vacuum yield `Y₀` and gains `Q_ν`, `Q_μ` (`ν < μ`):
/// `s₁ ≥ μ/(μν − ν²)·(Q_ν e^ν − (ν²/μ²) Q_μ e^μ − ((μ² − ν²)/μ²) Y₀)`.
pub fn s1_lower_bound(obs: &DecoyObservations) -> Result<Clamped> {
    let nu = obs.weak.intensity;
    let mu = obs.strong.intensity;
    if !(nu > 0.0) || nu >= mu {
        return Err(QkdError::IntensityOrder { weak: nu, strong: mu });
    }
    for (name, v) in [
        ("vacuum_yield", obs.vacuum_yield),
        ("weak gain", obs.weak.gain),
        ("strong gain", obs.strong.gain),
    ] {
        check_probability(name, v)?;
    }
    let mu2 = mu * mu;
    let nu2 = nu * nu;
    let raw = mu / (mu * nu - nu2)
        * (obs.weak.gain * nu.exp() - nu2 / mu2 * obs.strong.gain * mu.exp() - (mu2 - nu2) / mu2 * obs.vacuum_yield);
    Ok(Clamped::unit(raw))
}

/// Upper bound on the window-averaged single-photon phase error of SNS-TFQKD:
/// `(T_Δ − ½e^{−2μ₁}S₀₀) / (2μ₁e^{−2μ₁} s₁)`.
pub fn eph_loose_sns(t_delta: f64, s00: f64, s1_lower: f64, mu1: f64) -> Result<Clamped> {
    if !(mu1 > 0.0) {
        return Err(QkdError::Domain {
            name: "mu1",
            value: mu1,
            domain: "(0, ∞)",
        });
    }
    let vac = (-2.0 * mu1).exp();
    let denom = 2.0 * mu1 * vac * s1_lower;
    if !(denom > 0.0) {
        return Err(QkdError::ZeroDenominator("single-photon phase error bound"));
    }
    Ok(Clamped::unit((t_delta - 0.5 * vac * s00) / denom))
}

/// SNS precise bound: the window `|θ_A − θ_B| ≤ Δ/2` has half-width `Δ/2`.
pub fn eph_precise_sns(loose: f64, full_width: f64) -> Result<Clamped> {
    precise_from_loose(loose, 0.5 * full_width)
}

/// MP precise bound: postselection `|δ_a − δ_b| ≤ Δ` has half-width `Δ`.
pub fn eph_precise_mp(loose: f64, half_width: f64) -> Result<Clamped> {
    precise_from_loose(loose, half_width)
}

const ROOT_ITERATIONS: usize = 200;

/// Solve `f(u) = target` for increasing `f` on `[lo, hi]` by bisection.
fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..ROOT_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs() {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Multiplicative-Chernoff lower bound on the expectation behind an observed count.
///
/// Solves `x[ln(1+δ) − δ/(1+δ)] = ln(1/ε)` and returns `x/(1+δ)`; with
/// `u = ln(1+δ)` the equation is `x(u − 1 + e^{−u}) = ln(1/ε)`.
pub fn chernoff_lower(observed: f64, epsilon: f64) -> f64 {
    if observed <= 0.0 {
        return 0.0;
    }
    let target = (1.0 / epsilon).ln() / observed;
    if target <= 0.0 {
        return observed;
    }
    let u = bisect(|u| u - 1.0 + (-u).exp(), target, 0.0, target + 2.0);
    observed * (-u).exp()
}

/// Multiplicative-Chernoff upper bound on the expectation behind an observed count.
///
/// Solves `x[δ/(1−δ) + ln(1−δ)] = ln(1/ε)` and returns `x/(1−δ)`; with
/// `v = −ln(1−δ)` the equation is `x(e^v − 1 − v) = ln(1/ε)`. For `x = 0` the
/// bound is `ln(1/ε)`.
pub fn chernoff_upper(observed: f64, epsilon: f64) -> f64 {
    let log_inv = (1.0 / epsilon).ln();
    if observed <= 0.0 {
        return log_inv;
    }
    let target = log_inv / observed;
    if target <= 0.0 {
        return observed;
    }
    let hi = (1.0 + target).ln() + 1.0;
    let v = bisect(|v| v.exp_m1() - v, target, 0.0, hi);
    observed * v.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Yields of a lossy threshold detector: `Y_n = 1 − (1 − Y₀)(1 − η)^n`.
    fn synthetic_gain(mean: f64, eta: f64, y0: f64) -> f64 {
        // Brute-force Poisson mixture.
        let mut p = (-mean).exp();
        let mut total = 0.0;
        for n in 0..200 {
            if n > 0 {
                p *= mean / n as f64;
            }
            total += p * (1.0 - (1.0 - y0) * (1.0 - eta).powi(n));
        }
        total
    }

    fn obs(nu: f64, mu: f64, eta: f64, y0: f64) -> DecoyObservations {
        DecoyObservations {
            vacuum_yield: y0,
            weak: IntensityGain {
                intensity: nu,
                gain: synthetic_gain(nu, eta, y0),
            },
            strong: IntensityGain {
                intensity: mu,
                gain: synthetic_gain(mu, eta, y0),
            },
        }
    }

    #[test]
    fn s1_bound_is_valid_and_tightens_as_weak_decoy_shrinks() {
        let (eta, y0) = (1e-3, 2e-8);
        let true_y1 = 1.0 - (1.0 - y0) * (1.0 - eta);
        let mut last_gap = f64::INFINITY;
        for nu in [0.2, 0.1, 0.05, 0.02] {
            let s1 = s1_lower_bound(&obs(nu, 0.4, eta, y0)).unwrap().value;
            assert!(s1 >= 0.0 && s1 <= true_y1, "nu={nu}: {s1} vs {true_y1}");
            let gap = true_y1 - s1;
            assert!(gap < last_gap);
            last_gap = gap;
        }
        assert!(last_gap / true_y1 < 0.02);
    }

    #[test]
    fn s1_lossless_channel_is_valid() {
        let s1 = s1_lower_bound(&obs(0.1, 0.5, 1.0, 0.0)).unwrap().value;
        assert!(s1 <= 1.0);
    }

    #[test]
    fn s1_all_zero_and_ordering() {
        let zero = DecoyObservations {
            vacuum_yield: 0.0,
            weak: IntensityGain { intensity: 0.1, gain: 0.0 },
            strong: IntensityGain { intensity: 0.4, gain: 0.0 },
        };
        assert_eq!(s1_lower_bound(&zero).unwrap().value, 0.0);
        let mut bad = zero;
        bad.weak.intensity = 0.5;
        assert!(matches!(s1_lower_bound(&bad), Err(QkdError::IntensityOrder { .. })));
    }

    #[test]
    fn s1_negative_bound_clamped() {
        let o = DecoyObservations {
            vacuum_yield: 1e-3,
            weak: IntensityGain { intensity: 0.1, gain: 0.0 },
            strong: IntensityGain { intensity: 0.4, gain: 0.1 },
        };
        let r = s1_lower_bound(&o).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.clamped);
    }

    #[test]
    fn eph_loose_examples() {
        let mu1: f64 = 0.1;
        let s00 = 1e-8;
        let t = 0.5 * (-2.0 * mu1).exp() * s00;
        assert!(eph_loose_sns(t, s00, 1e-3, mu1).unwrap().value.abs() < 1e-15);
        // mpmath: (1e-6 - 0.5 e^{-0.2} 1e-8) / (0.2 e^{-0.2} 1e-3)
        let v = eph_loose_sns(1e-6, 1e-8, 1e-3, 0.1).unwrap();
        assert!((v.value - 6.082_013_790_800_849e-3).abs() < 1e-15);
        let neg = eph_loose_sns(0.0, 1e-8, 1e-3, 0.1).unwrap();
        assert_eq!(neg.value, 0.0);
        assert!(neg.clamped);
        assert_eq!(eph_loose_sns(1e-6, 1e-8, 0.0, 0.1), Err(QkdError::ZeroDenominator("single-photon phase error bound")));
    }

    #[test]
    fn precise_wrappers_use_their_window_conventions() {
        use std::f64::consts::PI;
        assert!((eph_precise_sns(0.5, 1.0).unwrap().value - 0.5).abs() < 1e-15);
        assert!((eph_precise_sns(0.04, PI / 3.0).unwrap().value - 0.018_289_126_449_565).abs() < 1e-12);
        assert!((eph_precise_sns(0.03, 1e-9).unwrap().value - 0.03).abs() < 1e-15);
        assert!((eph_precise_mp(0.5, 1.0).unwrap().value - 0.5).abs() < 1e-15);
        assert!((eph_precise_mp(0.04, PI / 6.0).unwrap().value - 0.018_289_126_449_565).abs() < 1e-12);
        assert!((eph_precise_mp(0.03, 1e-9).unwrap().value - 0.03).abs() < 1e-15);
    }

    #[test]
    fn chernoff_examples() {
        // mpmath findroot on the tail equations at x = 1e6, ε = 1e-20.
        assert!((chernoff_lower(1e6, 1e-20) - 990_433.624_725_394_7).abs() < 1e-6);
        assert!((chernoff_upper(1e6, 1e-20) - 1_009_627.777_480_914_6).abs() < 1e-6);
        assert_eq!(chernoff_lower(0.0, 1e-10), 0.0);
        assert!((chernoff_upper(0.0, 1e-10) - 1e10f64.ln()).abs() < 1e-12);
        let eps = 1.0 - 1e-12;
        assert!((chernoff_lower(500.0, eps) / 500.0 - 1.0).abs() < 1e-6);
        assert!((chernoff_upper(500.0, eps) / 500.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn chernoff_upper_continuous_at_zero() {
        let z = chernoff_upper(0.0, 1e-20);
        let tiny = chernoff_upper(1e-9, 1e-20);
        assert!((tiny - z).abs() / z < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn chernoff_brackets_and_shrinks(x in 1.0f64..1e9, k in 1u32..25) {
                let eps = 10f64.powi(-(k as i32));
                let lo = chernoff_lower(x, eps);
                let hi = chernoff_upper(x, eps);
                prop_assert!(lo <= x && x <= hi);
                let lo2 = chernoff_lower(4.0 * x, eps) / (4.0 * x);
                let hi2 = chernoff_upper(4.0 * x, eps) / (4.0 * x);
                prop_assert!(lo2 >= lo / x && hi2 <= hi / x);
                // Looser confidence demand gives tighter bounds.
                prop_assert!(chernoff_lower(x, eps * 10.0) >= lo);
                prop_assert!(chernoff_upper(x, eps * 10.0) <= hi);
            }

            #[test]
            fn s1_never_exceeds_true_yield(eta in 1e-6f64..1.0, y0 in 0.0f64..1e-5,
                                           nu in 0.01f64..0.3, gap in 0.05f64..0.6) {
                let mu = nu + gap;
                let true_y1 = 1.0 - (1.0 - y0) * (1.0 - eta);
                let s1 = s1_lower_bound(&obs(nu, mu, eta, y0)).unwrap().value;
                prop_assert!(s1 <= true_y1 * (1.0 + 1e-12));
            }

            #[test]
            fn precise_never_above_loose(l in 0.0f64..=0.5, d in 1e-3f64..3.0) {
                prop_assert!(eph_precise_sns(l, d).unwrap().value <= l);
                prop_assert!(eph_precise_mp(l, d / 2.0).unwrap().value <= l);
            }
        }
    }
}
