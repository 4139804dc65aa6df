//! Sending-or-not-sending twin-field QKD with actively-odd-parity pairing (AOPP).
//!
//! Alice's key bit is 1 when she sends and Bob's is 0 when he sends, so the
//! correct Z-window events are those in which exactly one party sends.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::channel::{sns_statistics, ChannelParams, SnsBranchGains};
use crate::decoy::{eph_loose_sns, eph_precise_sns, s1_lower_bound, DecoyObservations, FiniteKeyParams, IntensityGain};
use crate::error::{check_probability, QkdError, Result};
use crate::rate::{keys, max_distance_by, secret_rate, Audit, KeyRateResult, MaxDistance, DISTANCE_RESOLUTION_KM};
use crate::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnsParams {
    /// Probability `p` of sending in a Z window.
    pub send_prob: f64,
    /// Z-window intensity `μ_z`.
    pub signal_intensity: f64,
    /// Weak decoy `μ₁`, also used for the phase-error test.
    pub decoy_weak: f64,
    pub decoy_strong: f64,
    /// Probability that a party picks a Z window.
    pub z_window_prob: f64,
    /// Decoy-window probabilities of vacuum, `μ₁` and `μ₂`.
    pub decoy_probs: [f64; 3],
    /// Full width `Δ` of the phase-postselection window `|θ_A − θ_B| ≤ Δ/2`.
    pub slice_full_width: f64,
    pub finite: FiniteKeyParams,
    pub aopp_enabled: bool,
}

impl Default for SnsParams {
    fn default() -> Self {
        Self {
            send_prob: 0.3,
            signal_intensity: 0.5,
            decoy_weak: 0.05,
            decoy_strong: 0.4,
            z_window_prob: 0.75,
            decoy_probs: [0.3, 0.5, 0.2],
            slice_full_width: PI / 5.0,
            finite: FiniteKeyParams::sns_default(),
            aopp_enabled: true,
        }
    }
}

impl SnsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.send_prob > 0.0 && self.send_prob < 1.0) {
            return Err(QkdError::Domain {
                name: "send_prob",
                value: self.send_prob,
                domain: "(0, 1)",
            });
        }
        if !(self.z_window_prob > 0.0 && self.z_window_prob < 1.0) {
            return Err(QkdError::Domain {
                name: "z_window_prob",
                value: self.z_window_prob,
                domain: "(0, 1)",
            });
        }
        for (name, v) in [
            ("signal_intensity", self.signal_intensity),
            ("decoy_weak", self.decoy_weak),
            ("decoy_strong", self.decoy_strong),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QkdError::Domain {
                    name,
                    value: v,
                    domain: "(0, ∞)",
                });
            }
        }
        if self.decoy_weak >= self.decoy_strong {
            return Err(QkdError::IntensityOrder {
                weak: self.decoy_weak,
                strong: self.decoy_strong,
            });
        }
        for &q in &self.decoy_probs {
            check_probability("decoy_probs", q)?;
        }
        let total: f64 = self.decoy_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(QkdError::InvalidParam(format!("decoy_probs sum to {total}, not 1")));
        }
        if self.decoy_probs[0] == 0.0 || self.decoy_probs[1] == 0.0 {
            return Err(QkdError::InvalidParam("vacuum and weak decoy need nonzero probability".into()));
        }
        if !(self.slice_full_width > 0.0 && self.slice_full_width < PI) {
            return Err(QkdError::Domain {
                name: "slice_full_width",
                value: self.slice_full_width,
                domain: "(0, π)",
            });
        }
        self.finite.validate()
    }

    fn decoy_window(&self) -> f64 {
        (1.0 - self.z_window_prob).powi(2)
    }

    /// Number of `μ₁`-`μ₁` decoy rounds whose phases fall in either postselection window.
    pub fn postselected_instances(&self) -> f64 {
        let p1 = self.decoy_probs[1];
        self.finite.total_rounds * self.decoy_window() * p1 * p1 * self.slice_full_width / PI
    }
}

/// Probability that a Z round is untagged: one party sends a single photon, the other nothing.
pub fn untagged_fraction(send_prob: f64, signal_intensity: f64) -> f64 {
    2.0 * send_prob * (1.0 - send_prob) * signal_intensity * (-signal_intensity).exp()
}

/// Joint distribution of (Alice bit, Bob bit) among effective Z rounds, in the order
/// `[(0,0), (0,1), (1,0), (1,1)]`.
pub fn z_outcome_probs(send_prob: f64, branches: &SnsBranchGains) -> [f64; 4] {
    let p = send_prob;
    let raw = [
        (1.0 - p) * p * branches.vac_send,
        (1.0 - p) * (1.0 - p) * branches.vac_vac,
        p * p * branches.send_send,
        p * (1.0 - p) * branches.send_vac,
    ];
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.map(|r| r / total)
    } else {
        [0.0; 4]
    }
}

/// Draw `n` effective Z rounds from [`z_outcome_probs`].
pub fn sample_z_strings<R: Rng + ?Sized>(probs: &[f64; 4], n: usize, rng: &mut R) -> (Vec<bool>, Vec<bool>) {
    let mut alice = Vec::with_capacity(n);
    let mut bob = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = 3;
        for (i, &pr) in probs.iter().enumerate() {
            acc += pr;
            if u < acc {
                k = i;
                break;
            }
        }
        alice.push(k >= 2);
        bob.push(k % 2 == 1);
    }
    (alice, bob)
}

/// Result of one run of the pairing procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AoppOutcome {
    pub pairs: usize,
    pub survivors: usize,
    pub errors: usize,
}

/// Actively-odd-parity pairing.
///
/// Bob pairs each of his 0 bits with a distinct, randomly chosen 1 bit. Alice keeps a
/// pair only if her two bits differ. Each surviving pair yields the bit at the lower
/// position; it is an error when Alice's and Bob's bits there disagree.
pub fn aopp_simulate(alice: &[bool], bob: &[bool], seed: u64) -> Result<AoppOutcome> {
    if alice.len() != bob.len() {
        return Err(QkdError::Dimension(format!(
            "bit strings of length {} and {}",
            alice.len(),
            bob.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zeros: Vec<usize> = (0..bob.len()).filter(|&i| !bob[i]).collect();
    let mut ones: Vec<usize> = (0..bob.len()).filter(|&i| bob[i]).collect();
    zeros.shuffle(&mut rng);
    ones.shuffle(&mut rng);
    let pairs = zeros.len().min(ones.len());
    let mut survivors = 0;
    let mut errors = 0;
    for (&i, &j) in zeros.iter().zip(&ones) {
        if alice[i] == alice[j] {
            continue;
        }
        survivors += 1;
        let first = i.min(j);
        if alice[first] != bob[first] {
            errors += 1;
        }
    }
    Ok(AoppOutcome {
        pairs,
        survivors,
        errors,
    })
}

/// Analytic expectations of [`aopp_simulate`] with standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoppExpectation {
    pub pairs: f64,
    pub survivors: f64,
    pub errors: f64,
    pub sd_pairs: f64,
    pub sd_survivors: f64,
    pub sd_errors: f64,
    /// Probability that a pair survives.
    pub survival: f64,
    /// Bit error among surviving pairs.
    pub error_rate: f64,
}

/// Expectations for `n` bits with Bob's bit 0 at probability `bob_zero` and error
/// rates `e0`, `e1` among Bob's 0 and 1 positions.
pub fn aopp_expectation(n: f64, bob_zero: f64, e0: f64, e1: f64) -> AoppExpectation {
    // min(X, n − X) = n/2 − |X − n/2| with X ~ Bin(n, bob_zero) in the normal limit.
    let offset = n * (bob_zero - 0.5);
    let sigma = (n * bob_zero * (1.0 - bob_zero)).sqrt();
    let (abs_mean, abs_sq) = if sigma > 0.0 {
        let z = offset / sigma;
        let mean = sigma * (2.0 / PI).sqrt() * (-0.5 * z * z).exp() + offset * erf(z / std::f64::consts::SQRT_2);
        (mean, sigma * sigma + offset * offset)
    } else {
        (offset.abs(), offset * offset)
    };
    let pairs = 0.5 * n - abs_mean;
    let var_pairs = (abs_sq - abs_mean * abs_mean).max(0.0);
    let survival = (1.0 - e0) * (1.0 - e1) + e0 * e1;
    let both_wrong = e0 * e1;
    let binom_var = |g: f64| pairs * g * (1.0 - g) + g * g * var_pairs;
    AoppExpectation {
        pairs,
        survivors: pairs * survival,
        errors: pairs * both_wrong,
        sd_pairs: var_pairs.sqrt(),
        sd_survivors: binom_var(survival).sqrt(),
        sd_errors: binom_var(both_wrong).sqrt(),
        survival,
        error_rate: if survival > 0.0 { both_wrong / survival } else { 0.0 },
    }
}

fn zero_rate(mode: Mode, e_z: f64, mut audit: Audit, why: &str) -> KeyRateResult {
    audit.flag(true, why);
    KeyRateResult {
        rate_per_round: 0.0,
        n_untagged: 0.0,
        e_ph_used: 0.5,
        e_z,
        mode,
        audit: audit.map,
        flags: audit.flags,
    }
}

/// Per-round secret key rate of AOPP-SNS-TFQKD.
pub fn key_rate(params: &SnsParams, channel: &ChannelParams, mode: Mode) -> Result<KeyRateResult> {
    let stats = sns_statistics(params, channel)?;
    let fin = &params.finite;
    let n = fin.total_rounds;
    let mut a = Audit::default();
    a.put(keys::TOTAL_ROUNDS, n);
    a.put(keys::EC_INEFFICIENCY, fin.ec_inefficiency);
    a.put("transmittance", stats.transmittance);
    let c = &stats.clicks;
    let [p0, p1, p2] = params.decoy_probs;
    let x = params.decoy_window();
    let (mu1, mu2) = (params.decoy_weak, params.decoy_strong);

    // Decoy windows: observed counts through the fluctuation bounds, then back to rates.
    let rounds_00 = n * x * p0 * p0;
    let s00_count = rounds_00 * c.s00;
    let s00_lo = a.put("s00_lower", fin.lower(s00_count) / rounds_00);
    let s00_hi = a.put("s00_upper", fin.upper(s00_count) / rounds_00);
    let one_sided = |pk: f64| n * x * 2.0 * pk * p0;
    let g1 = c.gain(mu1, 0.0).unwrap_or(0.0);
    let g2 = c.gain(mu2, 0.0).unwrap_or(0.0);
    let q1_lo = a.put("q_weak_lower", fin.lower(one_sided(p1) * g1) / one_sided(p1));
    let q2_hi = if p2 > 0.0 {
        (fin.upper(one_sided(p2) * g2) / one_sided(p2)).min(1.0)
    } else {
        return Err(QkdError::InvalidParam("strong decoy needs nonzero probability".into()));
    };
    a.put("q_strong_upper", q2_hi);
    let s1 = s1_lower_bound(&DecoyObservations {
        vacuum_yield: s00_hi.min(1.0),
        weak: IntensityGain {
            intensity: mu1,
            gain: q1_lo.min(1.0),
        },
        strong: IntensityGain {
            intensity: mu2,
            gain: q2_hi,
        },
    })?;
    a.flag(s1.clamped, "s1_clamped");
    let s1 = a.put("s1_lower", s1.value);
    let e_z = c.e_z;
    if s1 <= 0.0 {
        return Ok(zero_rate(mode, e_z, a, "s1_zero"));
    }

    let instances = a.put("postselected_instances", params.postselected_instances());
    let t_count = instances * c.t_delta;
    let t_hi = a.put("t_delta_upper", (fin.upper(t_count) / instances).min(1.0));
    a.put("t_delta", c.t_delta);
    a.put("n_l", c.n_l);
    a.put("n_r", c.n_r);
    let loose = eph_loose_sns(t_hi, s00_lo, s1, mu1)?;
    a.flag(loose.clamped, "e_loose_clamped");
    let mut e_loose = loose.value;
    if e_loose > 0.5 {
        a.flag(true, "e_loose_capped");
        e_loose = 0.5;
    }
    a.put("e_ph_loose", e_loose);
    let precise = eph_precise_sns(e_loose, params.slice_full_width)?;
    a.flag(precise.clamped, "e_precise_clamped");
    a.put("e_ph_precise", precise.value);
    let e_ph = match mode {
        Mode::Loose => e_loose,
        Mode::Precise => precise.value,
    };

    let p = params.send_prob;
    let z_rounds = n * params.z_window_prob * params.z_window_prob;
    let n_t = a.put("n_sifted", z_rounds * c.q_z);
    let n_1 = a.put("n_untagged", z_rounds * untagged_fraction(p, params.signal_intensity) * s1);
    a.put("e_z", e_z);

    let (n_sec, e_final, n_sift, e_bit) = if params.aopp_enabled {
        let probs = z_outcome_probs(p, &stats.branches);
        let bob_zero = probs[0] + probs[2];
        let e0 = if bob_zero > 0.0 { probs[2] / bob_zero } else { 0.0 };
        let e1 = if bob_zero < 1.0 { probs[1] / (1.0 - bob_zero) } else { 0.0 };
        let exp = aopp_expectation(n_t, bob_zero, e0, e1);
        a.put("aopp_pairs", exp.pairs);
        a.put("aopp_survival", exp.survival);
        // Each untagged position is a correct bit, so untagged pairs always survive.
        let u_half = 0.5 * n_1;
        let n1_pairs = if n_t > 0.0 && bob_zero > 0.0 && bob_zero < 1.0 {
            exp.pairs * (u_half / (n_t * bob_zero)) * (u_half / (n_t * (1.0 - bob_zero)))
        } else {
            0.0
        };
        (n1_pairs, 2.0 * e_ph * (1.0 - e_ph), exp.survivors, exp.error_rate)
    } else {
        (n_1, e_ph, n_t, e_z)
    };
    a.put(keys::N_SECURE, n_sec);
    a.put(keys::E_PH, e_final);
    a.put(keys::N_SIFTED, n_sift);
    a.put(keys::E_BIT, e_bit);
    let rate = secret_rate(n, n_sec, e_final, n_sift, e_bit, fin.ec_inefficiency);
    a.put("rate", rate);
    Ok(KeyRateResult {
        rate_per_round: rate,
        n_untagged: n_1,
        e_ph_used: e_ph,
        e_z,
        mode,
        audit: a.map,
        flags: a.flags,
    })
}

/// Largest distance in `[0, ceiling_km]` with a positive rate at fixed protocol parameters.
pub fn max_distance(params: &SnsParams, channel: &ChannelParams, mode: Mode, ceiling_km: f64) -> Result<MaxDistance> {
    max_distance_by(
        |d| Ok(key_rate(params, &channel.at_distance(d), mode)?.rate_per_round),
        0.0,
        ceiling_km,
        DISTANCE_RESOLUTION_KM,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::arm_transmittance;

    #[test]
    fn untagged_fraction_examples() {
        assert!(untagged_fraction(0.5, 1e-12) < 1e-12);
        assert!((untagged_fraction(0.5, 1.0) - 0.183_939_720_585_721_16).abs() < 1e-15);
        assert_eq!(untagged_fraction(0.0, 0.3), 0.0);
        assert_eq!(untagged_fraction(1.0, 0.3), 0.0);
    }

    #[test]
    fn aopp_error_free_keeps_all_pairs() {
        let bob: Vec<bool> = (0..1000).map(|i| i % 3 == 0).collect();
        let alice = bob.clone();
        let out = aopp_simulate(&alice, &bob, 7).unwrap();
        let ones = bob.iter().filter(|&&b| b).count();
        assert_eq!(out.pairs, ones.min(1000 - ones));
        assert_eq!(out.survivors, out.pairs);
        assert_eq!(out.errors, 0);
    }

    #[test]
    fn aopp_constant_bob_string_has_no_pairs() {
        let bob = vec![true; 100];
        let alice: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        assert_eq!(aopp_simulate(&alice, &bob, 1).unwrap().pairs, 0);
        assert!(aopp_simulate(&alice[..10], &bob, 1).is_err());
    }

    #[test]
    fn aopp_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probs = [0.3, 0.05, 0.1, 0.55];
        let (a, b) = sample_z_strings(&probs, 10_000, &mut rng);
        assert_eq!(aopp_simulate(&a, &b, 11).unwrap(), aopp_simulate(&a, &b, 11).unwrap());
    }

    #[test]
    fn aopp_matches_expectation_at_moderate_size() {
        let probs = [0.4, 0.02, 0.15, 0.43];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 200_000;
        let (a, b) = sample_z_strings(&probs, n, &mut rng);
        let out = aopp_simulate(&a, &b, 5).unwrap();
        let bob_zero = probs[0] + probs[2];
        let exp = aopp_expectation(n as f64, bob_zero, probs[2] / bob_zero, probs[1] / (1.0 - bob_zero));
        assert!((out.pairs as f64 - exp.pairs).abs() < 3.0 * exp.sd_pairs);
        assert!((out.survivors as f64 - exp.survivors).abs() < 3.0 * exp.sd_survivors);
        assert!((out.errors as f64 - exp.errors).abs() < 3.0 * exp.sd_errors);
    }

    #[test]
    fn expectation_near_balanced_bits() {
        let exp = aopp_expectation(10_000.0, 0.5, 0.0, 0.0);
        // E|X − n/2| = σ√(2/π) with σ = 50.
        assert!((exp.pairs - (5000.0 - 50.0 * (2.0 / PI).sqrt())).abs() < 1e-9);
    }

    #[test]
    fn precise_dominates_loose() {
        let params = SnsParams::default();
        for d in [0.0, 100.0, 200.0, 300.0, 350.0] {
            let ch = ChannelParams::sns_default().at_distance(d);
            let l = key_rate(&params, &ch, Mode::Loose).unwrap();
            let p = key_rate(&params, &ch, Mode::Precise).unwrap();
            assert!(p.rate_per_round >= l.rate_per_round, "d={d}");
            if l.rate_per_round > 0.0 {
                assert!(p.rate_per_round > l.rate_per_round);
                assert!(p.e_ph_used < l.e_ph_used);
            }
        }
    }

    #[test]
    fn audit_recombines_to_rate() {
        for aopp in [true, false] {
            // Without pairing the raw bit error is close to the sending probability.
            let params = SnsParams {
                aopp_enabled: aopp,
                send_prob: if aopp { 0.3 } else { 0.05 },
                ..SnsParams::default()
            };
            for d in [50.0, 250.0] {
                let r = key_rate(&params, &ChannelParams::sns_default().at_distance(d), Mode::Precise).unwrap();
                assert!(r.rate_per_round > 0.0);
                let again = r.recombine().unwrap();
                assert!((again - r.rate_per_round).abs() <= 1e-12 * r.rate_per_round);
            }
        }
    }

    #[test]
    fn maximal_phase_error_gives_no_key() {
        let params = SnsParams::default();
        let mut ch = ChannelParams::sns_default().at_distance(100.0);
        ch.misalign_x = 0.5;
        let r = key_rate(&params, &ch, Mode::Loose).unwrap();
        assert_eq!(r.e_ph_used, 0.5);
        assert_eq!(r.rate_per_round, 0.0);
    }

    #[test]
    fn far_distance_yields_zero_not_error() {
        let r = key_rate(&SnsParams::default(), &ChannelParams::sns_default().at_distance(2000.0), Mode::Precise).unwrap();
        assert_eq!(r.rate_per_round, 0.0);
    }

    #[test]
    fn perfect_channel_hits_ceiling() {
        let mut params = SnsParams::default();
        params.finite.fluctuations = false;
        let mut ch = ChannelParams::sns_default();
        ch.dark_count = 0.0;
        ch.detector_efficiency = 1.0;
        ch.misalign_x = 0.0;
        let r = max_distance(&params, &ch, Mode::Precise, 600.0).unwrap();
        assert!(r.ceiling_hit);
        assert_eq!(r.km, Some(600.0));
    }

    #[test]
    fn max_distance_precise_not_shorter() {
        let params = SnsParams::default();
        let ch = ChannelParams::sns_default();
        let l = max_distance(&params, &ch, Mode::Loose, 1000.0).unwrap().km.unwrap();
        let p = max_distance(&params, &ch, Mode::Precise, 1000.0).unwrap().km.unwrap();
        assert!(p >= l);
        assert!(arm_transmittance(&ch.at_distance(l)) > 0.0);
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut p = SnsParams::default();
        p.decoy_weak = 0.5;
        assert!(p.validate().is_err());
        let mut p = SnsParams::default();
        p.decoy_probs = [0.5, 0.5, 0.5];
        assert!(p.validate().is_err());
        let mut p = SnsParams::default();
        p.send_prob = 1.0;
        assert!(p.validate().is_err());
    }
}
