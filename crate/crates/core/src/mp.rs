//! Mode-pairing QKD: clicked rounds within the maximal pairing interval are paired,
//! vacuum/`μ` pairs carry key and `ν`/`ν` pairs estimate the phase error.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::channel::{mp_statistics, ChannelParams, MP_SETTINGS};
use crate::decoy::{eph_precise_mp, s1_lower_bound, DecoyObservations, FiniteKeyParams, IntensityGain};
use crate::error::{check_probability, QkdError, Result};
use crate::phase_error::Clamped;
use crate::rate::{keys, max_distance_by, secret_rate, Audit, KeyRateResult, MaxDistance, DISTANCE_RESOLUTION_KM};
use crate::Mode;

const MU: usize = 0;
const NU: usize = 1;
const VAC: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpParams {
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub p_vac: f64,
    /// Maximal pairing interval `l` in rounds.
    pub max_pair_interval: u32,
    /// Postselection half-width `Δ`: pairs with `|δ_a − δ_b| ≤ Δ` (or `≤ Δ` around π).
    pub slice_width: f64,
    pub finite: FiniteKeyParams,
}

impl Default for MpParams {
    fn default() -> Self {
        Self {
            mu: 0.5,
            nu: 0.02,
            p_mu: 0.35,
            p_nu: 0.2,
            p_vac: 0.45,
            max_pair_interval: 100,
            slice_width: PI / 8.0,
            finite: FiniteKeyParams::mp_default(),
        }
    }
}

impl MpParams {
    /// `[μ, ν, 0]`.
    pub fn intensities(&self) -> [f64; MP_SETTINGS] {
        [self.mu, self.nu, 0.0]
    }

    pub fn probabilities(&self) -> [f64; MP_SETTINGS] {
        [self.p_mu, self.p_nu, self.p_vac]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("nu", self.nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QkdError::Domain {
                    name,
                    value: v,
                    domain: "(0, ∞)",
                });
            }
        }
        if self.nu >= self.mu {
            return Err(QkdError::IntensityOrder {
                weak: self.nu,
                strong: self.mu,
            });
        }
        for (name, v) in [("p_mu", self.p_mu), ("p_nu", self.p_nu), ("p_vac", self.p_vac)] {
            check_probability(name, v)?;
        }
        let total = self.p_mu + self.p_nu + self.p_vac;
        if (total - 1.0).abs() > 1e-9 {
            return Err(QkdError::InvalidParam(format!("intensity probabilities sum to {total}, not 1")));
        }
        if self.max_pair_interval < 1 {
            return Err(QkdError::InvalidParam("max_pair_interval must be at least 1".into()));
        }
        if !(self.slice_width > 0.0 && self.slice_width < PI / 2.0) {
            return Err(QkdError::Domain {
                name: "slice_width",
                value: self.slice_width,
                domain: "(0, π/2)",
            });
        }
        self.finite.validate()
    }
}

/// Pairs formed per round by greedy pairing of clicks within `l` rounds.
///
/// Renewal argument: wait for a first click (mean `1/q` rounds), then scan at most
/// `l` rounds for a partner. The partner appears with probability
/// `s = 1 − (1 − q)^l` and the scan lasts `(1 − (1 − q)^l)/q` rounds on average; a
/// failed scan discards the first click and the renewal restarts.
pub fn pairing_rate(q: f64, l: u32) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let miss = (1.0 - q).powi(l as i32);
    let s = 1.0 - miss;
    let wait = s / q;
    s / (1.0 / q + wait)
}

/// Asymptotic standard deviation of the number of pairs formed in `rounds` rounds.
///
/// Renewal-reward central limit theorem on the cycle of [`pairing_rate`]: a cycle of
/// length `C = G₁ + min(G₂, l)` with reward `1{G₂ ≤ l}` and independent geometric gaps.
pub fn pairing_count_sd(q: f64, l: u32, rounds: u64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let r = pairing_rate(q, l);
    let miss = 1.0 - q;
    let s = 1.0 - miss.powi(l as i32);
    // E[min(G, l)²] = Σ_{k<l} (2k + 1) P(G > k); E[G·1{G ≤ l}] = Σ_{k≤l} k q (1 − q)^{k−1}.
    let (mut m2, mut rm, mut tail) = (0.0, 0.0, 1.0);
    for k in 0..l as u64 {
        m2 += (2 * k + 1) as f64 * tail;
        rm += (k + 1) as f64 * q * tail;
        tail *= miss;
    }
    let mean_c = (1.0 + s) / q;
    let d_mean = s - r * s / q;
    let var_scan = s - 2.0 * r * rm + r * r * m2 - d_mean * d_mean;
    let var_wait = r * r * miss / (q * q);
    (rounds as f64 * (var_scan + var_wait) / mean_c).max(0.0).sqrt()
}

/// Outcome of [`simulate_pairing`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingSample {
    pub rounds: u64,
    pub pairs: u64,
    /// Batch-means standard deviation of `pairs`.
    pub sd_pairs: f64,
}

const PAIRING_BATCHES: u64 = 100;

/// Explicit pairing over `rounds` Bernoulli(`q`) click rounds: a click pairs with the held
/// click if at most `l` rounds separate them, otherwise it becomes the held click.
pub fn simulate_pairing<R: Rng + ?Sized>(q: f64, l: u32, rounds: u64, rng: &mut R) -> Result<PairingSample> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(QkdError::Domain {
            name: "q",
            value: q,
            domain: "(0, 1]",
        });
    }
    let batch_len = (rounds / PAIRING_BATCHES).max(1);
    let batches = rounds.div_ceil(batch_len) as usize;
    let mut per_batch = vec![0u64; batches];
    let gap = Geometric::new(q).map_err(|e| QkdError::InvalidParam(e.to_string()))?;
    let mut t: u64 = 0;
    let mut held: Option<u64> = None;
    loop {
        t += gap.sample(rng) + 1;
        if t > rounds {
            break;
        }
        match held {
            Some(h) if t - h <= l as u64 => {
                per_batch[((t - 1) / batch_len) as usize] += 1;
                held = None;
            }
            _ => held = Some(t),
        }
    }
    let pairs: u64 = per_batch.iter().sum();
    let b = batches as f64;
    let mean = pairs as f64 / b;
    let var = per_batch.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (b - 1.0).max(1.0);
    Ok(PairingSample {
        rounds,
        pairs,
        sd_pairs: (var * b).sqrt(),
    })
}

/// Pair-level classification of clicked rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingOutcome {
    pub pairs_per_round: f64,
    /// Vacuum paired with `μ` on both sides.
    pub z_pair_fraction: f64,
    /// `ν` in both rounds on both sides, before phase postselection.
    pub x_pair_fraction: f64,
    pub discard_fraction: f64,
    /// Bit error of Z pairs before misalignment.
    pub z_error: f64,
}

/// Classify pairs given per-setting single-click probabilities `round_gains[a][b]`
/// in `[μ, ν, vacuum]` order.
///
/// The settings of the two rounds in a pair are independent, each distributed as
/// `p_a p_b q_ab / q`.
pub fn classify_pairs(params: &MpParams, round_gains: &[[f64; MP_SETTINGS]; MP_SETTINGS]) -> PairingOutcome {
    let p = params.probabilities();
    let mut w = [[0.0; MP_SETTINGS]; MP_SETTINGS];
    let mut q = 0.0;
    for a in 0..MP_SETTINGS {
        for b in 0..MP_SETTINGS {
            w[a][b] = p[a] * p[b] * round_gains[a][b];
            q += w[a][b];
        }
    }
    if q <= 0.0 {
        return PairingOutcome {
            pairs_per_round: 0.0,
            z_pair_fraction: 0.0,
            x_pair_fraction: 0.0,
            discard_fraction: 1.0,
            z_error: 0.0,
        };
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= q;
        }
    }
    let right = 2.0 * w[VAC][MU] * w[MU][VAC];
    let wrong = 2.0 * w[VAC][VAC] * w[MU][MU];
    let z = right + wrong;
    let x = w[NU][NU] * w[NU][NU];
    PairingOutcome {
        pairs_per_round: pairing_rate(q, params.max_pair_interval),
        z_pair_fraction: z,
        x_pair_fraction: x,
        discard_fraction: 1.0 - z - x,
        z_error: if z > 0.0 { wrong / z } else { 0.0 },
    }
}

/// Per-round secret key rate of MP-QKD.
pub fn key_rate_mp(params: &MpParams, channel: &ChannelParams, mode: Mode) -> Result<KeyRateResult> {
    let stats = mp_statistics(params, channel)?;
    let fin = &params.finite;
    let n = fin.total_rounds;
    let mut a = Audit::default();
    a.put(keys::TOTAL_ROUNDS, n);
    a.put(keys::EC_INEFFICIENCY, fin.ec_inefficiency);
    a.put("transmittance", stats.transmittance);
    let g = &stats.round_gains;
    let p = params.probabilities();
    let (mu, nu) = (params.mu, params.nu);

    let q = a.put("q", stats.clicks.q_z);
    let outcome = classify_pairs(params, g);
    let r_p = a.put("pairing_rate", outcome.pairs_per_round);
    a.put("z_pair_fraction", outcome.z_pair_fraction);
    a.put("x_pair_fraction", outcome.x_pair_fraction);

    // Per-round decoy estimate of the single-photon yield with the other side in vacuum.
    let rounds_00 = n * p[VAC] * p[VAC];
    let s00_count = rounds_00 * g[VAC][VAC];
    let s00_hi = a.put("s00_upper", (fin.upper(s00_count) / rounds_00).min(1.0));
    let one_sided = |k: usize| 2.0 * n * p[k] * p[VAC];
    let q_nu0_lo = a.put("q_nu0_lower", fin.lower(one_sided(NU) * g[NU][VAC]) / one_sided(NU));
    let q_mu0_hi = a.put("q_mu0_upper", (fin.upper(one_sided(MU) * g[MU][VAC]) / one_sided(MU)).min(1.0));
    let s1 = s1_lower_bound(&DecoyObservations {
        vacuum_yield: s00_hi,
        weak: IntensityGain {
            intensity: nu,
            gain: q_nu0_lo,
        },
        strong: IntensityGain {
            intensity: mu,
            gain: q_mu0_hi,
        },
    })?;
    a.flag(s1.clamped, "s1_clamped");
    let s1 = a.put("s1_lower", s1.value);
    let e_z = a.put("e_z", stats.clicks.e_z);
    if s1 <= 0.0 || q <= 0.0 {
        a.flag(true, "s1_zero");
        return Ok(KeyRateResult {
            rate_per_round: 0.0,
            n_untagged: 0.0,
            e_ph_used: 0.5,
            e_z,
            mode,
            audit: a.map,
            flags: a.flags,
        });
    }

    // Phase-test pairs: ν in both rounds on both sides, inside the postselection window.
    let window = 2.0 * params.slice_width / PI;
    let x_formed = n * r_p * outcome.x_pair_fraction * window;
    let x_sent = if stats.x_pair_yield > 0.0 { x_formed / stats.x_pair_yield } else { 0.0 };
    a.put("x_pairs", x_formed);
    a.put("t_x", stats.clicks.t_delta);
    let t_hi = if x_sent > 0.0 {
        (fin.upper(x_sent * stats.clicks.t_delta) / x_sent).min(1.0)
    } else {
        1.0
    };
    a.put("t_x_upper", t_hi);
    let vac = (-2.0 * nu).exp();
    let q00_hi = s00_hi;
    let background = 0.5 * (2.0 * vac * q_nu0_lo * q_nu0_lo - vac * vac * q00_hi * q00_hi);
    let single = 2.0 * nu * vac;
    let y11 = a.put("y11_lower", 0.5 * s1 * s1);
    let loose = Clamped::unit((t_hi - background) / (single * single * y11));
    a.flag(loose.clamped, "e_loose_clamped");
    let mut e_loose = loose.value;
    if e_loose > 0.5 {
        a.flag(true, "e_loose_capped");
        e_loose = 0.5;
    }
    a.put("e_ph_loose", e_loose);
    let precise = eph_precise_mp(e_loose, params.slice_width)?;
    a.flag(precise.clamped, "e_precise_clamped");
    a.put("e_ph_precise", precise.value);
    let e_ph = match mode {
        Mode::Loose => e_loose,
        Mode::Precise => precise.value,
    };

    let single_mu = p[VAC] * p[MU] * mu * (-mu).exp() * s1 / q;
    let n_11 = n * r_p * 2.0 * single_mu * single_mu;
    let n_z = n * r_p * outcome.z_pair_fraction;
    a.put(keys::N_SECURE, n_11);
    a.put(keys::E_PH, e_ph);
    a.put(keys::N_SIFTED, n_z);
    a.put(keys::E_BIT, e_z);
    let rate = secret_rate(n, n_11, e_ph, n_z, e_z, fin.ec_inefficiency);
    a.put("rate", rate);
    Ok(KeyRateResult {
        rate_per_round: rate,
        n_untagged: n_11,
        e_ph_used: e_ph,
        e_z,
        mode,
        audit: a.map,
        flags: a.flags,
    })
}

pub fn max_distance_mp(params: &MpParams, channel: &ChannelParams, mode: Mode, ceiling_km: f64) -> Result<MaxDistance> {
    max_distance_by(
        |d| Ok(key_rate_mp(params, &channel.at_distance(d), mode)?.rate_per_round),
        0.0,
        ceiling_km,
        DISTANCE_RESOLUTION_KM,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(c: f64) -> [[f64; 3]; 3] {
        [[c; 3]; 3]
    }

    fn with_probs(p_mu: f64, p_nu: f64, p_vac: f64) -> MpParams {
        MpParams {
            p_mu,
            p_nu,
            p_vac,
            ..MpParams::default()
        }
    }

    #[test]
    fn pairing_rate_examples() {
        assert!((pairing_rate(1.0, 1) - 0.5).abs() < 1e-15);
        assert!(pairing_rate(1e-9, 100) < 1e-15);
        assert_eq!(pairing_rate(0.0, 10), 0.0);
        // l → ∞ pairs every other click.
        assert!((pairing_rate(0.2, 10_000) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn pairing_rate_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (q, l, rounds) = (0.01, 100, 10_000_000);
        let sim = simulate_pairing(q, l, rounds, &mut rng).unwrap();
        let expected = pairing_rate(q, l) * rounds as f64;
        assert!((sim.pairs as f64 - expected).abs() < 3.0 * sim.sd_pairs, "{sim:?} vs {expected}");
        let sd = pairing_count_sd(q, l, rounds);
        assert!((sim.sd_pairs / sd - 1.0).abs() < 0.3, "{} vs {sd}", sim.sd_pairs);
    }

    #[test]
    fn classify_edge_cases() {
        let z = classify_pairs(&with_probs(0.5, 0.5, 0.0), &uniform(0.1));
        assert_eq!(z.z_pair_fraction, 0.0);
        let v = classify_pairs(&with_probs(0.0, 0.0, 1.0), &uniform(0.1));
        assert_eq!(v.z_pair_fraction, 0.0);
        assert_eq!(v.x_pair_fraction, 0.0);
        let none = classify_pairs(&MpParams::default(), &uniform(0.0));
        assert_eq!(none.pairs_per_round, 0.0);
    }

    #[test]
    fn classify_matches_enumeration() {
        let params = with_probs(0.3, 0.2, 0.5);
        let out = classify_pairs(&params, &uniform(0.37));
        let p = [0.3, 0.2, 0.5];
        // Enumerate (a1, b1, a2, b2) over the 3×3 grid per side and round.
        let (mut z, mut x, mut err) = (0.0, 0.0, 0.0);
        for a1 in 0..3 {
            for b1 in 0..3 {
                for a2 in 0..3 {
                    for b2 in 0..3 {
                        let w = p[a1] * p[b1] * p[a2] * p[b2];
                        let a_vm = (a1 == VAC && a2 == MU) || (a1 == MU && a2 == VAC);
                        let b_vm = (b1 == VAC && b2 == MU) || (b1 == MU && b2 == VAC);
                        if a_vm && b_vm {
                            z += w;
                            let alice = if a1 == VAC { 0 } else { 1 };
                            let bob = if b2 == VAC { 0 } else { 1 };
                            if alice != bob {
                                err += w;
                            }
                        }
                        if [a1, b1, a2, b2].iter().all(|&k| k == NU) {
                            x += w;
                        }
                    }
                }
            }
        }
        assert!((out.z_pair_fraction - z).abs() < 1e-15);
        assert!((out.x_pair_fraction - x).abs() < 1e-15);
        assert!((out.z_error - err / z).abs() < 1e-15);
        assert_eq!(out.z_pair_fraction + out.x_pair_fraction + out.discard_fraction, 1.0);
    }

    #[test]
    fn precise_dominates_loose() {
        let params = MpParams::default();
        for d in [0.0, 100.0, 200.0, 300.0] {
            let ch = ChannelParams::mp_default().at_distance(d);
            let l = key_rate_mp(&params, &ch, Mode::Loose).unwrap();
            let p = key_rate_mp(&params, &ch, Mode::Precise).unwrap();
            assert!(p.rate_per_round >= l.rate_per_round, "d={d}");
            if l.rate_per_round > 0.0 {
                assert!(p.e_ph_used < l.e_ph_used);
            }
        }
    }

    #[test]
    fn audit_recombines_to_rate() {
        let r = key_rate_mp(&MpParams::default(), &ChannelParams::mp_default().at_distance(120.0), Mode::Precise).unwrap();
        assert!(r.rate_per_round > 0.0);
        assert!((r.recombine().unwrap() - r.rate_per_round).abs() <= 1e-12 * r.rate_per_round);
    }

    #[test]
    fn maximal_phase_error_gives_no_key() {
        let mut ch = ChannelParams::mp_default().at_distance(50.0);
        ch.misalign_x = 0.5;
        let r = key_rate_mp(&MpParams::default(), &ch, Mode::Loose).unwrap();
        assert_eq!(r.e_ph_used, 0.5);
        assert_eq!(r.rate_per_round, 0.0);
    }

    #[test]
    fn validation() {
        assert!(with_probs(0.5, 0.5, 0.5).validate().is_err());
        let mut p = MpParams::default();
        p.max_pair_interval = 0;
        assert!(p.validate().is_err());
        let mut p = MpParams::default();
        p.slice_width = 2.0;
        assert!(p.validate().is_err());
    }
}
