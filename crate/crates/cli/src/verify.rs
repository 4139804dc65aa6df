//! Oracle verification suite: every closed form in the core crate against its
//! brute-force counterpart, plus the Monte Carlo checks of pairing and AOPP.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use qkdrate_core::channel::{arm_transmittance, sns_statistics, ChannelParams};
use qkdrate_core::decoy::{s1_lower_bound, DecoyObservations, IntensityGain};
use qkdrate_core::mp::{pairing_count_sd, pairing_rate, simulate_pairing};
use qkdrate_core::oracle::ancilla::port_phase_error_closed_form;
use qkdrate_core::oracle::{
    collapse_ancilla, extract_affine, mp_joint_state, outcome_probabilities, port_phase_error, random_density,
    rotated_basis_error, rotated_pair_error, sigma_untagged, ErrorPattern, Port, Povm,
};
use qkdrate_core::quad::{gl64, GaussLegendre};
use qkdrate_core::sns::{aopp_expectation, aopp_simulate, key_rate, sample_z_strings, z_outcome_probs, SnsParams};
use qkdrate_core::{combine_ports, precise_from_loose, slice_average, slice_value, AffineSliceModel, Mode, PhaseSlice};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::VerifyConfig;

const FOCK_CUTOFF: usize = 4;

/// Outcome of one invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Largest violation seen; for Monte Carlo checks, the largest |z|-score.
    pub max_residual: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_residual < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {:<24} max_residual={:.3e} tolerance={:.0e}",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.max_residual,
                c.tolerance
            );
        }
        let ok = self.checks.iter().filter(|c| c.passed()).count();
        let _ = writeln!(s, "{ok}/{} invariants hold", self.checks.len());
        s
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` points evenly spaced on `[a, b]`.
fn grid(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| a + (b - a) * i as f64 / (n.max(2) - 1) as f64)
}

/// Slice value with the sign of the `sin δ` term flipped: a deliberately wrong model.
fn mutated_slice_value(model: &AffineSliceModel, delta: f64) -> f64 {
    let (s, c) = delta.sin_cos();
    model.e_ph * c + 0.5 * (1.0 - c) - model.a_coeff * s
}

/// Rotated-basis error of random two-qubit states against the affine model extracted
/// from the same state.
pub fn affine_equivalence(states: usize, deltas: usize, seed: u64, mutate: bool) -> Check {
    let pattern = ErrorPattern::anticorrelated();
    let worst = (0..states)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let rho = random_density(vec![2, 2], 1 + i % 4, &mut rng);
            let (_, model) = extract_affine(&rho).expect("two-qubit state");
            grid(-PI, PI, deltas)
                .map(|d| {
                    let oracle = rotated_basis_error(&rho, d, &pattern).expect("two-qubit state");
                    let closed = if mutate {
                        mutated_slice_value(&model, d)
                    } else {
                        slice_value(&model, d).unwrap_or(f64::NAN)
                    };
                    (oracle - closed).abs()
                })
                .fold(0.0, nan_max)
        })
        .reduce(|| 0.0, nan_max);
    Check {
        name: "affine_equivalence",
        max_residual: worst,
        tolerance: 1e-12,
    }
}

/// A NaN residual always counts as the worst.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Closed-form window average against quadrature of oracle errors.
pub fn slice_average_check(states: usize, seed: u64) -> Check {
    let pattern = ErrorPattern::anticorrelated();
    let worst = (0..states)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, (1 << 32) + i as u64);
            let rho = random_density(vec![2, 2], 2, &mut rng);
            let e0 = rotated_basis_error(&rho, 0.0, &pattern).unwrap();
            [0.2, 0.9, 1.5]
                .iter()
                .map(|&w| {
                    let avg = gl64().average(-w, w, |d| rotated_basis_error(&rho, d, &pattern).unwrap());
                    (avg - slice_average(e0, &PhaseSlice::in_phase(w).unwrap())).abs()
                })
                .fold(0.0, nan_max)
        })
        .reduce(|| 0.0, nan_max);
    Check {
        name: "slice_average",
        max_residual: worst,
        tolerance: 1e-10,
    }
}

/// `precise_from_loose ∘ slice_average` is the identity on an `n × n` grid of `(e, w)`.
pub fn round_trip(n: usize) -> Check {
    let mut worst: f64 = 0.0;
    for e in grid(0.0, 1.0, n) {
        for w in grid(1e-3, FRAC_PI_2 - 1e-3, n) {
            let loose = slice_average(e, &PhaseSlice::in_phase(w).unwrap());
            let back = precise_from_loose(loose, w).map(|c| c.value).unwrap_or(f64::NAN);
            worst = nan_max(worst, (back - e).abs());
        }
    }
    Check {
        name: "round_trip",
        max_residual: worst,
        tolerance: 1e-12,
    }
}

/// Port-resolved phase error as an expectation value against its closed form.
pub fn port_identity(states: usize, seed: u64) -> Check {
    let mut rng = rng_for(seed, 2 << 32);
    let mut worst: f64 = 0.0;
    for i in 0..states {
        let rho = random_density(vec![2, 2], 1 + i % 4, &mut rng);
        for d in grid(-PI, PI, 16) {
            for port in [Port::L, Port::R] {
                let a = port_phase_error(&rho, d, port).unwrap();
                let b = port_phase_error_closed_form(&rho, d, port).unwrap();
                worst = nan_max(worst, (a - b).abs());
            }
        }
    }
    Check {
        name: "port_identity",
        max_residual: worst,
        tolerance: 1e-12,
    }
}

fn port_chain_residual(povm: &Povm, full_width: f64) -> f64 {
    let sigma = sigma_untagged(FOCK_CUTOFF).unwrap();
    let w = 0.5 * full_width;
    let mut worst: f64 = 0.0;
    for (index, port) in [(0, Port::L), (1, Port::R)] {
        let (_, rho) = collapse_ancilla(&sigma, 2, povm, index).unwrap();
        let loose = gl64().average(-w, w, |d| port_phase_error(&rho, d, port).unwrap());
        let recovered = precise_from_loose(loose, w).map(|c| c.value).unwrap_or(f64::NAN);
        worst = nan_max(worst, (recovered - port_phase_error(&rho, 0.0, port).unwrap()).abs());
    }
    worst
}

/// The untagged SNS state through the port POVMs: δ-averaged port errors converted
/// back recover the δ = 0 values.
pub fn port_chain() -> Check {
    let mut worst: f64 = 0.0;
    let ideal = Povm::ideal_ports(FOCK_CUTOFF).unwrap();
    for full in [0.1, PI / 4.0, PI / 2.0, 2.5] {
        worst = nan_max(worst, port_chain_residual(&ideal, full));
    }
    for (eta, pd, e) in [(0.3, 1e-8, 0.05), (1e-3, 1e-6, 0.1)] {
        let povm = Povm::single_photon_ports(FOCK_CUTOFF, eta, pd, e).unwrap();
        worst = nan_max(worst, port_chain_residual(&povm, PI / 3.0));
    }
    Check {
        name: "port_chain",
        max_residual: worst,
        tolerance: 1e-10,
    }
}

pub fn povm_completeness() -> Check {
    let sigma = sigma_untagged(FOCK_CUTOFF).unwrap();
    let mut worst: f64 = 0.0;
    for (eta, pd, e) in [(0.2, 1e-4, 0.03), (1.0, 0.0, 0.0), (1e-4, 1e-8, 0.05)] {
        let povm = Povm::single_photon_ports(FOCK_CUTOFF, eta, pd, e).unwrap();
        let probs = outcome_probabilities(&sigma, 2, &povm).unwrap();
        worst = nan_max(worst, (probs.iter().sum::<f64>() - 1.0).abs());
    }
    Check {
        name: "povm_completeness",
        max_residual: worst,
        tolerance: 1e-10,
    }
}

/// MP: averaging the pair phase error over `|δ_a − δ_b| ≤ Δ` and converting with
/// half-width `Δ` gives the error averaged over aligned phases.
pub fn mp_chain(povms: usize, seed: u64) -> Check {
    let joint = mp_joint_state().unwrap();
    let mut rng = rng_for(seed, 3 << 32);
    let pattern = ErrorPattern::anticorrelated();
    let outer = GaussLegendre::new(32);
    let mut worst: f64 = 0.0;
    for _ in 0..povms {
        let povm = Povm::random(16, 2, &mut rng).unwrap();
        let (_, rho) = collapse_ancilla(&joint, 2, &povm, 0).unwrap();
        for half in [0.3, PI / 4.0, 1.4] {
            let mut loose = 0.0;
            let mut aligned = 0.0;
            for (da, wa) in outer.mean_rule(0.0, 2.0 * PI) {
                aligned += wa * rotated_pair_error(&rho, da, da, &pattern).unwrap();
                loose += wa * gl64().average(-half, half, |d| rotated_pair_error(&rho, da, da + d, &pattern).unwrap());
            }
            let recovered = precise_from_loose(loose, half).map(|c| c.value).unwrap_or(f64::NAN);
            worst = nan_max(worst, (recovered - aligned).abs());
        }
    }
    Check {
        name: "mp_chain",
        max_residual: worst,
        tolerance: 1e-10,
    }
}

/// Loose and precise SNS phase-error bounds stay above the exact untagged phase error,
/// and `s₁` below the exact single-photon yield, on the modelled channel.
///
/// The residual is the largest amount by which a bound is violated (zero if none).
pub fn bound_validity(points: usize, spacing_km: f64) -> Check {
    let sigma = sigma_untagged(FOCK_CUTOFF).unwrap();
    let mut worst: f64 = 0.0;
    for fluctuations in [false, true] {
        let mut params = SnsParams::default();
        params.finite.fluctuations = fluctuations;
        for k in 0..points {
            let ch = ChannelParams::sns_default().at_distance(spacing_km * k as f64);
            let povm = Povm::single_photon_ports(FOCK_CUTOFF, arm_transmittance(&ch), ch.dark_count, ch.misalign_x).unwrap();
            let (p_l, rho_l) = collapse_ancilla(&sigma, 2, &povm, 0).unwrap();
            let (p_r, rho_r) = collapse_ancilla(&sigma, 2, &povm, 1).unwrap();
            let e_l = port_phase_error(&rho_l, 0.0, Port::L).unwrap();
            let e_r = port_phase_error(&rho_r, 0.0, Port::R).unwrap();
            let exact = combine_ports(e_l, e_r, p_l, p_r).unwrap();
            let r = key_rate(&params, &ch, Mode::Loose).unwrap();
            let s1 = r.audit["s1_lower"];
            worst = worst.max(s1 - (p_l + p_r));
            if s1 > 0.0 {
                worst = worst.max(exact - r.audit["e_ph_loose"]);
                worst = worst.max(exact - r.audit["e_ph_precise"]);
            }
        }
    }
    Check {
        name: "bound_validity",
        max_residual: worst.max(0.0),
        tolerance: f64::MIN_POSITIVE,
    }
}

/// `s₁` against the true single-photon yield for random photon-number yields.
pub fn decoy_mixtures(draws: usize, seed: u64) -> Check {
    let mut rng = rng_for(seed, 4 << 32);
    let mut worst: f64 = 0.0;
    const TERMS: usize = 60;
    for _ in 0..draws {
        let scale: f64 = 10f64.powf(rng.random_range(-6.0..0.0));
        let yields: Vec<f64> = (0..TERMS).map(|_| (scale * rng.random::<f64>() * 4.0).min(1.0)).collect();
        let strong: f64 = rng.random_range(0.1..1.0);
        let weak = strong * rng.random_range(0.05..0.9);
        let gain = |mean: f64| {
            let mut p = (-mean).exp();
            let mut total = 0.0;
            for (n, y) in yields.iter().enumerate() {
                if n > 0 {
                    p *= mean / n as f64;
                }
                total += p * y;
            }
            total
        };
        let s1 = s1_lower_bound(&DecoyObservations {
            vacuum_yield: yields[0],
            weak: IntensityGain {
                intensity: weak,
                gain: gain(weak),
            },
            strong: IntensityGain {
                intensity: strong,
                gain: gain(strong),
            },
        })
        .unwrap()
        .value;
        // Relative slack absorbs rounding in the alternating sum.
        worst = worst.max(s1 - yields[1] - 1e-12 * yields[1].max(scale));
    }
    Check {
        name: "decoy_mixtures",
        max_residual: worst.max(0.0),
        tolerance: f64::MIN_POSITIVE,
    }
}

/// Click probabilities and pairing intervals of the pairing Monte Carlo grid: click
/// probabilities from the long-distance regime up to a few tenths, intervals from one
/// round up to well past the mean click gap.
pub const PAIRING_GRID: [(f64, u32); 8] = [
    (1e-4, 100),
    (1e-4, 10000),
    (1e-3, 1000),
    (1e-2, 10),
    (1e-2, 100),
    (0.05, 50),
    (0.1, 1),
    (0.3, 3),
];

/// Largest |z|-score of simulated pair counts against [`pairing_rate`] over [`PAIRING_GRID`],
/// with the renewal-theory standard deviation.
pub fn pairing_mc(rounds: u64, seed: u64) -> Check {
    let worst = PAIRING_GRID
        .par_iter()
        .enumerate()
        .map(|(i, &(q, l))| {
            let mut rng = rng_for(seed, (5 << 32) + i as u64);
            let s = simulate_pairing(q, l, rounds, &mut rng).unwrap();
            let expected = pairing_rate(q, l) * rounds as f64;
            (s.pairs as f64 - expected).abs() / pairing_count_sd(q, l, rounds)
        })
        .reduce(|| 0.0, nan_max);
    Check {
        name: "pairing_mc",
        max_residual: worst,
        tolerance: 3.0,
    }
}

/// Largest |z|-score of an explicit AOPP run against its analytic expectation, on
/// Z-window strings drawn from the default SNS channel at `distance_km`.
pub fn aopp_mc(bits: usize, distance_km: f64, seed: u64) -> Check {
    let params = SnsParams::default();
    let stats = sns_statistics(&params, &ChannelParams::sns_default().at_distance(distance_km)).unwrap();
    let probs = z_outcome_probs(params.send_prob, &stats.branches);
    let mut rng = rng_for(seed, 6 << 32);
    let (alice, bob) = sample_z_strings(&probs, bits, &mut rng);
    let out = aopp_simulate(&alice, &bob, rng.random()).unwrap();
    let bob_zero = probs[0] + probs[2];
    let exp = aopp_expectation(bits as f64, bob_zero, probs[2] / bob_zero, probs[1] / (1.0 - bob_zero));
    let z = |obs: usize, mean: f64, sd: f64| {
        if sd > 0.0 {
            (obs as f64 - mean).abs() / sd
        } else {
            (obs as f64 - mean).abs()
        }
    };
    let worst = z(out.pairs, exp.pairs, exp.sd_pairs)
        .max(z(out.survivors, exp.survivors, exp.sd_survivors))
        .max(z(out.errors, exp.errors, exp.sd_errors));
    Check {
        name: "aopp_mc",
        max_residual: worst,
        tolerance: 3.0,
    }
}

/// Run the full suite.
pub fn run(config: &VerifyConfig, seed: u64) -> VerifyReport {
    VerifyReport {
        checks: vec![
            affine_equivalence(config.random_states, config.delta_points, seed, config.mutate_slice_sign),
            slice_average_check(200, seed),
            round_trip(100),
            port_identity(200, seed),
            port_chain(),
            povm_completeness(),
            mp_chain(3, seed),
            bound_validity(25, 18.0),
            decoy_mixtures(1000, seed),
            pairing_mc(config.pairing_rounds, seed),
            aopp_mc(config.aopp_bits, 300.0, seed),
        ],
    }
}
