//! Entanglement-based source of sending-or-not-sending twin-field QKD.
//!
//! Subsystem order is `A, B, a, b`: two ancilla qubits followed by two
//! truncated Fock modes.

use super::ancilla::phase_gate;
use super::state::{flat_index, CMatrix, CVector, Ket, C64};
use crate::error::{QkdError, Result};

pub const MIN_CUTOFF: usize = 4;
pub const DEFAULT_CUTOFF: usize = 8;
pub const MAX_TAIL_MASS: f64 = 1e-10;

/// Poisson photon-number probability `e^{-μ} μ^n / n!`.
pub fn poisson(mean: f64, n: usize) -> f64 {
    let mut p = (-mean).exp();
    for k in 1..=n {
        p *= mean / k as f64;
    }
    p
}

/// Probability mass above `cutoff`.
pub fn poisson_tail(mean: f64, cutoff: usize) -> f64 {
    let kept: f64 = (0..=cutoff).map(|n| poisson(mean, n)).sum();
    (1.0 - kept).max(0.0)
}

/// Truncated coherent state `Σ_n √P_n e^{inφ}|n⟩` (not renormalised).
fn coherent_amplitudes(mean: f64, phase: f64, cutoff: usize) -> Vec<C64> {
    (0..=cutoff)
        .map(|n| C64::from_polar(poisson(mean, n).sqrt(), n as f64 * phase))
        .collect()
}

/// Joint state of the ancillas and both signal modes before transmission.
pub fn build_sns_joint_state(send_prob: f64, mean: f64, alpha: f64, beta: f64, cutoff: usize) -> Result<Ket> {
    if !(send_prob > 0.0 && send_prob < 1.0) {
        return Err(QkdError::Domain {
            name: "send_prob",
            value: send_prob,
            domain: "(0, 1)",
        });
    }
    if !(mean > 0.0) {
        return Err(QkdError::Domain {
            name: "mean",
            value: mean,
            domain: "(0, ∞)",
        });
    }
    let tail = poisson_tail(mean, cutoff);
    if cutoff < MIN_CUTOFF || tail > MAX_TAIL_MASS {
        return Err(QkdError::CutoffTooSmall { cutoff, mean, tail });
    }
    let d = cutoff + 1;
    let dims = vec![2, 2, d, d];
    let coh_a = coherent_amplitudes(mean, alpha, cutoff);
    let coh_b = coherent_amplitudes(mean, beta, cutoff);
    let vac: Vec<C64> = (0..d).map(|n| C64::new(if n == 0 { 1.0 } else { 0.0 }, 0.0)).collect();
    let p = send_prob;
    // Alice: bit 1 sends, bit 0 sends nothing. Bob: bit 0 sends, bit 1 sends nothing.
    let alice = [((1.0 - p).sqrt(), &vac), (p.sqrt(), &coh_a)];
    let bob = [(p.sqrt(), &coh_b), ((1.0 - p).sqrt(), &vac)];
    let mut amps = CVector::zeros(4 * d * d);
    for (ka, (wa, ma)) in alice.iter().enumerate() {
        for (kb, (wb, mb)) in bob.iter().enumerate() {
            for na in 0..d {
                for nb in 0..d {
                    let idx = flat_index(&dims, &[ka, kb, na, nb])?;
                    amps[idx] = ma[na] * mb[nb] * (wa * wb);
                }
            }
        }
    }
    Ket::new(dims, amps)
}

/// Component of a joint SNS state in which exactly one party emits exactly one
/// photon and the other sends vacuum, renormalised.
pub fn project_untagged(joint: &Ket) -> Result<Ket> {
    let dims = joint.dims().to_vec();
    if dims.len() != 4 || dims[0] != 2 || dims[1] != 2 {
        return Err(QkdError::Dimension(format!("not an SNS joint state: {dims:?}")));
    }
    let mut amps = CVector::zeros(joint.dim());
    for digits in [[0, 0, 0, 1], [1, 1, 1, 0]] {
        let idx = flat_index(&dims, &digits)?;
        amps[idx] = joint.amplitudes()[idx];
    }
    Ket::new(dims, amps)
}

/// Normalised untagged component for source phases `α`, `β`.
pub fn untagged_projection(alpha: f64, beta: f64) -> Result<Ket> {
    let joint = build_sns_joint_state(0.5, 0.1, alpha, beta, DEFAULT_CUTOFF)?;
    project_untagged(&joint)
}

/// Ancilla rotation `|00⟩ ↦ e^{i(α−β)}|00⟩`, identity elsewhere, on a state with
/// `signal_dim` signal dimensions after the two ancillas.
pub fn untagged_rotation(alpha: f64, beta: f64, signal_dim: usize) -> CMatrix {
    let mut diag = vec![C64::new(1.0, 0.0); 4];
    diag[0] = C64::from_polar(1.0, alpha - beta);
    let anc = CMatrix::from_diagonal(&CVector::from_vec(diag));
    anc.kronecker(&CMatrix::identity(signal_dim, signal_dim))
}

/// Bob's ancilla phase `U_B^δ` tensored with identity on Alice and the signals.
pub fn bob_phase_rotation(delta: f64, signal_dim: usize) -> CMatrix {
    CMatrix::identity(2, 2)
        .kronecker(&phase_gate(delta))
        .kronecker(&CMatrix::identity(signal_dim, signal_dim))
}

/// Reference untagged state `(|00⟩|01⟩ + |11⟩|10⟩)/√2`.
pub fn sigma_untagged(cutoff: usize) -> Result<Ket> {
    let d = cutoff + 1;
    let dims = vec![2, 2, d, d];
    let mut amps = CVector::zeros(4 * d * d);
    amps[flat_index(&dims, &[0, 0, 0, 1])?] = C64::new(1.0, 0.0);
    amps[flat_index(&dims, &[1, 1, 1, 0])?] = C64::new(1.0, 0.0);
    Ket::new(dims, amps)
}
