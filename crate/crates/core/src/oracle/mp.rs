//! Entanglement-based source of mode-pairing QKD.
//!
//! Subsystem order is `A, B, a1, a2, b1, b2`; each optical mode holds at most one
//! photon.

use super::ancilla::{rotated_qubit, Sign};
use super::state::{flat_index, CMatrix, CVector, Ket, C64};
use crate::error::Result;

pub const MP_DIMS: [usize; 6] = [2, 2, 2, 2, 2, 2];

/// `(|0⟩_A|01⟩ + |1⟩_A|10⟩)/√2 ⊗ (|0⟩_B|10⟩ + |1⟩_B|01⟩)/√2` in the computational ancilla basis.
pub fn mp_joint_state() -> Result<Ket> {
    let dims = MP_DIMS.to_vec();
    let mut amps = CVector::zeros(64);
    let alice = [(0, [0, 1]), (1, [1, 0])];
    let bob = [(0, [1, 0]), (1, [0, 1])];
    for (ka, am) in alice {
        for (kb, bm) in bob {
            amps[flat_index(&dims, &[ka, kb, am[0], am[1], bm[0], bm[1]])?] = C64::new(0.5, 0.0);
        }
    }
    Ket::new(dims, amps)
}

/// Change of ancilla basis: computational `|0⟩,|1⟩` coordinates to
/// `|+δ⟩,|−δ⟩` coordinates (row k is `⟨±δ|`).
fn to_rotated(delta: f64) -> CMatrix {
    let p = rotated_qubit(Sign::Plus, delta).adjoint();
    let m = rotated_qubit(Sign::Minus, delta).adjoint();
    CMatrix::from_fn(2, 2, |i, j| if i == 0 { p[j] } else { m[j] })
}

/// The joint state with the ancillas expressed in `X_{δ_a} ⊗ X_{δ_b}`:
/// ancilla digit 0 stands for `|+δ⟩`, digit 1 for `|−δ⟩`.
pub fn build_mp_joint_state(delta_a: f64, delta_b: f64) -> Result<Ket> {
    let base = mp_joint_state()?;
    let u = to_rotated(delta_a)
        .kronecker(&to_rotated(delta_b))
        .kronecker(&CMatrix::identity(16, 16));
    base.apply(&u)
}

/// Normalised signal-mode branch of a two-mode single photon `(|01⟩ + e^{iφ}|10⟩)/√2`.
pub fn dual_rail(phase: f64) -> CVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // Two modes, one photon: index 1 is |01⟩, index 2 is |10⟩.
    let mut v = CVector::zeros(4);
    v[1] = C64::new(s, 0.0);
    v[2] = C64::from_polar(s, phase);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_state_normalised() {
        assert!((mp_joint_state().unwrap().norm_sqr() - 1.0).abs() < 1e-15);
        assert!((build_mp_joint_state(0.4, 1.9).unwrap().norm_sqr() - 1.0).abs() < 1e-14);
    }

    /// Alice's branch coefficient for `|±δa⟩` with signal `(|01⟩ ± e^{iδa}|10⟩)/√2`.
    fn alice_branch(delta_a: f64, sign: usize) -> (C64, CVector) {
        let k = build_mp_joint_state(delta_a, 0.0).unwrap();
        // Trace out Bob by fixing his rotated digit and signal: take the amplitude
        // block for Alice digit `sign`, Bob digit 0, Bob signal |10⟩ (b1=1, b2=0).
        let mut v = CVector::zeros(4);
        for (slot, (a1, a2)) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            v[slot] = k.amplitude(&[sign, 0, a1, a2, 1, 0]).unwrap();
        }
        let norm = v.norm();
        (C64::new(norm, 0.0), v / C64::new(norm, 0.0))
    }

    #[test]
    fn rotated_expansion_matches_dual_rail_branches() {
        let da = 0.83;
        for (sign, phase) in [(0usize, da), (1, da + std::f64::consts::PI)] {
            let (_, v) = alice_branch(da, sign);
            let target = dual_rail(phase);
            assert!((v.dotc(&target).norm() - 1.0).abs() < 1e-12);
        }
        // Full branch weight of |+δa⟩_A is 1/2, i.e. amplitude 1/√2.
        let k = build_mp_joint_state(da, 0.0).unwrap();
        let mut w = 0.0;
        for b in 0..2 {
            for rest in 0..16 {
                let idx = flat_index(&MP_DIMS, &[0, b, (rest >> 3) & 1, (rest >> 2) & 1, (rest >> 1) & 1, rest & 1]).unwrap();
                w += k.amplitudes()[idx].norm_sqr();
            }
        }
        assert!((w.sqrt() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn alice_and_bob_carry_conjugate_phases() {
        let d = 0.6;
        let k = build_mp_joint_state(d, d).unwrap();
        // Bob's |+δ⟩ branch with Alice fixed to |+δ⟩ and her signal |01⟩.
        let mut v = CVector::zeros(4);
        for (slot, (b1, b2)) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            v[slot] = k.amplitude(&[0, 0, 0, 1, b1, b2]).unwrap();
        }
        let v = &v / C64::new(v.norm(), 0.0);
        // (|10⟩ + e^{iδ}|01⟩)/√2 = e^{iδ}(|01⟩ + e^{-iδ}|10⟩)/√2
        let target = dual_rail(-d);
        assert!((v.dotc(&target).norm() - 1.0).abs() < 1e-12);
        let (_, va) = alice_branch(d, 0);
        assert!((va.dotc(&dual_rail(d)).norm() - 1.0).abs() < 1e-12);
    }
}
