//! Measurements on the two ancilla qubits AB.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::state::{CMatrix, CVector, DensityOp, C64};
use crate::error::{QkdError, Result};
use crate::phase_error::AffineSliceModel;

/// Outcome of a single-qubit measurement in a rotated conjugate basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Set of joint (Alice, Bob) outcomes counted as errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPattern(pub Vec<(Sign, Sign)>);

impl ErrorPattern {
    /// Outcomes disagree: `{+−, −+}`.
    pub fn anticorrelated() -> Self {
        Self(vec![(Sign::Plus, Sign::Minus), (Sign::Minus, Sign::Plus)])
    }

    /// Outcomes agree: `{++, −−}`.
    pub fn correlated() -> Self {
        Self(vec![(Sign::Plus, Sign::Plus), (Sign::Minus, Sign::Minus)])
    }
}

/// Which port announced the click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Port {
    L,
    R,
}

/// Conditional X-basis statistics of Bob's qubit given Alice's X outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AncillaDecomposition {
    pub p_plus: f64,
    pub p_minus: f64,
    pub e_plus: f64,
    pub e_minus: f64,
    pub x_plus: C64,
    pub x_minus: C64,
}

/// `(|0⟩ ± e^{-iδ}|1⟩)/√2`.
pub fn rotated_qubit(sign: Sign, delta: f64) -> CVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_vec(vec![
        C64::new(s, 0.0),
        C64::from_polar(sign.factor() * s, -delta),
    ])
}

/// Diagonal phase `|0⟩ ↦ |0⟩, |1⟩ ↦ e^{iδ}|1⟩` on one qubit.
pub fn phase_gate(delta: f64) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::from_polar(1.0, delta)]))
}

fn check_two_qubit(rho: &DensityOp) -> Result<()> {
    if rho.dim() != 4 {
        return Err(QkdError::Dimension(format!(
            "expected a two-qubit state, got dimension {}",
            rho.dim()
        )));
    }
    Ok(())
}

/// Error probability with Alice measured in `X_{δ_a}` and Bob in `X_{δ_b}`.
pub fn rotated_pair_error(rho: &DensityOp, delta_a: f64, delta_b: f64, pattern: &ErrorPattern) -> Result<f64> {
    check_two_qubit(rho)?;
    Ok(pattern
        .0
        .iter()
        .map(|&(sa, sb)| {
            let v = rotated_qubit(sa, delta_a).kronecker(&rotated_qubit(sb, delta_b));
            rho.expectation(&v)
        })
        .sum())
}

/// Error probability with Alice in `X` and Bob in `X_δ`.
pub fn rotated_basis_error(rho: &DensityOp, delta: f64, pattern: &ErrorPattern) -> Result<f64> {
    rotated_pair_error(rho, 0.0, delta, pattern)
}

/// Conditional decomposition of ρ_AB on Alice's X outcome and the affine model it implies.
///
/// Errors are counted with the anticorrelated pattern. A conditioning branch with
/// zero probability gets zero error and coherence.
pub fn extract_affine(rho: &DensityOp) -> Result<(AncillaDecomposition, AffineSliceModel)> {
    check_two_qubit(rho)?;
    let plus = rotated_qubit(Sign::Plus, 0.0);
    let minus = rotated_qubit(Sign::Minus, 0.0);
    let m = rho.matrix();
    // Bob's unnormalised state after Alice projects onto |a⟩, in Bob's X basis.
    let branch = |alice: &CVector| -> (f64, f64, f64, C64) {
        let element = |b1: &CVector, b2: &CVector| -> C64 {
            let v1 = alice.kronecker(b1);
            let v2 = alice.kronecker(b2);
            v1.dotc(&(m * v2))
        };
        let pp = element(&plus, &plus).re;
        let mm = element(&minus, &minus).re;
        let pm = element(&plus, &minus);
        (pp + mm, pp, mm, pm)
    };
    let (p_plus, _, mm_a, pm_a) = branch(&plus);
    let (p_minus, pp_b, _, pm_b) = branch(&minus);
    let cond = |p: f64, v: f64| if p > 0.0 { v / p } else { 0.0 };
    let cond_c = |p: f64, v: C64| if p > 0.0 { v / p } else { C64::new(0.0, 0.0) };
    let dec = AncillaDecomposition {
        p_plus,
        p_minus,
        e_plus: cond(p_plus, mm_a),
        e_minus: cond(p_minus, pp_b),
        x_plus: cond_c(p_plus, pm_a),
        x_minus: cond_c(p_minus, pm_b),
    };
    let e_ph = (dec.p_plus * dec.e_plus + dec.p_minus * dec.e_minus).clamp(0.0, 1.0);
    let i = C64::new(0.0, 1.0);
    let a_coeff = dec.p_plus * (-i * dec.x_plus).re + dec.p_minus * (i * dec.x_minus).re;
    Ok((dec, AffineSliceModel { e_ph, a_coeff: a_coeff.clamp(-0.5, 0.5) }))
}

/// Two-qubit conjugate basis `(|00⟩ ± e^{-iδ}|11⟩)/√2`.
pub fn rotated_pair_basis(sign: Sign, delta: f64) -> CVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = CVector::zeros(4);
    v[0] = C64::new(s, 0.0);
    v[3] = C64::from_polar(sign.factor() * s, -delta);
    v
}

/// Phase error heralded by one port: `⟨−δ|ρ|−δ⟩` for L, `⟨+δ|ρ|+δ⟩` for R.
pub fn port_phase_error(rho: &DensityOp, delta: f64, port: Port) -> Result<f64> {
    check_two_qubit(rho)?;
    let sign = match port {
        Port::L => Sign::Minus,
        Port::R => Sign::Plus,
    };
    Ok(rho.expectation(&rotated_pair_basis(sign, delta)))
}

/// Closed form `1/2 ∓ Re[e^{iδ}⟨11|ρ|00⟩]`.
pub fn port_phase_error_closed_form(rho: &DensityOp, delta: f64, port: Port) -> Result<f64> {
    check_two_qubit(rho)?;
    let m = rho.matrix();
    let diag = 0.5 * (m[(0, 0)].re + m[(3, 3)].re);
    let coh = (C64::from_polar(1.0, delta) * m[(3, 0)]).re;
    Ok(match port {
        Port::L => diag - coh,
        Port::R => diag + coh,
    })
}

/// Ginibre-induced random density operator of dimension `dim` and environment rank `rank`.
pub fn random_density<R: Rng + ?Sized>(dims: Vec<usize>, rank: usize, rng: &mut R) -> DensityOp {
    let dim: usize = dims.iter().product();
    let g = CMatrix::from_fn(dim, rank.max(1), |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let w = &g * g.adjoint();
    let tr = w.trace().re;
    let m = (&w + w.adjoint()) * C64::new(0.5 / tr, 0.0);
    DensityOp::unchecked(dims, m).expect("shape is consistent by construction")
}
