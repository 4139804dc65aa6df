use rand::Rng;
use rand_distr::StandardNormal;

use super::state::{flat_index, hermitian_part, projector, CMatrix, CVector, DensityOp, Ket, C64, PSD_TOLERANCE};
use crate::error::{QkdError, Result};

const COMPLETENESS_TOLERANCE: f64 = 1e-10;
const MIN_OUTCOME_PROBABILITY: f64 = 1e-15;

/// Measurement on the signal modes. The last outcome is the invalid event.
#[derive(Debug, Clone)]
pub struct Povm {
    elements: Vec<CMatrix>,
    labels: Vec<String>,
}

impl Povm {
    pub fn new(elements: Vec<CMatrix>, labels: Vec<String>) -> Result<Self> {
        if elements.is_empty() || elements.len() != labels.len() {
            return Err(QkdError::InvalidParam(format!(
                "{} POVM elements with {} labels",
                elements.len(),
                labels.len()
            )));
        }
        let dim = elements[0].nrows();
        let mut sum = CMatrix::zeros(dim, dim);
        for (e, label) in elements.iter().zip(&labels) {
            if e.nrows() != dim || e.ncols() != dim {
                return Err(QkdError::Dimension(format!("POVM element {label} has wrong shape")));
            }
            let min = hermitian_part(e)
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |m, &v| m.min(v));
            if min < -PSD_TOLERANCE {
                return Err(QkdError::InvalidParam(format!(
                    "POVM element {label} has negative eigenvalue {min:e}"
                )));
            }
            sum += e;
        }
        let defect = (sum - CMatrix::identity(dim, dim)).camax();
        if defect > COMPLETENESS_TOLERANCE {
            return Err(QkdError::InvalidParam(format!(
                "POVM elements do not sum to identity (max deviation {defect:e})"
            )));
        }
        Ok(Self { elements, labels })
    }

    /// A single element equal to the identity.
    pub fn trivial(dim: usize) -> Self {
        Self {
            elements: vec![CMatrix::identity(dim, dim)],
            labels: vec!["all".into()],
        }
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, index: usize) -> Option<&CMatrix> {
        self.elements.get(index)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn invalid_index(&self) -> usize {
        self.elements.len() - 1
    }

    /// Ideal beamsplitter ports on two truncated Fock modes:
    /// L projects onto `(|01⟩+|10⟩)/√2`, R onto `(|01⟩−|10⟩)/√2`.
    pub fn ideal_ports(cutoff: usize) -> Result<Self> {
        let (plus, minus) = port_vectors(cutoff)?;
        let dim = plus.len();
        let l = projector(&plus);
        let r = projector(&minus);
        let invalid = CMatrix::identity(dim, dim) - &l - &r;
        Self::new(vec![l, r, invalid], port_labels())
    }

    /// Threshold detection behind a lossy symmetric interferometer, restricted to
    /// inputs with at most one photon in total. Higher photon numbers map to the
    /// invalid outcome.
    ///
    /// `transmittance` is the per-arm transmittance including detector efficiency,
    /// `dark_count` the per-detector dark-count probability and `misalignment` the
    /// probability that a click is registered at the other detector.
    pub fn single_photon_ports(cutoff: usize, transmittance: f64, dark_count: f64, misalignment: f64) -> Result<Self> {
        for (name, v) in [("transmittance", transmittance), ("dark_count", dark_count), ("misalignment", misalignment)] {
            crate::error::check_probability(name, v)?;
        }
        let (plus, minus) = port_vectors(cutoff)?;
        let dims = vec![cutoff + 1, cutoff + 1];
        let dim = plus.len();
        let vac = basis_vector(&dims, &[0, 0])?;
        let p_plus = projector(&plus);
        let p_minus = projector(&minus);
        let one_photon = &p_plus + &p_minus;
        let silent = 1.0 - dark_count;
        let detected = transmittance * silent;
        let lost_dark = (1.0 - transmittance) * dark_count * silent;
        let vac_dark = dark_count * silent;
        let port = |right: &CMatrix, wrong: &CMatrix| -> CMatrix {
            right * C64::new(detected * (1.0 - misalignment), 0.0)
                + wrong * C64::new(detected * misalignment, 0.0)
                + &one_photon * C64::new(lost_dark, 0.0)
                + projector(&vac) * C64::new(vac_dark, 0.0)
        };
        let l = port(&p_plus, &p_minus);
        let r = port(&p_minus, &p_plus);
        let invalid = CMatrix::identity(dim, dim) - &l - &r;
        Self::new(vec![l, r, invalid], port_labels())
    }

    /// Seeded random POVM with `valid` announcement outcomes plus an invalid one.
    pub fn random<R: Rng + ?Sized>(dim: usize, valid: usize, rng: &mut R) -> Result<Self> {
        let n = valid + 1;
        let raw: Vec<CMatrix> = (0..n)
            .map(|_| {
                let g = CMatrix::from_fn(dim, dim, |_, _| {
                    C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
                });
                g.adjoint() * g
            })
            .collect();
        let total = raw.iter().fold(CMatrix::zeros(dim, dim), |acc, m| acc + m);
        let eig = hermitian_part(&total).symmetric_eigen();
        let inv_sqrt = CMatrix::from_diagonal(&eig.eigenvalues.map(|v| C64::new(1.0 / v.sqrt(), 0.0)));
        let s = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.adjoint();
        let elements: Vec<CMatrix> = raw.iter().map(|m| hermitian_part(&(&s * m * &s))).collect();
        let mut labels: Vec<String> = (1..=valid).map(|j| format!("m{j}")).collect();
        labels.push("invalid".into());
        Self::new(elements, labels)
    }
}

fn port_labels() -> Vec<String> {
    vec!["L".into(), "R".into(), "invalid".into()]
}

fn basis_vector(dims: &[usize], digits: &[usize]) -> Result<CVector> {
    let dim: usize = dims.iter().product();
    let mut v = CVector::zeros(dim);
    v[flat_index(dims, digits)?] = C64::new(1.0, 0.0);
    Ok(v)
}

fn port_vectors(cutoff: usize) -> Result<(CVector, CVector)> {
    let dims = [cutoff + 1, cutoff + 1];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let a = basis_vector(&dims, &[0, 1])?;
    let b = basis_vector(&dims, &[1, 0])?;
    let plus = (&a + &b) * C64::new(s, 0.0);
    let minus = (&a - &b) * C64::new(s, 0.0);
    Ok((plus, minus))
}

/// Joint ancilla ⊗ signal state that can be conditioned on a signal-side POVM element.
pub trait JointState {
    fn dims(&self) -> &[usize];
    /// `Tr_signal[ρ (I ⊗ E)]` for a split after the first `ancillas` subsystems.
    fn reduce_with(&self, ancillas: usize, element: &CMatrix) -> Result<CMatrix>;
}

impl JointState for Ket {
    fn dims(&self) -> &[usize] {
        Ket::dims(self)
    }

    fn reduce_with(&self, ancillas: usize, element: &CMatrix) -> Result<CMatrix> {
        let psi = self.split_matrix(ancillas);
        check_signal_dim(psi.ncols(), element)?;
        Ok(&psi * element.transpose() * psi.adjoint())
    }
}

impl JointState for DensityOp {
    fn dims(&self) -> &[usize] {
        DensityOp::dims(self)
    }

    fn reduce_with(&self, ancillas: usize, element: &CMatrix) -> Result<CMatrix> {
        let da: usize = self.dims()[..ancillas].iter().product();
        let ds = self.dim() / da;
        check_signal_dim(ds, element)?;
        let rho = self.matrix();
        Ok(CMatrix::from_fn(da, da, |i, j| {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..ds {
                for l in 0..ds {
                    acc += rho[(i * ds + k, j * ds + l)] * element[(l, k)];
                }
            }
            acc
        }))
    }
}

fn check_signal_dim(ds: usize, element: &CMatrix) -> Result<()> {
    if element.nrows() != ds {
        return Err(QkdError::Dimension(format!(
            "POVM acts on dimension {} but signal space has dimension {ds}",
            element.nrows()
        )));
    }
    Ok(())
}

/// Probability of each outcome.
pub fn outcome_probabilities<S: JointState>(joint: &S, ancillas: usize, povm: &Povm) -> Result<Vec<f64>> {
    povm.elements
        .iter()
        .map(|e| Ok(joint.reduce_with(ancillas, e)?.trace().re))
        .collect()
}

/// Condition on outcome `index`: returns `p(m_j)` and the normalised ancilla state.
pub fn collapse_ancilla<S: JointState>(joint: &S, ancillas: usize, povm: &Povm, index: usize) -> Result<(f64, DensityOp)> {
    let element = povm
        .element(index)
        .ok_or_else(|| QkdError::InvalidParam(format!("outcome {index} out of range")))?;
    let reduced = joint.reduce_with(ancillas, element)?;
    let p = reduced.trace().re;
    if p <= MIN_OUTCOME_PROBABILITY {
        return Err(QkdError::ZeroProbability { index, probability: p });
    }
    let state = hermitian_part(&reduced) / C64::new(p, 0.0);
    let dims = joint.dims()[..ancillas].to_vec();
    Ok((p, DensityOp::unchecked(dims, state)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigma_u(cutoff: usize) -> Ket {
        let d = cutoff + 1;
        let dims = vec![2, 2, d, d];
        let mut amps = CVector::zeros(4 * d * d);
        amps[flat_index(&dims, &[0, 0, 0, 1]).unwrap()] = C64::new(1.0, 0.0);
        amps[flat_index(&dims, &[1, 1, 1, 0]).unwrap()] = C64::new(1.0, 0.0);
        Ket::new(dims, amps).unwrap()
    }

    #[test]
    fn trivial_povm_returns_partial_trace() {
        let k = sigma_u(2);
        let (p, rho) = collapse_ancilla(&k, 2, &Povm::trivial(9), 0).unwrap();
        assert!((p - 1.0).abs() < 1e-14);
        let m = rho.matrix();
        assert!((m[(0, 0)].re - 0.5).abs() < 1e-14);
        assert!((m[(3, 3)].re - 0.5).abs() < 1e-14);
        assert!(m[(0, 3)].norm() < 1e-14);
    }

    #[test]
    fn ideal_l_port_heralds_bell_state() {
        let k = sigma_u(4);
        let povm = Povm::ideal_ports(4).unwrap();
        let (p, rho) = collapse_ancilla(&k, 2, &povm, 0).unwrap();
        assert!((p - 0.5).abs() < 1e-14);
        let m = rho.matrix();
        for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert!((m[(i, j)].re - 0.5).abs() < 1e-14, "entry ({i},{j}) = {}", m[(i, j)]);
        }
    }

    #[test]
    fn unsupported_outcome_is_zero_probability() {
        let d = 3;
        let k = Ket::basis(vec![2, 2, d, d], &[0, 0, 0, 0]).unwrap();
        let povm = Povm::ideal_ports(2).unwrap();
        assert!(matches!(
            collapse_ancilla(&k, 2, &povm, 0),
            Err(QkdError::ZeroProbability { index: 0, .. })
        ));
    }

    #[test]
    fn pure_and_mixed_reductions_agree() {
        let k = sigma_u(2);
        let rho = k.to_density();
        let povm = Povm::single_photon_ports(2, 0.3, 0.01, 0.05).unwrap();
        for j in 0..povm.len() {
            let a = k.reduce_with(2, povm.element(j).unwrap()).unwrap();
            let b = rho.reduce_with(2, povm.element(j).unwrap()).unwrap();
            assert!((a - b).camax() < 1e-14);
        }
    }

    #[test]
    fn random_povm_is_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let povm = Povm::random(6, 2, &mut rng).unwrap();
        assert_eq!(povm.len(), 3);
        assert_eq!(povm.labels()[2], "invalid");
    }

    #[test]
    fn incomplete_povm_rejected() {
        let half = CMatrix::identity(2, 2) * C64::new(0.5, 0.0);
        assert!(Povm::new(vec![half], vec!["x".into()]).is_err());
    }
}
