use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{QkdError, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub(crate) const NORM_TOLERANCE: f64 = 1e-12;
pub(crate) const HERMITIAN_TOLERANCE: f64 = 1e-12;
pub(crate) const PSD_TOLERANCE: f64 = 1e-10;

/// Pure state on a tensor product of subsystems with the given local dimensions.
///
/// Basis index ordering is row-major: the first subsystem is the most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Ket {
    dims: Vec<usize>,
    amps: CVector,
}

impl Ket {
    /// Normalises `amps`; errors on a zero vector or a length mismatch.
    pub fn new(dims: Vec<usize>, amps: CVector) -> Result<Self> {
        let dim: usize = dims.iter().product();
        if amps.len() != dim {
            return Err(QkdError::Dimension(format!(
                "amplitude vector of length {} for subsystem dims {dims:?}",
                amps.len()
            )));
        }
        let norm = amps.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(QkdError::InvalidParam("ket has zero norm".into()));
        }
        Ok(Self {
            dims,
            amps: amps / C64::new(norm, 0.0),
        })
    }

    /// Computational basis state `|i₁ i₂ …⟩`.
    pub fn basis(dims: Vec<usize>, digits: &[usize]) -> Result<Self> {
        let index = flat_index(&dims, digits)?;
        let dim: usize = dims.iter().product();
        let mut amps = CVector::zeros(dim);
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { dims, amps })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn amplitude(&self, digits: &[usize]) -> Result<C64> {
        Ok(self.amps[flat_index(&self.dims, digits)?])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.norm_squared()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Ket) -> Result<C64> {
        if self.dims != other.dims {
            return Err(QkdError::Dimension(format!(
                "inner product of {:?} with {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self.amps.dotc(&other.amps))
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &Ket) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    pub fn tensor(&self, other: &Ket) -> Ket {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        let amps = self.amps.kronecker(&other.amps);
        Ket { dims, amps }
    }

    /// Apply a unitary acting on the whole space.
    pub fn apply(&self, op: &CMatrix) -> Result<Ket> {
        if op.nrows() != self.dim() || op.ncols() != self.dim() {
            return Err(QkdError::Dimension(format!(
                "operator {}x{} on ket of dim {}",
                op.nrows(),
                op.ncols(),
                self.dim()
            )));
        }
        Ket::new(self.dims.clone(), op * &self.amps)
    }

    pub fn to_density(&self) -> DensityOp {
        DensityOp {
            dims: self.dims.clone(),
            matrix: &self.amps * self.amps.adjoint(),
        }
    }

    /// Amplitudes reshaped to `(dim of first k subsystems) × (rest)`.
    pub(crate) fn split_matrix(&self, k: usize) -> CMatrix {
        let left: usize = self.dims[..k].iter().product();
        let right = self.dim() / left;
        CMatrix::from_fn(left, right, |i, j| self.amps[i * right + j])
    }
}

/// Mixed state on a tensor product of subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOp {
    dims: Vec<usize>,
    matrix: CMatrix,
}

impl DensityOp {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(dims: Vec<usize>, matrix: CMatrix) -> Result<Self> {
        let op = Self::unchecked(dims, matrix)?;
        op.validate()?;
        Ok(op)
    }

    /// Checks only the shape.
    pub fn unchecked(dims: Vec<usize>, matrix: CMatrix) -> Result<Self> {
        let dim: usize = dims.iter().product();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(QkdError::Dimension(format!(
                "{}x{} matrix for subsystem dims {dims:?}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { dims, matrix })
    }

    pub fn maximally_mixed(dims: Vec<usize>) -> Self {
        let dim: usize = dims.iter().product();
        let matrix = CMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0);
        Self { dims, matrix }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `⟨ψ|ρ|ψ⟩` for a (not necessarily normalised) vector.
    pub fn expectation(&self, psi: &CVector) -> f64 {
        psi.dotc(&(&self.matrix * psi)).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = hermitian_part(&self.matrix);
        herm.symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn validate(&self) -> Result<()> {
        let skew = (&self.matrix - self.matrix.adjoint()).camax();
        if skew > HERMITIAN_TOLERANCE {
            return Err(QkdError::InvalidParam(format!(
                "density operator not Hermitian (max |ρ-ρ†| = {skew:e})"
            )));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > NORM_TOLERANCE || tr.im.abs() > NORM_TOLERANCE {
            return Err(QkdError::InvalidParam(format!(
                "density operator trace {tr} differs from 1"
            )));
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOLERANCE {
            return Err(QkdError::InvalidParam(format!(
                "density operator has negative eigenvalue {min:e}"
            )));
        }
        Ok(())
    }

    /// Conjugate by a unitary on the whole space.
    pub fn conjugate_by(&self, u: &CMatrix) -> DensityOp {
        DensityOp {
            dims: self.dims.clone(),
            matrix: u * &self.matrix * u.adjoint(),
        }
    }
}

impl From<&Ket> for DensityOp {
    fn from(k: &Ket) -> Self {
        k.to_density()
    }
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub(crate) fn flat_index(dims: &[usize], digits: &[usize]) -> Result<usize> {
    if digits.len() != dims.len() || digits.iter().zip(dims).any(|(d, n)| d >= n) {
        return Err(QkdError::Dimension(format!(
            "basis label {digits:?} for subsystem dims {dims:?}"
        )));
    }
    Ok(digits.iter().zip(dims).fold(0, |acc, (d, n)| acc * n + d))
}

/// Projector `|v⟩⟨v|`.
pub fn projector(v: &CVector) -> CMatrix {
    v * v.adjoint()
}
