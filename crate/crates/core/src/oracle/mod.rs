//! Brute-force state-space oracle.
//!
//! Builds entanglement-based source states on small truncated Hilbert spaces,
//! conditions them on a measurement of the signal modes and reads the ancillas
//! out in rotated conjugate bases. Everything here is dense linear algebra and
//! is meant to check the closed forms in [`crate::phase_error`], not to be fast.

pub mod ancilla;
pub mod mp;
pub mod povm;
pub mod sns;
pub mod state;

pub use ancilla::{
    extract_affine, port_phase_error, random_density, rotated_basis_error, rotated_pair_error,
    AncillaDecomposition, ErrorPattern, Port, Sign,
};
pub use mp::{build_mp_joint_state, mp_joint_state};
pub use povm::{collapse_ancilla, outcome_probabilities, JointState, Povm};
pub use sns::{build_sns_joint_state, project_untagged, sigma_untagged, untagged_projection, untagged_rotation};
pub use state::{DensityOp, Ket};
