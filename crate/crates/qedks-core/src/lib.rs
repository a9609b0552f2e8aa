//! Exact dynamics of a regularized fermion-photon lattice model and the
//! construction of effective external fields for a noninteracting auxiliary
//! system reproducing the same four-current / four-potential pair.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`model`] - lattice regularization, gamma matrices, external drives
//! * [`fock`] - field operators on the joint fermion (x) photon Fock space
//! * [`hamiltonian`] - assembly of the matter, field, interaction and
//!   external parts
//! * [`dynamics`] - exact unitary propagation and equation-of-motion checks
//! * [`heisenberg`] - Taylor coefficients of Heisenberg-picture expectations
//! * [`inversion`] - construction of the effective fields (a_eff, j_eff)
//! * [`kohnsham`] - Dirac orbital + classical Maxwell propagation with the
//!   mean-field closure
//! * [`arrayio`] - the binary array format used by the runner

pub mod arrayio;
pub mod dynamics;
pub mod error;
pub mod fock;
pub mod hamiltonian;
pub mod heisenberg;
pub mod inversion;
pub mod kohnsham;
pub mod linalg;
pub mod model;

pub use error::CoreError;
pub use model::{ExternalDrive, GammaSet, Model, ModelSpec};
