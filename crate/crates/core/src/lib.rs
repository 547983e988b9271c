//! Toolchain for spin-adapted fermionic unitaries: symbolic operator algebra,
//! dynamical Lie algebra closures, Wei-Norman product decompositions, gate-level
//! circuit emission with exact counts, and an ADAPT-VQE statevector lab.
//!
//! Everything numerical is verified against the dense Fock-space oracle in
//! [`fock`], which is the single source of ground truth for the other modules.

pub mod algebra;
pub mod circuit;
pub mod fock;
pub mod lie;
pub mod ode;
pub mod opt;
pub mod par;
pub mod vqe;
pub mod wn;

/// Coefficients with absolute value below this are treated as symbolic zeros.
pub const COEFF_EPS: f64 = 1e-14;
