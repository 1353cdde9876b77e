//! Simulation and analysis toolkit for projection-based quantum state
//! tomography of orbital-angular-momentum (OAM) photonic qubits.
//!
//! The pipeline follows the physical device:
//!
//! 1. [`modes`]: Laguerre-Gaussian fields, overlaps and the equatorial
//!    (Hermite-Gaussian-like) superpositions of `l = +1` and `l = -1`.
//! 2. [`apparatus`]: the two-arm interferometer with fork-hologram mode
//!    projectors, fiber leakage, threshold photon counting and the
//!    wavelength sensitivity of the interferometer phase.
//! 3. [`phasecam`]: camera frames of the back-propagated phase-reference
//!    beam and the angular-binning routine that turns a frame into an
//!    interferometer phase.
//! 4. [`tomo`]: fringe calibration, Stokes reconstruction, error budgets.
//! 5. [`qubit`]: density matrices, Stokes vectors, fidelities and the
//!    physicality projection.
//! 6. [`qudit`]: the four-path extension over `l in {-3, -1, +1, +3}`.
//! 7. [`cli`]: config-driven experiment runs behind the `oamtomo` binary.
//!
//! All randomness is seeded explicitly; see [`seed`].

// `!(x > 0.0)` style guards are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod apparatus;
pub mod cli;
pub mod error;
pub mod fit;
pub mod image;
pub mod modes;
pub mod phasecam;
pub mod qubit;
pub mod qudit;
pub mod seed;
pub mod tomo;

pub use error::{Error, Result};
pub use num_complex::Complex64;
