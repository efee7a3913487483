//! Numerical model of entanglement distribution over reciprocal collective-noise
//! channels, protected by a two-photon decoherence-free subspace that is formed
//! from the signal photon and a counter-propagating reference pulse.
//!
//! The crate is organised bottom-up:
//!
//! - [`qmath`]: dense complex linear algebra and density-matrix primitives.
//! - [`polarization`]: Jones calculus for waveplate stacks and the reciprocity
//!   relation between forward and backward propagation.
//! - [`fock`]: truncated multimode Fock-space states, sources, loss, routing and
//!   threshold detection.
//! - [`protocol`]: the distribution protocol, both as an analytic single-photon
//!   model and as a full Fock-space simulation with a weak coherent reference.
//! - [`tomography`]: projector sets, count sampling, maximum-likelihood
//!   reconstruction, process matrices and entanglement measures.

pub mod error;
pub mod fock;
pub mod polarization;
pub mod protocol;
pub mod qmath;
pub mod tomography;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
