//! Multimodal deep subspace clustering.
//!
//! Every sensing modality gets its own convolutional encoder, self-expressive
//! coefficient matrix and decoder. The coefficient matrices are tied together by
//! a group-sparse penalty and a pairwise commutator penalty, then summed into a
//! single affinity for spectral clustering. A shared-coefficient baseline and a
//! feature-concatenation network are provided for comparison, along with a
//! linearized ADMM solver for the coefficient problem on fixed features and a
//! harness that measures how corruption of one modality propagates into the
//! affinity and the final clustering.

pub mod admm;
pub mod cli;
pub mod clustering;
pub mod dataio;
mod error;
pub mod networks;
pub mod numerics;
pub mod objectives;
pub mod robustness;

pub use error::{Error, Result};
