//! Sparse Bayesian estimation of frequency-wavenumber (f-k) diagrams.
//!
//! The crate covers the whole chain used for low-frequency shallow-water
//! acoustics:
//!
//! * [`waveguide`] computes modal wavenumbers (ideal and Pekeris guides) and
//!   simulates antenna measurements from the modal sum.
//! * [`dictionary`] builds the block-diagonal Fourier operator mapping an f-k
//!   diagram onto the antenna.
//! * [`rbm`] is the restricted Boltzmann machine used as a structured prior on
//!   f-k supports, with Gibbs sampling, contrastive divergence training and
//!   exact enumeration oracles.
//! * [`pursuit`] is the mean-field variational Bayes solver (structured soft
//!   Bayesian pursuit) together with its Bernoulli-prior baseline.
//! * [`eval`] holds recovery metrics, the exhaustive MAP oracle and training
//!   set generation.
//! * [`io`] holds the binary and CSV file formats.
//!
//! Data-parallel loops go through [`exec::Exec`]; with the `parallel` feature
//! disabled every mode runs sequentially and produces the same bits.

pub mod dictionary;
pub mod error;
pub mod eval;
pub mod exec;
pub mod io;
pub mod math;
pub mod pursuit;
pub mod rbm;
pub mod waveguide;

pub use error::{Error, Result};
pub use num_complex::Complex64;
