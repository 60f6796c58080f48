//! PAC-Bayes training of probabilistic neural networks with non-vacuous risk
//! certificates.
//!
//! A [`network::ProbNetwork`] keeps a factorised Gaussian or Laplace
//! distribution over every weight and bias. Training minimises a PAC-Bayes
//! bound (or a baseline objective) with SGD on pathwise gradients, and
//! [`certificates`] turns the trained distribution into an upper bound on its
//! true risk that holds with probability `1 − δ`.

pub mod certificates;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod distributions;
pub mod error;
pub mod linalg;
pub mod network;
pub mod objectives;
pub mod report;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
