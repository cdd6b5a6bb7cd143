//! Continuous-time categorical diffusion.
//!
//! A forward continuous-time Markov chain corrupts categorical data
//! dimension-by-dimension toward a uniform reference; the reverse-time chain
//! is recovered by learning the singleton conditionals `p_t(X^d | x^{\d})`
//! with a cross-entropy ratio-matching objective. Every formula has an exact
//! brute-force counterpart on enumerable spaces, and those oracles are what
//! the learned components are tested against.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`space`] | product spaces, Gray codec, 2-D toy densities and quantization |
//! | [`ctmc`] | schedules, rate matrices, exact marginals, forward and reverse kernels |
//! | [`models`] | conditional-marginal contract, EBM / masked / hollow / tabular models, gradient engine |
//! | [`training`] | ratio-matching, l2, x0, ordinal and path-KL objectives, Adam, training loop |
//! | [`samplers`] | Euler, analytical, locally balanced and birth/death correctors, exact reverse simulation |
//! | [`eval`] | exponential-Hamming MMD, total variation, run reports |
//! | [`verify`] | oracle property suite backing the `verify` subcommand |

pub mod ctmc;
pub mod error;
pub mod eval;
pub mod models;
pub mod rng;
pub mod samplers;
pub mod space;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use space::{State, StateSpace};

/// Crate version embedded into artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
