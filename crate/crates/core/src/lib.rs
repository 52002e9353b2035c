//! Batched multi-armed bandit simulation for Thompson sampling with
//! Gaussian pseudo-posteriors.
//!
//! The crate is organised around the pieces of one simulated experiment:
//!
//! - [`env`]: the hidden arms and their reward draws.
//! - [`rng`]: keyed, reproducible random streams.
//! - [`sampler`]: the Thompson sampling agent with batch-frozen sampling.
//! - [`argmaxprob`]: selection probabilities of independent Gaussians.
//! - [`batching`]: batch schedules, including the inverse-probability rule.
//! - [`metrics`]: regret, effort and batch-count bookkeeping plus asymptotic
//!   ratio diagnostics.
//! - [`harness`]: configuration, replicated runs, aggregation and output.

pub mod argmaxprob;
pub mod batching;
pub mod env;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod sampler;
mod serde_float;
