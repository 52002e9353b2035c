//! Thompson sampling with Gaussian pseudo-posteriors and batch-deferred
//! updates.
//!
//! Within a batch every action is drawn from a frozen copy of the
//! posteriors taken at the previous batch end. Rewards observed during the
//! batch are buffered and folded in only when the batch closes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::argmaxprob::GaussianProfile;
use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("no batch is open")]
    NoOpenBatch,
    #[error("a batch ending at {0} is already open")]
    BatchAlreadyOpen(u64),
    #[error("batch end {end} must exceed the current time {time}")]
    BadBatchEnd { end: u64, time: u64 },
    #[error("the open batch ends at {end}; time {time} is past it")]
    BatchExhausted { end: u64, time: u64 },
    #[error("cannot close the batch ending at {end} at time {time}")]
    MidBatch { end: u64, time: u64 },
    #[error("arm index {arm} out of range for {num_arms} arms")]
    ArmOutOfRange { arm: usize, num_arms: usize },
    #[error("every action in the batch already has its reward")]
    NoPendingAction,
    #[error("{missing} actions in the batch have no recorded reward")]
    MissingObservations { missing: u64 },
    #[error("need at least two arms, got {0}")]
    TooFewArms(usize),
}

/// Pseudo-posterior of one arm under a standard normal prior and unit
/// Gaussian noise: `mu_hat = reward_sum / (1 + N)`, `sigma2_hat = 1 / (1 + N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPosterior {
    pub mu_hat: f64,
    pub sigma2_hat: f64,
    pub pull_count: u64,
    pub reward_sum: f64,
}

impl Default for ArmPosterior {
    fn default() -> Self {
        ArmPosterior {
            mu_hat: 0.0,
            sigma2_hat: 1.0,
            pull_count: 0,
            reward_sum: 0.0,
        }
    }
}

impl ArmPosterior {
    /// Single-observation update.
    pub fn update(&mut self, reward: f64) {
        self.absorb(reward);
        self.refresh();
    }

    fn absorb(&mut self, reward: f64) {
        self.reward_sum += reward;
        self.pull_count += 1;
    }

    fn refresh(&mut self) {
        let denom = 1.0 + self.pull_count as f64;
        self.mu_hat = self.reward_sum / denom;
        self.sigma2_hat = 1.0 / denom;
    }
}

/// Agent-side state of one replicate.
#[derive(Debug, Clone)]
pub struct AgentState {
    posteriors: Vec<ArmPosterior>,
    frozen: Vec<ArmPosterior>,
    frozen_sds: Vec<f64>,
    pending: Vec<(usize, f64)>,
    in_batch_pulls: Vec<u64>,
    time: u64,
    closed_batches: usize,
    endpoints: Vec<u64>,
    open_end: Option<u64>,
}

impl AgentState {
    pub fn new(num_arms: usize) -> Result<Self, SamplerError> {
        if num_arms < 2 {
            return Err(SamplerError::TooFewArms(num_arms));
        }
        let fresh = vec![ArmPosterior::default(); num_arms];
        Ok(AgentState {
            frozen_sds: vec![1.0; num_arms],
            frozen: fresh.clone(),
            posteriors: fresh,
            pending: Vec::new(),
            in_batch_pulls: vec![0; num_arms],
            time: 0,
            closed_batches: 0,
            endpoints: vec![0],
            open_end: None,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.posteriors.len()
    }

    /// Current step count `t`.
    pub fn time(&self) -> u64 {
        self.time
    }

    /// Number of closed batches, `B(t)`.
    pub fn batch_index(&self) -> usize {
        self.closed_batches
    }

    /// Closed batch endpoints `T_0 = 0 < T_1 < ...`.
    pub fn batch_endpoints(&self) -> &[u64] {
        &self.endpoints
    }

    pub fn last_endpoint(&self) -> u64 {
        *self.endpoints.last().expect("T_0 is always present")
    }

    pub fn open_batch_end(&self) -> Option<u64> {
        self.open_end
    }

    /// Posteriors as of the last closed batch.
    pub fn posteriors(&self) -> &[ArmPosterior] {
        &self.posteriors
    }

    /// The snapshot that in-batch sampling draws from.
    pub fn frozen_snapshot(&self) -> &[ArmPosterior] {
        &self.frozen
    }

    /// Pull counts including actions taken in the open batch.
    pub fn pull_counts(&self) -> Vec<u64> {
        self.posteriors
            .iter()
            .zip(&self.in_batch_pulls)
            .map(|(p, k)| p.pull_count + k)
            .collect()
    }

    pub fn pending_observations(&self) -> &[(usize, f64)] {
        &self.pending
    }

    /// Sampling law of the `theta_i` in the open (or next) batch.
    pub fn profile(&self) -> GaussianProfile {
        snapshot_profile(&self.frozen)
    }

    /// Opens batch `j = batch_index() + 1`, running through step `end`.
    pub fn open_batch(&mut self, end: u64) -> Result<(), SamplerError> {
        if let Some(open) = self.open_end {
            return Err(SamplerError::BatchAlreadyOpen(open));
        }
        if end <= self.time {
            return Err(SamplerError::BadBatchEnd {
                end,
                time: self.time,
            });
        }
        self.open_end = Some(end);
        Ok(())
    }

    /// Draws `theta_i ~ N(mu_hat_i, sigma2_hat_i)` from the frozen snapshot
    /// and plays the argmax (lowest index on ties). Advances time by one.
    pub fn sample_action(&mut self, rng: &mut RngStream) -> Result<usize, SamplerError> {
        let end = self.open_end.ok_or(SamplerError::NoOpenBatch)?;
        if self.time >= end {
            return Err(SamplerError::BatchExhausted {
                end,
                time: self.time,
            });
        }
        let mut best = 0;
        let mut best_theta = f64::NEG_INFINITY;
        for (i, (post, sd)) in self.frozen.iter().zip(&self.frozen_sds).enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let theta = post.mu_hat + sd * z;
            if theta > best_theta {
                best = i;
                best_theta = theta;
            }
        }
        self.time += 1;
        self.in_batch_pulls[best] += 1;
        Ok(best)
    }

    /// Buffers the reward of an action taken in the open batch. Neither the
    /// snapshot nor the posteriors change until [`close_batch`](Self::close_batch).
    pub fn record_observation(&mut self, arm: usize, reward: f64) -> Result<(), SamplerError> {
        if arm >= self.num_arms() {
            return Err(SamplerError::ArmOutOfRange {
                arm,
                num_arms: self.num_arms(),
            });
        }
        if self.open_end.is_none() {
            return Err(SamplerError::NoOpenBatch);
        }
        let taken = self.time - self.last_endpoint();
        if self.pending.len() as u64 >= taken {
            return Err(SamplerError::NoPendingAction);
        }
        self.pending.push((arm, reward));
        Ok(())
    }

    /// Folds the buffered rewards into the posteriors and refreezes.
    pub fn close_batch(&mut self) -> Result<(), SamplerError> {
        let end = self.open_end.ok_or(SamplerError::NoOpenBatch)?;
        if self.time != end {
            return Err(SamplerError::MidBatch {
                end,
                time: self.time,
            });
        }
        let taken = end - self.last_endpoint();
        if (self.pending.len() as u64) < taken {
            return Err(SamplerError::MissingObservations {
                missing: taken - self.pending.len() as u64,
            });
        }

        let mut touched = vec![false; self.num_arms()];
        for &(arm, reward) in &self.pending {
            self.posteriors[arm].absorb(reward);
            touched[arm] = true;
        }
        for (post, hit) in self.posteriors.iter_mut().zip(&touched) {
            if *hit {
                post.refresh();
            }
        }
        self.pending.clear();
        self.in_batch_pulls.iter_mut().for_each(|k| *k = 0);
        self.frozen.clone_from(&self.posteriors);
        for (sd, post) in self.frozen_sds.iter_mut().zip(&self.frozen) {
            *sd = post.sigma2_hat.sqrt();
        }
        self.endpoints.push(end);
        self.closed_batches += 1;
        self.open_end = None;
        Ok(())
    }
}

/// Gaussian law of the Thompson draws for a posterior snapshot.
pub fn snapshot_profile(snapshot: &[ArmPosterior]) -> GaussianProfile {
    GaussianProfile::new(
        snapshot.iter().map(|p| p.mu_hat).collect(),
        snapshot.iter().map(|p| p.sigma2_hat).collect(),
    )
    .expect("posterior variances are positive and finite")
}
