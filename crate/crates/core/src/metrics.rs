//! Regret, pull counts, measurement effort and batch counts, with the
//! ratio diagnostics used to compare a finite run against its asymptotic
//! targets. All logarithms are natural.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::argmaxprob::{exact_log_probs, ProbError};
use crate::batching::P2Estimate;
use crate::sampler::{snapshot_profile, ArmPosterior};

pub const LOG_BASE: &str = "e";
pub const DEFAULT_CHECKPOINT_RATIO: f64 = 1.2;
pub const DEFAULT_BOUNDARY_TAIL: usize = 10;
pub const DEFAULT_FULL_BOUNDARY_LIMIT: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("expected {expected} entries in {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("arm {arm} out of range for {num_arms} arms")]
    ArmOutOfRange { arm: usize, num_arms: usize },
    #[error("batch closed at {endpoint} but the ledger is at time {time}")]
    BoundaryMismatch { endpoint: u64, time: u64 },
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `{ceil(ratio^k)} ∩ [1, horizon]` plus the horizon itself.
pub fn geometric_checkpoints(horizon: u64, ratio: f64) -> Vec<u64> {
    let mut grid = Vec::new();
    if horizon == 0 {
        return grid;
    }
    let mut k = 0i32;
    loop {
        let v = ratio.powi(k).ceil();
        if v > horizon as f64 {
            break;
        }
        let v = v as u64;
        if grid.last() != Some(&v) {
            grid.push(v);
        }
        k += 1;
    }
    if grid.last() != Some(&horizon) {
        grid.push(horizon);
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub t: u64,
    pub random_regret: f64,
    pub pseudo_regret: f64,
    pub batches: u64,
    pub pull_counts: Vec<u64>,
    pub effort: Vec<f64>,
}

/// State at a batch endpoint `T_j`, after the batch's rewards were folded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub batch: usize,
    pub endpoint: u64,
    pub snapshot: Vec<ArmPosterior>,
    pub pull_counts: Vec<u64>,
    pub effort: Vec<f64>,
    /// `ln P(A_{T_j+1} = i | H_{T_j})`, filled in by [`RegretLedger::finish`].
    #[serde(with = "crate::serde_float::opt_vec")]
    pub log_probs: Option<Vec<f64>>,
    /// `T_{j+1} - T_j`, when another batch followed.
    pub next_batch_size: Option<u64>,
    /// P2 used by an adaptive schedule for the next batch.
    pub p2: Option<P2Estimate>,
}

/// Keeps every boundary up to `full_limit`, then only boundaries whose index
/// lies on a geometric grid, plus the last `tail` boundaries.
#[derive(Debug, Clone)]
struct BoundaryLog {
    kept: Vec<BoundaryRecord>,
    tail: VecDeque<BoundaryRecord>,
    tail_len: usize,
    full_limit: usize,
    next_grid_power: i32,
    next_grid_index: usize,
}

impl BoundaryLog {
    fn new(full_limit: usize, tail_len: usize) -> Self {
        BoundaryLog {
            kept: Vec::new(),
            tail: VecDeque::new(),
            tail_len,
            full_limit,
            next_grid_power: 0,
            next_grid_index: 1,
        }
    }

    fn on_grid(&mut self, j: usize) -> bool {
        while self.next_grid_index < j {
            self.next_grid_power += 1;
            self.next_grid_index =
                DEFAULT_CHECKPOINT_RATIO.powi(self.next_grid_power).ceil() as usize;
        }
        self.next_grid_index == j
    }

    fn push(&mut self, rec: BoundaryRecord) {
        let j = rec.batch;
        if j <= self.full_limit || self.on_grid(j) {
            self.kept.push(rec.clone());
        }
        if self.tail_len > 0 {
            if self.tail.len() == self.tail_len {
                self.tail.pop_front();
            }
            self.tail.push_back(rec);
        }
    }

    fn annotate_latest(&mut self, size: u64, p2: Option<P2Estimate>) {
        let Some(j) = self
            .tail
            .back()
            .map(|r| r.batch)
            .or_else(|| self.kept.last().map(|r| r.batch))
        else {
            return;
        };
        for rec in self.tail.back_mut().into_iter().chain(self.kept.last_mut()) {
            if rec.batch == j {
                rec.next_batch_size = Some(size);
                rec.p2 = p2;
            }
        }
    }

    fn merged(&self) -> Vec<BoundaryRecord> {
        let mut out = self.kept.clone();
        out.extend(self.tail.iter().cloned());
        out.sort_by_key(|r| r.batch);
        out.dedup_by_key(|r| r.batch);
        out
    }
}

/// Running regret and effort bookkeeping for one replicate. Arm indices
/// are internal (the optimal arm is 0).
#[derive(Debug, Clone)]
pub struct RegretLedger {
    gaps: Vec<f64>,
    time: u64,
    per_arm_regret: Vec<f64>,
    pull_counts: Vec<u64>,
    effort: Vec<CompensatedSum>,
    batch_count: u64,
    checkpoints: Vec<u64>,
    next_checkpoint: usize,
    rows: Vec<CheckpointRow>,
    boundaries: BoundaryLog,
    finished: Option<Vec<BoundaryRecord>>,
}

impl RegretLedger {
    pub fn new(gaps: Vec<f64>, checkpoints: Vec<u64>) -> Self {
        Self::with_retention(
            gaps,
            checkpoints,
            DEFAULT_FULL_BOUNDARY_LIMIT,
            DEFAULT_BOUNDARY_TAIL,
        )
    }

    pub fn with_retention(
        gaps: Vec<f64>,
        mut checkpoints: Vec<u64>,
        full_limit: usize,
        tail: usize,
    ) -> Self {
        let n = gaps.len();
        checkpoints.sort_unstable();
        checkpoints.dedup();
        checkpoints.retain(|&t| t > 0);
        RegretLedger {
            gaps,
            time: 0,
            per_arm_regret: vec![0.0; n],
            pull_counts: vec![0; n],
            effort: vec![CompensatedSum::default(); n],
            batch_count: 0,
            checkpoints,
            next_checkpoint: 0,
            rows: Vec::new(),
            boundaries: BoundaryLog::new(full_limit, tail),
            finished: None,
        }
    }

    pub fn num_arms(&self) -> usize {
        self.gaps.len()
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// Accounts one step: `arm` was played, `rewards` holds every arm's draw
    /// at this step and `probs` the frozen batch distribution.
    pub fn step_update(
        &mut self,
        arm: usize,
        rewards: &[f64],
        probs: &[f64],
    ) -> Result<(), MetricsError> {
        let n = self.num_arms();
        if rewards.len() != n {
            return Err(MetricsError::Dimension {
                what: "reward vector",
                expected: n,
                got: rewards.len(),
            });
        }
        if probs.len() != n {
            return Err(MetricsError::Dimension {
                what: "probability vector",
                expected: n,
                got: probs.len(),
            });
        }
        if arm >= n {
            return Err(MetricsError::ArmOutOfRange { arm, num_arms: n });
        }
        self.time += 1;
        if arm != 0 {
            self.per_arm_regret[arm] += rewards[0] - rewards[arm];
        }
        self.pull_counts[arm] += 1;
        for (s, p) in self.effort.iter_mut().zip(probs) {
            s.add(*p);
        }
        Ok(())
    }

    /// Registers the end of a batch at the current time.
    pub fn close_batch(
        &mut self,
        endpoint: u64,
        snapshot: &[ArmPosterior],
    ) -> Result<(), MetricsError> {
        if endpoint != self.time {
            return Err(MetricsError::BoundaryMismatch {
                endpoint,
                time: self.time,
            });
        }
        self.batch_count += 1;
        let rec = BoundaryRecord {
            batch: self.batch_count as usize,
            endpoint,
            snapshot: snapshot.to_vec(),
            pull_counts: self.pull_counts.clone(),
            effort: self.effort(),
            log_probs: None,
            next_batch_size: None,
            p2: None,
        };
        self.boundaries.push(rec);
        Ok(())
    }

    /// Attaches the size of the batch that follows the latest boundary.
    pub fn annotate_next_batch(&mut self, size: u64, p2: Option<P2Estimate>) {
        self.boundaries.annotate_latest(size, p2);
    }

    /// Records a checkpoint row if the current time is on the grid.
    pub fn checkpoint_if_due(&mut self) {
        if self.checkpoints.get(self.next_checkpoint) == Some(&self.time) {
            self.rows.push(self.row());
            self.next_checkpoint += 1;
        }
    }

    fn row(&self) -> CheckpointRow {
        CheckpointRow {
            t: self.time,
            random_regret: self.random_regret(),
            pseudo_regret: self.pseudo_regret(),
            batches: self.batch_count,
            pull_counts: self.pull_counts.clone(),
            effort: self.effort(),
        }
    }

    /// `R(T) = sum_{i >= 2} R_i(T)`.
    pub fn random_regret(&self) -> f64 {
        self.per_arm_regret.iter().skip(1).sum()
    }

    pub fn per_arm_regret(&self) -> &[f64] {
        &self.per_arm_regret
    }

    /// `sum_i Delta_i N_i(T)`.
    pub fn pseudo_regret(&self) -> f64 {
        self.gaps
            .iter()
            .zip(&self.pull_counts)
            .map(|(g, &n)| g * n as f64)
            .sum()
    }

    pub fn pull_counts(&self) -> &[u64] {
        &self.pull_counts
    }

    pub fn effort(&self) -> Vec<f64> {
        self.effort.iter().map(CompensatedSum::value).collect()
    }

    pub fn batch_count(&self) -> u64 {
        self.batch_count
    }

    pub fn rows(&self) -> &[CheckpointRow] {
        &self.rows
    }

    /// Retained boundaries; log-probabilities are present after [`finish`](Self::finish).
    pub fn boundaries(&self) -> Vec<BoundaryRecord> {
        match &self.finished {
            Some(b) => b.clone(),
            None => self.boundaries.merged(),
        }
    }

    /// Fills in the exact log selection probabilities of every retained
    /// boundary. Idempotent.
    pub fn finish(&mut self) -> Result<(), MetricsError> {
        if self.finished.is_some() {
            return Ok(());
        }
        let mut recs = self.boundaries.merged();
        for rec in &mut recs {
            rec.log_probs = Some(exact_log_probs(&snapshot_profile(&rec.snapshot))?);
        }
        self.finished = Some(recs);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub t: u64,
    pub value: f64,
}

/// Per-boundary `-ln P(A = i | H_{T_j}) / S_i(T_j)` for one suboptimal arm;
/// `None` where the probability is zero or the effort is not yet positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortRateSeries {
    pub arm: usize,
    pub target: f64,
    pub points: Vec<(u64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    /// `sum_{i >= 2} 2 / Delta_i`.
    pub regret_slope: f64,
    /// `sum_{i >= 2} 2 / Delta_i^2`.
    pub batch_slope: f64,
}

impl Targets {
    pub fn from_gaps(gaps: &[f64]) -> Self {
        let sub = gaps.iter().skip(1);
        Targets {
            regret_slope: sub.clone().map(|d| 2.0 / d).sum(),
            batch_slope: sub.map(|d| 2.0 / (d * d)).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticDiagnostics {
    pub log_base: String,
    pub targets: Targets,
    pub regret_slope: Vec<RatioPoint>,
    pub pseudo_slope: Vec<RatioPoint>,
    pub batch_slope: Vec<RatioPoint>,
    pub effort_rate: Vec<EffortRateSeries>,
    /// `N_i(T) / S_i(T)` at the last checkpoint.
    pub effort_ratio: Vec<Option<f64>>,
    /// `P(A_{T_j+1} = 1 | H_{T_j})` at each retained boundary.
    pub opt_prob: Vec<(u64, f64)>,
}

pub fn compute_diagnostics(ledger: &RegretLedger, gaps: &[f64]) -> AsymptoticDiagnostics {
    let slope = |f: &dyn Fn(&CheckpointRow) -> f64| -> Vec<RatioPoint> {
        ledger
            .rows()
            .iter()
            .filter(|r| r.t >= 2)
            .map(|r| RatioPoint {
                t: r.t,
                value: f(r) / (r.t as f64).ln(),
            })
            .collect()
    };
    let boundaries = ledger.boundaries();

    let effort_rate = (1..gaps.len())
        .map(|arm| EffortRateSeries {
            arm,
            target: gaps[arm] * gaps[arm] / 2.0,
            points: boundaries
                .iter()
                .map(|b| {
                    let value = b.log_probs.as_ref().and_then(|lp| {
                        let s = b.effort[arm];
                        let lp = lp[arm];
                        (lp.is_finite() && s > 0.0).then(|| -lp / s)
                    });
                    (b.endpoint, value)
                })
                .collect(),
        })
        .collect();

    let opt_prob = boundaries
        .iter()
        .filter_map(|b| b.log_probs.as_ref().map(|lp| (b.endpoint, lp[0].exp())))
        .collect();

    let effort_ratio = match ledger.rows().last() {
        Some(r) => r
            .pull_counts
            .iter()
            .zip(&r.effort)
            .map(|(&n, &s)| (s > 0.0).then(|| n as f64 / s))
            .collect(),
        None => vec![None; gaps.len()],
    };

    AsymptoticDiagnostics {
        log_base: LOG_BASE.to_string(),
        targets: Targets::from_gaps(gaps),
        regret_slope: slope(&|r| r.random_regret),
        pseudo_slope: slope(&|r| r.pseudo_regret),
        batch_slope: slope(&|r| r.batches as f64),
        effort_rate,
        effort_ratio,
        opt_prob,
    }
}
