//! Seeded replicate execution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::output::{aggregate, emit_outputs, AggregateResult};
use super::HarnessError;
use crate::argmaxprob::exact_probs;
use crate::batching::{growth_diagnostic, BatchSchedule, GrowthVerdict, History};
use crate::env::Environment;
use crate::metrics::{
    compute_diagnostics, AsymptoticDiagnostics, BoundaryRecord, CheckpointRow, RegretLedger,
};
use crate::rng::{Purpose, RngStream};
use crate::sampler::AgentState;

/// End-of-horizon totals. Per-arm vectors use internal order (optimal arm first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub time: u64,
    pub random_regret: f64,
    pub per_arm_regret: Vec<f64>,
    pub pseudo_regret: f64,
    pub pull_counts: Vec<u64>,
    pub effort: Vec<f64>,
    pub batch_count: u64,
    /// Selection probability of the optimal arm after the last boundary.
    pub final_opt_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSummary {
    pub verdict: GrowthVerdict,
    pub running_sup_tail: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: u64,
    pub rows: Vec<CheckpointRow>,
    pub boundaries: Vec<BoundaryRecord>,
    pub final_state: FinalState,
    pub growth: GrowthSummary,
    pub diagnostics: AsymptoticDiagnostics,
}

/// Runs replicate `replicate` of `cfg` against `env` from its own streams.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    env: &Environment,
    replicate: u64,
) -> Result<ReplicateResult, HarnessError> {
    let ctx = |message: String| HarnessError::Replicate {
        replicate,
        seed: cfg.master_seed,
        message,
    };
    let seed = cfg.master_seed;
    let mut reward_rng = RngStream::for_replicate(seed, replicate, Purpose::Rewards);
    let mut ts_rng = RngStream::for_replicate(seed, replicate, Purpose::Thompson);
    let mut mc_rng = RngStream::for_replicate(seed, replicate, Purpose::MonteCarlo);

    let n = env.num_arms();
    let horizon = cfg.horizon;
    let mut agent = AgentState::new(n).map_err(|e| ctx(e.to_string()))?;
    let mut schedule: BatchSchedule = cfg
        .schedule
        .build(cfg.prob_method)
        .map_err(|e| ctx(e.to_string()))?;
    let mut ledger = RegretLedger::new(env.gaps().to_vec(), cfg.checkpoints.points(horizon));
    let mut rewards = vec![0.0; n];

    while agent.time() < horizon {
        let history = History {
            next_batch: agent.batch_index() + 1,
            endpoints: agent.batch_endpoints(),
            snapshot: agent.posteriors(),
        };
        let decision = schedule
            .next_endpoint(&history, horizon, &mut mc_rng)
            .map_err(|e| ctx(e.to_string()))?;
        let end = decision.endpoint;
        if agent.batch_index() > 0 {
            ledger.annotate_next_batch(end - agent.time(), decision.p2);
        }
        agent.open_batch(end).map_err(|e| ctx(e.to_string()))?;
        let probs = exact_probs(&agent.profile())
            .map_err(|e| ctx(e.to_string()))?
            .probs;

        while agent.time() < end {
            env.draw_all_rewards_into(&mut reward_rng, &mut rewards);
            let arm = agent
                .sample_action(&mut ts_rng)
                .map_err(|e| ctx(e.to_string()))?;
            agent
                .record_observation(arm, rewards[arm])
                .map_err(|e| ctx(e.to_string()))?;
            ledger
                .step_update(arm, &rewards, &probs)
                .map_err(|e| ctx(e.to_string()))?;
            if agent.time() == end {
                agent.close_batch().map_err(|e| ctx(e.to_string()))?;
                ledger
                    .close_batch(end, agent.posteriors())
                    .map_err(|e| ctx(e.to_string()))?;
            }
            ledger.checkpoint_if_due();
        }
    }

    ledger.finish().map_err(|e| ctx(e.to_string()))?;
    let diagnostics = compute_diagnostics(&ledger, env.gaps());
    let growth = growth_diagnostic(agent.batch_endpoints());
    let boundaries = ledger.boundaries();
    let final_opt_prob = boundaries
        .last()
        .and_then(|b| b.log_probs.as_ref())
        .map(|lp| lp[0].exp());

    Ok(ReplicateResult {
        replicate,
        rows: ledger.rows().to_vec(),
        final_state: FinalState {
            time: ledger.time(),
            random_regret: ledger.random_regret(),
            per_arm_regret: ledger.per_arm_regret().to_vec(),
            pseudo_regret: ledger.pseudo_regret(),
            pull_counts: ledger.pull_counts().to_vec(),
            effort: ledger.effort(),
            batch_count: ledger.batch_count(),
            final_opt_prob,
        },
        boundaries,
        growth: GrowthSummary {
            verdict: growth.verdict,
            running_sup_tail: growth.running_sup_tail,
        },
        diagnostics,
    })
}

/// Runs every replicate (in parallel when `workers` allows), aggregates in
/// replicate order and, if the config names an output directory, writes
/// the result files there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AggregateResult, HarnessError> {
    let env = cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let replicates: Vec<ReplicateResult> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, &env, r))
            .collect::<Result<_, _>>()
    })?;
    let result = aggregate(cfg, &env, replicates);
    if let Some(dir) = &cfg.output {
        emit_outputs(&result, dir)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batching::ScheduleSpec;
    use crate::env::ArmKind;
    use crate::harness::config::CheckpointGrid;

    fn cfg(arms: Vec<ArmKind>, schedule: ScheduleSpec, horizon: u64) -> ExperimentConfig {
        ExperimentConfig {
            arms,
            algorithm: Default::default(),
            schedule,
            horizon,
            replicates: 1,
            master_seed: 11,
            checkpoints: CheckpointGrid::Explicit {
                points: (1..=horizon).collect(),
            },
            prob_method: Default::default(),
            output: None,
            workers: Some(1),
        }
    }

    #[test]
    fn zero_variance_pseudo_regret_tracks_arm_two_pulls() {
        let arms = vec![
            ArmKind::Gaussian {
                mean: 1.0,
                variance: 0.0,
            },
            ArmKind::Gaussian {
                mean: 0.0,
                variance: 0.0,
            },
        ];
        let c = cfg(arms, ScheduleSpec::PerStep, 200);
        let env = c.validate().unwrap();
        let r = run_replicate(&c, &env, 0).unwrap();
        assert_eq!(r.rows.len(), 200);
        let mut prev = 0u64;
        for row in &r.rows {
            let n2 = row.pull_counts[1];
            assert_eq!(row.pseudo_regret, n2 as f64);
            assert_eq!(row.random_regret, n2 as f64);
            assert!(n2 - prev <= 1);
            prev = n2;
            assert_eq!(row.batches, row.t);
        }
    }

    #[test]
    fn ledger_invariants_hold_at_every_checkpoint() {
        let arms = vec![
            ArmKind::Gaussian {
                mean: 0.2,
                variance: 1.0,
            },
            ArmKind::Gaussian {
                mean: 0.5,
                variance: 1.0,
            },
            ArmKind::Bernoulli { p: 0.3 },
        ];
        let c = cfg(arms, ScheduleSpec::Polynomial { p: 1.5 }, 300);
        let env = c.validate().unwrap();
        let r = run_replicate(&c, &env, 3).unwrap();
        let endpoints: Vec<u64> = r.boundaries.iter().map(|b| b.endpoint).collect();
        for row in &r.rows {
            assert_eq!(row.pull_counts.iter().sum::<u64>(), row.t);
            let s: f64 = row.effort.iter().sum();
            assert!((s - row.t as f64).abs() < 1e-9);
            assert_eq!(
                row.batches,
                endpoints.iter().filter(|&&e| e <= row.t).count() as u64
            );
        }
        assert_eq!(r.final_state.time, 300);
        assert_eq!(
            r.final_state.random_regret,
            r.final_state.per_arm_regret[1..].iter().sum::<f64>()
        );
    }

    #[test]
    fn ipase_boundaries_are_annotated() {
        let arms = vec![ArmKind::Bernoulli { p: 0.9 }, ArmKind::Bernoulli { p: 0.1 }];
        let c = cfg(arms, ScheduleSpec::Ipase, 5000);
        let env = c.validate().unwrap();
        let r = run_replicate(&c, &env, 0).unwrap();
        assert_eq!(r.boundaries[0].endpoint, 2);
        let (last, rest) = r.boundaries.split_last().unwrap();
        assert_eq!(last.endpoint, 5000);
        assert!(last.next_batch_size.is_none());
        for w in rest.iter().zip(&r.boundaries[1..]) {
            assert_eq!(w.0.next_batch_size, Some(w.1.endpoint - w.0.endpoint));
            assert!(w.0.p2.is_some());
        }
    }
}
