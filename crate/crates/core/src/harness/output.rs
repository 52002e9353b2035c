//! Aggregation over replicates and the on-disk result layout:
//! `aggregate.csv`, `replicates.json` and `metadata.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::ReplicateResult;
use super::HarnessError;
use crate::argmaxprob::{ProbMethod, ProbRoute};
use crate::batching::{GrowthVerdict, ScheduleSpec};
use crate::env::Environment;
use crate::metrics::LOG_BASE;

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const REPLICATES_FILE: &str = "replicates.json";
pub const METADATA_FILE: &str = "metadata.json";

pub const CSV_HEADER: [&str; 7] = [
    "checkpoint_t",
    "mean_random_regret",
    "se_random_regret",
    "mean_pseudo_regret",
    "se_pseudo_regret",
    "mean_batches",
    "se_batches",
];

/// Mean and standard error over replicates at one checkpoint. Standard
/// errors are absent with a single replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub checkpoint_t: u64,
    pub mean_random_regret: f64,
    pub se_random_regret: Option<f64>,
    pub mean_pseudo_regret: f64,
    pub se_pseudo_regret: Option<f64>,
    pub mean_batches: f64,
    pub se_batches: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngInfo {
    pub generator: String,
    pub master_seed: u64,
    /// How a replicate's streams are keyed.
    pub streams: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub version: String,
    pub log_base: String,
    /// Route used for batch-size decisions, if the schedule makes any.
    pub policy_prob_method: Option<ProbMethod>,
    /// Route used for the per-step selection probabilities.
    pub effort_prob_route: ProbRoute,
    pub replicates: u64,
    pub standard_errors: bool,
    pub rng: RngInfo,
    /// Original 1-based label of each arm, in internal order (optimal first).
    pub arm_labels: Vec<usize>,
    /// Gaps `mu_1 - mu_i` in internal order.
    pub gaps: Vec<f64>,
}

/// Means of per-replicate end-of-run quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub horizon: u64,
    pub mean_random_regret: f64,
    pub mean_pseudo_regret: f64,
    pub mean_batches: f64,
    pub mean_pull_counts: Vec<f64>,
    pub mean_effort: Vec<f64>,
    pub growth_verdicts: Vec<(GrowthVerdict, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub metadata: Metadata,
    pub rows: Vec<AggregateRow>,
    pub summary: RunSummary,
    pub replicates: Vec<ReplicateResult>,
}

/// Arithmetic mean and sample standard error, folded in slice order.
pub fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, Some((ss / (n - 1.0)).sqrt() / n.sqrt()))
}

fn metadata(cfg: &ExperimentConfig, env: &Environment) -> Metadata {
    let n = env.num_arms();
    Metadata {
        config: cfg.canonical(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        log_base: LOG_BASE.to_string(),
        policy_prob_method: (cfg.schedule == ScheduleSpec::Ipase).then(|| cfg.prob_method.resolve(n)),
        effort_prob_route: if n == 2 {
            ProbRoute::ClosedForm2
        } else {
            ProbRoute::Quadrature
        },
        replicates: cfg.replicates,
        standard_errors: cfg.replicates >= 2,
        rng: RngInfo {
            generator: "chacha8".to_string(),
            master_seed: cfg.master_seed,
            streams: "key from splitmix64(master_seed); stream = 4 * replicate + purpose (rewards 0, thompson 1, monte_carlo 2)"
                .to_string(),
        },
        arm_labels: env.labels(),
        gaps: env.gaps().to_vec(),
    }
}

/// Folds replicate results, which must be in replicate order.
pub fn aggregate(
    cfg: &ExperimentConfig,
    env: &Environment,
    replicates: Vec<ReplicateResult>,
) -> AggregateResult {
    let meta = metadata(cfg, env);
    let n_rows = replicates.first().map_or(0, |r| r.rows.len());
    let column = |i: usize, f: &dyn Fn(&crate::metrics::CheckpointRow) -> f64| -> Vec<f64> {
        replicates.iter().map(|r| f(&r.rows[i])).collect()
    };
    let rows = (0..n_rows)
        .map(|i| {
            let (mr, sr) = mean_se(&column(i, &|r| r.random_regret));
            let (mp, sp) = mean_se(&column(i, &|r| r.pseudo_regret));
            let (mb, sb) = mean_se(&column(i, &|r| r.batches as f64));
            AggregateRow {
                checkpoint_t: replicates[0].rows[i].t,
                mean_random_regret: mr,
                se_random_regret: sr,
                mean_pseudo_regret: mp,
                se_pseudo_regret: sp,
                mean_batches: mb,
                se_batches: sb,
            }
        })
        .collect();

    let finals = |f: &dyn Fn(&ReplicateResult) -> f64| {
        mean_se(&replicates.iter().map(f).collect::<Vec<_>>()).0
    };
    let arms = env.num_arms();
    let mut growth_verdicts: Vec<(GrowthVerdict, u64)> = Vec::new();
    for r in &replicates {
        match growth_verdicts
            .iter_mut()
            .find(|(v, _)| *v == r.growth.verdict)
        {
            Some((_, c)) => *c += 1,
            None => growth_verdicts.push((r.growth.verdict, 1)),
        }
    }
    let summary = RunSummary {
        horizon: cfg.horizon,
        mean_random_regret: finals(&|r| r.final_state.random_regret),
        mean_pseudo_regret: finals(&|r| r.final_state.pseudo_regret),
        mean_batches: finals(&|r| r.final_state.batch_count as f64),
        mean_pull_counts: (0..arms)
            .map(|i| finals(&|r| r.final_state.pull_counts[i] as f64))
            .collect(),
        mean_effort: (0..arms)
            .map(|i| finals(&|r| r.final_state.effort[i]))
            .collect(),
        growth_verdicts,
    };

    AggregateResult {
        metadata: meta,
        rows,
        summary,
        replicates,
    }
}

/// The aggregate table as CSV text; the header is always present.
pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<String, HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let fail = |e: csv::Error| HarnessError::Format {
        path: AGGREGATE_FILE.into(),
        message: e.to_string(),
    };
    w.write_record(CSV_HEADER).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Format {
        path: AGGREGATE_FILE.into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write(dir: &Path, name: &str, contents: &[u8]) -> Result<(), HarnessError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))
}

/// Writes the three result files into `dir`, creating it if needed.
pub fn emit_outputs(result: &AggregateResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write(dir, AGGREGATE_FILE, aggregate_csv(&result.rows)?.as_bytes())?;
    let mut replicates = serde_json::to_vec(&result.replicates).expect("replicates serialize");
    replicates.push(b'\n');
    write(dir, REPLICATES_FILE, &replicates)?;
    let mut meta = serde_json::to_vec_pretty(&result.metadata).expect("metadata serializes");
    meta.push(b'\n');
    write(dir, METADATA_FILE, &meta)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T, HarnessError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path,
        message: e.to_string(),
    })
}

/// Reads a result directory back and re-aggregates it.
pub fn load_result(dir: &Path) -> Result<AggregateResult, HarnessError> {
    let meta: Metadata = read_json(dir, METADATA_FILE)?;
    let replicates: Vec<ReplicateResult> = read_json(dir, REPLICATES_FILE)?;
    let env = meta.config.validate()?;
    if replicates.len() as u64 != meta.replicates {
        return Err(HarnessError::Format {
            path: dir.join(REPLICATES_FILE),
            message: format!(
                "expected {} replicates, found {}",
                meta.replicates,
                replicates.len()
            ),
        });
    }
    Ok(aggregate(&meta.config, &env, replicates))
}
