//! Side-by-side comparison of runs on the same environment and horizon.

use std::fmt;

use serde::Serialize;

use super::output::AggregateResult;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub checkpoint_t: u64,
    pub mean_random_regret: Vec<f64>,
    pub mean_pseudo_regret: Vec<f64>,
    pub mean_batches: Vec<f64>,
    /// Mean random regret of each run divided by that of the first run.
    pub regret_ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// Schedule of each run, with its decision route if it has one.
    pub labels: Vec<String>,
    pub horizon: u64,
    pub final_mean_batches: Vec<f64>,
    pub final_mean_regret: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

/// `a / b`, defined as 1 when the two are equal (including both zero).
pub fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

fn label(r: &AggregateResult) -> String {
    let schedule = r.metadata.config.schedule.to_string();
    match r.metadata.policy_prob_method {
        Some(m) => format!("{schedule} ({m})"),
        None => schedule,
    }
}

pub fn compare_runs(results: &[AggregateResult]) -> Result<Comparison, HarnessError> {
    let base = results
        .first()
        .ok_or_else(|| HarnessError::Mismatch("nothing to compare".into()))?;
    let base_cfg = &base.metadata.config;
    let grid: Vec<u64> = base.rows.iter().map(|r| r.checkpoint_t).collect();
    for (k, r) in results.iter().enumerate().skip(1) {
        let cfg = &r.metadata.config;
        if cfg.arms != base_cfg.arms {
            return Err(HarnessError::Mismatch(format!(
                "run {k} uses different arms from run 0"
            )));
        }
        if cfg.horizon != base_cfg.horizon {
            return Err(HarnessError::Mismatch(format!(
                "run {k} has horizon {} but run 0 has {}",
                cfg.horizon, base_cfg.horizon
            )));
        }
        if r.rows
            .iter()
            .map(|r| r.checkpoint_t)
            .ne(grid.iter().copied())
        {
            return Err(HarnessError::Mismatch(format!(
                "run {k} has a different checkpoint grid from run 0"
            )));
        }
    }

    let rows = base
        .rows
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let col = |f: fn(&super::output::AggregateRow) -> f64| {
                results.iter().map(|r| f(&r.rows[i])).collect::<Vec<_>>()
            };
            ComparisonRow {
                checkpoint_t: b.checkpoint_t,
                mean_random_regret: col(|r| r.mean_random_regret),
                mean_pseudo_regret: col(|r| r.mean_pseudo_regret),
                mean_batches: col(|r| r.mean_batches),
                regret_ratio: results
                    .iter()
                    .map(|r| ratio(r.rows[i].mean_random_regret, b.mean_random_regret))
                    .collect(),
            }
        })
        .collect();

    Ok(Comparison {
        labels: results.iter().map(label).collect(),
        horizon: base_cfg.horizon,
        final_mean_batches: results.iter().map(|r| r.summary.mean_batches).collect(),
        final_mean_regret: results
            .iter()
            .map(|r| r.summary.mean_random_regret)
            .collect(),
        rows,
    })
}

impl Comparison {
    /// Plot-ready CSV with one column group per run.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| HarnessError::Format {
            path: "comparison.csv".into(),
            message: e.to_string(),
        };
        let mut header = vec!["checkpoint_t".to_string()];
        for k in 0..self.labels.len() {
            for col in [
                "mean_random_regret",
                "mean_pseudo_regret",
                "mean_batches",
                "regret_ratio",
            ] {
                header.push(format!("run{k}_{col}"));
            }
        }
        w.write_record(&header).map_err(fail)?;
        for row in &self.rows {
            let mut rec = vec![row.checkpoint_t.to_string()];
            for k in 0..self.labels.len() {
                rec.push(row.mean_random_regret[k].to_string());
                rec.push(row.mean_pseudo_regret[k].to_string());
                rec.push(row.mean_batches[k].to_string());
                rec.push(row.regret_ratio[k].to_string());
            }
            w.write_record(&rec).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Format {
            path: "comparison.csv".into(),
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "horizon {}", self.horizon)?;
        writeln!(
            f,
            "{:<4} {:<30} {:>16} {:>14} {:>12}",
            "run", "schedule", "mean regret", "mean batches", "regret/run0"
        )?;
        let last = self.rows.last();
        for (k, label) in self.labels.iter().enumerate() {
            let r = last.map_or(f64::NAN, |row| row.regret_ratio[k]);
            writeln!(
                f,
                "{:<4} {:<30} {:>16.4} {:>14.2} {:>12.4}",
                k, label, self.final_mean_regret[k], self.final_mean_batches[k], r
            )?;
        }
        Ok(())
    }
}
