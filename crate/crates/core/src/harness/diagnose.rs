//! Ratio tables against the asymptotic targets, and the iPASE audit.

use std::fmt;

use serde::Serialize;

use super::output::{mean_se, AggregateResult};
use super::run::ReplicateResult;
use crate::argmaxprob::ProbMethod;
use crate::batching::{estimate_p2, ipase_batch_size, GrowthVerdict, ScheduleSpec};
use crate::metrics::Targets;
use crate::rng::{Purpose, RngStream};

/// Boundaries averaged over for the effort-rate ratio.
pub const EFFORT_RATE_TAIL: usize = 10;

/// Mean of the available `-ln P / S` ratios of arm `arm` over the final
/// `tail` boundaries of a replicate.
pub fn effort_rate_tail_mean(rep: &ReplicateResult, arm: usize, tail: usize) -> Option<f64> {
    let series = rep.diagnostics.effort_rate.iter().find(|s| s.arm == arm)?;
    let start = series.points.len().saturating_sub(tail);
    let vals: Vec<f64> = series.points[start..].iter().filter_map(|p| p.1).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmDiagnostics {
    pub arm_label: usize,
    pub gap: f64,
    pub effort_rate_target: f64,
    pub effort_rate_mean: Option<f64>,
    pub effort_rate_unavailable: u64,
    pub effort_ratio_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditViolation {
    pub replicate: u64,
    pub batch: usize,
    pub endpoint: u64,
    pub expected_size: u64,
    pub actual_size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub checked: u64,
    pub violations: Vec<AuditViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub horizon: u64,
    pub replicates: u64,
    pub targets: Targets,
    pub regret_slope: f64,
    pub pseudo_slope: f64,
    pub batch_slope: f64,
    pub arms: Vec<ArmDiagnostics>,
    pub opt_prob_above_0999: f64,
    pub growth_verdicts: Vec<(GrowthVerdict, u64)>,
    pub ipase_audit: Option<AuditReport>,
}

/// Re-derives every logged iPASE batch size. Exact routes recompute `P2`
/// from the logged snapshot; Monte Carlo decisions are checked against the
/// logged estimate.
pub fn audit_ipase(result: &AggregateResult) -> Option<AuditReport> {
    let cfg = &result.metadata.config;
    if cfg.schedule != ScheduleSpec::Ipase {
        return None;
    }
    let num_arms = cfg.arms.len() as u64;
    let mut rng = RngStream::for_replicate(cfg.master_seed, 0, Purpose::MonteCarlo);
    let mut report = AuditReport {
        checked: 0,
        violations: Vec::new(),
    };
    for rep in &result.replicates {
        if let Some(first) = rep.boundaries.first() {
            report.checked += 1;
            let expected = num_arms.min(cfg.horizon);
            if first.batch == 1 && first.endpoint != expected {
                report.violations.push(AuditViolation {
                    replicate: rep.replicate,
                    batch: 1,
                    endpoint: 0,
                    expected_size: expected,
                    actual_size: first.endpoint,
                });
            }
        }
        for b in &rep.boundaries {
            let (Some(actual), Some(logged)) = (b.next_batch_size, b.p2) else {
                continue;
            };
            let est = match logged.method {
                ProbMethod::MonteCarlo { .. } => logged,
                method => match estimate_p2(&b.snapshot, method, &mut rng) {
                    Ok(e) => e,
                    Err(_) => logged,
                },
            };
            let expected = ipase_batch_size(&est, cfg.horizon - b.endpoint);
            report.checked += 1;
            if expected != actual {
                report.violations.push(AuditViolation {
                    replicate: rep.replicate,
                    batch: b.batch + 1,
                    endpoint: b.endpoint,
                    expected_size: expected,
                    actual_size: actual,
                });
            }
        }
    }
    Some(report)
}

pub fn diagnose(result: &AggregateResult) -> DiagnosticReport {
    let meta = &result.metadata;
    let reps = &result.replicates;
    let horizon = meta.config.horizon;
    let log_t = (horizon as f64).ln();
    let per_rep =
        |f: &dyn Fn(&ReplicateResult) -> f64| mean_se(&reps.iter().map(f).collect::<Vec<_>>()).0;

    let arms = (1..meta.gaps.len())
        .map(|i| {
            let tails: Vec<Option<f64>> = reps
                .iter()
                .map(|r| effort_rate_tail_mean(r, i, EFFORT_RATE_TAIL))
                .collect();
            let avail: Vec<f64> = tails.iter().flatten().copied().collect();
            let ratios: Vec<f64> = reps
                .iter()
                .filter_map(|r| r.diagnostics.effort_ratio.get(i).copied().flatten())
                .collect();
            ArmDiagnostics {
                arm_label: meta.arm_labels[i],
                gap: meta.gaps[i],
                effort_rate_target: meta.gaps[i] * meta.gaps[i] / 2.0,
                effort_rate_mean: (!avail.is_empty()).then(|| mean_se(&avail).0),
                effort_rate_unavailable: (tails.len() - avail.len()) as u64,
                effort_ratio_mean: (!ratios.is_empty()).then(|| mean_se(&ratios).0),
            }
        })
        .collect();

    let above = reps
        .iter()
        .filter(|r| r.final_state.final_opt_prob.is_some_and(|p| p > 0.999))
        .count();

    DiagnosticReport {
        horizon,
        replicates: reps.len() as u64,
        targets: Targets::from_gaps(&meta.gaps),
        regret_slope: per_rep(&|r| r.final_state.random_regret) / log_t,
        pseudo_slope: per_rep(&|r| r.final_state.pseudo_regret) / log_t,
        batch_slope: per_rep(&|r| r.final_state.batch_count as f64) / log_t,
        arms,
        opt_prob_above_0999: above as f64 / reps.len().max(1) as f64,
        growth_verdicts: result.summary.growth_verdicts.clone(),
        ipase_audit: audit_ipase(result),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl fmt::Display for DiagnosticReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "T = {}, {} replicates, natural log",
            self.horizon, self.replicates
        )?;
        writeln!(f, "{:<28} {:>12} {:>12}", "quantity", "measured", "target")?;
        writeln!(
            f,
            "{:<28} {:>12.4} {:>12.4}",
            "mean R(T) / ln T", self.regret_slope, self.targets.regret_slope
        )?;
        writeln!(
            f,
            "{:<28} {:>12.4} {:>12.4}",
            "mean pseudo-regret / ln T", self.pseudo_slope, self.targets.regret_slope
        )?;
        writeln!(
            f,
            "{:<28} {:>12.4} {:>12.4}",
            "mean B(T) / ln T (bound)", self.batch_slope, self.targets.batch_slope
        )?;
        for a in &self.arms {
            writeln!(
                f,
                "{:<28} {:>12} {:>12.4}",
                format!("arm {}: -ln P / S (last {EFFORT_RATE_TAIL})", a.arm_label),
                opt(a.effort_rate_mean),
                a.effort_rate_target
            )?;
            if a.effort_rate_unavailable > 0 {
                writeln!(
                    f,
                    "  ({} replicates had no usable ratio)",
                    a.effort_rate_unavailable
                )?;
            }
            writeln!(
                f,
                "{:<28} {:>12} {:>12.4}",
                format!("arm {}: N / S", a.arm_label),
                opt(a.effort_ratio_mean),
                1.0
            )?;
        }
        writeln!(
            f,
            "{:<28} {:>12.4}",
            "share with P(best) > 0.999", self.opt_prob_above_0999
        )?;
        let verdicts: Vec<String> = self
            .growth_verdicts
            .iter()
            .map(|(v, c)| format!("{v:?}: {c}").to_lowercase())
            .collect();
        writeln!(f, "batch growth: {}", verdicts.join(", "))?;
        if let Some(a) = &self.ipase_audit {
            writeln!(
                f,
                "ipase audit: {} decisions checked, {} violations",
                a.checked,
                a.violations.len()
            )?;
        }
        Ok(())
    }
}
