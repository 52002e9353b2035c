//! Experiment configuration: a JSON document plus command-line overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::argmaxprob::ProbMethod;
use crate::batching::ScheduleSpec;
use crate::env::{ArmKind, Environment};
use crate::metrics::{geometric_checkpoints, DEFAULT_CHECKPOINT_RATIO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Thompson,
}

/// Where per-replicate rows are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointGrid {
    /// `{ceil(ratio^k)} ∩ [1, T]` plus `T`.
    Geometric {
        ratio: f64,
    },
    Explicit {
        points: Vec<u64>,
    },
}

impl Default for CheckpointGrid {
    fn default() -> Self {
        CheckpointGrid::Geometric {
            ratio: DEFAULT_CHECKPOINT_RATIO,
        }
    }
}

impl CheckpointGrid {
    pub fn points(&self, horizon: u64) -> Vec<u64> {
        match self {
            CheckpointGrid::Geometric { ratio } => geometric_checkpoints(horizon, *ratio),
            CheckpointGrid::Explicit { points } => {
                let mut p: Vec<u64> = points
                    .iter()
                    .copied()
                    .filter(|&t| t >= 1 && t <= horizon)
                    .collect();
                p.sort_unstable();
                p.dedup();
                p
            }
        }
    }
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arms: Vec<ArmKind>,
    #[serde(default)]
    pub algorithm: Algorithm,
    pub schedule: ScheduleSpec,
    pub horizon: u64,
    #[serde(default = "one")]
    pub replicates: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub checkpoints: CheckpointGrid,
    /// Route for policy decisions (the iPASE `P2`). Measurement effort is
    /// always accumulated from exact probabilities.
    #[serde(default)]
    pub prob_method: ProbMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// Command-line replacements for config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub horizon: Option<u64>,
    pub replicates: Option<u64>,
    pub master_seed: Option<u64>,
    pub schedule: Option<ScheduleSpec>,
    pub arms: Option<Vec<ArmKind>>,
    pub prob_method: Option<ProbMethod>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.horizon {
            self.horizon = v;
        }
        if let Some(v) = o.replicates {
            self.replicates = v;
        }
        if let Some(v) = o.master_seed {
            self.master_seed = v;
        }
        if let Some(v) = o.schedule {
            self.schedule = v;
        }
        if let Some(v) = o.arms {
            self.arms = v;
        }
        if let Some(v) = o.prob_method {
            self.prob_method = v;
        }
        if let Some(v) = o.output {
            self.output = Some(v);
        }
        if let Some(v) = o.workers {
            self.workers = Some(v);
        }
    }

    /// Checks the config and builds its environment.
    pub fn validate(&self) -> Result<Environment, HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let CheckpointGrid::Geometric { ratio } = self.checkpoints {
            if !(ratio > 1.0 && ratio.is_finite()) {
                return bad(format!("checkpoint ratio must exceed 1, got {ratio}"));
            }
        }
        self.schedule
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let env = Environment::new(&self.arms).map_err(|e| HarnessError::Config(e.to_string()))?;
        self.prob_method
            .validate(env.num_arms())
            .map_err(|e| HarnessError::Config(format!("prob method {}: {e}", self.prob_method)))?;
        Ok(env)
    }

    /// The config without run-local fields (output path, worker count).
    pub fn canonical(&self) -> ExperimentConfig {
        ExperimentConfig {
            output: None,
            workers: None,
            ..self.clone()
        }
    }

    /// Hex SHA-256 of the canonical config's JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.canonical()).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Parses `bern:P` and `gauss:MEAN[:VAR]` items separated by commas.
pub fn parse_arms(s: &str) -> Result<Vec<ArmKind>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|item| !item.is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.split(':').collect();
            let num = |x: &str| {
                x.parse::<f64>()
                    .map_err(|_| format!("bad number `{x}` in arm `{item}`"))
            };
            let arm = match parts.as_slice() {
                ["bern" | "bernoulli", p] => ArmKind::Bernoulli { p: num(p)? },
                ["gauss" | "gaussian", m] => ArmKind::Gaussian {
                    mean: num(m)?,
                    variance: 1.0,
                },
                ["gauss" | "gaussian", m, v] => ArmKind::Gaussian {
                    mean: num(m)?,
                    variance: num(v)?,
                },
                _ => {
                    return Err(format!(
                        "unrecognised arm `{item}`; expected bern:P or gauss:MEAN[:VAR]"
                    ))
                }
            };
            arm.validate().map_err(|e| e.to_string())?;
            Ok(arm)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = r#"{
        "arms": [{"kind": "bernoulli", "p": 0.9}, {"kind": "bernoulli", "p": 0.1}],
        "schedule": {"kind": "ipase"},
        "horizon": 100000,
        "replicates": 400,
        "master_seed": 7,
        "prob_method": {"route": "monte_carlo", "samples": 100000}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(FIG).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Thompson);
        assert_eq!(cfg.checkpoints, CheckpointGrid::Geometric { ratio: 1.2 });
        assert_eq!(cfg.prob_method, ProbMethod::MonteCarlo { samples: 100_000 });
        assert_eq!(cfg.schedule, ScheduleSpec::Ipase);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(ExperimentConfig::from_json(
            r#"{"arms": [], "schedule": {"kind": "per_step"}, "horizon": 1, "bogus": 1}"#
        )
        .is_err());
        let mut cfg = ExperimentConfig::from_json(FIG).unwrap();
        cfg.horizon = 0;
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        let mut cfg = ExperimentConfig::from_json(FIG).unwrap();
        cfg.arms.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(FIG).unwrap();
        cfg.arms.push(ArmKind::Bernoulli { p: 0.5 });
        cfg.prob_method = ProbMethod::ClosedForm;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides_and_hash() {
        let base = ExperimentConfig::from_json(FIG).unwrap();
        let mut cfg = base.clone();
        cfg.apply(Overrides {
            output: Some("somewhere".into()),
            workers: Some(3),
            ..Default::default()
        });
        assert_eq!(cfg.hash(), base.hash());
        cfg.apply(Overrides {
            horizon: Some(10),
            ..Default::default()
        });
        assert_ne!(cfg.hash(), base.hash());
        assert_eq!(base.hash().len(), 64);
    }

    #[test]
    fn arm_syntax() {
        assert_eq!(
            parse_arms("bern:0.9, gauss:1:2,gauss:0").unwrap(),
            vec![
                ArmKind::Bernoulli { p: 0.9 },
                ArmKind::Gaussian {
                    mean: 1.0,
                    variance: 2.0
                },
                ArmKind::Gaussian {
                    mean: 0.0,
                    variance: 1.0
                },
            ]
        );
        assert!(parse_arms("bern:1.5").is_err());
        assert!(parse_arms("poisson:3").is_err());
    }

    #[test]
    fn explicit_grid_may_be_empty() {
        assert!(CheckpointGrid::Explicit { points: vec![] }
            .points(10)
            .is_empty());
        assert_eq!(
            CheckpointGrid::Explicit {
                points: vec![20, 5, 5, 0]
            }
            .points(10),
            vec![5]
        );
    }
}
