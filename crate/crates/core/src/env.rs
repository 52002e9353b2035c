//! The hidden bandit environment: arm reward laws and reward generation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("gaussian arm needs a finite mean and finite nonnegative variance, got mean={mean}, variance={variance}")]
    InvalidGaussian { mean: f64, variance: f64 },
    #[error("bernoulli arm needs p in [0, 1], got {p}")]
    InvalidBernoulli { p: f64 },
    #[error("need at least two arms, got {0}")]
    TooFewArms(usize),
    #[error("the best mean {mean} is attained by arms {first} and {second}; exactly one optimal arm is required")]
    TiedOptimum {
        mean: f64,
        first: usize,
        second: usize,
    },
}

/// Reward law of one arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmKind {
    Gaussian { mean: f64, variance: f64 },
    Bernoulli { p: f64 },
}

impl ArmKind {
    pub fn mean(&self) -> f64 {
        match *self {
            ArmKind::Gaussian { mean, .. } => mean,
            ArmKind::Bernoulli { p } => p,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ArmKind::Gaussian { variance, .. } => variance,
            ArmKind::Bernoulli { p } => p * (1.0 - p),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        match *self {
            ArmKind::Gaussian { mean, variance } => {
                if mean.is_finite() && variance.is_finite() && variance >= 0.0 {
                    Ok(())
                } else {
                    Err(EnvError::InvalidGaussian { mean, variance })
                }
            }
            ArmKind::Bernoulli { p } => {
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(EnvError::InvalidBernoulli { p })
                }
            }
        }
    }
}

/// One arm of the environment. `index` is the 1-based label the user gave
/// the arm, kept for reporting after internal reordering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub kind: ArmKind,
    pub index: usize,
}

impl ArmModel {
    pub fn new(kind: ArmKind, index: usize) -> Result<Self, EnvError> {
        kind.validate()?;
        Ok(ArmModel { kind, index })
    }

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self, EnvError> {
        Self::new(ArmKind::Gaussian { mean, variance }, 1)
    }

    pub fn bernoulli(p: f64) -> Result<Self, EnvError> {
        Self::new(ArmKind::Bernoulli { p }, 1)
    }

    pub fn mean(&self) -> f64 {
        self.kind.mean()
    }
}

/// Draws one reward from `arm`, advancing `rng`.
pub fn draw_reward(arm: &ArmModel, rng: &mut RngStream) -> f64 {
    match arm.kind {
        ArmKind::Gaussian { mean, variance } => {
            let z: f64 = rng.sample(StandardNormal);
            mean + variance.sqrt() * z
        }
        ArmKind::Bernoulli { p } => {
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// A validated set of arms, reordered so that the unique optimal arm sits at
/// internal position 0. The other arms keep their relative input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    arms: Vec<ArmModel>,
    gaps: Vec<f64>,
    optimal_label: usize,
}

impl Environment {
    pub fn new(kinds: &[ArmKind]) -> Result<Self, EnvError> {
        if kinds.len() < 2 {
            return Err(EnvError::TooFewArms(kinds.len()));
        }
        let mut arms = kinds
            .iter()
            .enumerate()
            .map(|(i, k)| ArmModel::new(*k, i + 1))
            .collect::<Result<Vec<_>, _>>()?;

        let mut best = 0;
        for i in 1..arms.len() {
            if arms[i].mean() > arms[best].mean() {
                best = i;
            }
        }
        if let Some(tie) =
            (0..arms.len()).find(|&i| i != best && arms[i].mean() == arms[best].mean())
        {
            let (first, second) = (best.min(tie) + 1, best.max(tie) + 1);
            return Err(EnvError::TiedOptimum {
                mean: arms[best].mean(),
                first,
                second,
            });
        }

        let optimal = arms.remove(best);
        arms.insert(0, optimal);
        let top = optimal.mean();
        let gaps = arms.iter().map(|a| top - a.mean()).collect();
        Ok(Environment {
            arms,
            gaps,
            optimal_label: optimal.index,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    /// Arms in internal order (optimal first).
    pub fn arms(&self) -> &[ArmModel] {
        &self.arms
    }

    /// Suboptimality gaps in internal order; `gaps()[0] == 0`.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// User-facing 1-based label of the optimal arm.
    pub fn optimal_label(&self) -> usize {
        self.optimal_label
    }

    /// User-facing labels in internal order.
    pub fn labels(&self) -> Vec<usize> {
        self.arms.iter().map(|a| a.index).collect()
    }

    /// One fresh draw per arm, written into `out` in internal order.
    pub fn draw_all_rewards_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.arms.len());
        for (slot, arm) in out.iter_mut().zip(&self.arms) {
            *slot = draw_reward(arm, rng);
        }
    }

    pub fn draw_all_rewards(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut out = vec![0.0; self.arms.len()];
        self.draw_all_rewards_into(rng, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    fn stream() -> RngStream {
        RngStream::for_replicate(2024, 0, Purpose::Rewards)
    }

    #[test]
    fn degenerate_bernoulli() {
        let mut rng = stream();
        let one = ArmModel::bernoulli(1.0).unwrap();
        let zero = ArmModel::bernoulli(0.0).unwrap();
        for _ in 0..10_000 {
            assert_eq!(draw_reward(&one, &mut rng), 1.0);
            assert_eq!(draw_reward(&zero, &mut rng), 0.0);
        }
    }

    #[test]
    fn zero_variance_gaussian_is_exact() {
        let mut rng = stream();
        let arm = ArmModel::gaussian(0.5, 0.0).unwrap();
        let n = 10_000;
        let sum: f64 = (0..n).map(|_| draw_reward(&arm, &mut rng)).sum();
        assert_eq!(sum / n as f64, 0.5);
    }

    #[test]
    fn bernoulli_sample_mean_within_clt_bound() {
        let mut rng = stream();
        let arm = ArmModel::bernoulli(0.9).unwrap();
        let n = 100_000;
        let mean = (0..n).map(|_| draw_reward(&arm, &mut rng)).sum::<f64>() / n as f64;
        let bound = 3.0 * (0.09f64 / n as f64).sqrt();
        assert!((mean - 0.9).abs() <= bound, "mean {mean}, bound {bound}");
    }

    #[test]
    fn mean_and_variance_within_five_standard_errors() {
        let n = 1_000_000usize;
        for kind in [
            ArmKind::Gaussian {
                mean: -0.3,
                variance: 2.0,
            },
            ArmKind::Bernoulli { p: 0.3 },
        ] {
            let arm = ArmModel::new(kind, 1).unwrap();
            let mut rng = stream();
            let xs: Vec<f64> = (0..n).map(|_| draw_reward(&arm, &mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = (kind.variance() / n as f64).sqrt();
            assert!(
                (m - kind.mean()).abs() <= 5.0 * se_mean,
                "{kind:?}: mean {m}"
            );
            // Var(sample variance) ~ (m4 - sigma^4) / n
            let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
            let se_var = ((m4 - v * v) / n as f64).sqrt();
            assert!(
                (v - kind.variance()).abs() <= 5.0 * se_var,
                "{kind:?}: var {v}"
            );
        }
    }

    #[test]
    fn lag_one_autocorrelation_is_small() {
        let n = 100_000;
        let arm = ArmModel::gaussian(1.0, 1.0).unwrap();
        let mut rng = stream();
        let xs: Vec<f64> = (0..n).map(|_| draw_reward(&arm, &mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let den: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
        let rho = num / den;
        assert!(rho.abs() <= 4.0 / (n as f64).sqrt(), "rho = {rho}");
    }

    #[test]
    fn all_rewards_degenerate_cases() {
        let mut rng = stream();
        // Identical arms cannot form an Environment (no unique optimum), so
        // draw the all-ones vector arm by arm.
        let ones = [ArmModel::bernoulli(1.0).unwrap(); 3];
        for _ in 0..100 {
            let v: Vec<f64> = ones.iter().map(|a| draw_reward(a, &mut rng)).collect();
            assert_eq!(v, vec![1.0; 3]);
        }
        let env = Environment::new(&[
            ArmKind::Gaussian {
                mean: 1.0,
                variance: 0.0,
            },
            ArmKind::Gaussian {
                mean: 0.0,
                variance: 0.0,
            },
        ])
        .unwrap();
        for _ in 0..100 {
            assert_eq!(env.draw_all_rewards(&mut rng), vec![1.0, 0.0]);
        }
    }

    #[test]
    fn all_rewards_coordinates_uncorrelated() {
        let mut rng = stream();
        let env = Environment::new(&[ArmKind::Bernoulli { p: 0.9 }, ArmKind::Bernoulli { p: 0.1 }])
            .unwrap();
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| env.draw_all_rewards(&mut rng)).collect();
        let mean = |k: usize| draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
        let (m0, m1) = (mean(0), mean(1));
        let cov: f64 = draws.iter().map(|d| (d[0] - m0) * (d[1] - m1)).sum();
        let v0: f64 = draws.iter().map(|d| (d[0] - m0).powi(2)).sum();
        let v1: f64 = draws.iter().map(|d| (d[1] - m1).powi(2)).sum();
        let corr = cov / (v0 * v1).sqrt();
        assert!(corr.abs() <= 0.01, "corr = {corr}");
    }

    #[test]
    fn optimal_arm_moves_to_front() {
        let env = Environment::new(&[
            ArmKind::Bernoulli { p: 0.2 },
            ArmKind::Bernoulli { p: 0.7 },
            ArmKind::Bernoulli { p: 0.5 },
        ])
        .unwrap();
        assert_eq!(env.labels(), vec![2, 1, 3]);
        assert_eq!(env.optimal_label(), 2);
        assert_eq!(env.gaps()[0], 0.0);
        assert!(env.gaps()[1..].iter().all(|&g| g > 0.0));
        assert!((env.gaps()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_arms() {
        assert_eq!(
            Environment::new(&[ArmKind::Bernoulli { p: 0.5 }]),
            Err(EnvError::TooFewArms(1))
        );
        assert!(matches!(
            Environment::new(&[ArmKind::Bernoulli { p: 0.5 }, ArmKind::Bernoulli { p: 0.5 }]),
            Err(EnvError::TiedOptimum {
                first: 1,
                second: 2,
                ..
            })
        ));
        assert!(ArmModel::bernoulli(1.5).is_err());
        assert!(ArmModel::gaussian(0.0, -1.0).is_err());
        assert!(ArmModel::gaussian(f64::NAN, 1.0).is_err());
        assert!(ArmModel::gaussian(0.0, f64::INFINITY).is_err());
    }
}
