//! Probability that each of several independent Gaussians is the largest.
//!
//! Within a batch, Thompson sampling plays arm `i` exactly when its draw
//! `theta_i ~ N(mu_hat_i, sigma2_hat_i)` is the maximum, so these
//! probabilities are the batch's action distribution. Three routes are
//! provided: a closed form for two arms, adaptive quadrature for any number
//! of arms, and Monte Carlo. Log-probabilities are available for the
//! closed form and for quadrature and never pass through `exp`.

pub mod normal;
pub mod quadrature;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

pub use normal::{log_q, q_function};
pub use quadrature::QuadratureError;

/// Default absolute tolerance of the quadrature route.
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;
/// Default sample count of the Monte Carlo route.
pub const DEFAULT_MC_SAMPLES: u64 = 100_000;
/// Largest arm count for which `ProbMethod::Auto` still picks quadrature.
pub const AUTO_QUADRATURE_MAX_ARMS: usize = 8;

const ENVELOPE_SDS: f64 = 10.0;
const MAX_PANELS: usize = 4000;
const BREAK_OFFSETS: [f64; 9] = [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("means and variances differ in length ({means} vs {variances})")]
    LengthMismatch { means: usize, variances: usize },
    #[error("need at least two arms, got {0}")]
    TooFewArms(usize),
    #[error("variance at position {index} must be finite and positive, got {value}")]
    BadVariance { index: usize, value: f64 },
    #[error("mean at position {index} is not finite")]
    BadMean { index: usize },
    #[error("the closed form handles exactly two arms, got {0}")]
    ClosedFormArity(usize),
    #[error("monte carlo needs at least one sample")]
    NoSamples,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Means and variances of independent Gaussians, one per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianProfile {
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianProfile {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self, ProbError> {
        if means.len() != variances.len() {
            return Err(ProbError::LengthMismatch {
                means: means.len(),
                variances: variances.len(),
            });
        }
        if means.len() < 2 {
            return Err(ProbError::TooFewArms(means.len()));
        }
        if let Some(index) = means.iter().position(|m| !m.is_finite()) {
            return Err(ProbError::BadMean { index });
        }
        if let Some(index) = variances.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ProbError::BadVariance {
                index,
                value: variances[index],
            });
        }
        Ok(GaussianProfile { means, variances })
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn sds(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbRoute {
    ClosedForm2,
    Quadrature,
    MonteCarlo,
}

/// Selection probabilities with the route that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    pub probs: Vec<f64>,
    pub method: ProbRoute,
    pub mc_samples: Option<u64>,
    pub abs_error_estimate: f64,
}

/// `P(arm 2 is largest) = Q((m1 - m2) / sqrt(v1 + v2))` for two arms.
pub fn prob_two_arms(profile: &GaussianProfile) -> Result<ProbVector, ProbError> {
    let d = two_arm_standardized_gap(profile)?;
    Ok(ProbVector {
        probs: vec![q_function(-d), q_function(d)],
        method: ProbRoute::ClosedForm2,
        mc_samples: None,
        abs_error_estimate: 0.0,
    })
}

/// Log-space counterpart of [`prob_two_arms`].
pub fn log_prob_two_arms(profile: &GaussianProfile) -> Result<Vec<f64>, ProbError> {
    let d = two_arm_standardized_gap(profile)?;
    Ok(vec![log_q(-d), log_q(d)])
}

fn two_arm_standardized_gap(profile: &GaussianProfile) -> Result<f64, ProbError> {
    if profile.num_arms() != 2 {
        return Err(ProbError::ClosedFormArity(profile.num_arms()));
    }
    let (m, v) = (profile.means(), profile.variances());
    Ok((m[0] - m[1]) / (v[0] + v[1]).sqrt())
}

/// Evaluates `phi_i(x) * prod_{j != i} Phi_j(x)` for every `i`.
fn argmax_densities(
    means: &[f64],
    sds: &[f64],
    x: f64,
    cdf: &mut [f64],
    prefix: &mut [f64],
    out: &mut [f64],
) {
    let n = means.len();
    for j in 0..n {
        cdf[j] = normal::normal_cdf((x - means[j]) / sds[j]);
    }
    let mut acc = 1.0;
    for j in 0..n {
        prefix[j] = acc;
        acc *= cdf[j];
    }
    let mut suffix = 1.0;
    for i in (0..n).rev() {
        let z = (x - means[i]) / sds[i];
        out[i] = normal::normal_pdf(z) / sds[i] * prefix[i] * suffix;
        suffix *= cdf[i];
    }
}

/// Selection probabilities by adaptive quadrature of
/// `int phi_i(x) prod_{j != i} Phi_j(x) dx` over the envelope
/// `[min(m) - 10 max(sd), max(m) + 10 max(sd)]`.
pub fn prob_quadrature(profile: &GaussianProfile, tol: f64) -> Result<ProbVector, ProbError> {
    let n = profile.num_arms();
    let means = profile.means();
    let sds = profile.sds();
    let max_sd = sds.iter().copied().fold(0.0, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min) - ENVELOPE_SDS * max_sd;
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + ENVELOPE_SDS * max_sd;

    let mut breaks = vec![lo, hi];
    for (m, s) in means.iter().zip(&sds) {
        breaks.extend(
            BREAK_OFFSETS
                .iter()
                .map(|k| m + k * s)
                .filter(|x| *x > lo && *x < hi),
        );
    }

    let mut cdf = vec![0.0; n];
    let mut prefix = vec![0.0; n];
    let integral = quadrature::integrate(
        |x, out| argmax_densities(means, &sds, x, &mut cdf, &mut prefix, out),
        n,
        &breaks,
        tol,
        MAX_PANELS,
    )?;
    // Mass of any single arm's density outside the envelope is at most 2 Q(10).
    let truncation = 2.0 * q_function(ENVELOPE_SDS);
    let probs = integral.values.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    Ok(ProbVector {
        probs,
        method: ProbRoute::Quadrature,
        mc_samples: None,
        abs_error_estimate: integral.abs_error + truncation,
    })
}

/// Log selection probabilities by quadrature in a frame centred on the
/// peak of each log-integrand.
///
/// For arm `i`, `g(x) = ln phi_i(x) + sum_{j != i} ln Phi_j(x)` is concave
/// with `g'' <= -1/v_i`, so `exp(g - max g)` is dominated by a Gaussian of
/// standard deviation `sd_i` around the peak and the window of 12 `sd_i`
/// either side loses less than `e^-72` of relative mass.
pub fn log_prob_quadrature(profile: &GaussianProfile, rel_tol: f64) -> Result<Vec<f64>, ProbError> {
    let n = profile.num_arms();
    let means = profile.means();
    let sds = profile.sds();
    let max_sd = sds.iter().copied().fold(0.0, f64::max);
    let min_sd = sds.iter().copied().fold(f64::INFINITY, f64::min);
    let top = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let log_integrand = |x: f64| {
            let mut g = normal::log_normal_pdf((x - means[i]) / sds[i]) - sds[i].ln();
            for j in (0..n).filter(|&j| j != i) {
                g += normal::log_normal_cdf((x - means[j]) / sds[j]);
            }
            g
        };
        let slope = |x: f64| {
            let mut d = -(x - means[i]) / (sds[i] * sds[i]);
            for j in (0..n).filter(|&j| j != i) {
                d += normal::inverse_mills((x - means[j]) / sds[j]) / sds[j];
            }
            d
        };

        // g' >= 0 at m_i; march right until it turns negative, then bisect.
        let mut left = means[i];
        let mut right = top.max(means[i]) + ENVELOPE_SDS * max_sd;
        while slope(right) >= 0.0 {
            left = right;
            right += (right - means[i]).max(max_sd);
        }
        for _ in 0..200 {
            let mid = 0.5 * (left + right);
            if mid <= left || mid >= right {
                break;
            }
            if slope(mid) >= 0.0 {
                left = mid;
            } else {
                right = mid;
            }
        }
        let peak_x = 0.5 * (left + right);
        let peak = log_integrand(peak_x);

        let half = 12.0 * sds[i];
        let mut breaks = vec![peak_x - half, peak_x + half];
        for k in [0.0, 1.0, 2.0, 4.0, 8.0] {
            for s in [sds[i], min_sd] {
                for sign in [-1.0, 1.0] {
                    let x = peak_x + sign * k * s;
                    if x > peak_x - half && x < peak_x + half {
                        breaks.push(x);
                    }
                }
            }
        }
        let integral = quadrature::integrate(
            |x, o| o[0] = (log_integrand(x) - peak).exp(),
            1,
            &breaks,
            rel_tol * sds[i],
            MAX_PANELS,
        )?;
        out.push(peak + integral.values[0].ln());
    }
    Ok(out)
}

/// Selection frequencies of `n_samples` joint Gaussian draws; ties go to
/// the lowest index.
pub fn prob_monte_carlo(
    profile: &GaussianProfile,
    n_samples: u64,
    rng: &mut RngStream,
) -> Result<ProbVector, ProbError> {
    if n_samples == 0 {
        return Err(ProbError::NoSamples);
    }
    let n = profile.num_arms();
    let means = profile.means();
    let sds = profile.sds();
    let mut counts = vec![0u64; n];
    for _ in 0..n_samples {
        let mut best = 0;
        let mut best_theta = f64::NEG_INFINITY;
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let theta = means[i] + sds[i] * z;
            if theta > best_theta {
                best = i;
                best_theta = theta;
            }
        }
        counts[best] += 1;
    }
    let total = n_samples as f64;
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let abs_error_estimate = probs
        .iter()
        .map(|p| (p * (1.0 - p) / total).sqrt())
        .fold(0.0, f64::max);
    Ok(ProbVector {
        probs,
        method: ProbRoute::MonteCarlo,
        mc_samples: Some(n_samples),
        abs_error_estimate,
    })
}

/// Second-largest entry, counting duplicates (rank 2 of the descending sort).
pub fn second_largest_of(values: &[f64]) -> f64 {
    assert!(
        values.len() >= 2,
        "second_largest needs at least two entries"
    );
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[1]
}

pub fn second_largest(pv: &ProbVector) -> f64 {
    second_largest_of(&pv.probs)
}

/// High-precision selection probabilities: closed form for two arms,
/// quadrature otherwise.
pub fn exact_probs(profile: &GaussianProfile) -> Result<ProbVector, ProbError> {
    if profile.num_arms() == 2 {
        prob_two_arms(profile)
    } else {
        prob_quadrature(profile, DEFAULT_QUAD_TOL)
    }
}

/// Log-space counterpart of [`exact_probs`].
pub fn exact_log_probs(profile: &GaussianProfile) -> Result<Vec<f64>, ProbError> {
    if profile.num_arms() == 2 {
        log_prob_two_arms(profile)
    } else {
        log_prob_quadrature(profile, 1e-12)
    }
}

/// How selection probabilities are computed for a policy decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "route", rename_all = "snake_case")]
pub enum ProbMethod {
    /// Closed form for two arms, quadrature up to eight arms, Monte Carlo beyond.
    #[default]
    Auto,
    ClosedForm,
    Quadrature {
        tol: f64,
    },
    MonteCarlo {
        samples: u64,
    },
}

impl ProbMethod {
    /// Replaces `Auto` with the concrete route for `num_arms` arms.
    pub fn resolve(self, num_arms: usize) -> ProbMethod {
        match self {
            ProbMethod::Auto if num_arms == 2 => ProbMethod::ClosedForm,
            ProbMethod::Auto if num_arms <= AUTO_QUADRATURE_MAX_ARMS => ProbMethod::Quadrature {
                tol: DEFAULT_QUAD_TOL,
            },
            ProbMethod::Auto => ProbMethod::MonteCarlo {
                samples: DEFAULT_MC_SAMPLES,
            },
            other => other,
        }
    }

    pub fn validate(self, num_arms: usize) -> Result<(), ProbError> {
        match self.resolve(num_arms) {
            ProbMethod::ClosedForm if num_arms != 2 => Err(ProbError::ClosedFormArity(num_arms)),
            ProbMethod::MonteCarlo { samples: 0 } => Err(ProbError::NoSamples),
            ProbMethod::Quadrature { tol } if tol.is_nan() || tol <= 0.0 => {
                Err(ProbError::Quadrature(QuadratureError::NoConvergence {
                    estimate: f64::NAN,
                    tol,
                    panels: 0,
                }))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ProbMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbMethod::Auto => write!(f, "auto"),
            ProbMethod::ClosedForm => write!(f, "closed-form"),
            ProbMethod::Quadrature { tol } => write!(f, "quadrature:{tol:e}"),
            ProbMethod::MonteCarlo { samples } => write!(f, "monte-carlo:{samples}"),
        }
    }
}

impl FromStr for ProbMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("auto", None) => Ok(ProbMethod::Auto),
            ("closed-form", None) => Ok(ProbMethod::ClosedForm),
            ("quadrature", None) => Ok(ProbMethod::Quadrature { tol: DEFAULT_QUAD_TOL }),
            ("quadrature", Some(a)) => a
                .parse::<f64>()
                .ok()
                .filter(|t| *t > 0.0)
                .map(|tol| ProbMethod::Quadrature { tol })
                .ok_or_else(|| format!("bad quadrature tolerance `{a}`")),
            ("monte-carlo", None) => Ok(ProbMethod::MonteCarlo {
                samples: DEFAULT_MC_SAMPLES,
            }),
            ("monte-carlo", Some(a)) => a
                .parse::<u64>()
                .ok()
                .filter(|n| *n > 0)
                .map(|samples| ProbMethod::MonteCarlo { samples })
                .ok_or_else(|| format!("bad monte carlo sample count `{a}`")),
            _ => Err(format!(
                "unknown probability method `{s}` (expected auto, closed-form, quadrature[:tol], monte-carlo[:n])"
            )),
        }
    }
}
