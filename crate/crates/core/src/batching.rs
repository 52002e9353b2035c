//! Batch schedules: fixed grids, an adversarial hook, the inverse-probability
//! (iPASE) rule, and a sample-path check of subexponential batch growth.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::argmaxprob::{
    self, log_prob_quadrature, prob_monte_carlo, q_function, second_largest_of, ProbError,
    ProbMethod,
};
use crate::rng::RngStream;
use crate::sampler::{snapshot_profile, ArmPosterior};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BatchError {
    #[error("previous endpoint {last} already reached the horizon {horizon}")]
    HorizonReached { last: u64, horizon: u64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("adversarial hook proposed an empty batch after T = {last}")]
    EmptyBatch { last: u64 },
    #[error("schedule produced endpoint {next} not above {last}")]
    NotIncreasing { last: u64, next: u64 },
    #[error("schedule `{0}` depends on the history and has no fixed endpoint list")]
    NotFixed(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// Everything a schedule may look at when choosing `T_j`: data measurable
/// with respect to the history up to `T_{j-1}`, and nothing later.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    /// Index `j` of the batch being scheduled.
    pub next_batch: usize,
    /// Closed endpoints `T_0 = 0, ..., T_{j-1}`.
    pub endpoints: &'a [u64],
    /// Posteriors at `T_{j-1}`.
    pub snapshot: &'a [ArmPosterior],
}

impl History<'_> {
    pub fn last_endpoint(&self) -> u64 {
        *self.endpoints.last().unwrap_or(&0)
    }
}

/// Batch sizes chosen by an outside party from the history.
pub trait AdversarialHook: Send {
    fn next_batch_size(&mut self, history: &History<'_>) -> u64;
}

/// Serializable description of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    PerStep,
    Constant { size: u64 },
    Polynomial { p: f64 },
    Geometric { ratio: f64 },
    Explicit { endpoints: Vec<u64> },
    Ipase,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<(), BatchError> {
        let bad = |m: String| Err(BatchError::InvalidSchedule(m));
        match self {
            ScheduleSpec::Constant { size: 0 } => {
                bad("constant batch size must be at least 1".into())
            }
            ScheduleSpec::Polynomial { p } if !(p.is_finite() && *p > 0.0) => {
                bad(format!("polynomial exponent must be positive, got {p}"))
            }
            ScheduleSpec::Geometric { ratio } if !(ratio.is_finite() && *ratio > 1.0) => {
                bad(format!("geometric ratio must exceed 1, got {ratio}"))
            }
            ScheduleSpec::Explicit { endpoints } => {
                if endpoints.is_empty()
                    || endpoints[0] == 0
                    || endpoints.windows(2).any(|w| w[1] <= w[0])
                {
                    bad("explicit endpoints must be positive and strictly increasing".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn is_fixed(&self) -> bool {
        !matches!(self, ScheduleSpec::Ipase)
    }

    pub fn build(&self, prob_method: ProbMethod) -> Result<BatchSchedule, BatchError> {
        self.validate()?;
        let kind = match self.clone() {
            ScheduleSpec::PerStep => ScheduleKind::PerStep,
            ScheduleSpec::Constant { size } => ScheduleKind::Constant { size },
            ScheduleSpec::Polynomial { p } => ScheduleKind::Polynomial { p },
            ScheduleSpec::Geometric { ratio } => ScheduleKind::Geometric { ratio },
            ScheduleSpec::Explicit { endpoints } => ScheduleKind::Explicit { endpoints },
            ScheduleSpec::Ipase => ScheduleKind::Ipase { prob_method },
        };
        Ok(BatchSchedule { kind })
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleSpec::PerStep => write!(f, "per-step"),
            ScheduleSpec::Constant { size } => write!(f, "constant:{size}"),
            ScheduleSpec::Polynomial { p } => write!(f, "polynomial:{p}"),
            ScheduleSpec::Geometric { ratio } => write!(f, "geometric:{ratio}"),
            ScheduleSpec::Explicit { endpoints } => {
                let list: Vec<String> = endpoints.iter().map(u64::to_string).collect();
                write!(f, "explicit:{}", list.join(","))
            }
            ScheduleSpec::Ipase => write!(f, "ipase"),
        }
    }
}

impl FromStr for ScheduleSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64, String> {
            a.ok_or_else(|| format!("schedule `{head}` needs a parameter"))?
                .parse::<f64>()
                .map_err(|e| format!("bad parameter in `{s}`: {e}"))
        };
        let spec = match head {
            "per-step" => ScheduleSpec::PerStep,
            "ipase" => ScheduleSpec::Ipase,
            "constant" => ScheduleSpec::Constant {
                size: arg
                    .ok_or("schedule `constant` needs a size")?
                    .parse()
                    .map_err(|e| format!("bad size in `{s}`: {e}"))?,
            },
            "polynomial" => ScheduleSpec::Polynomial { p: num(arg)? },
            "geometric" => ScheduleSpec::Geometric { ratio: num(arg)? },
            "explicit" => ScheduleSpec::Explicit {
                endpoints: arg
                    .ok_or("schedule `explicit` needs a list")?
                    .split(',')
                    .map(|x| x.trim().parse::<u64>().map_err(|e| format!("bad endpoint `{x}`: {e}")))
                    .collect::<Result<_, _>>()?,
            },
            _ => {
                return Err(format!(
                    "unknown schedule `{s}` (expected per-step, constant:N, polynomial:P, geometric:R, explicit:A,B,..., ipase)"
                ))
            }
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

pub enum ScheduleKind {
    PerStep,
    Constant { size: u64 },
    Polynomial { p: f64 },
    Geometric { ratio: f64 },
    Explicit { endpoints: Vec<u64> },
    Adversarial(Box<dyn AdversarialHook>),
    Ipase { prob_method: ProbMethod },
}

impl fmt::Debug for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::PerStep => write!(f, "PerStep"),
            ScheduleKind::Constant { size } => write!(f, "Constant({size})"),
            ScheduleKind::Polynomial { p } => write!(f, "Polynomial({p})"),
            ScheduleKind::Geometric { ratio } => write!(f, "Geometric({ratio})"),
            ScheduleKind::Explicit { endpoints } => {
                write!(f, "Explicit({} endpoints)", endpoints.len())
            }
            ScheduleKind::Adversarial(_) => write!(f, "Adversarial"),
            ScheduleKind::Ipase { prob_method } => write!(f, "Ipase({prob_method})"),
        }
    }
}

/// The second-largest selection probability used by an iPASE decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P2Estimate {
    pub p2: f64,
    #[serde(with = "crate::serde_float::scalar")]
    pub log_p2: f64,
    pub method: ProbMethod,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchDecision {
    pub endpoint: u64,
    pub p2: Option<P2Estimate>,
}

#[derive(Debug)]
pub struct BatchSchedule {
    kind: ScheduleKind,
}

impl BatchSchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        BatchSchedule { kind }
    }

    pub fn adversarial(hook: impl AdversarialHook + 'static) -> Self {
        Self::new(ScheduleKind::Adversarial(Box::new(hook)))
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    /// Chooses `T_j` from the history at `T_{j-1}`, clipped to the horizon.
    pub fn next_endpoint(
        &mut self,
        history: &History<'_>,
        horizon: u64,
        rng: &mut RngStream,
    ) -> Result<BatchDecision, BatchError> {
        let last = history.last_endpoint();
        if last >= horizon {
            return Err(BatchError::HorizonReached { last, horizon });
        }
        let remaining = horizon - last;
        let (endpoint, p2) = match &mut self.kind {
            ScheduleKind::PerStep => (last + 1, None),
            ScheduleKind::Constant { size } => (last.saturating_add(*size).min(horizon), None),
            ScheduleKind::Polynomial { p } => {
                let p = *p;
                (
                    next_in_sequence(last, |k| k.powf(p), |l| l.powf(1.0 / p)).min(horizon),
                    None,
                )
            }
            ScheduleKind::Geometric { ratio } => {
                let r = *ratio;
                (
                    next_in_sequence(last, |k| r.powf(k), |l| l.ln() / r.ln()).min(horizon),
                    None,
                )
            }
            ScheduleKind::Explicit { endpoints } => (
                endpoints
                    .iter()
                    .copied()
                    .find(|&e| e > last)
                    .unwrap_or(horizon)
                    .min(horizon),
                None,
            ),
            ScheduleKind::Adversarial(hook) => {
                let size = hook.next_batch_size(history);
                if size == 0 {
                    return Err(BatchError::EmptyBatch { last });
                }
                (last + size.min(remaining), None)
            }
            ScheduleKind::Ipase { prob_method } => {
                if is_fresh(history.snapshot) {
                    let size = ipase_first_batch(history.snapshot.len()).min(remaining);
                    (last + size, None)
                } else {
                    let est = estimate_p2(history.snapshot, *prob_method, rng)?;
                    (last + ipase_batch_size(&est, remaining), Some(est))
                }
            }
        };
        if endpoint <= last {
            return Err(BatchError::NotIncreasing {
                last,
                next: endpoint,
            });
        }
        Ok(BatchDecision { endpoint, p2 })
    }
}

fn is_fresh(snapshot: &[ArmPosterior]) -> bool {
    snapshot.iter().all(|p| p.pull_count == 0)
}

/// `ceil` that treats values within a few ulps of an integer as that integer,
/// so `4f64.powf(2.0)` maps to 16 even if the power rounds up.
fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Smallest `ceil(f(k))`, `k >= 1`, strictly above `last`. `inv` gives a
/// starting guess for `k` from `last`.
fn next_in_sequence(last: u64, f: impl Fn(f64) -> f64, inv: impl Fn(f64) -> f64) -> u64 {
    const SATURATED: f64 = 9.0e18;
    let guess = if last == 0 {
        1.0
    } else {
        inv(last as f64).floor()
    };
    if !guess.is_finite() || guess > 1e15 {
        return u64::MAX;
    }
    let mut k = (guess - 2.0).max(1.0);
    loop {
        let v = ceil_snapped(f(k));
        if v >= SATURATED {
            return u64::MAX;
        }
        if v as u64 > last {
            return v as u64;
        }
        k += 1.0;
    }
}

/// First iPASE batch: with fresh, identical posteriors every arm has
/// probability `1/I`, so the first batch has size `I`.
pub fn ipase_first_batch(num_arms: usize) -> u64 {
    num_arms as u64
}

/// Estimates the second-largest selection probability of a snapshot.
pub fn estimate_p2(
    snapshot: &[ArmPosterior],
    method: ProbMethod,
    rng: &mut RngStream,
) -> Result<P2Estimate, BatchError> {
    let profile = snapshot_profile(snapshot);
    let method = method.resolve(profile.num_arms());
    method.validate(profile.num_arms())?;
    let (p2, log_p2) = match method {
        ProbMethod::ClosedForm => {
            let (m, v) = (profile.means(), profile.variances());
            let d = ((m[0] - m[1]) / (v[0] + v[1]).sqrt()).abs();
            (q_function(d), argmaxprob::log_q(d))
        }
        ProbMethod::Quadrature { tol } => {
            let logs = log_prob_quadrature(&profile, tol.min(1e-10))?;
            let log_p2 = second_largest_of(&logs);
            (log_p2.exp(), log_p2)
        }
        ProbMethod::MonteCarlo { samples } => {
            let pv = prob_monte_carlo(&profile, samples, rng)?;
            let p2 = second_largest_of(&pv.probs);
            (p2, p2.ln())
        }
        ProbMethod::Auto => unreachable!("resolved above"),
    };
    Ok(P2Estimate { p2, log_p2, method })
}

/// `floor(1 / P2)` clipped to `[1, remaining]`; any `P2 < 1 / remaining`
/// (including an underflowed or zero estimate) takes the whole remainder.
pub fn ipase_batch_size(est: &P2Estimate, remaining: u64) -> u64 {
    if remaining == 0 {
        return 0;
    }
    if est.p2 <= 0.0 || est.log_p2.is_nan() || est.log_p2 <= -(remaining as f64).ln() {
        return remaining;
    }
    let size = (1.0 / est.p2).floor();
    (size as u64).clamp(1, remaining)
}

/// Endpoints of a history-independent schedule up to `horizon`, without `T_0`.
pub fn fixed_endpoints(spec: &ScheduleSpec, horizon: u64) -> Result<Vec<u64>, BatchError> {
    if !spec.is_fixed() {
        return Err(BatchError::NotFixed(spec.to_string()));
    }
    let mut schedule = spec.build(ProbMethod::Auto)?;
    let fresh = [ArmPosterior::default(); 2];
    let mut endpoints = vec![0u64];
    // Fixed kinds never touch the stream.
    let mut rng = RngStream::for_replicate(0, 0, crate::rng::Purpose::MonteCarlo);
    while *endpoints.last().unwrap() < horizon {
        let history = History {
            next_batch: endpoints.len(),
            endpoints: &endpoints,
            snapshot: &fresh,
        };
        let next = schedule
            .next_endpoint(&history, horizon, &mut rng)?
            .endpoint;
        endpoints.push(next);
    }
    endpoints.remove(0);
    Ok(endpoints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthVerdict {
    Subexponential,
    Violating,
    Inconclusive,
}

/// Sample-path check of `limsup_j log_{T_j}(T_{j+1} - T_j) < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthDiagnostic {
    /// `(T_j, log(T_{j+1} - T_j) / log(T_j))` for every `T_j >= 2`.
    pub per_batch_exponents: Vec<(u64, f64)>,
    /// Largest exponent over the final half of the observed batches.
    pub running_sup_tail: Option<f64>,
    pub verdict: GrowthVerdict,
}

const GROWTH_MARGIN: f64 = 1e-3;

pub fn growth_diagnostic(endpoints: &[u64]) -> GrowthDiagnostic {
    let per_batch_exponents: Vec<(u64, f64)> = endpoints
        .windows(2)
        .filter(|w| w[0] >= 2 && w[1] > w[0])
        .map(|w| (w[0], ((w[1] - w[0]) as f64).ln() / (w[0] as f64).ln()))
        .collect();

    if per_batch_exponents.len() < 2 {
        return GrowthDiagnostic {
            per_batch_exponents,
            running_sup_tail: None,
            verdict: GrowthVerdict::Inconclusive,
        };
    }
    let tail = &per_batch_exponents[per_batch_exponents.len() / 2..];
    let sup = tail.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let at_or_above = tail.iter().filter(|e| e.1 >= 1.0 - GROWTH_MARGIN).count();
    let verdict = if sup < 1.0 - GROWTH_MARGIN {
        GrowthVerdict::Subexponential
    } else if 2 * at_or_above >= tail.len() {
        GrowthVerdict::Violating
    } else {
        GrowthVerdict::Inconclusive
    };
    GrowthDiagnostic {
        per_batch_exponents,
        running_sup_tail: Some(sup),
        verdict,
    }
}
