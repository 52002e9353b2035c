//! Globally adaptive Gauss-Legendre quadrature for vector-valued integrands.
//!
//! Each panel is evaluated with a 20-point rule; the difference against a
//! 10-point rule on the same panel is the panel's error estimate. The panel
//! with the largest estimate is bisected until the summed estimate drops
//! below the tolerance or the panel budget runs out.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not converge: error estimate {estimate:e} above tolerance {tol:e} after {panels} panels")]
    NoConvergence {
        estimate: f64,
        tol: f64,
        panels: usize,
    },
    #[error("integrand returned a non-finite value at x = {x}")]
    NonFinite { x: f64 },
    #[error("integration needs at least two distinct breakpoints")]
    EmptyDomain,
}

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn gauss_legendre(n: usize) -> Rule {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    Rule { nodes, weights }
}

fn rules() -> &'static (Rule, Rule) {
    static RULES: OnceLock<(Rule, Rule)> = OnceLock::new();
    RULES.get_or_init(|| (gauss_legendre(10), gauss_legendre(20)))
}

#[derive(Debug, Clone)]
struct Panel {
    a: f64,
    b: f64,
    values: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// Result of a vector quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct Integral {
    pub values: Vec<f64>,
    /// Summed per-panel error estimate, maximised over components.
    pub abs_error: f64,
    pub panels: usize,
}

fn eval_panel<F>(
    f: &mut F,
    dim: usize,
    a: f64,
    b: f64,
    scratch: &mut [f64],
) -> Result<Panel, QuadratureError>
where
    F: FnMut(f64, &mut [f64]),
{
    let (coarse, fine) = rules();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut hi = vec![0.0; dim];
    let mut lo = vec![0.0; dim];
    for (rule, acc) in [(fine, &mut hi), (coarse, &mut lo)] {
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let at = mid + half * x;
            f(at, scratch);
            for (s, v) in acc.iter_mut().zip(scratch.iter()) {
                if !v.is_finite() {
                    return Err(QuadratureError::NonFinite { x: at });
                }
                *s += w * v;
            }
        }
    }
    let mut error: f64 = 0.0;
    for (h, l) in hi.iter_mut().zip(&lo) {
        *h *= half;
        error = error.max((*h - half * l).abs());
    }
    Ok(Panel {
        a,
        b,
        values: hi,
        error,
    })
}

/// Integrates the `dim`-component function `f` over `[breaks[0], breaks[last]]`,
/// starting from the panels delimited by `breaks` (sorted, duplicates ignored).
/// `f(x, out)` writes the integrand components at `x` into `out`.
pub fn integrate<F>(
    mut f: F,
    dim: usize,
    breaks: &[f64],
    tol: f64,
    max_panels: usize,
) -> Result<Integral, QuadratureError>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|x| x.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.len() < 2 {
        return Err(QuadratureError::EmptyDomain);
    }

    let mut scratch = vec![0.0; dim];
    let mut heap = BinaryHeap::new();
    for w in pts.windows(2) {
        heap.push(eval_panel(&mut f, dim, w[0], w[1], &mut scratch)?);
    }

    loop {
        let total: f64 = heap.iter().map(|p| p.error).sum();
        if total <= tol {
            break;
        }
        if heap.len() >= max_panels {
            return Err(QuadratureError::NoConvergence {
                estimate: total,
                tol,
                panels: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(QuadratureError::NoConvergence {
                estimate: total,
                tol,
                panels: heap.len() + 1,
            });
        }
        heap.push(eval_panel(&mut f, dim, worst.a, mid, &mut scratch)?);
        heap.push(eval_panel(&mut f, dim, mid, worst.b, &mut scratch)?);
    }

    let mut panels = heap.into_vec();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut values = vec![0.0; dim];
    let mut abs_error = 0.0;
    for p in &panels {
        for (v, pv) in values.iter_mut().zip(&p.values) {
            *v += pv;
        }
        abs_error += p.error;
    }
    Ok(Integral {
        values,
        abs_error,
        panels: panels.len(),
    })
}
