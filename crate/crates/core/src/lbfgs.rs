//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The inverse-Hessian product uses the two-loop recursion with the usual
//! `sᵀy / yᵀy` initial scaling. The line search is the bracketing/zoom scheme
//! with safeguarded cubic interpolation (Nocedal & Wright, algorithms 3.5 and
//! 3.6).

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::sqrt;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    /// Number of stored correction pairs.
    pub history: usize,
    /// Stop once `max_i |g_i|` falls to this value.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 10,
            grad_tol: 1e-8,
            max_iter: 1000,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// No step along the search direction decreased the objective.
    LineSearchStalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl LbfgsResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::GradientTolerance
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

enum Search {
    Found(Point),
    Failed { non_finite: bool },
}

struct Objective<'a, F> {
    f: &'a mut F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective<'_, F> {
    fn eval_at(&mut self, x0: &[f64], dir: &[f64], alpha: f64) -> Point {
        let x: Vec<f64> = x0.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
        let mut grad = vec![0.0; x.len()];
        let value = (self.f)(&x, &mut grad);
        self.evaluations += 1;
        let slope = dot(&grad, dir);
        Point {
            alpha,
            value,
            slope,
            x,
            grad,
        }
    }
}

fn finite(p: &Point) -> bool {
    p.value.is_finite() && p.slope.is_finite()
}

fn cubic_min(lo: &Point, hi: &Point) -> Option<f64> {
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (lo.alpha - hi.alpha);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc.is_nan() || disc < 0.0 {
        return None;
    }
    let d2 = sqrt(disc) * (hi.alpha - lo.alpha).signum();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let a = hi.alpha - (hi.alpha - lo.alpha) * (hi.slope + d2 - d1) / denom;
    a.is_finite().then_some(a)
}

fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Objective<'_, F>,
    x0: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    alpha_init: f64,
    opts: &LbfgsOptions,
) -> Search {
    let slope0 = dot(g0, dir);
    let armijo = |p: &Point| p.value <= f0 + opts.c1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -opts.c2 * slope0;

    let mut prev = Point {
        alpha: 0.0,
        value: f0,
        slope: slope0,
        x: x0.to_vec(),
        grad: g0.to_vec(),
    };
    let mut alpha = alpha_init;
    let mut non_finite = false;
    let mut budget = opts.max_line_search;

    // Bracketing phase.
    let (mut lo, mut hi) = loop {
        if budget == 0 {
            return Search::Failed { non_finite };
        }
        budget -= 1;
        let p = obj.eval_at(x0, dir, alpha);
        if !finite(&p) {
            non_finite = true;
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if !armijo(&p) || (prev.alpha > 0.0 && p.value >= prev.value) {
            break (prev, p);
        }
        if curvature(&p) {
            return Search::Found(p);
        }
        if p.slope >= 0.0 {
            break (p, prev);
        }
        alpha = 2.0 * p.alpha;
        prev = p;
    };

    // Zoom phase: `lo` always satisfies sufficient decrease.
    while budget > 0 {
        budget -= 1;
        let (a, b) = if lo.alpha < hi.alpha {
            (lo.alpha, hi.alpha)
        } else {
            (hi.alpha, lo.alpha)
        };
        let width = b - a;
        if width <= f64::EPSILON * b.max(1.0) {
            break;
        }
        let mut trial = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
        if trial < a + 0.1 * width || trial > b - 0.1 * width {
            trial = 0.5 * (a + b);
        }
        let p = obj.eval_at(x0, dir, trial);
        if !finite(&p) {
            non_finite = true;
            hi = p;
            continue;
        }
        if !armijo(&p) || p.value >= lo.value {
            hi = p;
        } else {
            if curvature(&p) {
                return Search::Found(p);
            }
            if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    if lo.alpha > 0.0 && lo.value < f0 {
        Search::Found(lo)
    } else {
        Search::Failed { non_finite }
    }
}

/// Minimizes `f` from `x0`. `f(x, g)` returns the objective and writes the
/// gradient into `g`.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let m = opts.history.max(1);
    let mut obj = Objective {
        f: &mut f,
        evaluations: 0,
    };
    let mut x = x0;
    let mut grad = vec![0.0; x.len()];
    let mut value = (obj.f)(&x, &mut grad);
    obj.evaluations += 1;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::OptimizationFailure {
            iterations: 0,
            reason: format!("non-finite objective at the starting point (value {value})"),
        });
    }

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(m);
    let mut iterations = 0;
    let termination = loop {
        if inf_norm(&grad) <= opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }

        let mut dir = two_loop(&grad, &memory);
        let mut alpha_init = 1.0;
        if memory.is_empty() || dot(&dir, &grad) >= 0.0 {
            memory.clear();
            dir = grad.iter().map(|g| -g).collect();
            alpha_init = (1.0 / sqrt(dot(&grad, &grad))).min(1.0);
        }

        let mut found = line_search(&mut obj, &x, value, &grad, &dir, alpha_init, opts);
        if matches!(found, Search::Failed { .. }) && !memory.is_empty() {
            memory.clear();
            dir = grad.iter().map(|g| -g).collect();
            alpha_init = (1.0 / sqrt(dot(&grad, &grad))).min(1.0);
            found = line_search(&mut obj, &x, value, &grad, &dir, alpha_init, opts);
        }
        let next = match found {
            Search::Found(p) => p,
            Search::Failed { non_finite: true } => {
                return Err(Error::OptimizationFailure {
                    iterations,
                    reason: format!(
                        "non-finite objective during line search (last value {value}, gradient norm {})",
                        inf_norm(&grad)
                    ),
                });
            }
            Search::Failed { non_finite: false } => break Termination::LineSearchStalled,
        };
        iterations += 1;

        let s: Vec<f64> = next.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = next.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > f64::EPSILON * dot(&yv, &yv) {
            if memory.len() == m {
                memory.pop_front();
            }
            memory.push_back((s, yv, 1.0 / sy));
        }
        x = next.x;
        grad = next.grad;
        value = next.value;
    };

    Ok(LbfgsResult {
        grad_norm: inf_norm(&grad),
        x,
        value,
        iterations,
        evaluations: obj.evaluations,
        termination,
    })
}

/// Returns `-H g` for the implicit inverse-Hessian approximation `H`.
fn two_loop(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = vec![0.0; memory.len()];
    for (k, (s, y, rho)) in memory.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[k] = a;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for (k, (s, y, rho)) in memory.iter().enumerate() {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alphas[k] - b) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        // f = sum_i (i + 1) (x_i - i)^2
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..x.len() {
                let w = (i + 1) as f64;
                let r = x[i] - i as f64;
                v += w * r * r;
                g[i] = 2.0 * w * r;
            }
            v
        };
        let r = minimize(f, vec![0.0; 6], &LbfgsOptions::default()).unwrap();
        assert!(r.converged());
        for (i, xi) in r.x.iter().enumerate() {
            assert!((xi - i as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a) * (1.0 - a) + 100.0 * (b - a * a) * (b - a * a)
        };
        let r = minimize(f, vec![-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert!(r.converged(), "{:?}", r.termination);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_start_is_error() {
        let f = |_: &[f64], _: &mut [f64]| f64::NAN;
        assert!(matches!(
            minimize(f, vec![0.0], &LbfgsOptions::default()),
            Err(Error::OptimizationFailure { .. })
        ));
    }

    #[test]
    fn max_iterations_reported() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = -1.0 / (1.0 + x[0] * x[0]);
            -x[0].atan()
        };
        let opts = LbfgsOptions {
            max_iter: 5,
            ..Default::default()
        };
        let r = minimize(f, vec![0.0], &opts).unwrap();
        assert!(!r.converged());
    }
}
