//! Limited-memory BFGS with Armijo backtracking.
//!
//! Works on nonsmooth convex objectives in the loose sense used by the
//! dual solver: when the line search stalls the memory is dropped and a
//! scaled steepest-descent step is tried before giving up.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `max |g_i|` falls to this value.
    pub tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
    /// Length (in sup norm) of the first steepest-descent trial step.
    pub initial_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, max_iterations: 300, tolerance: 1e-6, c1: 1e-4, max_backtracks: 30, initial_step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    /// Best iterate found (lowest objective).
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn direction(g: &[f64], memory: &VecDeque<Pair>, initial_step: f64) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let Some(last) = memory.back() else {
        let scale = initial_step / sup_norm(g).max(f64::MIN_POSITIVE);
        return q.iter().map(|v| -scale * v).collect();
    };
    let mut alpha = Vec::with_capacity(memory.len());
    for p in memory.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
        alpha.push(a);
    }
    let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for (p, a) in memory.iter().zip(alpha.iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Minimizes `objective`, which returns `(value, gradient)`. `on_iteration`
/// receives `(iteration, x, f, g)` for the starting point and every
/// accepted step.
pub fn minimize<O, C>(mut objective: O, x0: Vec<f64>, config: &LbfgsConfig, mut on_iteration: C) -> Result<LbfgsResult>
where
    O: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(usize, &[f64], f64, &[f64]),
{
    let mut x = x0;
    let (mut f, mut g) = objective(&x)?;
    let mut evaluations = 1;
    let mut best = (x.clone(), f, g.clone());
    let mut memory: VecDeque<Pair> = VecDeque::new();
    on_iteration(0, &x, f, &g);
    let mut k = 0;
    let mut converged = sup_norm(&g) <= config.tolerance;
    while !converged && k < config.max_iterations {
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
            }
            let mut d = direction(&g, &memory, config.initial_step);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                memory.clear();
                d = direction(&g, &memory, config.initial_step);
                slope = dot(&g, &d);
            }
            let mut step = 1.0;
            for _ in 0..config.max_backtracks {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                let (ft, gt) = objective(&trial)?;
                evaluations += 1;
                if ft <= f + config.c1 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * libm::sqrt(dot(&s, &s) * dot(&y, &y)) && sy > 0.0 {
            if memory.len() == config.memory {
                memory.pop_front();
            }
            memory.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        x = xn;
        f = fn_;
        g = gn;
        k += 1;
        if f < best.1 {
            best = (x.clone(), f, g.clone());
        }
        on_iteration(k, &x, f, &g);
        converged = sup_norm(&g) <= config.tolerance;
    }
    if converged {
        best = (x, f, g);
    }
    Ok(LbfgsResult { x: best.0, f: best.1, g: best.2, iterations: k, evaluations, converged })
}
