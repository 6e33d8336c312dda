//! SDDP with discrete controls: forward passes enumerate the control set,
//! backward passes build cuts from finite differences of the one-step value
//! at neighboring grid states.
//!
//! The finite-difference cuts are not guaranteed to minorize the true
//! Bellman functions, so the pools carry no bound.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ScenarioSampler, Valley};
use crate::onestep::{best_controls, DEFAULT_ENUMERATION_BUDGET};
use crate::par;
use crate::valuefn::{locate, CutPool, BOX_TOLERANCE};

#[derive(Debug, Clone, PartialEq)]
pub struct SddpConfig {
    pub n_iterations: usize,
    pub forward_batch: usize,
    pub cut_capacity: usize,
    /// Per-dam knots whose neighbors define the finite-difference states.
    pub fd_knots: Vec<Vec<f64>>,
    pub rng_seed: u64,
    /// Value of an empty pool, in cost units.
    pub value_floor: f64,
    pub prune_level1: bool,
    pub enumeration_budget: u128,
}

impl SddpConfig {
    pub fn new(fd_knots: Vec<Vec<f64>>) -> Self {
        Self {
            n_iterations: 25,
            forward_batch: 8,
            cut_capacity: 100,
            fd_knots,
            rng_seed: 0,
            value_floor: 0.0,
            prune_level1: false,
            enumeration_budget: DEFAULT_ENUMERATION_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_forward_cost: f64,
    pub pool_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SddpRun {
    /// Cut pools approximating `V_0 .. V_{T-1}`; `V_T` is the exact final cost.
    pub pools: Vec<CutPool>,
    pub log: Vec<IterationLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// Visited states `x_0 .. x_T`.
    pub states: Vec<Vec<f64>>,
    pub cost: f64,
}

fn next_value<'a>(valley: &'a Valley, pools: &'a [CutPool], t: usize) -> impl Fn(&[f64]) -> f64 + 'a {
    let last = t + 1 == valley.horizon();
    move |x: &[f64]| if last { valley.final_cost(x) } else { pools[t + 1].eval(x) }
}

/// Simulates one scenario (atom index per stage) with the current pools.
pub fn sddp_forward(valley: &Valley, pools: &[CutPool], scenario: &[usize], budget: u128) -> Result<ForwardPass> {
    let horizon = valley.horizon();
    if scenario.len() != horizon || pools.len() != horizon {
        return Err(Error::Shape(String::from("scenario and pools must cover the horizon")));
    }
    let mut x = valley.initial_state();
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x.clone());
    let mut cost = 0.0;
    for (t, &k) in scenario.iter().enumerate() {
        let atom = &valley.noise.atoms(t)[k];
        let d = best_controls(valley, &x, atom, next_value(valley, pools, t), budget)?;
        cost += d.stage_cost;
        x = d.next_state();
        states.push(x.clone());
    }
    cost += valley.final_cost(&x);
    Ok(ForwardPass { states, cost })
}

/// Expected one-step value at `x`: mean over stage atoms of the enumerated
/// minimum with continuation `pools[t + 1]`.
pub fn one_step_value(valley: &Valley, pools: &[CutPool], t: usize, x: &[f64], budget: u128) -> Result<f64> {
    let cont = next_value(valley, pools, t);
    let mut acc = 0.0;
    for atom in valley.noise.atoms(t) {
        acc += atom.p * best_controls(valley, x, atom, &cont, budget)?.objective;
    }
    Ok(acc)
}

/// Neighbor knots of coordinate `v`: adjacent knots when `v` sits on a knot,
/// the enclosing cell otherwise. `None` at the box boundary.
fn neighbors(knots: &[f64], v: f64) -> (Option<f64>, Option<f64>) {
    if knots.len() < 2 {
        return (None, None);
    }
    if let Some(j) = knots.iter().position(|&k| (k - v).abs() <= BOX_TOLERANCE) {
        let left = if j > 0 { Some(knots[j - 1]) } else { None };
        let right = knots.get(j + 1).copied();
        return (left, right);
    }
    let (k0, _) = locate(knots, v);
    (Some(knots[k0]), Some(knots[k0 + 1]))
}

/// Value and finite-difference gradient of the one-step value at `x`:
/// centered where both neighbors exist, one-sided on the boundary.
pub fn finite_difference_cut(
    valley: &Valley,
    pools: &[CutPool],
    t: usize,
    x: &[f64],
    fd_knots: &[Vec<f64>],
    budget: u128,
) -> Result<(f64, Vec<f64>)> {
    let value = one_step_value(valley, pools, t, x, budget)?;
    let mut gradient = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let (left, right) = neighbors(&fd_knots[i], x[i]);
        let mut at = |v: f64| -> Result<f64> {
            probe[i] = v;
            let r = one_step_value(valley, pools, t, &probe, budget);
            probe[i] = x[i];
            r
        };
        gradient[i] = match (left, right) {
            (Some(l), Some(r)) => (at(r)? - at(l)?) / (r - l),
            (Some(l), None) => (value - at(l)?) / (x[i] - l),
            (None, Some(r)) => (at(r)? - value) / (r - x[i]),
            (None, None) => 0.0,
        };
    }
    Ok((value, gradient))
}

/// Refines `pools[T-1] .. pools[0]` along the trajectories, one cut per
/// visited state, trajectories in the given order.
pub fn sddp_backward(valley: &Valley, pools: &mut [CutPool], trajectories: &[ForwardPass], config: &SddpConfig) -> Result<()> {
    for t in (0..valley.horizon()).rev() {
        for traj in trajectories {
            let x = &traj.states[t];
            let (value, gradient) =
                finite_difference_cut(valley, pools, t, x, &config.fd_knots, config.enumeration_budget)?;
            let intercept = value - gradient.iter().zip(x).map(|(g, v)| g * v).sum::<f64>();
            pools[t].add_cut(intercept, gradient)?;
        }
    }
    Ok(())
}

pub fn solve_sddp(valley: &Valley, config: &SddpConfig) -> Result<SddpRun> {
    solve_sddp_with(valley, config, |_| {})
}

/// Runs the fixed number of iterations; `on_iteration` fires after each.
pub fn solve_sddp_with(valley: &Valley, config: &SddpConfig, mut on_iteration: impl FnMut(&IterationLog)) -> Result<SddpRun> {
    crate::dp::check_knots(valley, &config.fd_knots)?;
    if config.forward_batch == 0 || config.cut_capacity == 0 {
        return Err(Error::Shape(String::from("forward batch and cut capacity must be positive")));
    }
    let horizon = valley.horizon();
    let mut pools = vec![CutPool::new(config.cut_capacity, config.value_floor); horizon];
    let sampler = ScenarioSampler::new(config.rng_seed);
    let mut visited: Vec<Vec<Vec<f64>>> = vec![Vec::new(); horizon];
    let mut log = Vec::with_capacity(config.n_iterations);
    for it in 0..config.n_iterations {
        let batch = config.forward_batch;
        let scenarios: Vec<Vec<usize>> =
            (0..batch).map(|b| sampler.scenario(&valley.noise, (it * batch + b) as u64)).collect();
        let passes: Result<Vec<ForwardPass>> = par::map(batch, |b| {
            sddp_forward(valley, &pools, &scenarios[b], config.enumeration_budget)
        })
        .into_iter()
        .collect();
        let passes = passes?;
        sddp_backward(valley, &mut pools, &passes, config)?;
        if config.prune_level1 {
            for (t, pool) in pools.iter_mut().enumerate() {
                visited[t].extend(passes.iter().map(|p| p.states[t].clone()));
                pool.prune_level1(&visited[t]);
            }
        }
        let entry = IterationLog {
            iteration: it,
            mean_forward_cost: passes.iter().map(|p| p.cost).sum::<f64>() / batch as f64,
            pool_sizes: pools.iter().map(CutPool::len).collect(),
        };
        on_iteration(&entry);
        log.push(entry);
    }
    Ok(SddpRun { pools, log })
}
