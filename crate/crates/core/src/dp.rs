//! Exact dynamic programming on the product state grid.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Atom, Valley};
use crate::onestep::{best_controls, combination_count, Decision, DEFAULT_ENUMERATION_BUDGET};
use crate::par;
use crate::valuefn::{Grid, BOX_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    /// Cap on `nodes x combinations x atoms x stages`.
    pub work_budget: u128,
    pub enumeration_budget: u128,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { work_budget: 50_000_000_000, enumeration_budget: DEFAULT_ENUMERATION_BUDGET }
    }
}

/// Bellman functions `V_0 .. V_T` on the product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    pub value_functions: Vec<Grid>,
}

impl DpSolution {
    /// Optimal expected cost from the initial state.
    pub fn optimal_cost(&self, valley: &Valley) -> f64 {
        self.value_functions[0].eval_clamped(&valley.initial_state())
    }
}

/// Checks that every dam's knots span exactly its volume bounds.
pub fn check_knots(valley: &Valley, knots: &[Vec<f64>]) -> Result<()> {
    if knots.len() != valley.n_dams() {
        return Err(Error::Shape(format!("{} knot vectors for {} dams", knots.len(), valley.n_dams())));
    }
    for (i, (k, d)) in knots.iter().zip(&valley.dams).enumerate() {
        let ok = !k.is_empty()
            && (k[0] - d.x_min).abs() <= BOX_TOLERANCE
            && (k[k.len() - 1] - d.x_max).abs() <= BOX_TOLERANCE
            && k.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Shape(format!("dam {i}: knots must increase from x_min to x_max")));
        }
    }
    Ok(())
}

/// Continuation value `V_{t+1}` seen from stage `t`: the exact final cost
/// at the last stage, grid interpolation otherwise.
fn continuation<'a>(valley: &'a Valley, vfs: &'a [Grid], t: usize) -> impl Fn(&[f64]) -> f64 + 'a {
    let last = t + 1 == valley.horizon();
    move |x: &[f64]| if last { valley.final_cost(x) } else { vfs[t + 1].eval_clamped(x) }
}

pub fn solve_dp(valley: &Valley, knots: Vec<Vec<f64>>, config: &DpConfig) -> Result<DpSolution> {
    solve_dp_with(valley, knots, config, |_| {})
}

/// Backward sweep; `on_stage(t)` fires after stage `t` is complete.
pub fn solve_dp_with(
    valley: &Valley,
    knots: Vec<Vec<f64>>,
    config: &DpConfig,
    mut on_stage: impl FnMut(usize),
) -> Result<DpSolution> {
    check_knots(valley, &knots)?;
    let nodes: u128 = knots.iter().map(|k| k.len() as u128).product();
    let combos = combination_count(valley);
    let atoms: u128 = valley.noise.stages.iter().map(|s| s.atoms.len() as u128).max().unwrap_or(1);
    let work = nodes
        .saturating_mul(combos)
        .saturating_mul(atoms)
        .saturating_mul(valley.horizon() as u128);
    if work > config.work_budget {
        return Err(Error::BudgetExceeded {
            what: format!("dp ({nodes} grid nodes x {combos} control combinations x {atoms} atoms x {} stages)", valley.horizon()),
            size: work,
            budget: config.work_budget,
        });
    }

    let horizon = valley.horizon();
    let terminal = Grid::from_fn(knots.clone(), |x| valley.final_cost(x))?;
    let mut vfs = vec![terminal.clone(); horizon + 1];
    for t in (0..horizon).rev() {
        let grid = &vfs[t + 1];
        let cont = continuation(valley, &vfs, t);
        let atoms = valley.noise.atoms(t);
        let values: Result<Vec<f64>> = par::map(grid.len(), |idx| {
            let x = grid.node(idx);
            let mut acc = 0.0;
            for atom in atoms {
                let d = best_controls(valley, &x, atom, &cont, config.enumeration_budget)?;
                acc += atom.p * d.objective;
            }
            Ok(acc)
        })
        .into_iter()
        .collect();
        drop(cont);
        vfs[t] = Grid::new(knots.clone(), values?)?;
        on_stage(t);
    }
    Ok(DpSolution { value_functions: vfs })
}

/// Optimal hazard-decision control at `(t, x, atom)` given the Bellman
/// functions of [`solve_dp`].
pub fn dp_feedback(valley: &Valley, value_functions: &[Grid], t: usize, x: &[f64], atom: &Atom) -> Result<Decision> {
    if value_functions.len() != valley.horizon() + 1 || t >= valley.horizon() {
        return Err(Error::Shape(String::from("stage out of range")));
    }
    value_functions[t].eval(x)?;
    best_controls(valley, x, atom, continuation(valley, value_functions, t), DEFAULT_ENUMERATION_BUDGET)
}
