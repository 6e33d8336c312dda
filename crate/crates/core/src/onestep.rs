//! Valley-wide one-step problems: pick the control vector minimizing stage
//! cost plus a continuation value, with the cascade coupling enforced
//! exactly by evaluating dams upstream to downstream.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{control_range, dam_step_unchecked, stage_cost, Atom, StageTransition, Valley};

/// Default cap on exhaustively enumerated control combinations per step.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1_000_000;

/// Maximum number of coordinate-descent sweeps in the fallback search.
pub const FALLBACK_SWEEPS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub controls: Vec<f64>,
    pub transitions: Vec<StageTransition>,
    /// Summed stage cost of the chosen controls.
    pub stage_cost: f64,
    /// Stage cost plus continuation value.
    pub objective: f64,
    /// Set when the coordinate-descent fallback replaced exhaustive search.
    pub fallback: bool,
}

impl Decision {
    pub fn next_state(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.x_next).collect()
    }
}

/// Upper bound on the number of control combinations of the valley.
pub fn combination_count(valley: &Valley) -> u128 {
    valley
        .dams
        .iter()
        .map(|d| d.control_levels.len() as u128)
        .fold(1u128, |a, b| a.saturating_mul(b))
}

/// Minimizes `stage cost + continuation(next state)` over feasible control
/// vectors. Exhaustive in lexicographic order (dams upstream first, levels
/// ascending, first minimum wins) when the combination count fits in
/// `budget`, coordinate descent otherwise.
pub fn best_controls<F>(valley: &Valley, x: &[f64], atom: &Atom, continuation: F, budget: u128) -> Result<Decision>
where
    F: Fn(&[f64]) -> f64,
{
    if combination_count(valley) <= budget {
        exhaustive(valley, x, atom, &continuation)
    } else {
        coordinate_descent(valley, x, atom, &continuation)
    }
}

struct Search<'a, F> {
    valley: &'a Valley,
    x: &'a [f64],
    atom: &'a Atom,
    continuation: &'a F,
    u: Vec<f64>,
    tr: Vec<StageTransition>,
    x_next: Vec<f64>,
    best: Option<(f64, f64, Vec<f64>, Vec<StageTransition>)>,
}

impl<F: Fn(&[f64]) -> f64> Search<'_, F> {
    fn run(&mut self, k: usize, cost: f64) -> Result<()> {
        let order = self.valley.topology.order();
        if k == order.len() {
            let value = cost + (self.continuation)(&self.x_next);
            if self.best.as_ref().is_none_or(|b| value < b.0) {
                self.best = Some((value, cost, self.u.clone(), self.tr.clone()));
            }
            return Ok(());
        }
        let i = order[k];
        let dam = &self.valley.dams[i];
        let z: f64 = self.valley.topology.children(i).iter().map(|&c| self.tr[c].outflow).sum();
        let a = self.atom.inflows[i];
        let price = self.atom.prices[i];
        let levels = control_range(dam, i, self.x[i], a, z)?;
        for &u in levels {
            let t = dam_step_unchecked(dam, self.x[i], u, a, z);
            self.u[i] = u;
            self.tr[i] = t;
            self.x_next[i] = t.x_next;
            self.run(k + 1, cost + stage_cost(dam, u, price))?;
        }
        Ok(())
    }
}

fn exhaustive<F: Fn(&[f64]) -> f64>(valley: &Valley, x: &[f64], atom: &Atom, continuation: &F) -> Result<Decision> {
    let n = valley.n_dams();
    let mut s = Search {
        valley,
        x,
        atom,
        continuation,
        u: vec![0.0; n],
        tr: vec![StageTransition::default(); n],
        x_next: vec![0.0; n],
        best: None,
    };
    s.run(0, 0.0)?;
    let (objective, stage_cost, controls, transitions) =
        s.best.ok_or_else(|| Error::Shape(String::from("no feasible control combination")))?;
    Ok(Decision { controls, transitions, stage_cost, objective, fallback: false })
}

/// Cascades `u`, lowering any downstream control that became infeasible to
/// the largest admissible level. `pinned` marks a dam whose control must
/// not be repaired; `None` is returned if that control is infeasible.
fn evaluate_repaired<F: Fn(&[f64]) -> f64>(
    valley: &Valley,
    x: &[f64],
    atom: &Atom,
    continuation: &F,
    u: &mut [f64],
    pinned: Option<usize>,
) -> Result<Option<Decision>> {
    let n = valley.n_dams();
    let mut tr = vec![StageTransition::default(); n];
    let mut cost = 0.0;
    for &i in valley.topology.order() {
        let dam = &valley.dams[i];
        let z: f64 = valley.topology.children(i).iter().map(|&c| tr[c].outflow).sum();
        let levels = control_range(dam, i, x[i], atom.inflows[i], z)?;
        let top = *levels.last().expect("control_range is never empty");
        if u[i] > top || u[i] < levels[0] {
            if pinned == Some(i) {
                return Ok(None);
            }
            u[i] = if u[i] > top { top } else { levels[0] };
        }
        tr[i] = dam_step_unchecked(dam, x[i], u[i], atom.inflows[i], z);
        cost += stage_cost(dam, u[i], atom.prices[i]);
    }
    let x_next: Vec<f64> = tr.iter().map(|t| t.x_next).collect();
    let objective = cost + continuation(&x_next);
    Ok(Some(Decision { controls: u.to_vec(), transitions: tr, stage_cost: cost, objective, fallback: true }))
}

fn coordinate_descent<F: Fn(&[f64]) -> f64>(valley: &Valley, x: &[f64], atom: &Atom, continuation: &F) -> Result<Decision> {
    let mut u: Vec<f64> = valley.dams.iter().map(|d| d.control_levels[0]).collect();
    let mut best = evaluate_repaired(valley, x, atom, continuation, &mut u, None)?
        .expect("lowest levels are always repairable");
    for _ in 0..FALLBACK_SWEEPS {
        let mut changed = false;
        for &i in valley.topology.order() {
            for &level in &valley.dams[i].control_levels {
                if level == best.controls[i] {
                    continue;
                }
                let mut trial = best.controls.clone();
                trial[i] = level;
                if let Some(d) = evaluate_repaired(valley, x, atom, continuation, &mut trial, Some(i))? {
                    if d.objective < best.objective {
                        best = d;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(best)
}
