//! Valley instances and the exact per-dam kernels shared by every solver.
//!
//! Cost convention: every quantity returned here is a cost (the opposite of
//! a gain). Reports flip the sign to talk about payoffs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the per-stage probability sum.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Physical and economic parameters of one reservoir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dam {
    pub id: i64,
    pub x_min: f64,
    pub x_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub x_target: f64,
    pub penalty_a: f64,
    pub epsilon: f64,
    pub control_levels: Vec<f64>,
    pub x0: f64,
}

impl Dam {
    fn violations(&self, out: &mut Vec<String>) {
        let id = self.id;
        let fields = [
            ("x_min", self.x_min),
            ("x_max", self.x_max),
            ("u_min", self.u_min),
            ("u_max", self.u_max),
            ("x_target", self.x_target),
            ("penalty_a", self.penalty_a),
            ("epsilon", self.epsilon),
            ("x0", self.x0),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                out.push(format!("dam {id}: {name} is not finite"));
            }
        }
        if !(self.x_min <= self.x0 && self.x0 <= self.x_max) {
            out.push(format!(
                "dam {id}: x0={} outside [{}, {}]",
                self.x0, self.x_min, self.x_max
            ));
        }
        if !(self.x_min <= self.x_max) {
            out.push(format!("dam {id}: x_min > x_max"));
        }
        if !(self.u_min <= self.u_max) {
            out.push(format!("dam {id}: u_min > u_max"));
        }
        if !(self.penalty_a >= 0.0) {
            out.push(format!("dam {id}: penalty_a must be >= 0"));
        }
        if !(self.epsilon >= 0.0) {
            out.push(format!("dam {id}: epsilon must be >= 0"));
        }
        if self.control_levels.is_empty() {
            out.push(format!("dam {id}: control_levels is empty"));
        }
        for (k, &u) in self.control_levels.iter().enumerate() {
            if !u.is_finite() || u < self.u_min || u > self.u_max {
                out.push(format!(
                    "dam {id}: control level {u} outside [{}, {}]",
                    self.u_min, self.u_max
                ));
            }
            if k > 0 && !(self.control_levels[k - 1] < u) {
                out.push(format!("dam {id}: control_levels not strictly increasing"));
            }
        }
    }
}

/// Downstream links of the valley. Dams are indexed by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValleyTopology {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Upstream-to-downstream order: every dam appears after all of its children.
    order: Vec<usize>,
}

impl ValleyTopology {
    /// Builds the topology from the downstream map. Fails on self-loops,
    /// dangling indices or cycles.
    pub fn new(parent: Vec<Option<usize>>) -> Result<Self> {
        let n = parent.len();
        let mut errors = Vec::new();
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            match *p {
                Some(p) if p >= n => errors.push(format!("dam #{i}: parent index {p} out of range")),
                Some(p) if p == i => errors.push(format!("dam #{i}: flows into itself")),
                Some(p) => children[p].push(i),
                None => {}
            }
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        // Kahn's algorithm, lowest index first among ready dams.
        let mut pending: Vec<usize> = children.iter().map(Vec::len).collect();
        let mut done = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let Some(next) = (0..n).find(|&i| !done[i] && pending[i] == 0) else {
                return Err(Error::Validation(vec![String::from(
                    "topology contains a cycle",
                )]));
            };
            done[next] = true;
            order.push(next);
            if let Some(p) = parent[next] {
                pending[p] -= 1;
            }
        }
        Ok(Self { parent, children, order })
    }

    /// A cascade `0 -> 1 -> ... -> n-1`.
    pub fn chain(n: usize) -> Self {
        let parent = (0..n).map(|i| if i + 1 < n { Some(i + 1) } else { None }).collect();
        Self::new(parent).expect("a chain is a valid topology")
    }

    pub fn n_dams(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, dam: usize) -> Option<usize> {
        self.parent[dam]
    }

    pub fn children(&self, dam: usize) -> &[usize] {
        &self.children[dam]
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Dams flowing into another dam, in index order. Each one carries a
    /// coupling equation.
    pub fn links(&self) -> Vec<usize> {
        (0..self.n_dams()).filter(|&i| self.parent[i].is_some()).collect()
    }

    /// Number of links between dam `dam` and the valley outlet.
    pub fn depth(&self, dam: usize) -> usize {
        let mut d = 0;
        let mut cur = dam;
        while let Some(p) = self.parent[cur] {
            d += 1;
            cur = p;
        }
        d
    }
}

/// One joint realization of the stage noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub p: f64,
    pub inflows: Vec<f64>,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageNoise {
    pub atoms: Vec<Atom>,
}

/// One marginal atom of a single dam, used to build product laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalAtom {
    pub p: f64,
    pub inflow: f64,
    pub price: f64,
}

/// Stagewise independent finite-support noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProcess {
    pub stages: Vec<StageNoise>,
}

impl NoiseProcess {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn atoms(&self, t: usize) -> &[Atom] {
        &self.stages[t].atoms
    }

    /// Product law of independent per-dam marginals. Fails when the product
    /// has more than `cap` atoms.
    pub fn product_stage(marginals: &[Vec<MarginalAtom>], cap: usize) -> Result<StageNoise> {
        let size = marginals.iter().try_fold(1usize, |acc, m| acc.checked_mul(m.len()));
        match size {
            Some(s) if s <= cap => {}
            Some(s) => {
                return Err(Error::BudgetExceeded {
                    what: String::from("product noise atoms per stage"),
                    size: s as u128,
                    budget: cap as u128,
                })
            }
            None => {
                return Err(Error::BudgetExceeded {
                    what: String::from("product noise atoms per stage"),
                    size: u128::MAX,
                    budget: cap as u128,
                })
            }
        }
        let mut atoms = vec![Atom { p: 1.0, inflows: Vec::new(), prices: Vec::new() }];
        for dam in marginals {
            let mut next = Vec::with_capacity(atoms.len() * dam.len());
            for a in &atoms {
                for m in dam {
                    let mut inflows = a.inflows.clone();
                    inflows.push(m.inflow);
                    let mut prices = a.prices.clone();
                    prices.push(m.price);
                    next.push(Atom { p: a.p * m.p, inflows, prices });
                }
            }
            atoms = next;
        }
        Ok(StageNoise { atoms })
    }

    fn violations(&self, n: usize, out: &mut Vec<String>) {
        if self.stages.is_empty() {
            out.push(String::from("noise: horizon must be at least 1"));
        }
        for (t, stage) in self.stages.iter().enumerate() {
            if stage.atoms.is_empty() {
                out.push(format!("noise stage {t}: no atoms"));
                continue;
            }
            let mut total = 0.0;
            for (k, atom) in stage.atoms.iter().enumerate() {
                if !(atom.p > 0.0) || !atom.p.is_finite() {
                    out.push(format!("noise stage {t} atom {k}: probability must be > 0"));
                }
                total += atom.p;
                if atom.inflows.len() != n || atom.prices.len() != n {
                    out.push(format!(
                        "noise stage {t} atom {k}: expected {n} inflows and prices, got {} and {}",
                        atom.inflows.len(),
                        atom.prices.len()
                    ));
                }
                if atom.inflows.iter().any(|a| !a.is_finite() || *a < 0.0) {
                    out.push(format!("noise stage {t} atom {k}: inflows must be finite and >= 0"));
                }
                if atom.prices.iter().any(|p| !p.is_finite()) {
                    out.push(format!("noise stage {t} atom {k}: prices must be finite"));
                }
            }
            if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
                out.push(format!("noise stage {t}: probabilities sum to {total}, expected 1"));
            }
        }
    }
}

/// A complete valley instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Valley {
    pub topology: ValleyTopology,
    pub dams: Vec<Dam>,
    pub noise: NoiseProcess,
}

impl Valley {
    /// Validates every invariant and reports all violations at once.
    pub fn new(topology: ValleyTopology, dams: Vec<Dam>, noise: NoiseProcess) -> Result<Self> {
        let mut errors = Vec::new();
        if dams.len() != topology.n_dams() {
            errors.push(format!(
                "topology has {} dams but {} dam records were given",
                topology.n_dams(),
                dams.len()
            ));
        }
        if dams.is_empty() {
            errors.push(String::from("valley has no dam"));
        }
        for d in &dams {
            d.violations(&mut errors);
        }
        noise.violations(dams.len(), &mut errors);
        if errors.is_empty() {
            Ok(Self { topology, dams, noise })
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn n_dams(&self) -> usize {
        self.dams.len()
    }

    pub fn horizon(&self) -> usize {
        self.noise.horizon()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.dams.iter().map(|d| d.x0).collect()
    }

    /// Terminal cost `sum_i K^i(x^i)`.
    pub fn final_cost(&self, x: &[f64]) -> f64 {
        self.dams.iter().zip(x).map(|(d, &xi)| final_cost(d, xi)).sum()
    }

    /// Largest outflow dam `dam` can ever release in one stage: either its
    /// turbine capacity or, when spilling from a full reservoir, its inflow
    /// plus everything received from upstream.
    pub fn outflow_cap(&self, dam: usize) -> f64 {
        let a_max = self
            .noise
            .stages
            .iter()
            .flat_map(|s| s.atoms.iter().map(move |a| a.inflows[dam]))
            .fold(0.0, f64::max);
        let upstream: f64 = self.topology.children(dam).iter().map(|&c| self.outflow_cap(c)).sum();
        self.dams[dam].u_max.max(a_max + upstream)
    }

    /// Cascades a full control vector through the valley at one stage, from
    /// upstream to downstream. Returns per-dam transitions and the summed
    /// stage cost.
    pub fn step(&self, x: &[f64], u: &[f64], atom: &Atom) -> Result<(Vec<StageTransition>, f64)> {
        let n = self.n_dams();
        let mut out = vec![StageTransition::default(); n];
        let mut cost = 0.0;
        for &i in self.topology.order() {
            let z = self.topology.children(i).iter().map(|&c| out[c].outflow).sum();
            let tr = dam_step(&self.dams[i], i, x[i], u[i], atom.inflows[i], z)?;
            cost += stage_cost(&self.dams[i], u[i], atom.prices[i]);
            out[i] = tr;
        }
        Ok((out, cost))
    }
}

/// Result of one dam transition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTransition {
    pub x_next: f64,
    pub spill: f64,
    /// Turbined plus spilled water, i.e. the inflow of the downstream dam.
    pub outflow: f64,
}

/// Upper bound on the turbined flow that keeps the stock above `x_min`.
#[inline]
pub fn control_upper(dam: &Dam, x: f64, a: f64, z: f64) -> f64 {
    dam.u_max.min(x + a + z - dam.x_min)
}

/// Applies the reservoir dynamics with overflow.
pub fn dam_step(dam: &Dam, index: usize, x: f64, u: f64, a: f64, z: f64) -> Result<StageTransition> {
    let upper = control_upper(dam, x, a, z);
    if u > upper || u < dam.u_min {
        return Err(Error::InfeasibleControl { dam: index, u, upper });
    }
    Ok(dam_step_unchecked(dam, x, u, a, z))
}

#[inline]
pub(crate) fn dam_step_unchecked(dam: &Dam, x: f64, u: f64, a: f64, z: f64) -> StageTransition {
    let level = x + a + z - u;
    if level > dam.x_max {
        let spill = level - dam.x_max;
        StageTransition { x_next: dam.x_max, spill, outflow: u + spill }
    } else {
        StageTransition { x_next: level, spill: 0.0, outflow: u }
    }
}

/// The admissible discrete controls: a contiguous, ascending slice of
/// `control_levels`.
pub fn control_range(dam: &Dam, index: usize, x: f64, a: f64, z: f64) -> Result<&[f64]> {
    let upper = control_upper(dam, x, a, z);
    if dam.u_min > upper {
        return Err(Error::EmptyControlRange { dam: index, u_min: dam.u_min, upper });
    }
    let levels = &dam.control_levels;
    let lo = levels.partition_point(|&u| u < dam.u_min);
    let hi = levels.partition_point(|&u| u <= upper);
    if lo >= hi {
        return Err(Error::EmptyControlRange { dam: index, u_min: dam.u_min, upper });
    }
    Ok(&levels[lo..hi])
}

/// Opposite of the turbine gain `p u - eps u^2`.
#[inline]
pub fn stage_cost(dam: &Dam, u: f64, price: f64) -> f64 {
    -price * u + dam.epsilon * u * u
}

/// One-sided quadratic penalty below the target volume.
#[inline]
pub fn final_cost(dam: &Dam, x_t: f64) -> f64 {
    let short = (x_t - dam.x_target).min(0.0);
    dam.penalty_a * short * short
}

/// Deterministic source of independent noise scenarios.
///
/// Scenario `j` is drawn from its own ChaCha stream, so scenarios can be
/// generated in any order (or in parallel) with identical results.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioSampler {
    seed: u64,
}

impl ScenarioSampler {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Atom indices, one per stage.
    pub fn scenario(&self, noise: &NoiseProcess, j: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(j);
        noise.stages.iter().map(|s| draw_atom(&mut rng, &s.atoms)).collect()
    }
}

fn draw_atom(rng: &mut ChaCha8Rng, atoms: &[Atom]) -> usize {
    if atoms.len() == 1 {
        return 0;
    }
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (k, a) in atoms.iter().enumerate() {
        acc += a.p;
        if r < acc {
            return k;
        }
    }
    atoms.len() - 1
}

/// Draws one scenario and returns the realized `(inflows, prices)` per stage.
pub fn sample_scenario(noise: &NoiseProcess, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    ScenarioSampler::new(seed)
        .scenario(noise, 0)
        .into_iter()
        .enumerate()
        .map(|(t, k)| {
            let a = &noise.stages[t].atoms[k];
            (a.inflows.clone(), a.prices.clone())
        })
        .collect()
}
