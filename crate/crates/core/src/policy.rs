//! Admissibility recovery: a feasible online policy from any approximate
//! global Bellman function, Monte Carlo evaluation, and comparison tables.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Atom, ScenarioSampler, Valley};
use crate::onestep::{best_controls, Decision};
use crate::par;
use crate::valuefn::{CutPool, Grid};

/// Global approximate Bellman function used by the online policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum GlobalValue {
    /// No continuation at all: the myopic policy.
    Zero,
    /// Product-grid Bellman functions `V_0 .. V_T`.
    DpGrid { stages: Vec<Grid> },
    /// Cut pools for `V_0 .. V_{T-1}`.
    SddpCuts { pools: Vec<CutPool> },
    /// Sum of per-dam Bellman functions, indexed `[dam][t]` for `t = 0..T`.
    DadpSum { local: Vec<Vec<Grid>> },
}

impl GlobalValue {
    pub fn source(&self) -> &'static str {
        match self {
            GlobalValue::Zero => "zero",
            GlobalValue::DpGrid { .. } => "dp-grid",
            GlobalValue::SddpCuts { .. } => "sddp-cuts",
            GlobalValue::DadpSum { .. } => "dadp-sum",
        }
    }

    /// Checks stage counts against the valley.
    pub fn check(&self, valley: &Valley) -> Result<()> {
        let horizon = valley.horizon();
        let ok = match self {
            GlobalValue::Zero => true,
            GlobalValue::DpGrid { stages } => stages.len() == horizon + 1 && stages.iter().all(|g| g.dim() == valley.n_dams()),
            GlobalValue::SddpCuts { pools } => pools.len() == horizon,
            GlobalValue::DadpSum { local } => {
                local.len() == valley.n_dams() && local.iter().all(|v| v.len() == horizon + 1 && v.iter().all(|g| g.dim() == 1))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(String::from("value function does not match the valley")))
        }
    }

    /// `V_t(x)`, cost convention. Stage `T` is the exact final cost for
    /// every source except [`GlobalValue::Zero`].
    pub fn eval(&self, valley: &Valley, t: usize, x: &[f64]) -> f64 {
        if let GlobalValue::Zero = self {
            return 0.0;
        }
        if t == valley.horizon() {
            return valley.final_cost(x);
        }
        match self {
            GlobalValue::Zero => 0.0,
            GlobalValue::DpGrid { stages } => stages[t].eval_clamped(x),
            GlobalValue::SddpCuts { pools } => pools[t].eval(x),
            GlobalValue::DadpSum { local } => local.iter().zip(x).map(|(v, &xi)| v[t].eval_clamped(&[xi])).sum(),
        }
    }
}

/// One-step DP with the coupling enforced exactly: minimizes stage cost
/// plus `V_{t+1}` of the cascaded next state.
pub fn one_step_policy(valley: &Valley, value: &GlobalValue, t: usize, x: &[f64], atom: &Atom, budget: u128) -> Result<Decision> {
    if t >= valley.horizon() {
        return Err(Error::Shape(String::from("stage out of range")));
    }
    best_controls(valley, x, atom, |xn: &[f64]| value.eval(valley, t + 1, xn), budget)
}

/// Quantiles of one dam's stock at one stage across scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockQuantiles {
    pub dam: usize,
    pub stage: usize,
    pub values: Vec<f64>,
}

pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub source: String,
    pub n_scenarios: usize,
    /// Payoff (opposite of cost) of each scenario, in scenario order.
    pub payoffs: Vec<f64>,
    pub mean_payoff: f64,
    pub std_error: f64,
    pub quantiles: Vec<StockQuantiles>,
    /// Replay mismatches or broken constraints; zero for a correct policy.
    pub violations: usize,
    /// Steps solved by the coordinate-descent fallback.
    pub fallback_steps: usize,
}

struct ScenarioOutcome {
    payoff: f64,
    states: Vec<Vec<f64>>,
    violations: usize,
    fallbacks: usize,
}

const BOUND_SLACK: f64 = 1e-9;

/// Replays `d` through the dynamics and counts broken constraints.
fn audit(valley: &Valley, x: &[f64], atom: &Atom, d: &Decision) -> usize {
    let Ok((replay, cost)) = valley.step(x, &d.controls, atom) else {
        return 1;
    };
    let mut bad = 0;
    if replay != d.transitions || cost != d.stage_cost {
        bad += 1;
    }
    for (i, tr) in replay.iter().enumerate() {
        let dam = &valley.dams[i];
        let z: f64 = valley.topology.children(i).iter().map(|&c| replay[c].outflow).sum();
        let balance = x[i] + atom.inflows[i] + z - d.controls[i] - tr.spill - tr.x_next;
        if tr.spill < 0.0
            || tr.x_next < dam.x_min - BOUND_SLACK
            || tr.x_next > dam.x_max + BOUND_SLACK
            || tr.outflow != d.controls[i] + tr.spill
            || balance.abs() > BOUND_SLACK * (1.0 + dam.x_max.abs())
            || (tr.spill > 0.0 && tr.x_next != dam.x_max)
        {
            bad += 1;
        }
    }
    bad
}

fn run_scenario(valley: &Valley, value: &GlobalValue, scenario: &[usize], budget: u128) -> Result<ScenarioOutcome> {
    let mut x = valley.initial_state();
    let mut states = Vec::with_capacity(scenario.len() + 1);
    states.push(x.clone());
    let mut cost = 0.0;
    let mut violations = 0;
    let mut fallbacks = 0;
    for (t, &w) in scenario.iter().enumerate() {
        let atom = &valley.noise.atoms(t)[w];
        let d = one_step_policy(valley, value, t, &x, atom, budget)?;
        violations += audit(valley, &x, atom, &d);
        fallbacks += d.fallback as usize;
        cost += d.stage_cost;
        x = d.next_state();
        states.push(x.clone());
    }
    cost += valley.final_cost(&x);
    Ok(ScenarioOutcome { payoff: -cost, states, violations, fallbacks })
}

/// Monte Carlo evaluation over `n` independent scenarios. Results are
/// reduced in scenario order, so parallel runs are reproducible.
pub fn simulate(valley: &Valley, value: &GlobalValue, n: usize, seed: u64, budget: u128) -> Result<SimReport> {
    if n == 0 {
        return Err(Error::ZeroSamples);
    }
    value.check(valley)?;
    let sampler = ScenarioSampler::new(seed);
    let outcomes: Result<Vec<ScenarioOutcome>> = par::map(n, |j| {
        let scenario = sampler.scenario(&valley.noise, j as u64);
        run_scenario(valley, value, &scenario, budget)
    })
    .into_iter()
    .collect();
    let outcomes = outcomes?;

    let payoffs: Vec<f64> = outcomes.iter().map(|o| o.payoff).collect();
    let (mean_payoff, std_error) = mean_and_std_error(&payoffs);
    let horizon = valley.horizon();
    let mut quantiles = Vec::with_capacity(valley.n_dams() * (horizon + 1));
    let mut column = vec![0.0; n];
    for dam in 0..valley.n_dams() {
        for stage in 0..=horizon {
            for (c, o) in column.iter_mut().zip(&outcomes) {
                *c = o.states[stage][dam];
            }
            column.sort_by(f64::total_cmp);
            let values = QUANTILE_LEVELS.iter().map(|&q| quantile_sorted(&column, q)).collect();
            quantiles.push(StockQuantiles { dam, stage, values });
        }
    }
    Ok(SimReport {
        source: String::from(value.source()),
        n_scenarios: n,
        payoffs,
        mean_payoff,
        std_error,
        quantiles,
        violations: outcomes.iter().map(|o| o.violations).sum(),
        fallback_steps: outcomes.iter().map(|o| o.fallbacks).sum(),
    })
}

/// Sample mean and standard error (`s / sqrt(n)`, zero for one sample).
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var / n))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Equal-width histogram over the data range; the last bin is closed.
pub fn histogram(xs: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.is_empty() {
        return Histogram { edges: vec![0.0; bins + 1], counts: vec![0; bins] };
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { lo + width * k as f64 }).collect();
    let mut counts = vec![0u64; bins];
    for &x in xs {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

/// One method's figures, payoff convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub label: String,
    /// Achieved (simulated) payoff.
    pub value: Option<f64>,
    /// Upper bound on payoff from the optimization stage.
    pub bound: Option<f64>,
    pub cpu_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub summary: MethodSummary,
    /// `100 (value - reference) / reference`.
    pub gap_percent: Option<f64>,
}

pub fn gap_percent(value: f64, reference: f64) -> Option<f64> {
    if reference == 0.0 || !reference.is_finite() || !value.is_finite() {
        None
    } else {
        Some(100.0 * (value - reference) / reference.abs())
    }
}

/// Gaps of every method against `methods[reference]`.
pub fn compare(methods: &[MethodSummary], reference: usize) -> Result<Vec<ComparisonRow>> {
    let Some(r) = methods.get(reference) else {
        return Err(Error::Shape(String::from("comparison needs a valid reference report")));
    };
    let rv = r.value;
    Ok(methods
        .iter()
        .map(|m| ComparisonRow {
            summary: m.clone(),
            gap_percent: match (m.value, rv) {
                (Some(v), Some(r)) => gap_percent(v, r),
                _ => None,
            },
        })
        .collect())
}
