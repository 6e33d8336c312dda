//! Dual approximate dynamic programming with a constant information
//! variable.
//!
//! Each coupling `z^{parent} = g^{child}` (one per dam that flows into
//! another) is dualized with a deterministic multiplier per stage, which
//! stands for the expectation of the true random multiplier. The
//! Lagrangian then splits into one 1-D dynamic program per dam:
//!
//! ```text
//! min E[ sum_t L_t^i + sum_{c in children(i)} lambda_t^c z_t^c - lambda_t^i g_t^i + K^i ]
//! ```
//!
//! where `z^c` is the (decoupled) water dam `i` receives from child `c`
//! and `g^i` its own outflow. The multipliers are driven to cancel the
//! expected deviation `E[z^c - g^c]`, the supergradient of the dual
//! function.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lbfgs::{self, sup_norm, LbfgsConfig};
use crate::model::{control_range, dam_step_unchecked, final_cost, stage_cost, Atom, ScenarioSampler, StageTransition, Valley};
use crate::par;
use crate::valuefn::{locate, step_knots, uniform_knots, Grid};

/// Most levels the default decoupled-inflow set may hold.
pub const MAX_DEFAULT_Z_LEVELS: usize = 21;

/// Default soft-min temperature, relative to the mean absolute price.
pub const DEFAULT_SMOOTHING: f64 = 0.01;

/// Soft-min branches lighter than this are dropped from the feedback.
const NEGLIGIBLE_WEIGHT: f64 = 1e-16;

/// How expectations of the coupling deviation are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientMode {
    /// Propagate the state law of every subproblem exactly over its knots.
    Exact,
    /// Average over this many shared noise scenarios.
    MonteCarlo(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// `lambda += rho * gradient`.
    FixedStep { rho: f64 },
    /// Limited-memory quasi-Newton ascent on the dual function.
    QuasiNewton { memory: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DadpConfig {
    /// Per-dam 1-D state knots.
    pub knots: Vec<Vec<f64>>,
    /// Admissible received flows, one ordered set per link.
    pub z_levels: Vec<Vec<f64>>,
    pub gradient: GradientMode,
    pub max_iterations: usize,
    /// Stop once `max |E[z - g]|` is at most this.
    pub tolerance: f64,
    pub optimizer: Optimizer,
    pub rng_seed: u64,
    /// Temperature of the entropic soft-min replacing the local minima
    /// (0 keeps the hard minimum). A positive value makes the dual smooth
    /// and lowers it by at most `temperature * ln(#choices)` per decision,
    /// so it stays a lower bound on the optimal cost.
    pub smoothing: f64,
}

impl DadpConfig {
    /// Defaults: exact expectations, quasi-Newton with memory 10, 300
    /// iterations, default z-levels and tolerance.
    pub fn new(valley: &Valley, knots: Vec<Vec<f64>>) -> Self {
        let links = Links::new(valley);
        Self {
            knots,
            z_levels: links.dams.iter().map(|&c| default_z_levels(valley, c)).collect(),
            gradient: GradientMode::Exact,
            max_iterations: 300,
            tolerance: default_tolerance(valley),
            optimizer: Optimizer::QuasiNewton { memory: 10 },
            rng_seed: 0,
            smoothing: if links.is_empty() { 0.0 } else { DEFAULT_SMOOTHING * mean_abs_price(valley) },
        }
    }

    fn validate(&self, valley: &Valley, links: &Links) -> Result<()> {
        crate::dp::check_knots(valley, &self.knots)?;
        if self.z_levels.len() != links.len() {
            return Err(Error::Shape(format!("{} z-level sets for {} links", self.z_levels.len(), links.len())));
        }
        for (l, z) in self.z_levels.iter().enumerate() {
            if z.is_empty() || z.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Shape(format!("link {l}: z-levels must be nonempty, finite and >= 0")));
            }
        }
        if !(self.smoothing.is_finite() && self.smoothing >= 0.0) {
            return Err(Error::Shape(String::from("smoothing must be finite and >= 0")));
        }
        if self.gradient == GradientMode::MonteCarlo(0) {
            return Err(Error::ZeroSamples);
        }
        Ok(())
    }
}

/// `1e-3` times the mean reservoir range.
pub fn default_tolerance(valley: &Valley) -> f64 {
    let n = valley.n_dams() as f64;
    1e-3 * valley.dams.iter().map(|d| d.x_max - d.x_min).sum::<f64>() / n
}

fn is_integral(v: f64) -> bool {
    libm::floor(v) == v
}

/// Default received-flow levels on the link leaving `child`: every integer
/// from 0 to the largest possible outflow when the valley lives on the
/// integer lattice and that fits in [`MAX_DEFAULT_Z_LEVELS`], otherwise
/// that many equispaced levels on the same interval.
pub fn default_z_levels(valley: &Valley, child: usize) -> Vec<f64> {
    let cap = valley.outflow_cap(child);
    let lattice = valley.dams.iter().all(|d| {
        [d.x_min, d.x_max, d.x0].into_iter().chain(d.control_levels.iter().copied()).all(is_integral)
    }) && valley
        .noise
        .stages
        .iter()
        .all(|s| s.atoms.iter().all(|a| a.inflows.iter().copied().all(is_integral)));
    if lattice && cap + 1.0 <= MAX_DEFAULT_Z_LEVELS as f64 {
        step_knots(0.0, cap, 1.0)
    } else {
        uniform_knots(0.0, cap, MAX_DEFAULT_Z_LEVELS)
    }
}

/// Coupling links, identified by their upstream dam.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Links {
    /// Upstream dam of each link, ascending.
    pub dams: Vec<usize>,
    slot: Vec<Option<usize>>,
}

impl Links {
    pub fn new(valley: &Valley) -> Self {
        let dams = valley.topology.links();
        let mut slot = vec![None; valley.n_dams()];
        for (l, &d) in dams.iter().enumerate() {
            slot[d] = Some(l);
        }
        Self { dams, slot }
    }

    pub fn len(&self) -> usize {
        self.dams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dams.is_empty()
    }

    /// Link leaving `dam`, if it has a parent.
    pub fn of(&self, dam: usize) -> Option<usize> {
        self.slot[dam]
    }
}

/// Expected multipliers, laid out stage-major: `lambda[t * n_links + l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub horizon: usize,
    pub n_links: usize,
    pub lambda: Vec<f64>,
    pub iteration: usize,
    /// Latest expected deviation `E[z - g]`, same layout as `lambda`.
    pub gradient: Vec<f64>,
    /// Dual function value (cost convention).
    pub dual_value: f64,
}

impl DualState {
    pub fn zeros(horizon: usize, n_links: usize) -> Self {
        let n = horizon * n_links;
        Self { horizon, n_links, lambda: vec![0.0; n], iteration: 0, gradient: vec![0.0; n], dual_value: 0.0 }
    }

    pub fn get(&self, t: usize, link: usize) -> f64 {
        self.lambda[t * self.n_links + link]
    }
}

/// One optimal local decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalChoice {
    pub u: f64,
    /// Received flow per child, in the order of `topology.children`.
    pub z: Vec<f64>,
    pub transition: StageTransition,
    /// Local value at this point (the soft-min when smoothing).
    pub objective: f64,
    /// Soft-min law over the candidate decisions; empty for a hard minimum.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mix: Vec<Branch>,
}

/// A candidate decision with its soft-min weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub weight: f64,
    pub z: Vec<f64>,
    pub outflow: f64,
    pub x_next: f64,
}

/// Solution of one dam's subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamSolution {
    pub dam: usize,
    /// `V_0^i .. V_T^i` on the dam's knots.
    pub values: Vec<Grid>,
    /// Argmins indexed `[t][atom][knot]`.
    pub feedback: Vec<Vec<Vec<LocalChoice>>>,
    /// `V_0^i(x_0^i)`.
    pub optimal_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub dams: Vec<DamSolution>,
}

impl SubproblemSolution {
    /// Dual function value: sum of subproblem optima.
    pub fn dual_value(&self) -> f64 {
        self.dams.iter().map(|d| d.optimal_value).sum()
    }

    /// Per-dam value grids `[dam][t]`.
    pub fn local_values(&self) -> Vec<Vec<Grid>> {
        self.dams.iter().map(|d| d.values.clone()).collect()
    }
}

struct Local<'a> {
    valley: &'a Valley,
    dam: usize,
    links: &'a Links,
    z_levels: &'a [Vec<f64>],
    lambda: &'a DualState,
    temperature: f64,
}

impl Local<'_> {
    fn children(&self) -> &[usize] {
        self.valley.topology.children(self.dam)
    }

    /// Minimizes the local stage objective at `(t, x, atom)` with
    /// continuation `next`; received flows enumerate lexicographically
    /// outside, controls ascending inside, first minimum wins.
    fn step(&self, t: usize, x: f64, atom: &Atom, next: &dyn Fn(f64) -> f64) -> Result<LocalChoice> {
        let i = self.dam;
        let dam = &self.valley.dams[i];
        let children = self.children();
        let out_price = self.links.of(i).map_or(0.0, |l| self.lambda.get(t, l));
        let in_links: Vec<usize> = children.iter().map(|&c| self.links.of(c).expect("child has a link")).collect();
        let a = atom.inflows[i];
        let price = atom.prices[i];

        let mut idx = vec![0usize; children.len()];
        let mut z = vec![0.0; children.len()];
        let mut best: Option<LocalChoice> = None;
        let mut candidates: Vec<(f64, Branch)> = Vec::new();
        loop {
            let mut z_total = 0.0;
            let mut z_cost = 0.0;
            for (k, &l) in in_links.iter().enumerate() {
                z[k] = self.z_levels[l][idx[k]];
                z_total += z[k];
                z_cost += self.lambda.get(t, l) * z[k];
            }
            for &u in control_range(dam, i, x, a, z_total)? {
                let tr = dam_step_unchecked(dam, x, u, a, z_total);
                let obj = stage_cost(dam, u, price) + z_cost - out_price * tr.outflow + next(tr.x_next);
                if self.temperature > 0.0 {
                    candidates.push((obj, Branch { weight: 0.0, z: z.clone(), outflow: tr.outflow, x_next: tr.x_next }));
                }
                if best.as_ref().is_none_or(|b| obj < b.objective) {
                    best = Some(LocalChoice { u, z: z.clone(), transition: tr, objective: obj, mix: Vec::new() });
                }
            }
            // Odometer over the received-flow tuple, last child fastest.
            let mut k = children.len();
            loop {
                if k == 0 {
                    let best = best.ok_or_else(|| Error::Shape(String::from("empty local decision set")))?;
                    return Ok(self.soften(best, candidates));
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.z_levels[in_links[k]].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

impl Local<'_> {
    fn soften(&self, mut best: LocalChoice, candidates: Vec<(f64, Branch)>) -> LocalChoice {
        if candidates.is_empty() {
            return best;
        }
        let tau = self.temperature;
        let m = best.objective;
        let total: f64 = candidates.iter().map(|(c, _)| libm::exp(-(c - m) / tau)).sum();
        best.objective = m - tau * libm::log(total);
        best.mix = candidates
            .into_iter()
            .filter_map(|(c, mut b)| {
                b.weight = libm::exp(-(c - m) / tau) / total;
                (b.weight >= NEGLIGIBLE_WEIGHT).then_some(b)
            })
            .collect();
        best
    }
}

fn local_next<'a>(valley: &'a Valley, dam: usize, values: &'a [Grid], t: usize) -> impl Fn(f64) -> f64 + 'a {
    let last = t + 1 == valley.horizon();
    let d = &valley.dams[dam];
    move |x: f64| if last { final_cost(d, x) } else { values[t + 1].eval_clamped(&[x]) }
}

/// Backward 1-D dynamic program of dam `dam` under multipliers `lambda`.
pub fn solve_subproblem(valley: &Valley, config: &DadpConfig, dam: usize, lambda: &DualState) -> Result<DamSolution> {
    let links = Links::new(valley);
    solve_local(valley, config, &links, dam, lambda)
}

fn solve_local(valley: &Valley, config: &DadpConfig, links: &Links, dam: usize, lambda: &DualState) -> Result<DamSolution> {
    let local = Local { valley, dam, links, z_levels: &config.z_levels, lambda, temperature: config.smoothing };
    let knots = &config.knots[dam];
    let horizon = valley.horizon();
    let d = &valley.dams[dam];
    let terminal = Grid::from_fn(vec![knots.clone()], |x| final_cost(d, x[0]))?;
    let mut values = vec![terminal; horizon + 1];
    let mut feedback = vec![Vec::new(); horizon];
    for t in (0..horizon).rev() {
        let next = local_next(valley, dam, &values, t);
        let atoms = valley.noise.atoms(t);
        let mut v = vec![0.0; knots.len()];
        let mut table = Vec::with_capacity(atoms.len());
        for atom in atoms {
            let mut row = Vec::with_capacity(knots.len());
            for (k, &x) in knots.iter().enumerate() {
                let c = local.step(t, x, atom, &next)?;
                v[k] += atom.p * c.objective;
                row.push(c);
            }
            table.push(row);
        }
        drop(next);
        values[t] = Grid::new(vec![knots.clone()], v)?;
        feedback[t] = table;
    }
    let optimal_value = values[0].eval_clamped(&[d.x0]);
    Ok(DamSolution { dam, values, feedback, optimal_value })
}

/// Solves every subproblem (in parallel with the `std` feature).
pub fn solve_subproblems(valley: &Valley, config: &DadpConfig, lambda: &DualState) -> Result<SubproblemSolution> {
    let links = Links::new(valley);
    config.validate(valley, &links)?;
    check_lambda(valley, &links, lambda)?;
    let dams: Result<Vec<DamSolution>> = par::map(valley.n_dams(), |i| solve_local(valley, config, &links, i, lambda))
        .into_iter()
        .collect();
    Ok(SubproblemSolution { dams: dams? })
}

fn check_lambda(valley: &Valley, links: &Links, lambda: &DualState) -> Result<()> {
    if lambda.horizon != valley.horizon() || lambda.n_links != links.len() || lambda.lambda.len() != lambda.horizon * lambda.n_links {
        return Err(Error::Shape(String::from("multiplier array does not match the valley")));
    }
    if lambda.lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape(String::from("multipliers must be finite")));
    }
    Ok(())
}

/// Expected outflow and expected received flows of one dam, per stage:
/// `(E[g_t], E[z_t^c] for each child c)`.
struct Moments {
    outflow: Vec<f64>,
    received: Vec<Vec<f64>>,
}

/// Exact moments: the state law is pushed forward over the knots, splitting
/// off-knot mass with the interpolation weights. This is the derivative of
/// the interpolated dual function itself.
fn exact_moments(valley: &Valley, config: &DadpConfig, sol: &DamSolution) -> Moments {
    let horizon = valley.horizon();
    let knots = &config.knots[sol.dam];
    let n_children = valley.topology.children(sol.dam).len();
    let mut outflow = vec![0.0; horizon];
    let mut received = vec![vec![0.0; n_children]; horizon];
    let mut mass = vec![0.0; knots.len()];
    spread(knots, valley.dams[sol.dam].x0, 1.0, &mut mass);
    for t in 0..horizon {
        let mut next = vec![0.0; knots.len()];
        for (w, atom) in valley.noise.atoms(t).iter().enumerate() {
            for (k, &m) in mass.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let c = &sol.feedback[t][w][k];
                let pm = atom.p * m;
                if c.mix.is_empty() {
                    outflow[t] += pm * c.transition.outflow;
                    for (r, z) in received[t].iter_mut().zip(&c.z) {
                        *r += pm * z;
                    }
                    spread(knots, c.transition.x_next, pm, &mut next);
                }
                for b in &c.mix {
                    let bm = pm * b.weight;
                    outflow[t] += bm * b.outflow;
                    for (r, z) in received[t].iter_mut().zip(&b.z) {
                        *r += bm * z;
                    }
                    spread(knots, b.x_next, bm, &mut next);
                }
            }
        }
        mass = next;
    }
    Moments { outflow, received }
}

fn spread(knots: &[f64], x: f64, m: f64, into: &mut [f64]) {
    let (k0, w) = locate(knots, x);
    if w == 0.0 {
        into[k0] += m;
    } else if w == 1.0 {
        into[k0 + 1] += m;
    } else {
        into[k0] += m * (1.0 - w);
        into[k0 + 1] += m * w;
    }
}

/// One dam simulated along scenario `j` from its actual states; soft-min
/// decisions are drawn from their law with a stream private to `(dam, j)`.
fn scenario_moments(
    valley: &Valley,
    config: &DadpConfig,
    links: &Links,
    lambda: &DualState,
    sol: &DamSolution,
    scenario: &[usize],
    j: u64,
) -> Result<Moments> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(1 + sol.dam as u64)));
    rng.set_stream(j);
    let local = Local { valley, dam: sol.dam, links, z_levels: &config.z_levels, lambda, temperature: config.smoothing };
    let horizon = valley.horizon();
    let mut outflow = vec![0.0; horizon];
    let mut received = Vec::with_capacity(horizon);
    let mut x = valley.dams[sol.dam].x0;
    for (t, &w) in scenario.iter().enumerate() {
        let next = local_next(valley, sol.dam, &sol.values, t);
        let c = local.step(t, x, &valley.noise.atoms(t)[w], &next)?;
        if c.mix.is_empty() {
            outflow[t] = c.transition.outflow;
            received.push(c.z);
            x = c.transition.x_next;
        } else {
            let r: f64 = rng.random();
            let mut acc = 0.0;
            let b = c.mix.iter().find(|b| {
                acc += b.weight;
                r < acc
            });
            let b = b.unwrap_or_else(|| c.mix.last().expect("nonempty mix"));
            outflow[t] = b.outflow;
            received.push(b.z.clone());
            x = b.x_next;
        }
    }
    Ok(Moments { outflow, received })
}

fn deviation(valley: &Valley, links: &Links, moments: &[Moments]) -> Vec<f64> {
    let horizon = valley.horizon();
    let mut g = vec![0.0; horizon * links.len()];
    for (l, &c) in links.dams.iter().enumerate() {
        let p = valley.topology.parent(c).expect("link has a parent");
        let slot = valley.topology.children(p).iter().position(|&x| x == c).expect("child of parent");
        for t in 0..horizon {
            g[t * links.len() + l] = moments[p].received[t][slot] - moments[c].outflow[t];
        }
    }
    g
}

/// Expected coupling deviation `E[z^c - g^c]` per `(stage, link)` (the
/// supergradient of the dual function) and the dual value.
pub fn dual_gradient(valley: &Valley, solutions: &SubproblemSolution, lambda: &DualState, config: &DadpConfig) -> Result<(Vec<f64>, f64)> {
    let links = Links::new(valley);
    check_lambda(valley, &links, lambda)?;
    let gradient = match config.gradient {
        GradientMode::Exact => {
            let m: Vec<Moments> = par::map(solutions.dams.len(), |i| exact_moments(valley, config, &solutions.dams[i]));
            deviation(valley, &links, &m)
        }
        GradientMode::MonteCarlo(n) => {
            let per = scenario_deviations(valley, solutions, lambda, config, n)?;
            let mut mean = vec![0.0; lambda.lambda.len()];
            for dev in &per {
                for (a, b) in mean.iter_mut().zip(dev) {
                    *a += b;
                }
            }
            for v in mean.iter_mut() {
                *v /= n as f64;
            }
            mean
        }
    };
    Ok((gradient, solutions.dual_value()))
}

/// Coupling deviation `z^c - g^c` per `(stage, link)` along each of the
/// first `n` scenarios of the configured seed.
pub fn scenario_deviations(
    valley: &Valley,
    solutions: &SubproblemSolution,
    lambda: &DualState,
    config: &DadpConfig,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::ZeroSamples);
    }
    let links = Links::new(valley);
    check_lambda(valley, &links, lambda)?;
    let sampler = ScenarioSampler::new(config.rng_seed);
    par::map(n, |j| {
        let scenario = sampler.scenario(&valley.noise, j as u64);
        let m: Result<Vec<Moments>> = solutions
            .dams
            .iter()
            .map(|s| scenario_moments(valley, config, &links, lambda, s, &scenario, j as u64))
            .collect();
        Ok(deviation(valley, &links, &m?))
    })
    .into_iter()
    .collect()
}

/// Dual value and supergradient at `lambda`.
pub fn evaluate_dual(valley: &Valley, config: &DadpConfig, lambda: &DualState) -> Result<(SubproblemSolution, Vec<f64>, f64)> {
    let sol = solve_subproblems(valley, config, lambda)?;
    let (g, v) = dual_gradient(valley, &sol, lambda, config)?;
    Ok((sol, g, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DadpIterate {
    pub iteration: usize,
    pub dual_value: f64,
    pub gradient_norm: f64,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DadpResult {
    /// Best multipliers found (highest dual value, or the converged point).
    pub dual: DualState,
    pub solution: SubproblemSolution,
    pub converged: bool,
    pub history: Vec<DadpIterate>,
}

impl DadpResult {
    /// Guaranteed lower bound on the optimal cost (up to grid error).
    pub fn dual_value(&self) -> f64 {
        self.dual.dual_value
    }
}

pub fn solve_dadp(valley: &Valley, config: &DadpConfig) -> Result<DadpResult> {
    solve_dadp_with(valley, config, |_| {})
}

/// Coordination loop. `on_iteration` sees every accepted iterate.
pub fn solve_dadp_with(valley: &Valley, config: &DadpConfig, mut on_iteration: impl FnMut(&DadpIterate)) -> Result<DadpResult> {
    let links = Links::new(valley);
    config.validate(valley, &links)?;
    let horizon = valley.horizon();
    let start = DualState::zeros(horizon, links.len());
    let mut history = Vec::new();
    let mut record = |iteration: usize, lambda: &[f64], dual_value: f64, gradient: &[f64]| {
        let it = DadpIterate { iteration, dual_value, gradient_norm: sup_norm(gradient), lambda: lambda.to_vec() };
        on_iteration(&it);
        history.push(it);
    };
    let with = |lambda: &[f64]| DualState { lambda: lambda.to_vec(), ..start.clone() };

    let (best_lambda, iterations, converged) = match config.optimizer {
        Optimizer::FixedStep { rho } => {
            let mut lambda = start.lambda.clone();
            let mut best = (lambda.clone(), f64::NEG_INFINITY);
            let mut converged = false;
            let mut k = 0;
            loop {
                let (_, g, v) = evaluate_dual(valley, config, &with(&lambda))?;
                record(k, &lambda, v, &g);
                let done = sup_norm(&g) <= config.tolerance;
                if v > best.1 || done {
                    best = (lambda.clone(), v);
                }
                if done {
                    converged = true;
                    break;
                }
                if k == config.max_iterations {
                    break;
                }
                for (l, gi) in lambda.iter_mut().zip(&g) {
                    *l += rho * gi;
                }
                k += 1;
            }
            (best.0, k, converged)
        }
        Optimizer::QuasiNewton { memory } => {
            let scale = mean_abs_price(valley);
            let cfg = LbfgsConfig {
                memory,
                max_iterations: config.max_iterations,
                tolerance: config.tolerance,
                initial_step: 0.1 * scale.max(f64::MIN_POSITIVE),
                ..LbfgsConfig::default()
            };
            let objective = |lambda: &[f64]| -> Result<(f64, Vec<f64>)> {
                let (_, g, v) = evaluate_dual(valley, config, &with(lambda))?;
                Ok((-v, g.iter().map(|x| -x).collect()))
            };
            let r = lbfgs::minimize(objective, start.lambda.clone(), &cfg, |k, x, f, g| {
                let ascent: Vec<f64> = g.iter().map(|v| -v).collect();
                record(k, x, -f, &ascent);
            })?;
            (r.x, r.iterations, r.converged)
        }
    };

    let dual_state = with(&best_lambda);
    let (solution, gradient, dual_value) = evaluate_dual(valley, config, &dual_state)?;
    Ok(DadpResult {
        dual: DualState { iteration: iterations, gradient, dual_value, ..dual_state },
        solution,
        converged,
        history,
    })
}

fn mean_abs_price(valley: &Valley) -> f64 {
    let total: f64 = valley
        .noise
        .stages
        .iter()
        .flat_map(|s| s.atoms.iter())
        .map(|a| a.p * a.prices.iter().map(|p| p.abs()).sum::<f64>())
        .sum();
    total / (valley.horizon() * valley.n_dams()) as f64
}
