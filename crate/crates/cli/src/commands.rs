//! Subcommand definitions and their execution.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hydrovalley_core::dadp::{self, DadpConfig, GradientMode, Links, Optimizer};
use hydrovalley_core::dp::{self, DpConfig};
use hydrovalley_core::lbfgs::sup_norm;
use hydrovalley_core::generate::{generate_valley, GeneratorSpec, Profile, Shape};
use hydrovalley_core::onestep::DEFAULT_ENUMERATION_BUDGET;
use hydrovalley_core::policy::{self, GlobalValue, MethodSummary};
use hydrovalley_core::sddp::{self, SddpConfig};
use hydrovalley_core::valuefn::{step_knots, uniform_knots};
use hydrovalley_core::Valley;
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchCase, BenchSettings, BenchSolver};
use crate::error::{io_err, CliError, Result};
use crate::output::{self, num, opt_num, percent, sidecar, Format, Table, ValueFile};
use crate::valley_file::{load_valley, save_valley, LoadOptions, DEFAULT_PRODUCT_CAP};

#[derive(Debug, Parser)]
#[command(name = "hydrovalley", version, about = "Stochastic management of hydro valleys: DP, SDDP and price decomposition")]
pub struct Cli {
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Console table format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded academic or heterogeneous valley.
    Generate(GenerateArgs),
    /// Compute Bellman functions with one of the solvers.
    #[command(subcommand)]
    Solve(Solver),
    /// Monte Carlo evaluation of the one-step policy of a value file.
    Simulate(SimulateArgs),
    /// Tabulate simulation reports against a reference.
    Compare(CompareArgs),
    /// Time the optimization stage over growing valleys.
    Bench(BenchArgs),
    /// One benchmark instance (used by `bench`).
    #[command(hide = true)]
    BenchRun(BenchRunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Chain,
    Tree,
}

impl From<ShapeArg> for Shape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Chain => Shape::Chain,
            ShapeArg::Tree => Shape::Tree,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Academic,
    Realistic,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = ShapeArg::Chain)]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 4)]
    pub dams: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ProfileArg::Academic)]
    pub profile: ProfileArg,
    #[arg(long, default_value_t = 12)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValleyArgs {
    /// Valley instance (JSON).
    #[arg(long)]
    pub valley: PathBuf,
    /// Materialize stages given as independent per-dam marginals.
    #[arg(long)]
    pub expand_marginals: bool,
    /// Most atoms an expanded stage may have.
    #[arg(long, default_value_t = DEFAULT_PRODUCT_CAP)]
    pub product_cap: usize,
}

impl ValleyArgs {
    fn load(&self) -> Result<Valley> {
        load_valley(&self.valley, LoadOptions { expand_marginals: self.expand_marginals, product_cap: self.product_cap })
    }
}

#[derive(Debug, Args)]
pub struct KnotArgs {
    /// Equispaced knots per dam, bounds included.
    #[arg(long, default_value_t = 51)]
    pub knots: usize,
    /// Knot spacing instead of a count (e.g. 1 for integer valleys).
    #[arg(long)]
    pub knot_step: Option<f64>,
}

impl KnotArgs {
    fn build(&self, valley: &Valley) -> Result<Vec<Vec<f64>>> {
        if let Some(h) = self.knot_step {
            if !(h.is_finite() && h > 0.0) {
                return Err(CliError::Invalid(String::from("--knot-step must be positive")));
            }
            return Ok(valley.dams.iter().map(|d| step_knots(d.x_min, d.x_max, h)).collect());
        }
        if self.knots < 2 {
            return Err(CliError::Invalid(String::from("--knots must be at least 2")));
        }
        Ok(valley.dams.iter().map(|d| uniform_knots(d.x_min, d.x_max, self.knots)).collect())
    }
}

#[derive(Debug, Subcommand)]
pub enum Solver {
    /// Exact dynamic programming on the product grid.
    Dp(DpArgs),
    /// Discrete-control SDDP with finite-difference cuts.
    Sddpd(SddpArgs),
    /// Dual approximate dynamic programming.
    Dadp(DadpArgs),
}

#[derive(Debug, Args)]
pub struct DpArgs {
    #[command(flatten)]
    pub valley: ValleyArgs,
    #[command(flatten)]
    pub knots: KnotArgs,
    /// Most elementary evaluations allowed before refusing.
    #[arg(long, default_value_t = 5e10)]
    pub work_budget: f64,
    /// Value file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SddpArgs {
    #[command(flatten)]
    pub valley: ValleyArgs,
    #[command(flatten)]
    pub knots: KnotArgs,
    #[arg(long, default_value_t = 25)]
    pub iters: usize,
    /// Forward scenarios per iteration.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Cuts kept per stage (oldest evicted first).
    #[arg(long, default_value_t = 100)]
    pub cuts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drop cuts dominated at every visited state.
    #[arg(long)]
    pub prune_level1: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Samples {
    Exact,
    Count(usize),
}

fn parse_samples(s: &str) -> std::result::Result<Samples, String> {
    if s == "exact" {
        return Ok(Samples::Exact);
    }
    s.parse().map(Samples::Count).map_err(|_| format!("expected `exact` or a scenario count, got `{s}`"))
}

#[derive(Debug, Args)]
pub struct DadpArgs {
    #[command(flatten)]
    pub valley: ValleyArgs,
    #[command(flatten)]
    pub knots: KnotArgs,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    /// Stop when the largest expected coupling deviation is below this
    /// (default: 1e-3 times the mean reservoir range).
    #[arg(long)]
    pub tol: Option<f64>,
    /// `exact`, or a number of shared Monte Carlo scenarios.
    #[arg(long, value_parser = parse_samples, default_value = "exact")]
    pub samples: Samples,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Soft-min temperature in currency units (default: 1% of the mean price, 0 without links).
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Fixed ascent step instead of the quasi-Newton optimizer.
    #[arg(long)]
    pub step: Option<f64>,
    /// Quasi-Newton memory.
    #[arg(long, default_value_t = 10)]
    pub memory: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub valley: ValleyArgs,
    /// Value file, or a dadp output directory.
    #[arg(long)]
    pub vf: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Payoff histogram bins.
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Control combinations enumerated per step before the fallback.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
    pub budget: u128,
    /// Also write every scenario payoff.
    #[arg(long)]
    pub payoffs: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
    /// Index of the reference report for the gaps.
    #[arg(long, default_value_t = 0)]
    pub reference: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = ShapeArg::Chain)]
    pub shape: ShapeArg,
    /// Dam counts for dp, comma separated; give the flag alone to skip.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "1,2,3")]
    pub dp_dams: Vec<usize>,
    /// Dam counts for dadp.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "4,8,12")]
    pub dadp_dams: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    pub knot_step: f64,
    /// Coordination iterations timed per dadp run (tolerance disabled).
    #[arg(long, default_value_t = 50)]
    pub dadp_iters: usize,
    /// Seconds allowed per instance.
    #[arg(long, default_value_t = 600.0)]
    pub timeout: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchRunArgs {
    #[arg(long, value_enum)]
    pub solver: BenchSolver,
    #[arg(long, value_enum)]
    pub shape: ShapeArg,
    #[arg(long)]
    pub dams: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub horizon: usize,
    #[arg(long)]
    pub knot_step: f64,
    #[arg(long)]
    pub iters: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("--workers: {e}")))?;
    }
    let format = cli.format;
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Solve(Solver::Dp(a)) => solve_dp(&a, format),
        Command::Solve(Solver::Sddpd(a)) => solve_sddpd(&a, format),
        Command::Solve(Solver::Dadp(a)) => solve_dadp(&a, format),
        Command::Simulate(a) => simulate(&a, format),
        Command::Compare(a) => compare(&a, format),
        Command::Bench(a) => run_bench(&a, cli.workers, format),
        Command::BenchRun(a) => bench_run(&a),
    }
}

fn print_table(t: &Table, format: Format) -> Result<()> {
    print!("{}", t.render(format)?);
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(io_err(p)),
        _ => Ok(()),
    }
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    if a.dams == 0 || a.horizon == 0 {
        return Err(CliError::Invalid(String::from("--dams and --horizon must be at least 1")));
    }
    let spec = GeneratorSpec {
        shape: a.shape.into(),
        n_dams: a.dams,
        seed: a.seed,
        profile: match a.profile {
            ProfileArg::Academic => Profile::Academic,
            ProfileArg::Realistic => Profile::Realistic,
        },
        horizon: a.horizon,
    };
    let valley = generate_valley(&spec)?;
    create_parent(&a.out)?;
    save_valley(&valley, &a.out)
}

fn summary_table(method: &str, optimal: Option<f64>, bound: Option<f64>, seconds: f64) -> Table {
    let mut t = Table::new(["method", "optimal_payoff", "upper_bound_on_payoff", "seconds"]);
    t.push(vec![method.into(), opt_num(optimal), opt_num(bound), num(seconds)]);
    t
}

pub fn solve_dp(a: &DpArgs, format: Format) -> Result<()> {
    let valley = a.valley.load()?;
    let knots = a.knots.build(&valley)?;
    let cfg = DpConfig { work_budget: a.work_budget as u128, ..DpConfig::default() };
    let start = Instant::now();
    let mut last = start;
    let mut stage_times = vec![0.0; valley.horizon()];
    let sol = dp::solve_dp_with(&valley, knots, &cfg, |t| {
        let now = Instant::now();
        stage_times[t] = (now - last).as_secs_f64();
        last = now;
    })?;
    let seconds = start.elapsed().as_secs_f64();
    let payoff = -sol.optimal_cost(&valley);
    let vf = ValueFile {
        method: "dp".into(),
        optimal_payoff: Some(payoff),
        upper_bound_on_payoff: None,
        value: GlobalValue::DpGrid { stages: sol.value_functions },
    };
    create_parent(&a.out)?;
    output::write_value_file(&vf, &a.out)?;
    let mut t = Table::new(["method", "n_dams", "horizon", "optimal_payoff"]);
    t.push(vec!["dp".into(), valley.n_dams().to_string(), valley.horizon().to_string(), num(payoff)]);
    t.write_csv(&sidecar(&a.out, "summary"))?;
    let mut st = Table::new(["stage", "seconds"]);
    for (k, s) in stage_times.iter().enumerate() {
        st.push(vec![k.to_string(), num(*s)]);
    }
    st.write_csv(&sidecar(&a.out, "stages.timing"))?;
    output::write_timing(&sidecar(&a.out, "timing"), &[("optimization", seconds)])?;
    print_table(&summary_table("dp", Some(payoff), None, seconds), format)
}

pub fn solve_sddpd(a: &SddpArgs, format: Format) -> Result<()> {
    let valley = a.valley.load()?;
    let mut cfg = SddpConfig::new(a.knots.build(&valley)?);
    cfg.n_iterations = a.iters;
    cfg.forward_batch = a.batch;
    cfg.cut_capacity = a.cuts;
    cfg.rng_seed = a.seed;
    cfg.prune_level1 = a.prune_level1;
    let start = Instant::now();
    let mut last = start;
    let mut times = Vec::new();
    let run = sddp::solve_sddp_with(&valley, &cfg, |_| {
        let now = Instant::now();
        times.push((now - last).as_secs_f64());
        last = now;
    })?;
    let seconds = start.elapsed().as_secs_f64();
    let horizon = valley.horizon();
    let mut log = Table::new(
        ["iteration", "mean_forward_payoff"].into_iter().map(String::from).chain((0..horizon).map(|t| format!("cuts_t{t}"))),
    );
    let mut timing = Table::new(["iteration", "seconds"]);
    for (entry, s) in run.log.iter().zip(&times) {
        let mut row = vec![entry.iteration.to_string(), num(-entry.mean_forward_cost)];
        row.extend(entry.pool_sizes.iter().map(|n| n.to_string()));
        log.push(row);
        timing.push(vec![entry.iteration.to_string(), num(*s)]);
    }
    let vf = ValueFile {
        method: "sddpd".into(),
        optimal_payoff: None,
        upper_bound_on_payoff: None,
        value: GlobalValue::SddpCuts { pools: run.pools },
    };
    create_parent(&a.out)?;
    output::write_value_file(&vf, &a.out)?;
    log.write_csv(&sidecar(&a.out, "iterations"))?;
    timing.write_csv(&sidecar(&a.out, "iterations.timing"))?;
    output::write_timing(&sidecar(&a.out, "timing"), &[("optimization", seconds)])?;
    print_table(&summary_table("sddpd", None, None, seconds), format)
}

pub fn solve_dadp(a: &DadpArgs, format: Format) -> Result<()> {
    let valley = a.valley.load()?;
    let mut cfg = DadpConfig::new(&valley, a.knots.build(&valley)?);
    cfg.max_iterations = a.iters;
    if let Some(tol) = a.tol {
        cfg.tolerance = tol;
    }
    cfg.gradient = match a.samples {
        Samples::Exact => GradientMode::Exact,
        Samples::Count(n) => GradientMode::MonteCarlo(n),
    };
    cfg.rng_seed = a.seed;
    if let Some(tau) = a.smoothing {
        cfg.smoothing = tau;
    }
    cfg.optimizer = match a.step {
        Some(rho) => Optimizer::FixedStep { rho },
        None => Optimizer::QuasiNewton { memory: a.memory },
    };
    let start = Instant::now();
    let mut last = start;
    let mut iterations = Table::new(["k", "dual_payoff_bound", "gradient_norm"]);
    let mut timing = Table::new(["k", "seconds"]);
    let result = dadp::solve_dadp_with(&valley, &cfg, |it| {
        let now = Instant::now();
        iterations.push(vec![it.iteration.to_string(), num(-it.dual_value), num(it.gradient_norm)]);
        timing.push(vec![it.iteration.to_string(), num((now - last).as_secs_f64())]);
        last = now;
    })?;
    let seconds = start.elapsed().as_secs_f64();
    if !result.converged {
        eprintln!(
            "warning: dadp stopped after {} iterations with max |E[z - g]| = {} > {}",
            result.dual.iteration,
            num(sup_norm(&result.dual.gradient)),
            cfg.tolerance
        );
    }
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let bound = -result.dual_value();
    let vf = ValueFile {
        method: "dadp".into(),
        optimal_payoff: None,
        upper_bound_on_payoff: Some(bound),
        value: GlobalValue::DadpSum { local: result.solution.local_values() },
    };
    output::write_value_file(&vf, &a.out.join(output::VALUE_FILE_NAME))?;
    iterations.write_csv(&a.out.join("iterations.csv"))?;
    timing.write_csv(&a.out.join("iterations.timing.csv"))?;
    let links = Links::new(&valley);
    let mut mult = Table::new(["stage", "from_dam", "to_dam", "lambda", "deviation"]);
    for t in 0..valley.horizon() {
        for (l, &c) in links.dams.iter().enumerate() {
            let p = valley.topology.parent(c).expect("link has a parent");
            mult.push(vec![
                t.to_string(),
                valley.dams[c].id.to_string(),
                valley.dams[p].id.to_string(),
                num(result.dual.get(t, l)),
                num(result.dual.gradient[t * links.len() + l]),
            ]);
        }
    }
    mult.write_csv(&a.out.join("multipliers.csv"))?;
    let mut summary = Table::new(["method", "converged", "iterations", "upper_bound_on_payoff", "gradient_norm", "tolerance"]);
    summary.push(vec![
        "dadp".into(),
        result.converged.to_string(),
        result.dual.iteration.to_string(),
        num(bound),
        num(sup_norm(&result.dual.gradient)),
        num(cfg.tolerance),
    ]);
    summary.write_csv(&a.out.join("summary.csv"))?;
    output::write_timing(&a.out.join("timing.csv"), &[("optimization", seconds)])?;
    print_table(&summary_table("dadp", None, Some(bound), seconds), format)
}

/// One row of a simulation report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub source: String,
    pub n_scenarios: usize,
    pub seed: u64,
    pub achieved_payoff_mean: f64,
    pub achieved_payoff_std_error: f64,
    pub upper_bound_on_payoff: Option<f64>,
    pub violations: usize,
    pub fallback_steps: usize,
}

fn vf_timing(vf: &Path) -> PathBuf {
    if vf.is_dir() {
        vf.join("timing.csv")
    } else {
        sidecar(vf, "timing")
    }
}

pub fn simulate(a: &SimulateArgs, format: Format) -> Result<()> {
    let valley = a.valley.load()?;
    let vf = output::read_value_file(&a.vf)?;
    let start = Instant::now();
    let report = policy::simulate(&valley, &vf.value, a.n, a.seed, a.budget)?;
    let seconds = start.elapsed().as_secs_f64();
    let row = ReportRow {
        method: vf.method.clone(),
        source: report.source.clone(),
        n_scenarios: report.n_scenarios,
        seed: a.seed,
        achieved_payoff_mean: report.mean_payoff,
        achieved_payoff_std_error: report.std_error,
        upper_bound_on_payoff: vf.upper_bound_on_payoff,
        violations: report.violations,
        fallback_steps: report.fallback_steps,
    };
    create_parent(&a.out)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.serialize(&row)?;
    w.flush().map_err(io_err(&a.out))?;

    let mut q = Table::new(
        ["dam", "stage"].into_iter().map(String::from).chain(policy::QUANTILE_LEVELS.iter().map(|l| format!("q{:02}", (l * 100.0).round()))),
    );
    for s in &report.quantiles {
        let mut r = vec![valley.dams[s.dam].id.to_string(), s.stage.to_string()];
        r.extend(s.values.iter().map(|v| num(*v)));
        q.push(r);
    }
    q.write_csv(&sidecar(&a.out, "quantiles"))?;
    let h = policy::histogram(&report.payoffs, a.bins);
    let mut ht = Table::new(["bin", "lower_edge", "upper_edge", "count"]);
    for (k, c) in h.counts.iter().enumerate() {
        ht.push(vec![k.to_string(), num(h.edges[k]), num(h.edges[k + 1]), c.to_string()]);
    }
    ht.write_csv(&sidecar(&a.out, "histogram"))?;
    if a.payoffs {
        let mut pt = Table::new(["scenario", "payoff"]);
        for (j, p) in report.payoffs.iter().enumerate() {
            pt.push(vec![j.to_string(), num(*p)]);
        }
        pt.write_csv(&sidecar(&a.out, "payoffs"))?;
    }
    let mut timing = vec![("simulation", seconds)];
    if let Some(opt) = output::read_timing(&vf_timing(&a.vf), "optimization") {
        timing.insert(0, ("optimization", opt));
    }
    output::write_timing(&sidecar(&a.out, "timing"), &timing)?;
    if report.violations > 0 {
        eprintln!("warning: {} constraint violations in the simulated trajectories", report.violations);
    }
    let mut t = Table::new(["method", "achieved_payoff_mean", "std_error", "upper_bound_on_payoff", "violations", "seconds"]);
    t.push(vec![
        row.method,
        num(row.achieved_payoff_mean),
        num(row.achieved_payoff_std_error),
        opt_num(row.upper_bound_on_payoff),
        row.violations.to_string(),
        num(seconds),
    ]);
    print_table(&t, format)
}

pub fn read_report(path: &Path) -> Result<ReportRow> {
    let mut r = csv::Reader::from_path(path)?;
    let row = r.deserialize().next().ok_or_else(|| CliError::Parse { path: path.to_path_buf(), message: "empty report".into() })?;
    row.map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Comparison table: achieved payoffs, bounds, optimization times and gaps
/// to the reference report.
pub fn comparison_table(reports: &[PathBuf], reference: usize) -> Result<Table> {
    let mut methods = Vec::with_capacity(reports.len());
    for path in reports {
        let row = read_report(path)?;
        methods.push(MethodSummary {
            label: row.method,
            value: Some(row.achieved_payoff_mean),
            bound: row.upper_bound_on_payoff,
            cpu_seconds: output::read_timing(&sidecar(path, "timing"), "optimization"),
        });
    }
    let rows = policy::compare(&methods, reference)?;
    let mut t = Table::new(["method", "achieved_payoff", "upper_bound_on_payoff", "cpu_seconds", "gap"]);
    let na = |v: Option<f64>| v.map(num).unwrap_or_else(|| String::from("N.A."));
    for r in rows {
        t.push(vec![r.summary.label, na(r.summary.value), na(r.summary.bound), na(r.summary.cpu_seconds), percent(r.gap_percent)]);
    }
    Ok(t)
}

pub fn compare(a: &CompareArgs, format: Format) -> Result<()> {
    let t = comparison_table(&a.reports, a.reference)?;
    if let Some(out) = &a.out {
        create_parent(out)?;
        t.write_csv(out)?;
    }
    print_table(&t, format)
}

pub fn run_bench(a: &BenchArgs, workers: Option<usize>, format: Format) -> Result<()> {
    let exe = std::env::current_exe().map_err(io_err("current executable"))?;
    let shape: Shape = a.shape.into();
    let cases: Vec<BenchCase> = a
        .dp_dams
        .iter()
        .map(|&n| BenchCase { solver: BenchSolver::Dp, shape, n_dams: n })
        .chain(a.dadp_dams.iter().map(|&n| BenchCase { solver: BenchSolver::Dadp, shape, n_dams: n }))
        .collect();
    let settings = BenchSettings {
        seed: a.seed,
        horizon: a.horizon,
        knot_step: a.knot_step,
        dadp_iterations: a.dadp_iters,
        timeout: Duration::from_secs_f64(a.timeout),
        workers,
    };
    let rows = bench::bench_scaling(&exe, &cases, &settings)?;
    let table = bench::scaling_table(&rows);
    create_parent(&a.out)?;
    table.write_csv(&a.out)?;
    print_table(&table, format)?;
    let dp = bench::timings(&rows, BenchSolver::Dp);
    for w in dp.windows(2) {
        eprintln!("dp t({})/t({}) = {:.3}", w[1].0, w[0].0, w[1].1 / w[0].1);
    }
    let da = bench::timings(&rows, BenchSolver::Dadp);
    if da.len() >= 2 {
        let xs: Vec<f64> = da.iter().map(|p| p.0 as f64).collect();
        let ys: Vec<f64> = da.iter().map(|p| p.1).collect();
        let (_, slope, r2) = bench::linear_fit(&xs, &ys);
        eprintln!("dadp linear fit: {slope:.4} s per dam, R^2 = {r2:.4}");
    }
    Ok(())
}

pub fn bench_run(a: &BenchRunArgs) -> Result<()> {
    let valley = generate_valley(&GeneratorSpec { horizon: a.horizon, ..GeneratorSpec::new(a.shape.into(), a.dams, a.seed) })?;
    let knots: Vec<Vec<f64>> = valley.dams.iter().map(|d| step_knots(d.x_min, d.x_max, a.knot_step)).collect();
    let start = Instant::now();
    let iterations = match a.solver {
        BenchSolver::Dp => {
            dp::solve_dp(&valley, knots, &DpConfig::default())?;
            0
        }
        BenchSolver::Dadp => {
            let mut cfg = DadpConfig::new(&valley, knots);
            cfg.max_iterations = a.iters;
            cfg.tolerance = 0.0;
            dadp::solve_dadp(&valley, &cfg)?.dual.iteration
        }
    };
    println!("seconds={} iterations={iterations}", start.elapsed().as_secs_f64());
    Ok(())
}
