//! Scaling benchmark: wall time of the optimization stage against the
//! number of dams. Each instance runs in a child process so that a timeout
//! can actually stop it.

use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use hydrovalley_core::generate::Shape;

use crate::error::{io_err, Result};
use crate::output::{num, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchSolver {
    Dp,
    Dadp,
}

impl BenchSolver {
    pub fn name(self) -> &'static str {
        match self {
            BenchSolver::Dp => "dp",
            BenchSolver::Dadp => "dadp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCase {
    pub solver: BenchSolver,
    pub shape: Shape,
    pub n_dams: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub seed: u64,
    pub horizon: usize,
    pub knot_step: f64,
    pub dadp_iterations: usize,
    pub timeout: Duration,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Done { seconds: f64, iterations: usize },
    Timeout,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub case: BenchCase,
    pub outcome: Outcome,
}

fn shape_name(s: Shape) -> &'static str {
    match s {
        Shape::Chain => "chain",
        Shape::Tree => "tree",
    }
}

/// Runs `exe bench-run ...` for one case.
pub fn run_case(exe: &Path, case: &BenchCase, s: &BenchSettings) -> Result<Outcome> {
    let mut cmd = Command::new(exe);
    cmd.args(["bench-run", "--solver", case.solver.name(), "--shape", shape_name(case.shape)])
        .args(["--dams", &case.n_dams.to_string(), "--seed", &s.seed.to_string()])
        .args(["--horizon", &s.horizon.to_string(), "--knot-step", &num(s.knot_step)])
        .args(["--iters", &s.dadp_iterations.to_string()]);
    if let Some(w) = s.workers {
        cmd.args(["--workers", &w.to_string()]);
    }
    let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().map_err(io_err(exe))?;
    let start = Instant::now();
    loop {
        if child.try_wait().map_err(io_err(exe))?.is_some() {
            break;
        }
        if start.elapsed() >= s.timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(Outcome::Timeout);
        }
        thread::sleep(Duration::from_millis(5));
    }
    let out = child.wait_with_output().map_err(io_err(exe))?;
    if !out.status.success() {
        return Ok(Outcome::Failed(String::from_utf8_lossy(&out.stderr).trim().to_string()));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let field = |key: &str| text.split_whitespace().find_map(|w| w.strip_prefix(key));
    match (field("seconds=").and_then(|v| v.parse().ok()), field("iterations=").and_then(|v| v.parse().ok())) {
        (Some(seconds), Some(iterations)) => Ok(Outcome::Done { seconds, iterations }),
        _ => Ok(Outcome::Failed(format!("unexpected output: {text}"))),
    }
}

pub fn bench_scaling(exe: &Path, cases: &[BenchCase], s: &BenchSettings) -> Result<Vec<BenchRow>> {
    cases.iter().map(|c| Ok(BenchRow { case: c.clone(), outcome: run_case(exe, c, s)? })).collect()
}

pub fn scaling_table(rows: &[BenchRow]) -> Table {
    let mut t = Table::new(["solver", "shape", "n_dams", "status", "seconds", "iterations"]);
    for r in rows {
        let (status, seconds, iterations) = match &r.outcome {
            Outcome::Done { seconds, iterations } => ("ok", num(*seconds), iterations.to_string()),
            Outcome::Timeout => ("timeout", String::new(), String::new()),
            Outcome::Failed(_) => ("error", String::new(), String::new()),
        };
        t.push(vec![
            r.case.solver.name().into(),
            shape_name(r.case.shape).into(),
            r.case.n_dams.to_string(),
            status.into(),
            seconds,
            iterations,
        ]);
    }
    t
}

/// Least-squares line `y = a + b x` and its coefficient of determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (a, b, r2)
}

/// `(n_dams, seconds)` of the finished runs of one solver.
pub fn timings(rows: &[BenchRow], solver: BenchSolver) -> Vec<(usize, f64)> {
    rows.iter()
        .filter(|r| r.case.solver == solver)
        .filter_map(|r| match r.outcome {
            Outcome::Done { seconds, .. } => Some((r.case.n_dams, seconds)),
            _ => None,
        })
        .collect()
}
