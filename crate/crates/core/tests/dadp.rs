mod common;

use common::*;
use hydrovalley_core::dadp::*;
use hydrovalley_core::dp::{solve_dp, DpConfig};
use hydrovalley_core::generate::{generate_valley, GeneratorSpec, Shape};
use hydrovalley_core::model::{Atom, NoiseProcess, StageNoise, Valley, ValleyTopology};
use hydrovalley_core::policy::mean_and_std_error;

fn two_dam(horizon: usize) -> Valley {
    generate_valley(&GeneratorSpec { horizon, ..GeneratorSpec::new(Shape::Chain, 2, 6) }).unwrap()
}

fn hard(valley: &Valley) -> DadpConfig {
    let mut cfg = DadpConfig::new(valley, unit_knots(valley));
    cfg.smoothing = 0.0;
    cfg
}

fn with_lambda(valley: &Valley, lambda: Vec<f64>) -> DualState {
    DualState { lambda, ..DualState::zeros(valley.horizon(), 1) }
}

#[test]
fn single_dam_value_functions_equal_dp() {
    let v = generate_valley(&GeneratorSpec::new(Shape::Chain, 1, 5)).unwrap();
    let knots = unit_knots(&v);
    let cfg = DadpConfig::new(&v, knots.clone());
    assert_eq!(cfg.smoothing, 0.0);
    let r = solve_dadp(&v, &cfg).unwrap();
    assert!(r.converged);
    assert_eq!(r.dual.iteration, 0);
    assert!(r.dual.lambda.is_empty());
    let dp = solve_dp(&v, knots, &DpConfig::default()).unwrap();
    for (a, b) in r.solution.dams[0].values.iter().zip(&dp.value_functions) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
    assert!((r.dual_value() - dp.optimal_cost(&v)).abs() <= 1e-9);
}

/// Two-stage chain where the lower dam is never full, so received water
/// is always worth taking.
fn thirsty() -> Valley {
    let mut up = dam(1, 3.0, 2.0, 2.0);
    up.penalty_a = 0.0;
    let mut down = dam(2, 12.0, 2.0, 0.0);
    down.x_target = 12.0;
    let noise = NoiseProcess {
        stages: (0..2)
            .map(|_| StageNoise {
                atoms: vec![
                    Atom { p: 0.5, inflows: vec![0.0, 0.0], prices: vec![1.0, 2.0] },
                    Atom { p: 0.5, inflows: vec![2.0, 1.0], prices: vec![1.5, 3.0] },
                ],
            })
            .collect(),
    };
    Valley::new(ValleyTopology::chain(2), vec![up, down], noise).unwrap()
}

/// Brute-force local minimum of the downstream subproblem, hard min,
/// received flows outside, controls inside, first strict minimum.
fn brute_downstream(v: &Valley, cfg: &DadpConfig, sol: &DamSolution, lambda: f64, t: usize, x: f64, atom: &Atom) -> (f64, f64, f64) {
    let d = &v.dams[1];
    let next = |y: f64| {
        if t + 1 == v.horizon() {
            d.penalty_a * (y - d.x_target).min(0.0).powi(2)
        } else {
            sol.values[t + 1].eval_clamped(&[y])
        }
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &z in &cfg.z_levels[0] {
        for &u in &d.control_levels {
            if u > d.u_max.min(x + atom.inflows[1] + z - d.x_min) {
                continue;
            }
            let (xn, _) = reference_step(d, x, u, atom.inflows[1], z);
            let obj = -atom.prices[1] * u + d.epsilon * u * u + lambda * z + next(xn);
            if obj < best.0 {
                best = (obj, u, z);
            }
        }
    }
    best
}

#[test]
fn zero_prices_make_the_lower_dam_take_all_the_water() {
    let v = thirsty();
    let cfg = hard(&v);
    let lambda = DualState::zeros(2, 1);
    let sol = solve_subproblem(&v, &cfg, 1, &lambda).unwrap();
    let z_max = *cfg.z_levels[0].last().unwrap();
    for t in 0..2 {
        for (w, atom) in v.noise.atoms(t).iter().enumerate() {
            for (k, &x) in cfg.knots[1].iter().enumerate() {
                let c = &sol.feedback[t][w][k];
                let (obj, u, z) = brute_downstream(&v, &cfg, &sol, 0.0, t, x, atom);
                if x + atom.inflows[1] + z_max <= v.dams[1].x_max {
                    assert_eq!(c.z, vec![z_max]);
                }
                assert_eq!((c.u, c.z[0]), (u, z));
                assert!((c.objective - obj).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn brute_force_agrees_with_nonzero_prices() {
    let v = thirsty();
    let cfg = hard(&v);
    let lambda = with_lambda(&v, vec![1.7, 2.4]);
    let sol = solve_subproblem(&v, &cfg, 1, &lambda).unwrap();
    for t in 0..2 {
        for (w, atom) in v.noise.atoms(t).iter().enumerate() {
            for (k, &x) in cfg.knots[1].iter().enumerate() {
                let c = &sol.feedback[t][w][k];
                let (obj, u, z) = brute_downstream(&v, &cfg, &sol, lambda.get(t, 0), t, x, atom);
                assert_eq!((c.u, c.z[0]), (u, z));
                assert!((c.objective - obj).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn a_high_outflow_price_opens_the_upper_turbine() {
    let v = thirsty();
    let cfg = hard(&v);
    let lambda = with_lambda(&v, vec![1e3, 1e3]);
    let sol = solve_subproblem(&v, &cfg, 0, &lambda).unwrap();
    let d = &v.dams[0];
    for t in 0..2 {
        for (w, atom) in v.noise.atoms(t).iter().enumerate() {
            for (k, &x) in cfg.knots[0].iter().enumerate() {
                let top = d.control_levels.iter().copied().filter(|&u| u <= d.u_max.min(x + atom.inflows[0])).fold(f64::MIN, f64::max);
                assert_eq!(sol.feedback[t][w][k].u, top);
            }
        }
    }
}

#[test]
fn a_thirsty_lower_dam_shows_positive_deviation() {
    let mut v = thirsty();
    for stage in &mut v.noise.stages {
        for atom in &mut stage.atoms {
            atom.prices[0] = 0.0;
        }
    }
    let cfg = hard(&v);
    let (_, g, _) = evaluate_dual(&v, &cfg, &DualState::zeros(2, 1)).unwrap();
    assert!(g.iter().all(|&d| d > 0.0), "{g:?}");
}

fn central_difference(v: &Valley, cfg: &DadpConfig, lambda: &DualState, j: usize, h: f64) -> f64 {
    let mut plus = lambda.clone();
    plus.lambda[j] += h;
    let mut minus = lambda.clone();
    minus.lambda[j] -= h;
    let (_, _, fp) = evaluate_dual(v, cfg, &plus).unwrap();
    let (_, _, fm) = evaluate_dual(v, cfg, &minus).unwrap();
    (fp - fm) / (2.0 * h)
}

#[test]
fn exact_gradient_matches_central_differences() {
    let v = two_dam(2);
    let cfg = DadpConfig::new(&v, unit_knots(&v));
    assert!(cfg.smoothing > 0.0);
    for lambda in [vec![0.0, 0.0], vec![1.3, -0.4], vec![4.2, 2.5]] {
        let lambda = with_lambda(&v, lambda);
        let (_, g, _) = evaluate_dual(&v, &cfg, &lambda).unwrap();
        for (j, gj) in g.iter().enumerate() {
            let fd = central_difference(&v, &cfg, &lambda, j, 1e-4);
            assert!((gj - fd).abs() <= 1e-5, "lambda {:?} component {j}: {gj} vs {fd}", lambda.lambda);
        }
    }
}

#[test]
fn hard_gradient_matches_differences_away_from_kinks() {
    let v = two_dam(2);
    let cfg = hard(&v);
    let lambda = with_lambda(&v, vec![1.234_567, 2.345_678]);
    let (_, g, _) = evaluate_dual(&v, &cfg, &lambda).unwrap();
    for (j, gj) in g.iter().enumerate() {
        assert!((gj - central_difference(&v, &cfg, &lambda, j, 1e-6)).abs() <= 1e-5);
    }
}

#[test]
fn monte_carlo_gradient_agrees_with_exact() {
    let v = two_dam(3);
    let mut cfg = DadpConfig::new(&v, unit_knots(&v));
    let lambda = DualState { lambda: vec![0.8, 1.9, 3.0], ..DualState::zeros(3, 1) };
    let sol = solve_subproblems(&v, &cfg, &lambda).unwrap();
    let (exact, _) = dual_gradient(&v, &sol, &lambda, &cfg).unwrap();
    cfg.gradient = GradientMode::MonteCarlo(100_000);
    cfg.rng_seed = 99;
    let samples = scenario_deviations(&v, &sol, &lambda, &cfg, 100_000).unwrap();
    let (mc, _) = dual_gradient(&v, &sol, &lambda, &cfg).unwrap();
    for j in 0..exact.len() {
        let column: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let (mean, se) = mean_and_std_error(&column);
        assert!((mean - mc[j]).abs() <= 1e-12);
        // Soft-min branches of weight ~1e-7 are essentially never drawn.
        assert!((mean - exact[j]).abs() <= 3.0 * se + 1e-6, "component {j}: {mean} ± {se} vs {}", exact[j]);
    }
}

#[test]
fn monte_carlo_gradient_is_seed_deterministic() {
    let v = two_dam(3);
    let mut cfg = DadpConfig::new(&v, unit_knots(&v));
    cfg.gradient = GradientMode::MonteCarlo(500);
    cfg.rng_seed = 4;
    let lambda = DualState::zeros(3, 1);
    let (_, a, _) = evaluate_dual(&v, &cfg, &lambda).unwrap();
    let (_, b, _) = evaluate_dual(&v, &cfg, &lambda).unwrap();
    assert_eq!(a, b);
    cfg.gradient = GradientMode::MonteCarlo(0);
    assert!(evaluate_dual(&v, &cfg, &lambda).is_err());
}

#[test]
fn small_fixed_steps_ascend_monotonically() {
    let v = two_dam(4);
    let mut cfg = DadpConfig::new(&v, unit_knots(&v));
    cfg.optimizer = Optimizer::FixedStep { rho: 0.01 };
    cfg.max_iterations = 40;
    cfg.tolerance = 0.0;
    let r = solve_dadp(&v, &cfg).unwrap();
    assert_eq!(r.history.len(), 41);
    for w in r.history.windows(2) {
        assert!(w[1].dual_value >= w[0].dual_value - 1e-12, "{} then {}", w[0].dual_value, w[1].dual_value);
    }
}

/// One stage: the upper dam sells at 1, the lower one at 3.
fn single_link() -> Valley {
    let mut up = dam(1, 2.0, 2.0, 2.0);
    let mut down = dam(2, 4.0, 2.0, 0.0);
    for d in [&mut up, &mut down] {
        d.penalty_a = 0.0;
        d.epsilon = 0.2;
    }
    Valley::new(ValleyTopology::chain(2), vec![up, down], deterministic(vec![vec![0.0, 0.0]], vec![vec![1.0, 3.0]])).unwrap()
}

#[test]
fn gradient_vanishes_at_the_scanned_dual_maximum() {
    let v = single_link();
    let cfg = DadpConfig::new(&v, unit_knots(&v));
    let at = |l: f64| evaluate_dual(&v, &cfg, &with_lambda(&v, vec![l])).unwrap();
    let h = 1e-3;
    let (best, top) = (0..=5000)
        .map(|k| -1.0 + k as f64 * h)
        .map(|l| (l, at(l).2))
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, (l, d)| if d > acc.1 { (l, d) } else { acc });
    assert!(at(best - h).1[0] >= -1e-9 && at(best + h).1[0] <= 1e-9);
    assert!(at(best).1[0].abs() <= cfg.tolerance);
    assert!(at(-1.0).1[0] > 1.0 && at(4.0).1[0] < -1.0);
    let r = solve_dadp(&v, &cfg).unwrap();
    assert!(r.converged);
    assert!(r.dual.gradient[0].abs() <= cfg.tolerance);
    assert!(r.dual_value() >= top - 1e-6, "{} vs {top}", r.dual_value());
}

#[test]
fn dual_bounds_dp_on_a_desk_instance() {
    let v = two_dam(6);
    let knots = unit_knots(&v);
    let dp = solve_dp(&v, knots.clone(), &DpConfig::default()).unwrap();
    for smoothing in [0.0, 0.05] {
        let mut cfg = DadpConfig::new(&v, knots.clone());
        cfg.smoothing = smoothing;
        cfg.max_iterations = 50;
        let r = solve_dadp(&v, &cfg).unwrap();
        assert!(r.dual_value() <= dp.optimal_cost(&v) + 1e-6);
        assert!(r.history.iter().all(|it| it.dual_value <= dp.optimal_cost(&v) + 1e-6));
    }
}

#[test]
fn default_z_levels_cover_every_outflow() {
    let v = generate_valley(&GeneratorSpec::new(Shape::Tree, 5, 2)).unwrap();
    let links = Links::new(&v);
    for &c in &links.dams {
        let z = default_z_levels(&v, c);
        assert_eq!(z[0], 0.0);
        assert_eq!(*z.last().unwrap(), v.outflow_cap(c));
        assert!(z.len() <= MAX_DEFAULT_Z_LEVELS);
    }
}

#[test]
fn config_is_validated() {
    let v = thirsty();
    let mut cfg = DadpConfig::new(&v, unit_knots(&v));
    cfg.z_levels[0].clear();
    assert!(solve_dadp(&v, &cfg).is_err());
    let mut cfg = DadpConfig::new(&v, unit_knots(&v));
    cfg.smoothing = -1.0;
    assert!(solve_dadp(&v, &cfg).is_err());
    let cfg = DadpConfig::new(&v, unit_knots(&v));
    let bad = DualState { lambda: vec![f64::NAN, 0.0], ..DualState::zeros(2, 1) };
    assert!(evaluate_dual(&v, &cfg, &bad).is_err());
}
