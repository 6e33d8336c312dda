#![allow(dead_code)]

use hydrovalley_core::model::{Atom, Dam, NoiseProcess, StageNoise, Valley, ValleyTopology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dam(id: i64, x_max: f64, u_max: f64, x0: f64) -> Dam {
    Dam {
        id,
        x_min: 0.0,
        x_max,
        u_min: 0.0,
        u_max,
        x_target: x0,
        penalty_a: 1.0,
        epsilon: 0.1,
        control_levels: (0..=u_max as usize).map(|u| u as f64).collect(),
        x0,
    }
}

pub fn unit_knots(valley: &Valley) -> Vec<Vec<f64>> {
    valley.dams.iter().map(|d| (0..=(d.x_max - d.x_min) as usize).map(|k| d.x_min + k as f64).collect()).collect()
}

pub fn deterministic(inflows: Vec<Vec<f64>>, prices: Vec<Vec<f64>>) -> NoiseProcess {
    NoiseProcess {
        stages: inflows
            .into_iter()
            .zip(prices)
            .map(|(a, p)| StageNoise { atoms: vec![Atom { p: 1.0, inflows: a, prices: p }] })
            .collect(),
    }
}

/// Small integer instance: up to `max_dams` dams in a chain, `max_t`
/// stages and `max_atoms` joint atoms per stage.
pub fn random_instance(seed: u64, max_dams: usize, max_t: usize, max_atoms: usize) -> Valley {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_dams);
    let horizon = rng.random_range(1..=max_t);
    let dams: Vec<Dam> = (0..n)
        .map(|i| {
            let x_max = rng.random_range(2..=4) as f64;
            let mut d = dam(i as i64 + 1, x_max, rng.random_range(1..=3) as f64, rng.random_range(0..=x_max as usize) as f64);
            d.x_target = rng.random_range(0..=x_max as usize) as f64;
            d.penalty_a = rng.random_range(0.0..2.0);
            d.epsilon = rng.random_range(0.0..0.5);
            d
        })
        .collect();
    let stages = (0..horizon)
        .map(|_| {
            let k = rng.random_range(1..=max_atoms);
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..4.0)).collect();
            let total: f64 = w.iter().sum();
            StageNoise {
                atoms: w
                    .iter()
                    .map(|wi| Atom {
                        p: wi / total,
                        inflows: (0..n).map(|_| rng.random_range(0..=2) as f64).collect(),
                        prices: (0..n).map(|_| rng.random_range(0.5..5.0)).collect(),
                    })
                    .collect(),
            }
        })
        .collect();
    Valley::new(ValleyTopology::chain(n), dams, NoiseProcess { stages }).unwrap()
}

/// Reference dynamics for one dam, written from the definitions:
/// release `u`, spill only what exceeds the capacity.
pub fn reference_step(d: &Dam, x: f64, u: f64, a: f64, z: f64) -> (f64, f64) {
    let level = x - u + a + z;
    if level > d.x_max {
        (d.x_max, level - d.x_max)
    } else {
        (level, 0.0)
    }
}

/// Cost of one stage for all dams of a chain (dam `i` flows into `i + 1`),
/// `None` when a control is not admissible.
pub fn reference_stage(valley: &Valley, x: &[f64], u: &[f64], atom: &Atom) -> Option<(Vec<f64>, f64)> {
    let mut z = 0.0;
    let mut next = Vec::with_capacity(x.len());
    let mut cost = 0.0;
    for (i, d) in valley.dams.iter().enumerate() {
        let a = atom.inflows[i];
        if u[i] > d.u_max.min(x[i] + a + z - d.x_min) + 1e-12 {
            return None;
        }
        let (xn, s) = reference_step(d, x[i], u[i], a, z);
        cost += -atom.prices[i] * u[i] + d.epsilon * u[i] * u[i];
        z = u[i] + s;
        next.push(xn);
    }
    Some((next, cost))
}

pub fn reference_final(valley: &Valley, x: &[f64]) -> f64 {
    valley.dams.iter().zip(x).map(|(d, &xi)| d.penalty_a * (xi - d.x_target).min(0.0).powi(2)).sum()
}

/// Every control combination of a chain, first dam slowest.
pub fn combinations(valley: &Valley) -> Vec<Vec<f64>> {
    valley.dams.iter().fold(vec![Vec::new()], |acc, d| {
        acc.iter()
            .flat_map(|prefix| {
                d.control_levels.iter().map(move |&u| {
                    let mut v = prefix.clone();
                    v.push(u);
                    v
                })
            })
            .collect()
    })
}

/// Optimal expected cost over every non-anticipative policy, by walking the
/// whole scenario tree from `(t, x)` and choosing the best admissible
/// controls at each node.
pub fn scenario_tree_value(valley: &Valley, t: usize, x: &[f64]) -> f64 {
    if t == valley.horizon() {
        return reference_final(valley, x);
    }
    let combos = combinations(valley);
    valley
        .noise
        .atoms(t)
        .iter()
        .map(|atom| {
            let best = combos
                .iter()
                .filter_map(|u| reference_stage(valley, x, u, atom))
                .map(|(next, c)| c + scenario_tree_value(valley, t + 1, &next))
                .fold(f64::INFINITY, f64::min);
            atom.p * best
        })
        .sum()
}
