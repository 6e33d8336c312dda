//! Seeded generators of academic and heterogeneous valleys.
//!
//! Generated instances live on the integer lattice (volumes, controls and
//! inflows are integers), so unit-spaced knots make DP exact at reachable
//! states.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Atom, Dam, NoiseProcess, StageNoise, Valley, ValleyTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Chain,
    /// Binary tree rooted at the outlet.
    Tree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Reservoirs of similar size.
    Academic,
    /// Large and small reservoirs mixed, capacities 10:1.
    Realistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub shape: Shape,
    pub n_dams: usize,
    pub seed: u64,
    pub profile: Profile,
    pub horizon: usize,
}

impl GeneratorSpec {
    pub fn new(shape: Shape, n_dams: usize, seed: u64) -> Self {
        Self { shape, n_dams, seed, profile: Profile::Academic, horizon: 12 }
    }
}

/// Downstream map with the outlet last; dam ids are `1..=n`.
pub fn topology(shape: Shape, n: usize) -> ValleyTopology {
    let parent = (0..n)
        .map(|i| match shape {
            Shape::Chain => (i + 1 < n).then_some(i + 1),
            Shape::Tree => {
                let r = n - 1 - i;
                (r > 0).then(|| n - 1 - (r - 1) / 2)
            }
        })
        .collect();
    ValleyTopology::new(parent).expect("generated topologies are forests")
}

const INFLOW_PROBS: [f64; 3] = [0.3, 0.4, 0.3];

pub fn generate_valley(spec: &GeneratorSpec) -> Result<Valley> {
    let n = spec.n_dams.max(1);
    let horizon = spec.horizon.max(1);
    let topo = topology(spec.shape, n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_depth = (0..n).map(|i| topo.depth(i)).max().unwrap_or(0);

    let mut dams = Vec::with_capacity(n);
    let mut base_inflow = Vec::with_capacity(n);
    for i in 0..n {
        // 0 at the most upstream dams, 1 at the outlet.
        let downstream = if max_depth == 0 { 1.0 } else { (max_depth - topo.depth(i)) as f64 / max_depth as f64 };
        let x_max = match spec.profile {
            Profile::Academic => 7.0 + rng.random_range(0..=2) as f64,
            Profile::Realistic => {
                if rng.random_bool(0.5) {
                    40.0
                } else {
                    4.0
                }
            }
        };
        let u_max = 2.0 + libm::round(2.0 * downstream);
        let x0 = libm::floor(x_max / 2.0);
        dams.push(Dam {
            id: i as i64 + 1,
            x_min: 0.0,
            x_max,
            u_min: 0.0,
            u_max,
            x_target: x0,
            penalty_a: 2.0,
            epsilon: 0.05,
            control_levels: (0..=u_max as usize).map(|u| u as f64).collect(),
            x0,
        });
        base_inflow.push(if downstream <= 0.5 { 1.0 } else { 0.0 });
    }

    let mut stages = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let season = rng.random_range(0..=2) as f64;
        let phase = 2.0 * core::f64::consts::PI * t as f64 / 12.0;
        let price = libm::round(100.0 * (6.0 + 2.0 * libm::cos(phase) + rng.random_range(-1.0..1.0))) / 100.0;
        let atoms = INFLOW_PROBS
            .iter()
            .enumerate()
            .map(|(k, &p)| Atom {
                p,
                inflows: base_inflow.iter().map(|b| (b + season + k as f64 - 2.0).max(0.0)).collect(),
                prices: vec![price; n],
            })
            .collect();
        stages.push(StageNoise { atoms });
    }
    Valley::new(topo, dams, NoiseProcess { stages })
}
