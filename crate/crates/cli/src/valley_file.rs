//! JSON valley instances.
//!
//! ```json
//! { "horizon": 2,
//!   "dams": [{ "id": 1, "x_min": 0, "x_max": 10, "u_min": 0, "u_max": 2,
//!              "x_target": 5, "penalty_a": 1, "epsilon": 0.01,
//!              "control_levels": [0, 1, 2], "x0": 5, "parent": null }],
//!   "noise": [{ "atoms": [{ "p": 1, "inflows": [1], "prices": [3] }] },
//!             { "marginals": [[{ "p": 0.5, "inflow": 0, "price": 3 },
//!                              { "p": 0.5, "inflow": 2, "price": 3 }]] }] }
//! ```
//!
//! A stage given as per-dam `marginals` is the independent product of
//! them; it is only expanded on request.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use hydrovalley_core::model::{Atom, Dam, MarginalAtom, NoiseProcess, StageNoise, Valley, ValleyTopology};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

/// Default cap on the atoms of an expanded product stage.
pub const DEFAULT_PRODUCT_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValleyFile {
    pub horizon: usize,
    pub dams: Vec<DamEntry>,
    pub noise: Vec<StageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamEntry {
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
    pub parent: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StageEntry {
    Joint { atoms: Vec<Atom> },
    Marginals { marginals: Vec<Vec<MarginalAtom>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub expand_marginals: bool,
    pub product_cap: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { expand_marginals: false, product_cap: DEFAULT_PRODUCT_CAP }
    }
}

pub fn parse_valley_file(text: &str) -> std::result::Result<ValleyFile, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let at = e.path().to_string();
        let field = if at == "." { String::new() } else { format!(" at `{at}`") };
        format!("line {} column {}{field}: {inner}", inner.line(), inner.column())
    })
}

pub fn load_valley(path: &Path, opts: LoadOptions) -> Result<Valley> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file = parse_valley_file(&text).map_err(|message| CliError::Parse { path: path.to_path_buf(), message })?;
    file.into_valley(opts)
}

pub fn save_valley(valley: &Valley, path: &Path) -> Result<()> {
    write_json(&ValleyFile::from_valley(valley), path)
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

impl ValleyFile {
    /// Resolves parent ids and builds the validated valley. Every structural
    /// problem is reported at once.
    pub fn into_valley(self, opts: LoadOptions) -> Result<Valley> {
        let mut problems = Vec::new();
        if self.noise.len() != self.horizon {
            problems.push(format!("horizon is {} but {} noise stages are given", self.horizon, self.noise.len()));
        }
        let mut index = HashMap::new();
        for (k, d) in self.dams.iter().enumerate() {
            if index.insert(d.id, k).is_some() {
                problems.push(format!("duplicate dam id {}", d.id));
            }
        }
        let parent: Vec<Option<usize>> = self
            .dams
            .iter()
            .map(|d| {
                d.parent.and_then(|p| {
                    let found = index.get(&p).copied();
                    if found.is_none() {
                        problems.push(format!("dam {}: unknown parent id {p}", d.id));
                    }
                    found
                })
            })
            .collect();
        let mut stages = Vec::with_capacity(self.noise.len());
        for (t, stage) in self.noise.into_iter().enumerate() {
            match stage {
                StageEntry::Joint { atoms } => stages.push(StageNoise { atoms }),
                StageEntry::Marginals { marginals } if opts.expand_marginals => {
                    match NoiseProcess::product_stage(&marginals, opts.product_cap) {
                        Ok(s) => stages.push(s),
                        Err(e) => problems.push(format!("stage {t}: {e}")),
                    }
                }
                StageEntry::Marginals { .. } => {
                    problems.push(format!("stage {t}: per-dam marginals need --expand-marginals"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Invalid(format!("invalid valley instance: {}", problems.join("; "))));
        }
        let topology = ValleyTopology::new(parent)?;
        let dams = self
            .dams
            .into_iter()
            .map(|d| Dam {
                id: d.id,
                x_min: d.x_min,
                x_max: d.x_max,
                u_min: d.u_min,
                u_max: d.u_max,
                x_target: d.x_target,
                penalty_a: d.penalty_a,
                epsilon: d.epsilon,
                control_levels: d.control_levels,
                x0: d.x0,
            })
            .collect();
        Ok(Valley::new(topology, dams, NoiseProcess { stages })?)
    }

    pub fn from_valley(valley: &Valley) -> Self {
        Self {
            horizon: valley.horizon(),
            dams: valley
                .dams
                .iter()
                .enumerate()
                .map(|(i, d)| DamEntry {
                    id: d.id,
                    x_min: d.x_min,
                    x_max: d.x_max,
                    u_min: d.u_min,
                    u_max: d.u_max,
                    x_target: d.x_target,
                    penalty_a: d.penalty_a,
                    epsilon: d.epsilon,
                    control_levels: d.control_levels.clone(),
                    x0: d.x0,
                    parent: valley.topology.parent(i).map(|p| valley.dams[p].id),
                })
                .collect(),
            noise: valley.noise.stages.iter().map(|s| StageEntry::Joint { atoms: s.atoms.clone() }).collect(),
        }
    }
}
