//! Bellman function representations: multilinear interpolation on tensor
//! grids and max-of-affine cut pools.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Queries this far outside the box are clamped instead of rejected.
pub const BOX_TOLERANCE: f64 = 1e-9;

/// `count` equispaced knots spanning `[lo, hi]`. A degenerate interval
/// yields a single knot.
pub fn uniform_knots(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if hi <= lo || count < 2 {
        return vec![lo];
    }
    let h = (hi - lo) / (count - 1) as f64;
    let mut k: Vec<f64> = (0..count).map(|j| lo + h * j as f64).collect();
    k[count - 1] = hi;
    k
}

/// Knots `lo, lo + step, ...` with `hi` appended if the last step falls short.
pub fn step_knots(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut k = vec![lo];
    if hi <= lo || !(step > 0.0) {
        return k;
    }
    let mut j = 1usize;
    loop {
        let v = lo + step * j as f64;
        if v >= hi - BOX_TOLERANCE {
            break;
        }
        k.push(v);
        j += 1;
    }
    k.push(hi);
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridData {
    knots: Vec<Vec<f64>>,
    values: Vec<f64>,
}

/// Values at the nodes of a tensor grid, last dimension varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridData", into = "GridData")]
pub struct Grid {
    knots: Vec<Vec<f64>>,
    values: Vec<f64>,
    strides: Vec<usize>,
}

impl TryFrom<GridData> for Grid {
    type Error = Error;
    fn try_from(d: GridData) -> Result<Self> {
        Grid::new(d.knots, d.values)
    }
}

impl From<Grid> for GridData {
    fn from(g: Grid) -> Self {
        GridData { knots: g.knots, values: g.values }
    }
}

impl Grid {
    pub fn new(knots: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        for (d, k) in knots.iter().enumerate() {
            if k.is_empty() {
                return Err(Error::Shape(format!("grid dimension {d} has no knot")));
            }
            if k.windows(2).any(|w| !(w[0] < w[1])) || k.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("grid dimension {d}: knots must be finite and strictly increasing")));
            }
        }
        let strides = strides_of(&knots);
        let len = knots.iter().map(Vec::len).product::<usize>();
        if values.len() != len {
            return Err(Error::Shape(format!("grid has {len} nodes but {} values", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(String::from("grid values must be finite")));
        }
        Ok(Self { knots, values, strides })
    }

    /// Grid filled with `f(node)`.
    pub fn from_fn(knots: Vec<Vec<f64>>, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let len = knots.iter().map(Vec::len).product::<usize>();
        let strides = strides_of(&knots);
        let mut buf = vec![0.0; knots.len()];
        let values = (0..len)
            .map(|idx| {
                node_into(&knots, &strides, idx, &mut buf);
                f(&buf)
            })
            .collect();
        Self::new(knots, values)
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn knots(&self) -> &[Vec<f64>] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut buf = vec![0.0; self.dim()];
        node_into(&self.knots, &self.strides, idx, &mut buf);
        buf
    }

    pub fn node_into(&self, idx: usize, buf: &mut [f64]) {
        node_into(&self.knots, &self.strides, idx, buf);
    }

    /// Interpolated value; fails if `x` leaves the box by more than
    /// [`BOX_TOLERANCE`].
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_box(x)?;
        Ok(self.eval_clamped(x))
    }

    fn check_box(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("expected a {}-dimensional point", self.dim())));
        }
        for (d, (k, &v)) in self.knots.iter().zip(x).enumerate() {
            let (lo, hi) = (k[0], k[k.len() - 1]);
            if !(v >= lo - BOX_TOLERANCE && v <= hi + BOX_TOLERANCE) {
                return Err(Error::OutOfBox { dim: d, value: v, lo, hi });
            }
        }
        Ok(())
    }

    /// Multilinear interpolation among the `2^d` enclosing nodes, clamping
    /// each coordinate into the box.
    pub fn eval_clamped(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut base = 0usize;
        let mut cells = [(0usize, 0.0f64, 0usize); 16];
        let mut heap;
        let cells: &mut [(usize, f64, usize)] = if d <= 16 {
            &mut cells[..d]
        } else {
            heap = vec![(0usize, 0.0f64, 0usize); d];
            &mut heap
        };
        for j in 0..d {
            let (k0, w) = locate(&self.knots[j], x[j]);
            base += k0 * self.strides[j];
            let step = if self.knots[j].len() > 1 { self.strides[j] } else { 0 };
            cells[j] = (k0, w, step);
        }
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut idx = base;
            for (j, &(_, w, step)) in cells.iter().enumerate() {
                if corner >> j & 1 == 1 {
                    if step == 0 {
                        weight = 0.0;
                        break;
                    }
                    weight *= w;
                    idx += step;
                } else {
                    weight *= 1.0 - w;
                }
            }
            if weight != 0.0 {
                total += weight * self.values[idx];
            }
        }
        total
    }
}

fn strides_of(knots: &[Vec<f64>]) -> Vec<usize> {
    let mut strides = vec![1usize; knots.len()];
    for j in (0..knots.len().saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * knots[j + 1].len();
    }
    strides
}

fn node_into(knots: &[Vec<f64>], strides: &[usize], mut idx: usize, buf: &mut [f64]) {
    for j in 0..knots.len() {
        let k = idx / strides[j];
        idx -= k * strides[j];
        buf[j] = knots[j][k];
    }
}

/// Index of the left knot of the cell containing `x` (clamped) and the
/// barycentric weight of the right knot.
pub fn locate(knots: &[f64], x: f64) -> (usize, f64) {
    let n = knots.len();
    if n == 1 || x <= knots[0] {
        return (0, 0.0);
    }
    if x >= knots[n - 1] {
        return (n - 2, 1.0);
    }
    let k0 = knots.partition_point(|&k| k <= x) - 1;
    let w = (x - knots[k0]) / (knots[k0 + 1] - knots[k0]);
    (k0, w)
}

/// Affine function `intercept + gradient . x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub intercept: f64,
    pub gradient: Vec<f64>,
}

impl Cut {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.gradient.iter().zip(x).map(|(g, v)| g * v).sum::<f64>()
    }
}

/// Maximum of affine cuts with FIFO retention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPool {
    cuts: VecDeque<Cut>,
    capacity: usize,
    /// Value of an empty pool.
    floor: f64,
}

impl CutPool {
    pub fn new(capacity: usize, floor: f64) -> Self {
        Self { cuts: VecDeque::new(), capacity: capacity.max(1), floor }
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn cuts(&self) -> impl Iterator<Item = &Cut> {
        self.cuts.iter()
    }

    /// Appends a cut, evicting the oldest one past capacity. Duplicates are
    /// kept.
    pub fn add_cut(&mut self, intercept: f64, gradient: Vec<f64>) -> Result<()> {
        if !intercept.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Shape(String::from("cut coefficients must be finite")));
        }
        if let Some(first) = self.cuts.front() {
            if first.gradient.len() != gradient.len() {
                return Err(Error::Shape(String::from("cut dimension mismatch")));
            }
        }
        self.cuts.push_back(Cut { intercept, gradient });
        while self.cuts.len() > self.capacity {
            self.cuts.pop_front();
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.cuts.iter().map(|c| c.eval(x)).reduce(f64::max).unwrap_or(self.floor)
    }

    /// Level-1 dominance pruning: keeps only cuts attaining the maximum at
    /// one of `points` at least. Relative order is preserved.
    pub fn prune_level1(&mut self, points: &[Vec<f64>]) {
        if self.cuts.is_empty() || points.is_empty() {
            return;
        }
        let mut keep = vec![false; self.cuts.len()];
        for p in points {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (k, c) in self.cuts.iter().enumerate() {
                let v = c.eval(p);
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            keep[best] = true;
        }
        let mut k = 0;
        self.cuts.retain(|_| {
            let r = keep[k];
            k += 1;
            r
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Representation {
    Grid(Grid),
    Cuts(CutPool),
}

/// Stage-indexed Bellman function in either representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub stage: usize,
    pub dim: usize,
    pub repr: Representation,
}

impl ValueFunction {
    pub fn grid(stage: usize, grid: Grid) -> Self {
        Self { stage, dim: grid.dim(), repr: Representation::Grid(grid) }
    }

    pub fn cuts(stage: usize, dim: usize, pool: CutPool) -> Self {
        Self { stage, dim, repr: Representation::Cuts(pool) }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match &self.repr {
            Representation::Grid(g) => g.eval(x),
            Representation::Cuts(p) => {
                if x.len() != self.dim {
                    return Err(Error::Shape(format!("expected a {}-dimensional point", self.dim)));
                }
                Ok(p.eval(x))
            }
        }
    }
}
