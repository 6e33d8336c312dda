//! Stochastic optimal control of cascaded hydro valleys.
//!
//! The crate solves the multistage problem of turbining water from a
//! valley of reservoirs under random inflows and prices with three
//! families of methods, and evaluates the resulting policies:
//!
//! - [`dp`]: exact dynamic programming on the product grid, the reference
//!   for small valleys;
//! - [`sddp`]: discrete-control SDDP with finite-difference cuts;
//! - [`dadp`]: price decomposition where each inter-dam coupling is
//!   dualized with a deterministic multiplier, giving one 1-D dynamic
//!   program per dam and a bound from the dual function;
//! - [`policy`]: feasible online policies from any of the above, Monte
//!   Carlo evaluation and comparison tables.
//!
//! Everything is `no_std` with `alloc`; the default `std` feature only adds
//! rayon parallelism. All solvers minimize cost (the opposite of payoff).

#![cfg_attr(not(any(feature = "std", test)), no_std)]

#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dadp;
pub mod dp;
pub mod error;
pub mod generate;
pub mod lbfgs;
pub mod model;
pub mod onestep;
mod par;
pub mod policy;
pub mod sddp;
pub mod valuefn;

pub use error::{Error, Result};
pub use model::{Atom, Dam, NoiseProcess, StageNoise, StageTransition, Valley, ValleyTopology};
pub use policy::{GlobalValue, SimReport};
pub use valuefn::{CutPool, Grid, ValueFunction};
