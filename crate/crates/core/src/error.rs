use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the model kernels and the solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A solver asked for a control outside the admissible range. This is a
    /// bug in the caller, never a data problem.
    #[error("infeasible control u={u} for dam {dam} (admissible upper bound {upper})")]
    InfeasibleControl { dam: usize, u: f64, upper: f64 },

    #[error("dam {dam}: no admissible control level (u_min={u_min} exceeds bound {upper})")]
    EmptyControlRange { dam: usize, u_min: f64, upper: f64 },

    #[error("invalid valley instance: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("state component {dim} = {value} lies outside [{lo}, {hi}]")]
    OutOfBox { dim: usize, value: f64, lo: f64, hi: f64 },

    #[error("{what}: problem size {size} exceeds budget {budget}")]
    BudgetExceeded { what: String, size: u128, budget: u128 },

    #[error("sample count must be at least 1")]
    ZeroSamples,

    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
