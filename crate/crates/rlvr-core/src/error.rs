//! Error type shared by all modules.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong when building problems, validating
/// parameters, enumerating outcomes, or training.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A constructor or operation was handed an out-of-range argument.
    InvalidParameter { what: &'static str, detail: String },
    /// Two objects that must agree on (steps, tasks) dimensions do not.
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Exhaustive enumeration would exceed the configured term budget.
    CapacityExceeded { required: u128, budget: u128 },
    /// The prompt distribution cannot be enumerated (sample-only problems).
    NotEnumerable { problem: String },
    /// Rejection sampling failed to find a verified rollout within the
    /// per-slot attempt cap; the current success probability is near zero.
    RewardStarvation {
        iteration: usize,
        slot: usize,
        attempts: usize,
    },
    /// A batch statistic was requested over zero rollouts.
    EmptyBatch,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter { what, detail } => {
                write!(f, "invalid {what}: {detail}")
            }
            Error::ShapeMismatch {
                what,
                expected,
                got,
            } => write!(
                f,
                "shape mismatch for {what}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::CapacityExceeded { required, budget } => write!(
                f,
                "enumeration needs {required} weighted terms, budget is {budget}"
            ),
            Error::NotEnumerable { problem } => {
                write!(f, "prompt distribution of `{problem}` is not enumerable")
            }
            Error::RewardStarvation {
                iteration,
                slot,
                attempts,
            } => write!(
                f,
                "reward starvation at iteration {iteration}: batch slot {slot} found no verified rollout in {attempts} attempts"
            ),
            Error::EmptyBatch => write!(f, "batch statistics require at least one rollout"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidParameter {
        what,
        detail: detail.into(),
    }
}
