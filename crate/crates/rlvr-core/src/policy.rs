//! The task-selection policy in its reduced per-step logit form.
//!
//! A policy is a table `u[s][j]` of logit coefficients (step `s`, task `j`)
//! plus a scale `gamma` and, per step, a count `W_s` of "dead" vocabulary
//! tokens that no task emits. The probability of selecting task `j` at step
//! `s` is
//!
//! ```text
//! pi(s, j) = exp(gamma * u[s][j]) / (sum_j' exp(gamma * u[s][j']) + W_s)
//! ```
//!
//! identical for all prefixes with the same step index, which is what makes
//! exact per-step analysis possible. Updates never mutate in place: they
//! return a fresh `PolicyParams`.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error};
use crate::mat::Mat;
use crate::math;
use crate::training::QMatrix;

/// Trainable policy state: logit table, softmax scale, dead-token counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    u: Mat,
    gamma: f64,
    dead_tokens: Vec<u64>,
}

/// Task-selection distribution at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    /// `task_probs[j]` is the probability of selecting task `j`.
    pub task_probs: Vec<f64>,
    /// Combined probability of all dead tokens at this step.
    pub dead_mass: f64,
}

impl PolicyParams {
    /// Validates and wraps a logit table. `dead_tokens[s]` is `W_s`.
    pub fn new(u: Mat, gamma: f64, dead_tokens: Vec<u64>) -> Result<Self, Error> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(
                "gamma",
                format!("must be positive and finite, got {gamma}"),
            ));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(invalid("logits", "all entries must be finite"));
        }
        if dead_tokens.len() != u.rows() {
            return Err(Error::ShapeMismatch {
                what: "dead_tokens",
                expected: (u.rows(), 1),
                got: (dead_tokens.len(), 1),
            });
        }
        Ok(PolicyParams {
            u,
            gamma,
            dead_tokens,
        })
    }

    /// Uniform policy over `tasks` tasks at every one of `steps` steps,
    /// with no dead tokens.
    pub fn uniform(steps: usize, tasks: usize, gamma: f64) -> Self {
        PolicyParams::new(Mat::zeros(steps, tasks), gamma, vec![0; steps])
            .expect("uniform params are always valid")
    }

    /// Inverts per-step target probabilities into logits so that
    /// [`step_distribution`](Self::step_distribution) reproduces `target`.
    ///
    /// Each row must sum to 1 when the step has no dead tokens, and to
    /// strictly less than 1 (leaving the remainder as dead mass) when it
    /// does. All entries must be positive.
    pub fn from_task_probs(target: &Mat, gamma: f64, dead_tokens: Vec<u64>) -> Result<Self, Error> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(
                "gamma",
                format!("must be positive and finite, got {gamma}"),
            ));
        }
        if dead_tokens.len() != target.rows() {
            return Err(Error::ShapeMismatch {
                what: "dead_tokens",
                expected: (target.rows(), 1),
                got: (dead_tokens.len(), 1),
            });
        }
        let mut u = Mat::zeros(target.rows(), target.cols());
        for s in 0..target.rows() {
            let row = target.row(s);
            if row.iter().any(|&p| p <= 0.0) {
                return Err(invalid(
                    "target probability",
                    format!("nonpositive entry at step {s}"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + 1e-9 {
                return Err(invalid(
                    "target probability",
                    format!("row {s} sums to {sum} > 1"),
                ));
            }
            let w = dead_tokens[s];
            if w == 0 {
                if math::abs(sum - 1.0) > 1e-9 {
                    return Err(invalid(
                        "target probability",
                        format!("row {s} sums to {sum}, but must sum to 1 when W_s = 0"),
                    ));
                }
                for j in 0..target.cols() {
                    u[(s, j)] = math::ln(row[j]) / gamma;
                }
            } else {
                let dead_mass = 1.0 - sum;
                if dead_mass <= 0.0 {
                    return Err(invalid(
                        "target probability",
                        format!("row {s} leaves no mass for {w} dead tokens"),
                    ));
                }
                // exp(gamma*u_j) = p_j * W / dead_mass makes the dead tokens'
                // unit weights account for exactly `dead_mass`.
                let scale = w as f64 / dead_mass;
                for j in 0..target.cols() {
                    u[(s, j)] = math::ln(row[j] * scale) / gamma;
                }
            }
        }
        PolicyParams::new(u, gamma, dead_tokens)
    }

    /// Number of CoT steps `S`.
    pub fn steps(&self) -> usize {
        self.u.rows()
    }

    /// Number of tasks `J`.
    pub fn tasks(&self) -> usize {
        self.u.cols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn logits(&self) -> &Mat {
        &self.u
    }

    pub fn dead_tokens(&self) -> &[u64] {
        &self.dead_tokens
    }

    /// Task-selection distribution at step `s` (0-based).
    ///
    /// Panics if `s` is out of range, like any other indexing operation.
    pub fn step_distribution(&self, s: usize) -> StepDistribution {
        assert!(
            s < self.steps(),
            "step index {s} out of range for policy with {} steps",
            self.steps()
        );
        let row = self.u.row(s);
        let w = self.dead_tokens[s] as f64;
        // Stabilised softmax; dead tokens sit at logit 0.
        let mut m = if w > 0.0 { 0.0 } else { f64::NEG_INFINITY };
        for &x in row {
            m = m.max(self.gamma * x);
        }
        let mut denom = w * math::exp(-m);
        let weights: Vec<f64> = row
            .iter()
            .map(|&x| {
                let e = math::exp(self.gamma * x - m);
                denom += e;
                e
            })
            .collect();
        StepDistribution {
            task_probs: weights.iter().map(|&e| e / denom).collect(),
            dead_mass: w * math::exp(-m) / denom,
        }
    }

    /// All `S` step distributions.
    pub fn distributions(&self) -> Vec<StepDistribution> {
        (0..self.steps())
            .map(|s| self.step_distribution(s))
            .collect()
    }

    /// One REINFORCE step: `u'[s][j] = u[s][j] + eta * gamma * Q[s][j]`.
    ///
    /// `gamma` and the dead-token counts are unchanged. On any prefix the
    /// logit of the token emitted by task `j` therefore moves by exactly
    /// `eta * gamma^2 * Q[s][j]`.
    pub fn apply_update(&self, q: &QMatrix, eta: f64) -> Result<Self, Error> {
        if q.shape() != self.u.shape() {
            return Err(Error::ShapeMismatch {
                what: "Q matrix",
                expected: self.u.shape(),
                got: q.shape(),
            });
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid(
                "eta",
                format!("must be positive and finite, got {eta}"),
            ));
        }
        let mut u = self.u.clone();
        for s in 0..u.rows() {
            for j in 0..u.cols() {
                u[(s, j)] += eta * self.gamma * q.as_mat()[(s, j)];
            }
        }
        Ok(PolicyParams {
            u,
            gamma: self.gamma,
            dead_tokens: self.dead_tokens.clone(),
        })
    }
}

impl StepDistribution {
    /// Total mass; 1 up to rounding.
    pub fn total(&self) -> f64 {
        self.task_probs.iter().sum::<f64>() + self.dead_mass
    }
}

/// Convenience free function mirroring [`PolicyParams::from_task_probs`]
/// for the common no-dead-token case.
pub fn params_from_correct_prob(
    steps: usize,
    tasks: usize,
    correct_task: impl Fn(usize) -> usize,
    p0: f64,
    gamma: f64,
) -> Result<PolicyParams, Error> {
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(invalid("p0", format!("must lie in (0, 1), got {p0}")));
    }
    if tasks < 2 {
        return Err(invalid("tasks", "need at least two tasks".to_string()));
    }
    let off = (1.0 - p0) / (tasks - 1) as f64;
    let mut target = Mat::filled(steps, tasks, off);
    for s in 0..steps {
        target[(s, correct_task(s))] = p0;
    }
    PolicyParams::from_task_probs(&target, gamma, vec![0; steps])
}
