//! Positive-sample REINFORCE: batch collection, the Q statistic, and the
//! training loop.
//!
//! Each iteration draws `B` verified rollouts by per-slot rejection
//! sampling, forms `Q[s][j] = mean_b(1{slot b picked task j at step s} -
//! pi(s, j))`, and applies `u += eta * gamma * Q`. Metrics are recorded
//! before the update, so record `t` describes the policy that generated
//! batch `t`. Every batch slot draws from its own stream keyed by
//! `(seed, iteration, slot)`, which makes runs reproducible bit-for-bit no
//! matter how slots are scheduled.

use alloc::vec::Vec;

use crate::analysis::{
    enumerate_outcomes, estimate_success_prob, margin_from_table, MarginCheck, OutcomeTable,
};
use crate::error::{invalid, Error};
use crate::mat::Mat;
use crate::policy::{PolicyParams, StepDistribution};
use crate::problems::Problem;
use crate::rng::{purpose, stream};
use crate::rollout::{sample_rollout_with_dists, Rollout};

/// Batch discrepancy statistic; the sole driver of parameter updates.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    q: Mat,
}

impl QMatrix {
    /// Wraps a precomputed statistic; entries must lie in `[-1, 1]`.
    pub fn from_mat(q: Mat) -> Result<Self, Error> {
        if q.iter().any(|x| !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&x)) {
            return Err(invalid("Q matrix", "entries must lie in [-1, 1]"));
        }
        Ok(QMatrix { q })
    }

    pub fn as_mat(&self) -> &Mat {
        &self.q
    }

    pub fn shape(&self) -> (usize, usize) {
        self.q.shape()
    }
}

/// How per-iteration metrics are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricsMode {
    /// Enumeration oracle each iteration (falls back to Monte Carlo when the
    /// problem cannot be enumerated).
    Exact,
    /// Estimate the success probability from fresh rollouts.
    MonteCarlo { samples: usize },
}

/// Training-loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Rejection-sampling attempt cap per batch slot.
    pub max_resample: usize,
    pub seed: u64,
    pub metrics: MetricsMode,
    /// Stop once the recorded success probability reaches this value.
    pub stop_at_success: Option<f64>,
}

/// Fallback sample count when exact metrics are requested but the problem
/// is not enumerable.
const METRICS_FALLBACK_SAMPLES: usize = 4096;

/// Default per-slot rejection-sampling cap for a given batch size.
pub fn default_max_resample(batch_size: usize) -> usize {
    (1_000_000 / batch_size.max(1)).max(64)
}

impl TrainConfig {
    /// Caps total rejection draws per batch near 10^6 by default, with a
    /// per-slot floor so very large batches cannot starve spuriously.
    pub fn new(eta: f64, batch_size: usize, iterations: usize, seed: u64) -> Self {
        TrainConfig {
            eta,
            batch_size,
            iterations,
            max_resample: default_max_resample(batch_size),
            seed,
            metrics: MetricsMode::Exact,
            stop_at_success: None,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be at least 1"));
        }
        if self.max_resample == 0 {
            return Err(invalid("max_resample", "must be at least 1"));
        }
        if let MetricsMode::MonteCarlo { samples } = self.metrics {
            if samples == 0 {
                return Err(invalid("metrics samples", "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Per-iteration snapshot, measured before that iteration's update.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    /// `P(V=1)` — exact, or a Monte-Carlo mean when `success_samples` is set.
    pub success_prob: f64,
    pub success_samples: Option<usize>,
    /// Per-step probability of the correct task (always exact: it equals
    /// the policy's own step distribution).
    pub correct_prob: Vec<f64>,
    /// Task-advantage ratios (exact metrics only).
    pub rho: Option<Mat>,
    /// Margin when the uniform task-advantage condition holds here.
    pub margin_alpha: Option<f64>,
    pub margin_satisfied: Option<bool>,
    /// `R_s` per step.
    pub error_ratios: Vec<f64>,
    /// `1 - sum_s R_s`.
    pub verifier_lower_bound: f64,
    pub ce_loss: f64,
    /// Fraction of raw rollouts that passed the verifier while collecting
    /// the batch; `None` on a final record that stopped before collecting.
    pub acceptance_rate: Option<f64>,
}

/// A per-step drop of the correct-task probability beyond the single-step
/// safety bound `2 * eta * gamma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorViolation {
    pub iteration: usize,
    pub step: usize,
    pub drop: f64,
    pub allowed: f64,
}

/// Training outcome: final parameters plus the metric trail.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub final_params: PolicyParams,
    pub metrics: Vec<MetricsRecord>,
    /// Number of updates actually applied.
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub floor_violations: Vec<FloorViolation>,
}

/// Draws `batch_size` verified rollouts by independent per-slot rejection
/// sampling; returns them with the overall acceptance rate.
///
/// Slot `b` of iteration `t` uses the stream keyed `(seed, t, b)`, so the
/// batch contents do not depend on scheduling or thread count.
pub fn collect_positive_batch(
    params: &PolicyParams,
    problem: &Problem,
    batch_size: usize,
    max_resample: usize,
    seed: u64,
    iteration: usize,
) -> Result<(Vec<Rollout>, f64), Error> {
    if batch_size == 0 {
        return Err(invalid("batch_size", "must be at least 1"));
    }
    let dists = params.distributions();
    let mut batch = Vec::with_capacity(batch_size);
    let mut total_draws = 0u64;
    for slot in 0..batch_size {
        let mut rng = stream(seed, purpose::BATCH_SLOT, iteration as u64, slot as u64);
        let mut accepted = None;
        for _attempt in 0..max_resample {
            total_draws += 1;
            let r = sample_rollout_with_dists(params, &dists, problem, &mut rng);
            if r.verified {
                accepted = Some(r);
                break;
            }
        }
        match accepted {
            Some(r) => batch.push(r),
            None => {
                return Err(Error::RewardStarvation {
                    iteration,
                    slot,
                    attempts: max_resample,
                })
            }
        }
    }
    Ok((batch, batch_size as f64 / total_draws as f64))
}

/// The batch statistic `Q[s][j] = mean_b(1{b selected j at s} - pi(s, j))`.
///
/// Per-step probabilities are prefix-independent, so the subtracted term
/// needs no per-prefix recomputation. At steps where a rollout emitted a
/// dead token, no task indicator fires.
pub fn compute_q_stats(batch: &[Rollout], params: &PolicyParams) -> Result<QMatrix, Error> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let steps = params.steps();
    let tasks = params.tasks();
    for r in batch {
        if r.steps() != steps {
            return Err(Error::ShapeMismatch {
                what: "rollout",
                expected: (steps, 1),
                got: (r.steps(), 1),
            });
        }
    }
    let dists = params.distributions();
    let inv_b = 1.0 / batch.len() as f64;
    let mut q = Mat::zeros(steps, tasks);
    for s in 0..steps {
        let probs = &dists[s].task_probs;
        let mut counts = alloc::vec![0u64; tasks];
        for r in batch {
            if let Some(j) = r.selected[s] {
                counts[j] += 1;
            }
        }
        for j in 0..tasks {
            q[(s, j)] = counts[j] as f64 * inv_b - probs[j];
        }
    }
    QMatrix::from_mat(q)
}

fn exact_metrics(
    iteration: usize,
    table: &OutcomeTable,
    dists: &[StepDistribution],
    problem: &Problem,
) -> MetricsRecord {
    let (margin_alpha, margin_satisfied) = match margin_from_table(table) {
        MarginCheck::Satisfied { alpha } => (Some(alpha), Some(true)),
        MarginCheck::Violated { .. } => (None, Some(false)),
    };
    MetricsRecord {
        iteration,
        success_prob: table.success_prob,
        success_samples: None,
        correct_prob: correct_probs(dists, problem),
        rho: Some(table.rho.clone()),
        margin_alpha,
        margin_satisfied,
        error_ratios: table.error_ratio.clone(),
        verifier_lower_bound: table.verifier_lower_bound(),
        ce_loss: table.ce_loss,
        acceptance_rate: None,
    }
}

fn correct_probs(dists: &[StepDistribution], problem: &Problem) -> Vec<f64> {
    problem
        .tau()
        .iter()
        .enumerate()
        .map(|(s, &j)| dists[s].task_probs[j])
        .collect()
}

fn monte_carlo_metrics(
    iteration: usize,
    params: &PolicyParams,
    problem: &Problem,
    samples: usize,
    seed: u64,
) -> MetricsRecord {
    let dists = params.distributions();
    let mut rng = stream(seed, purpose::METRICS, iteration as u64, 0);
    let success = estimate_success_prob(params, problem, samples, &mut rng);
    let correct = correct_probs(&dists, problem);
    let error_ratios: Vec<f64> = correct.iter().map(|&p| 1.0 / p - 1.0).collect();
    let lower = 1.0 - error_ratios.iter().sum::<f64>();
    let ce_loss = correct.iter().map(|&p| -crate::math::ln(p)).sum();
    MetricsRecord {
        iteration,
        success_prob: success,
        success_samples: Some(samples),
        correct_prob: correct,
        rho: None,
        margin_alpha: None,
        margin_satisfied: None,
        error_ratios,
        verifier_lower_bound: lower,
        ce_loss,
        acceptance_rate: None,
    }
}

/// Runs the positive-sample REINFORCE loop for up to `config.iterations`
/// iterations, recording one [`MetricsRecord`] per iteration (measured
/// before the update). Deterministic given `config.seed`.
pub fn train(
    params0: &PolicyParams,
    problem: &Problem,
    config: &TrainConfig,
) -> Result<TrainRun, Error> {
    config.validate()?;
    if problem.num_steps() != params0.steps() || problem.num_tasks() != params0.tasks() {
        return Err(Error::ShapeMismatch {
            what: "policy/problem",
            expected: (problem.num_steps(), problem.num_tasks()),
            got: (params0.steps(), params0.tasks()),
        });
    }
    let use_exact = matches!(config.metrics, MetricsMode::Exact) && problem.is_enumerable();
    let mc_samples = match config.metrics {
        MetricsMode::MonteCarlo { samples } => samples,
        MetricsMode::Exact => METRICS_FALLBACK_SAMPLES,
    };

    let mut params = params0.clone();
    let mut metrics: Vec<MetricsRecord> = Vec::with_capacity(config.iterations);
    let mut floor_violations = Vec::new();
    let mut stopped_early = false;
    let mut iterations_run = 0usize;
    let floor_allowance = 2.0 * config.eta * params.gamma() * params.gamma();

    for t in 0..config.iterations {
        let dists = params.distributions();
        let mut record = if use_exact {
            let table = enumerate_outcomes(&params, problem)?;
            exact_metrics(t, &table, &dists, problem)
        } else {
            monte_carlo_metrics(t, &params, problem, mc_samples, config.seed)
        };

        if let Some(target) = config.stop_at_success {
            if record.success_prob >= target {
                metrics.push(record);
                stopped_early = true;
                break;
            }
        }

        let (batch, acceptance) = collect_positive_batch(
            &params,
            problem,
            config.batch_size,
            config.max_resample,
            config.seed,
            t,
        )?;
        record.acceptance_rate = Some(acceptance);
        metrics.push(record);

        let q = compute_q_stats(&batch, &params)?;
        let updated = params.apply_update(&q, config.eta)?;

        // Single-step safety floor: the correct-task probability may drop by
        // at most 2 * eta * gamma^2 per iteration.
        let new_dists = updated.distributions();
        for (s, &j) in problem.tau().iter().enumerate() {
            let drop = dists[s].task_probs[j] - new_dists[s].task_probs[j];
            if drop > floor_allowance + 1e-9 {
                floor_violations.push(FloorViolation {
                    iteration: t,
                    step: s,
                    drop,
                    allowed: floor_allowance,
                });
            }
        }
        params = updated;
        iterations_run += 1;
    }

    Ok(TrainRun {
        final_params: params,
        metrics,
        iterations_run,
        stopped_early,
        floor_violations,
    })
}
