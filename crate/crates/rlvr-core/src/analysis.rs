//! Exact outcome probabilities and closed-form analytics.
//!
//! [`enumerate_outcomes`] computes, for a (policy, problem) pair, the exact
//! success probability, per-(step, task) selection probabilities conditioned
//! and unconditioned on verification, task-advantage ratios, error ratios,
//! and the cross-entropy loss — by summing policy-weighted trace
//! probabilities times verifier acceptance probabilities over the whole
//! outcome space. Problems that expose acceptance structure (a per-trace
//! acceptance marginal, or a per-step factorisation) get algebraically
//! equivalent fast paths; the generic (prompt, trace) enumeration is always
//! available for cross-checking.
//!
//! Conventions for the task-advantage ratio `rho = P(V=1 | A) / P(V=1 | A^c)`
//! follow IEEE arithmetic: `rho` may be `0` or `+inf`, and `1/rho` then is
//! `+inf` or `0` respectively.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{invalid, Error};
use crate::mat::Mat;
use crate::math;
use crate::policy::{PolicyParams, StepDistribution};
use crate::problems::{Acceptance, Prefix, Problem, Token};
use crate::rollout::sample_rollout_with_dists;

/// Knobs for the enumeration oracle.
#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Maximum number of weighted terms the oracle may visit.
    pub budget: u128,
    /// Use the problem's acceptance structure when it has one. Disable to
    /// force the generic (prompt, trace) enumeration.
    pub use_shortcuts: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            budget: 100_000_000,
            use_shortcuts: true,
        }
    }
}

/// Exact per-policy outcome statistics for one problem.
#[derive(Debug, Clone)]
pub struct OutcomeTable {
    /// Correct task per step (copied from the problem).
    pub tau: Vec<usize>,
    /// `P(A_{s,j})`: probability task `j` is selected at step `s`.
    pub p_task: Mat,
    /// `P(A_{s,j} | V=1)`.
    pub p_task_given_success: Mat,
    /// `P(V=1 | A_{s,j})`.
    pub p_success_given_task: Mat,
    /// Task-advantage ratio; entries may be `0` or `+inf`.
    pub rho: Mat,
    /// `P(V=1)`.
    pub success_prob: f64,
    /// Per-step error ratio `R_s = 1/P(A_{s,tau(s)}) - 1`.
    pub error_ratio: Vec<f64>,
    /// Cross-entropy loss of the correct composition.
    pub ce_loss: f64,
}

impl OutcomeTable {
    pub fn steps(&self) -> usize {
        self.p_task.rows()
    }

    pub fn tasks(&self) -> usize {
        self.p_task.cols()
    }

    pub fn sum_error_ratios(&self) -> f64 {
        self.error_ratio.iter().sum()
    }

    /// `1 - sum_s R_s`, the guaranteed success floor.
    pub fn verifier_lower_bound(&self) -> f64 {
        1.0 - self.sum_error_ratios()
    }
}

/// Verifier/loss bound report derived from an [`OutcomeTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub success_prob: f64,
    pub verifier_lower_bound: f64,
    pub sum_error_ratios: f64,
    pub ce_loss: f64,
    pub verifier_bound_ok: bool,
    pub loss_bound_ok: bool,
}

/// Result of the pointwise uniform task-advantage check.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginCheck {
    /// All correct tasks have `rho > 1`, all others `rho < 1`;
    /// `alpha = min_s rho_{s, tau(s)} - 1`.
    Satisfied {
        alpha: f64,
    },
    Violated {
        violations: Vec<MarginViolation>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginViolation {
    pub step: usize,
    pub task: usize,
    pub rho: f64,
}

/// Monte-Carlo estimate of a task-advantage ratio.
#[derive(Debug, Clone, PartialEq)]
pub enum RatioEstimate {
    Estimated {
        value: f64,
        /// Delta-method standard error of the ratio of acceptance rates.
        stderr: f64,
        selected: usize,
        complement: usize,
    },
    /// One of the two strata had no samples.
    NotEstimable { selected: usize, complement: usize },
}

struct Accumulator {
    success: f64,
    joint_task: Mat,
    joint_task_success: Mat,
    /// `P(A^c, V=1)` and `P(A^c)` when a route can accumulate them without
    /// cancellation (the factorised path); otherwise derived by total
    /// probability.
    complement: Option<(Mat, Mat)>,
    total: f64,
}

impl Accumulator {
    fn new(steps: usize, tasks: usize) -> Self {
        Accumulator {
            success: 0.0,
            joint_task: Mat::zeros(steps, tasks),
            joint_task_success: Mat::zeros(steps, tasks),
            complement: None,
            total: 0.0,
        }
    }

    fn leaf(&mut self, weight: f64, accept: f64, trace: &[Option<usize>]) {
        self.total += weight;
        if accept > 0.0 {
            let mass = weight * accept;
            self.success += mass;
            for (s, sel) in trace.iter().enumerate() {
                if let Some(j) = sel {
                    self.joint_task_success[(s, *j)] += mass;
                }
            }
        }
    }
}

fn branch_factor(dists: &[StepDistribution]) -> u128 {
    dists.iter().fold(1u128, |acc, d| {
        let branches = d.task_probs.len() as u128 + u128::from(d.dead_mass > 0.0);
        acc.saturating_mul(branches)
    })
}

/// Exact outcome statistics with default [`OracleOptions`].
pub fn enumerate_outcomes(params: &PolicyParams, problem: &Problem) -> Result<OutcomeTable, Error> {
    enumerate_outcomes_with(params, problem, &OracleOptions::default())
}

/// Exact outcome statistics; route selection and budget per `opts`.
pub fn enumerate_outcomes_with(
    params: &PolicyParams,
    problem: &Problem,
    opts: &OracleOptions,
) -> Result<OutcomeTable, Error> {
    if problem.num_steps() != params.steps() || problem.num_tasks() != params.tasks() {
        return Err(Error::ShapeMismatch {
            what: "policy/problem",
            expected: (problem.num_steps(), problem.num_tasks()),
            got: (params.steps(), params.tasks()),
        });
    }
    let dists = params.distributions();

    if opts.use_shortcuts {
        match problem.acceptance() {
            Acceptance::PerStepFactor { factors, dead } => {
                return Ok(factorized_table(params, problem, &dists, factors, dead));
            }
            Acceptance::PerTrace(accept) => {
                let required = branch_factor(&dists);
                if required > opts.budget {
                    return Err(Error::CapacityExceeded {
                        required,
                        budget: opts.budget,
                    });
                }
                let accept = accept.clone();
                let mut acc = Accumulator::new(params.steps(), params.tasks());
                let mut trace: Vec<Option<usize>> = Vec::with_capacity(params.steps());
                trace_recursion(&dists, &mut acc, &mut trace, 1.0, &|t| accept(t));
                return Ok(finish_table(params, problem, &dists, acc));
            }
            Acceptance::Generic => {}
        }
    }

    let count = problem.prompt_count().ok_or_else(|| Error::NotEnumerable {
        problem: problem.name().into(),
    })?;
    let required = branch_factor(&dists).saturating_mul(count as u128);
    if required > opts.budget {
        return Err(Error::CapacityExceeded {
            required,
            budget: opts.budget,
        });
    }

    let mut acc = Accumulator::new(params.steps(), params.tasks());
    for i in 0..count {
        let (prompt, prob) = problem.prompt(i);
        let mut tokens: Vec<Token> = Vec::with_capacity(params.steps());
        let mut trace: Vec<Option<usize>> = Vec::with_capacity(params.steps());
        prompt_trace_recursion(
            problem,
            &dists,
            &mut acc,
            &prompt,
            &mut tokens,
            &mut trace,
            prob,
        );
    }
    Ok(finish_table(params, problem, &dists, acc))
}

/// Walks every task/dead branch, accumulating at the leaves through the
/// prompt-marginalised acceptance function.
fn trace_recursion(
    dists: &[StepDistribution],
    acc: &mut Accumulator,
    trace: &mut Vec<Option<usize>>,
    weight: f64,
    accept: &dyn Fn(&[Option<usize>]) -> f64,
) {
    let s = trace.len();
    if s == dists.len() {
        acc.leaf(weight, accept(trace), trace);
        return;
    }
    let dist = &dists[s];
    for (j, &p) in dist.task_probs.iter().enumerate() {
        acc.joint_task[(s, j)] += weight * p;
        trace.push(Some(j));
        trace_recursion(dists, acc, trace, weight * p, accept);
        trace.pop();
    }
    if dist.dead_mass > 0.0 {
        trace.push(None);
        trace_recursion(dists, acc, trace, weight * dist.dead_mass, accept);
        trace.pop();
    }
}

#[allow(clippy::too_many_arguments)]
fn prompt_trace_recursion(
    problem: &Problem,
    dists: &[StepDistribution],
    acc: &mut Accumulator,
    prompt: &[Token],
    tokens: &mut Vec<Token>,
    trace: &mut Vec<Option<usize>>,
    weight: f64,
) {
    let s = trace.len();
    if s == dists.len() {
        let accept = problem.accept_probability(prompt, tokens, trace);
        acc.leaf(weight, accept, trace);
        return;
    }
    let dist = &dists[s];
    for (j, &p) in dist.task_probs.iter().enumerate() {
        acc.joint_task[(s, j)] += weight * p;
        let token = {
            let prefix = Prefix {
                prompt,
                generated: tokens,
            };
            problem.task(j, &prefix)
        };
        tokens.push(token);
        trace.push(Some(j));
        prompt_trace_recursion(problem, dists, acc, prompt, tokens, trace, weight * p);
        trace.pop();
        tokens.pop();
    }
    if dist.dead_mass > 0.0 {
        tokens.push(Token::DEAD);
        trace.push(None);
        prompt_trace_recursion(
            problem,
            dists,
            acc,
            prompt,
            tokens,
            trace,
            weight * dist.dead_mass,
        );
        trace.pop();
        tokens.pop();
    }
}

/// Closed-form table for per-step factorised acceptance:
/// `P(V=1) = prod_s m_s` with `m_s` the step's mean acceptance factor.
fn factorized_table(
    params: &PolicyParams,
    problem: &Problem,
    dists: &[StepDistribution],
    factors: &Mat,
    dead: &[f64],
) -> OutcomeTable {
    let steps = params.steps();
    let tasks = params.tasks();
    let mut step_mean = vec![0.0f64; steps];
    for (s, dist) in dists.iter().enumerate() {
        let mut m = dist.dead_mass * dead[s];
        for (j, &p) in dist.task_probs.iter().enumerate() {
            m += p * factors[(s, j)];
        }
        step_mean[s] = m;
    }
    // prefix[s] = prod_{s' < s} m, suffix[s] = prod_{s' > s} m.
    let mut prefix = vec![1.0f64; steps + 1];
    for s in 0..steps {
        prefix[s + 1] = prefix[s] * step_mean[s];
    }
    let mut suffix = vec![1.0f64; steps + 1];
    for s in (0..steps).rev() {
        suffix[s] = suffix[s + 1] * step_mean[s];
    }
    let success = prefix[steps];

    let mut acc = Accumulator::new(steps, tasks);
    acc.success = success;
    acc.total = 1.0;
    let mut comp_success = Mat::zeros(steps, tasks);
    let mut comp_mass = Mat::zeros(steps, tasks);
    for s in 0..steps {
        let others = prefix[s] * suffix[s + 1];
        for j in 0..tasks {
            let p = dists[s].task_probs[j];
            acc.joint_task[(s, j)] = p;
            acc.joint_task_success[(s, j)] = p * factors[(s, j)] * others;
            // Complement masses as sums of positives; subtracting from the
            // total would cancel badly for near-deterministic policies.
            let mut rest_success = dists[s].dead_mass * dead[s];
            let mut rest_mass = dists[s].dead_mass;
            for (j2, &p2) in dists[s].task_probs.iter().enumerate() {
                if j2 != j {
                    rest_success += p2 * factors[(s, j2)];
                    rest_mass += p2;
                }
            }
            comp_success[(s, j)] = rest_success * others;
            comp_mass[(s, j)] = rest_mass;
        }
    }
    acc.complement = Some((comp_success, comp_mass));
    finish_table(params, problem, dists, acc)
}

fn finish_table(
    params: &PolicyParams,
    problem: &Problem,
    dists: &[StepDistribution],
    acc: Accumulator,
) -> OutcomeTable {
    debug_assert!(
        math::abs(acc.total - 1.0) < 1e-9,
        "outcome masses sum to {}",
        acc.total
    );
    let steps = params.steps();
    let tasks = params.tasks();
    let success = acc.success;
    let mut p_task_given_success = Mat::zeros(steps, tasks);
    let mut p_success_given_task = Mat::zeros(steps, tasks);
    let mut rho = Mat::zeros(steps, tasks);
    for s in 0..steps {
        for j in 0..tasks {
            let pa = acc.joint_task[(s, j)];
            let pav = acc.joint_task_success[(s, j)];
            p_task_given_success[(s, j)] = if success > 0.0 { pav / success } else { 0.0 };
            // A task with zero selection mass (underflowed logits) reports
            // the degenerate limit 0 for both conditionals.
            let num = if pa > 0.0 { pav / pa } else { 0.0 };
            p_success_given_task[(s, j)] = num;
            let (comp_success, comp_mass) = match &acc.complement {
                Some((cs, cm)) => (cs[(s, j)], cm[(s, j)]),
                None => ((success - pav).max(0.0), 1.0 - pa),
            };
            let den = if comp_mass > 0.0 {
                comp_success / comp_mass
            } else {
                0.0
            };
            rho[(s, j)] = if num == 0.0 {
                0.0
            } else if den == 0.0 {
                f64::INFINITY
            } else {
                num / den
            };
        }
    }
    let tau = problem.tau().to_vec();
    let error_ratio: Vec<f64> = tau
        .iter()
        .enumerate()
        .map(|(s, &j)| 1.0 / acc.joint_task[(s, j)] - 1.0)
        .collect();
    // Chain rule along the correct CoT; per-step probabilities are
    // prefix-independent, so the loss is prompt-independent.
    let ce_loss: f64 = tau
        .iter()
        .enumerate()
        .map(|(s, &j)| -math::ln(dists[s].task_probs[j]))
        .sum();
    OutcomeTable {
        tau,
        p_task: acc.joint_task,
        p_task_given_success,
        p_success_given_task,
        rho,
        success_prob: success,
        error_ratio,
        ce_loss,
    }
}

/// Single-entry accessor for the task-advantage ratio `rho_{s,j}`.
pub fn advantage_ratio(
    params: &PolicyParams,
    problem: &Problem,
    step: usize,
    task: usize,
) -> Result<f64, Error> {
    let table = enumerate_outcomes(params, problem)?;
    Ok(table.rho[(step, task)])
}

/// Monte-Carlo companion to [`advantage_ratio`] for problems that cannot be
/// enumerated: draws `n` rollouts, splits them on whether task `task` was
/// selected at `step`, and returns the ratio of empirical acceptance rates.
pub fn estimate_advantage_ratio<R: RngCore>(
    params: &PolicyParams,
    problem: &Problem,
    step: usize,
    task: usize,
    n: usize,
    rng: &mut R,
) -> RatioEstimate {
    assert!(n >= 100, "need at least 100 samples, got {n}");
    let mut sel = 0usize;
    let mut sel_ok = 0usize;
    let mut comp = 0usize;
    let mut comp_ok = 0usize;
    let dists = params.distributions();
    for _ in 0..n {
        let r = crate::rollout::sample_rollout_with_dists(params, &dists, problem, rng);
        if r.selected[step] == Some(task) {
            sel += 1;
            sel_ok += usize::from(r.verified);
        } else {
            comp += 1;
            comp_ok += usize::from(r.verified);
        }
    }
    if sel == 0 || comp == 0 {
        return RatioEstimate::NotEstimable {
            selected: sel,
            complement: comp,
        };
    }
    let p1 = sel_ok as f64 / sel as f64;
    let p2 = comp_ok as f64 / comp as f64;
    if p2 == 0.0 {
        return RatioEstimate::Estimated {
            value: f64::INFINITY,
            stderr: f64::INFINITY,
            selected: sel,
            complement: comp,
        };
    }
    let value = p1 / p2;
    let stderr = if p1 == 0.0 {
        0.0
    } else {
        value * math::sqrt((1.0 - p1) / (p1 * sel as f64) + (1.0 - p2) / (p2 * comp as f64))
    };
    RatioEstimate::Estimated {
        value,
        stderr,
        selected: sel,
        complement: comp,
    }
}

/// Pointwise uniform task-advantage check at the given parameters.
pub fn margin_alpha(params: &PolicyParams, problem: &Problem) -> Result<MarginCheck, Error> {
    let table = enumerate_outcomes(params, problem)?;
    Ok(margin_from_table(&table))
}

/// As [`margin_alpha`], reusing an already computed table.
pub fn margin_from_table(table: &OutcomeTable) -> MarginCheck {
    let mut violations = Vec::new();
    let mut alpha = f64::INFINITY;
    for s in 0..table.steps() {
        let correct = table.tau[s];
        for j in 0..table.tasks() {
            let rho = table.rho[(s, j)];
            if j == correct {
                if rho > 1.0 {
                    alpha = alpha.min(rho - 1.0);
                } else {
                    violations.push(MarginViolation {
                        step: s,
                        task: j,
                        rho,
                    });
                }
            } else if rho >= 1.0 {
                violations.push(MarginViolation {
                    step: s,
                    task: j,
                    rho,
                });
            }
        }
    }
    if violations.is_empty() {
        MarginCheck::Satisfied { alpha }
    } else {
        MarginCheck::Violated { violations }
    }
}

/// Expected single-iteration logit change at the token task `task` emits,
/// for batches of verified rollouts.
pub fn expected_update(
    params: &PolicyParams,
    problem: &Problem,
    step: usize,
    task: usize,
    eta: f64,
) -> Result<f64, Error> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid("eta", "must be positive and finite"));
    }
    let table = enumerate_outcomes(params, problem)?;
    Ok(expected_update_from_table(
        &table,
        step,
        task,
        eta,
        params.gamma(),
    ))
}

/// As [`expected_update`], from a precomputed table.
pub fn expected_update_from_table(
    table: &OutcomeTable,
    step: usize,
    task: usize,
    eta: f64,
    gamma: f64,
) -> f64 {
    let g2 = eta * gamma * gamma;
    let rho = table.rho[(step, task)];
    if rho > 0.0 {
        // 1/rho is 0 when rho is infinite.
        g2 * table.p_task_given_success[(step, task)]
            * (1.0 - table.p_task[(step, task)])
            * (1.0 - 1.0 / rho)
    } else {
        -g2 * table.p_task[(step, task)]
    }
}

/// Evaluates the verifier and loss bounds on a table; both flags must hold
/// for any problem satisfying the always-verified-composition assumption.
pub fn bound_report(table: &OutcomeTable) -> BoundReport {
    let sum = table.sum_error_ratios();
    let lower = 1.0 - sum;
    BoundReport {
        success_prob: table.success_prob,
        verifier_lower_bound: lower,
        sum_error_ratios: sum,
        ce_loss: table.ce_loss,
        verifier_bound_ok: table.success_prob >= lower - 1e-10,
        loss_bound_ok: table.ce_loss <= sum + 1e-10,
    }
}

/// Monte-Carlo estimate of `P(V=1)` under the current policy.
pub fn estimate_success_prob<R: RngCore>(
    params: &PolicyParams,
    problem: &Problem,
    n: usize,
    rng: &mut R,
) -> f64 {
    let dists = params.distributions();
    let hits = (0..n)
        .filter(|_| sample_rollout_with_dists(params, &dists, problem, rng).verified)
        .count();
    hits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::params_from_correct_prob;
    use crate::problems::{make_parity, make_recovery, make_two_token_trap};
    use crate::rng::{purpose, stream};

    fn trap_params(p0: f64) -> PolicyParams {
        params_from_correct_prob(2, 2, |_| 0, p0, 1.0).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
    }

    #[test]
    fn trap_table_at_one_half() {
        let problem = make_two_token_trap(false).unwrap();
        let table = enumerate_outcomes(&trap_params(0.5), &problem).unwrap();
        assert_close(table.success_prob, 0.375, 1e-15, "P(V=1)");
        for s in 0..2 {
            assert_close(table.p_task_given_success[(s, 0)], 2.0 / 3.0, 1e-12, "D(p)");
            assert_close(table.rho[(s, 0)], 2.0, 1e-12, "rho correct");
            assert_close(table.rho[(s, 1)], 0.5, 1e-12, "rho wrong");
        }
    }

    #[test]
    fn trap_matches_closed_forms_over_p_grid() {
        let problem = make_two_token_trap(false).unwrap();
        for &p in &[0.1, 0.25, 1.0 / 3.0, 0.5, 0.9] {
            let table = enumerate_outcomes(&trap_params(p), &problem).unwrap();
            let d = p * p / (p * p + 0.5 * (1.0 - p) * (1.0 - p));
            for s in 0..2 {
                assert_close(table.rho[(s, 0)], 2.0 * p / (1.0 - p), 1e-10, "rho_1");
                assert_close(table.rho[(s, 1)], (1.0 - p) / (2.0 * p), 1e-10, "rho_2");
                assert_close(table.p_task_given_success[(s, 0)], d, 1e-10, "D(p)");
            }
        }
    }

    #[test]
    fn parity_rho_at_uniform_init() {
        for d in 2..=8usize {
            let set: Vec<usize> = (1..=d).collect();
            let problem = make_parity(d, &set).unwrap();
            let params = PolicyParams::uniform(d, 2, 1.0);
            let table = enumerate_outcomes(&params, &problem).unwrap();
            let expected = 1.0 + 0.5f64.powi(d as i32 - 1);
            for s in 0..d {
                let tau = problem.tau()[s];
                assert_close(table.rho[(s, tau)], expected, 1e-10, "parity rho");
                assert!(table.rho[(s, 1 - tau)] < 1.0);
            }
        }
    }

    #[test]
    fn parity_shortcut_matches_generic_route_up_to_d6() {
        let mut rng = stream(12, purpose::PARAM_DRAW, 0, 0);
        for d in 2..=6usize {
            let set: Vec<usize> = (1..=d).filter(|k| k % 2 == 1).collect();
            let problem = make_parity(d, &set).unwrap();
            let u = Mat::from_rows(
                &(0..d)
                    .map(|_| {
                        (0..2)
                            .map(|_| 2.0 * crate::rng::SimRng::next_f64(&mut rng) - 1.0)
                            .collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>(),
            );
            let params = PolicyParams::new(u, 1.7, vec![0; d]).unwrap();
            let fast = enumerate_outcomes(&params, &problem).unwrap();
            let slow = enumerate_outcomes_with(
                &params,
                &problem,
                &OracleOptions {
                    use_shortcuts: false,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_close(fast.success_prob, slow.success_prob, 1e-12, "success");
            for s in 0..d {
                for j in 0..2 {
                    assert_close(fast.rho[(s, j)], slow.rho[(s, j)], 1e-10, "rho");
                    assert_close(
                        fast.p_task_given_success[(s, j)],
                        slow.p_task_given_success[(s, j)],
                        1e-12,
                        "p(A|V)",
                    );
                }
            }
        }
    }

    #[test]
    fn recovery_factorized_matches_generic_route() {
        let problem = make_recovery(&[0.25, 0.5, 0.75]).unwrap();
        let params = params_from_correct_prob(3, 2, |_| 0, 0.39, 2.0).unwrap();
        let fast = enumerate_outcomes(&params, &problem).unwrap();
        let slow = enumerate_outcomes_with(
            &params,
            &problem,
            &OracleOptions {
                use_shortcuts: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_close(fast.success_prob, slow.success_prob, 1e-12, "success");
        for s in 0..3 {
            for j in 0..2 {
                assert_close(fast.rho[(s, j)], slow.rho[(s, j)], 1e-10, "rho");
            }
        }
    }

    #[test]
    fn recovery_correct_rho_is_inverse_lambda() {
        // rho for the correct task equals 1/lambda_s for ANY policy.
        let problem = make_recovery(&[0.5, 0.5, 0.5]).unwrap();
        for (i, p0) in [0.2, 0.5, 0.77].iter().enumerate() {
            let params = params_from_correct_prob(3, 2, |_| 0, *p0, 1.0 + i as f64).unwrap();
            let table = enumerate_outcomes(&params, &problem).unwrap();
            for s in 0..3 {
                assert_close(table.rho[(s, 0)], 2.0, 1e-10, "rho = 1/lambda");
                assert!(table.rho[(s, 1)] < 1.0);
            }
        }
    }

    #[test]
    fn recovery_incorrect_rho_from_enumeration() {
        // With one correct and one incorrect task, conditioning on "not the
        // incorrect task" is conditioning on the correct one, so the exact
        // ratio for the incorrect task is lambda_s itself.
        let problem = make_recovery(&[0.5, 0.5]).unwrap();
        let params = params_from_correct_prob(2, 2, |_| 0, 0.5, 1.0).unwrap();
        let table = enumerate_outcomes(&params, &problem).unwrap();
        for s in 0..2 {
            assert_close(table.rho[(s, 1)], 0.5, 1e-12, "rho incorrect");
        }
    }

    #[test]
    fn strict_trap_has_zero_rho_for_task_two() {
        let problem = make_two_token_trap(true).unwrap();
        for &p in &[0.2, 0.5, 0.8] {
            let table = enumerate_outcomes(&trap_params(p), &problem).unwrap();
            assert_eq!(table.rho[(0, 1)], 0.0);
            assert_eq!(table.rho[(1, 1)], 0.0);
        }
    }

    #[test]
    fn deterministic_policy_saturates_table() {
        let problem = make_two_token_trap(false).unwrap();
        let u = Mat::from_rows(&[vec![1e3, 0.0], vec![1e3, 0.0]]);
        let params = PolicyParams::new(u, 1.0, vec![0; 2]).unwrap();
        let table = enumerate_outcomes(&params, &problem).unwrap();
        assert_close(table.success_prob, 1.0, 1e-12, "P(V=1)");
        for s in 0..2 {
            assert!(table.error_ratio[s].abs() < 1e-12);
        }
        assert!(table.ce_loss.abs() < 1e-12);
        let report = bound_report(&table);
        assert!(report.verifier_bound_ok && report.loss_bound_ok);
    }

    #[test]
    fn advantage_ratio_accessor_matches_table() {
        let problem = make_two_token_trap(false).unwrap();
        let params = trap_params(0.5);
        assert_close(
            advantage_ratio(&params, &problem, 0, 0).unwrap(),
            2.0,
            1e-12,
            "rho",
        );
    }

    #[test]
    fn estimated_ratio_agrees_with_oracle() {
        let problem = make_two_token_trap(false).unwrap();
        let params = trap_params(0.5);
        let mut rng = stream(77, purpose::ESTIMATE, 0, 0);
        match estimate_advantage_ratio(&params, &problem, 0, 0, 100_000, &mut rng) {
            RatioEstimate::Estimated { value, stderr, .. } => {
                assert!((value - 2.0).abs() <= 3.0 * stderr, "{value} +- {stderr}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn estimated_ratio_on_recovery() {
        let problem = make_recovery(&[0.5, 0.5]).unwrap();
        let params = params_from_correct_prob(2, 2, |_| 0, 0.5, 1.0).unwrap();
        let mut rng = stream(78, purpose::ESTIMATE, 0, 0);
        match estimate_advantage_ratio(&params, &problem, 1, 0, 100_000, &mut rng) {
            RatioEstimate::Estimated { value, stderr, .. } => {
                assert!((value - 2.0).abs() <= 3.0 * stderr, "{value} +- {stderr}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn deterministic_policy_is_not_estimable() {
        let problem = make_two_token_trap(false).unwrap();
        let u = Mat::from_rows(&[vec![1e6, 0.0], vec![1e6, 0.0]]);
        let params = PolicyParams::new(u, 1.0, vec![0; 2]).unwrap();
        let mut rng = stream(79, purpose::ESTIMATE, 0, 0);
        match estimate_advantage_ratio(&params, &problem, 0, 0, 1000, &mut rng) {
            RatioEstimate::NotEstimable { complement, .. } => assert_eq!(complement, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn margin_examples() {
        // Parity d=4 at uniform init: alpha = 1/8.
        let parity = make_parity(4, &[1, 2, 3, 4]).unwrap();
        let uniform = PolicyParams::uniform(4, 2, 1.0);
        match margin_alpha(&uniform, &parity).unwrap() {
            MarginCheck::Satisfied { alpha } => assert_close(alpha, 0.125, 1e-10, "alpha"),
            other => panic!("unexpected {other:?}"),
        }
        // Recovery lambda=0.5: alpha = 1.
        let recovery = make_recovery(&[0.5, 0.5]).unwrap();
        let params = params_from_correct_prob(2, 2, |_| 0, 0.5, 1.0).unwrap();
        match margin_alpha(&params, &recovery).unwrap() {
            MarginCheck::Satisfied { alpha } => assert_close(alpha, 1.0, 1e-10, "alpha"),
            other => panic!("unexpected {other:?}"),
        }
        // Trap at p=0.25: the correct task has rho = 2/3 < 1 at both steps
        // (and symmetrically the wrong task sits at 3/2 >= 1).
        let trap = make_two_token_trap(false).unwrap();
        match margin_alpha(&trap_params(0.25), &trap).unwrap() {
            MarginCheck::Violated { violations } => {
                assert_eq!(violations.len(), 4);
                for v in violations {
                    let expected = if v.task == 0 { 2.0 / 3.0 } else { 1.5 };
                    assert_close(v.rho, expected, 1e-10, "rho");
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn expected_update_examples() {
        let trap = make_two_token_trap(false).unwrap();
        // rho = 1 would zero the update; at the trap's fixed point p = 1/3
        // the correct task has exactly rho = 1.
        let at_third = trap_params(1.0 / 3.0);
        let upd = expected_update(&at_third, &trap, 0, 0, 0.1).unwrap();
        assert_close(upd, 0.0, 1e-12, "fixed point");
        // p=0.5, eta=0.1, gamma=1: 0.1 * (2/3) * (1/2) * (1/2) = 1/60.
        let upd = expected_update(&trap_params(0.5), &trap, 0, 0, 0.1).unwrap();
        assert_close(upd, 1.0 / 60.0, 1e-12, "1/60");
        // Strict trap, rho = 0 branch: -eta * gamma^2 * P(A).
        let strict = make_two_token_trap(true).unwrap();
        let upd = expected_update(&trap_params(0.5), &strict, 0, 1, 0.1).unwrap();
        assert_close(upd, -0.1 * 0.5, 1e-12, "rho zero branch");
    }

    #[test]
    fn bound_report_examples() {
        let trap = make_two_token_trap(false).unwrap();
        // p = 0.9: P(V=1) = 0.815 >= 1 - 2*(1/9).
        let table = enumerate_outcomes(&trap_params(0.9), &trap).unwrap();
        let report = bound_report(&table);
        assert_close(report.success_prob, 0.815, 1e-12, "P(V=1)");
        assert_close(report.verifier_lower_bound, 1.0 - 2.0 / 9.0, 1e-10, "bound");
        assert!(report.verifier_bound_ok && report.loss_bound_ok);
        // p = 0.5: the verifier bound is vacuous (-1) but still consistent,
        // and L = 2 ln 2 <= sum R_s = 2.
        let table = enumerate_outcomes(&trap_params(0.5), &trap).unwrap();
        let report = bound_report(&table);
        assert_close(report.verifier_lower_bound, -1.0, 1e-10, "vacuous bound");
        assert_close(report.ce_loss, 2.0 * 2.0f64.ln(), 1e-12, "loss");
        assert!(report.verifier_bound_ok && report.loss_bound_ok);
    }

    #[test]
    fn bayes_identity_holds_on_tables() {
        let problems = [
            make_two_token_trap(false).unwrap(),
            make_two_token_trap(true).unwrap(),
            make_recovery(&[0.3, 0.6]).unwrap(),
        ];
        for problem in &problems {
            let params =
                params_from_correct_prob(problem.num_steps(), 2, |s| problem.tau()[s], 0.41, 1.3)
                    .unwrap();
            let table = enumerate_outcomes(&params, problem).unwrap();
            for s in 0..table.steps() {
                for j in 0..table.tasks() {
                    let lhs = table.p_task[(s, j)] * table.p_success_given_task[(s, j)];
                    let rhs = table.p_task_given_success[(s, j)] * table.success_prob;
                    assert_close(lhs, rhs, 1e-10, "Bayes");
                }
            }
        }
    }

    #[test]
    fn budget_overflow_reports_capacity() {
        let problem = make_parity(8, &[1]).unwrap();
        let params = PolicyParams::uniform(8, 2, 1.0);
        let err = enumerate_outcomes_with(
            &params,
            &problem,
            &OracleOptions {
                budget: 10,
                use_shortcuts: true,
            },
        )
        .unwrap_err();
        match err {
            Error::CapacityExceeded { required, budget } => {
                assert_eq!(required, 256);
                assert_eq!(budget, 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dead_mass_branches_are_enumerated() {
        // W=1 at each step: the oracle must account for dead branches; all
        // verifiers reject dead tokens, so success shrinks accordingly.
        let problem = make_two_token_trap(false).unwrap();
        let target = Mat::from_rows(&[vec![0.4, 0.4], vec![0.4, 0.4]]);
        let params = PolicyParams::from_task_probs(&target, 1.0, vec![1; 2]).unwrap();
        let table = enumerate_outcomes(&params, &problem).unwrap();
        // Per step: P(correct)=0.4, P(wrong)=0.4, dead 0.2.
        // Accepted mass: (0.4)^2 * 1 (trace 11) + (0.4)^2 * 0.5 (trace 22).
        assert_close(
            table.success_prob,
            0.16 + 0.08,
            1e-12,
            "success with dead mass",
        );
        let slow = enumerate_outcomes_with(
            &params,
            &problem,
            &OracleOptions {
                use_shortcuts: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_close(table.success_prob, slow.success_prob, 1e-13, "routes agree");
    }
}
