//! Closed-form hyperparameter planning.
//!
//! For a target accuracy `1 - epsilon` with failure probability `delta`,
//! margin `alpha`, and worst initial correct-task probability `p0_min`, the
//! guarantee-backed choices are
//!
//! ```text
//! eps~ = min(epsilon, 1/2, p0_min) / S
//! eta  = eps~ / (8 gamma^2)
//! T    = ceil(96 (1 + 1/alpha) ln(1/eps~) / eps~^2)
//! B    = 128 (1 + 1/alpha)^2 ln(2 J S T / delta) / eps~^2
//! ```
//!
//! These constants are deliberately conservative; [`scale_plan_to_budget`]
//! finds the smallest relaxation of `eps~` (keeping all couplings intact)
//! whose total rollout count `T * B` fits a budget.

use alloc::format;

use crate::error::{invalid, Error};
use crate::math;

/// Inputs to the planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanInputs {
    /// Target success shortfall; the run aims for `P(V=1) >= 1 - epsilon`.
    pub epsilon: f64,
    /// Failure probability of the guarantee.
    pub delta: f64,
    /// Uniform task-advantage margin (may be `f64::INFINITY`).
    pub alpha: f64,
    /// Minimum initial correct-task probability over steps.
    pub p0_min: f64,
    pub steps: usize,
    pub tasks: usize,
    pub gamma: f64,
}

/// Planner output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plan {
    pub eps_tilde: f64,
    pub eta: f64,
    pub iterations: u64,
    /// `B` before rounding.
    pub batch_real: f64,
    /// `B` rounded up.
    pub batch: u64,
}

impl Plan {
    /// Total verified rollouts the plan consumes.
    pub fn total_rollouts(&self) -> f64 {
        self.iterations as f64 * self.batch as f64
    }

    /// Estimated raw draws given a guessed acceptance rate.
    pub fn estimated_draws(&self, acceptance_guess: f64) -> f64 {
        self.total_rollouts() / acceptance_guess
    }
}

/// A plan whose `eps~` was relaxed by `scale` to fit a rollout budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledPlan {
    pub plan: Plan,
    /// Multiplier applied to the original `eps~` (1 when unscaled).
    pub scale: f64,
}

fn validate(inputs: &PlanInputs) -> Result<(), Error> {
    if !(inputs.epsilon > 0.0 && inputs.epsilon < 0.5) {
        return Err(invalid(
            "epsilon",
            format!("must lie in (0, 1/2), got {}", inputs.epsilon),
        ));
    }
    if !(inputs.delta > 0.0 && inputs.delta < 1.0) {
        return Err(invalid(
            "delta",
            format!("must lie in (0, 1), got {}", inputs.delta),
        ));
    }
    if inputs.alpha.is_nan() || inputs.alpha <= 0.0 {
        return Err(invalid(
            "alpha",
            format!("must be positive, got {}", inputs.alpha),
        ));
    }
    if !(inputs.p0_min > 0.0 && inputs.p0_min < 1.0) {
        return Err(invalid(
            "p0_min",
            format!("must lie in (0, 1), got {}", inputs.p0_min),
        ));
    }
    if inputs.steps == 0 || inputs.tasks == 0 {
        return Err(invalid("plan", "steps and tasks must be at least 1"));
    }
    if !(inputs.gamma > 0.0 && inputs.gamma.is_finite()) {
        return Err(invalid("gamma", "must be positive and finite"));
    }
    Ok(())
}

fn plan_for_eps(inputs: &PlanInputs, eps_tilde: f64) -> Plan {
    let factor = 1.0 + 1.0 / inputs.alpha;
    let eta = eps_tilde / (8.0 * inputs.gamma * inputs.gamma);
    let t_real = 96.0 * factor * math::ln(1.0 / eps_tilde) / (eps_tilde * eps_tilde);
    let iterations = math::ceil(t_real) as u64;
    let log_arg =
        2.0 * inputs.tasks as f64 * inputs.steps as f64 * iterations as f64 / inputs.delta;
    let batch_real = 128.0 * factor * factor * math::ln(log_arg) / (eps_tilde * eps_tilde);
    Plan {
        eps_tilde,
        eta,
        iterations,
        batch_real,
        batch: math::ceil(batch_real) as u64,
    }
}

fn base_eps(inputs: &PlanInputs) -> f64 {
    inputs.epsilon.min(0.5).min(inputs.p0_min) / inputs.steps as f64
}

/// Evaluates the closed-form plan.
pub fn plan_hyperparameters(inputs: &PlanInputs) -> Result<Plan, Error> {
    validate(inputs)?;
    Ok(plan_for_eps(inputs, base_eps(inputs)))
}

/// Smallest relaxation `eps~' = scale * eps~` (with `eta`, `T`, `B` all
/// recomputed from the same formulas) such that `T * B <= budget_rollouts`.
/// Returns the unscaled plan if it already fits. Fails if even
/// `eps~' = 1/2` would exceed the budget.
pub fn scale_plan_to_budget(
    inputs: &PlanInputs,
    budget_rollouts: u64,
) -> Result<ScaledPlan, Error> {
    validate(inputs)?;
    let eps0 = base_eps(inputs);
    let budget = budget_rollouts as f64;
    let fits = |eps: f64| plan_for_eps(inputs, eps).total_rollouts() <= budget;
    if fits(eps0) {
        return Ok(ScaledPlan {
            plan: plan_for_eps(inputs, eps0),
            scale: 1.0,
        });
    }
    let max_scale = 0.5 / eps0;
    if max_scale <= 1.0 || !fits(0.5) {
        return Err(invalid(
            "budget",
            format!("no eps~ relaxation fits {budget_rollouts} rollouts"),
        ));
    }
    // T*B is monotone decreasing in eps~ on (0, 1/2]; bisect the scale.
    let (mut lo, mut hi) = (1.0f64, max_scale);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fits(mid * eps0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ScaledPlan {
        plan: plan_for_eps(inputs, hi * eps0),
        scale: hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_inputs() -> PlanInputs {
        PlanInputs {
            epsilon: 0.1,
            delta: 0.1,
            alpha: 1.0,
            p0_min: 0.5,
            steps: 2,
            tasks: 2,
            gamma: 10.0,
        }
    }

    #[test]
    fn reference_plan_regression() {
        // Frozen from a direct evaluation of the closed forms:
        //   eps~ = min(0.1, 0.5, 0.5)/2 = 0.05
        //   eta  = 0.05/800 = 6.25e-5
        //   T    = ceil(192 * ln 20 / 0.0025) = 230073
        //   B    = 512 * ln(2*2*2*230073/0.1) / 0.0025 = 3425930.9698...
        let plan = plan_hyperparameters(&reference_inputs()).unwrap();
        assert_eq!(plan.eps_tilde, 0.05);
        assert_eq!(plan.eta, 6.25e-5);
        assert_eq!(plan.iterations, 230_073);
        assert!(
            (plan.batch_real - 3_425_930.969810042).abs() < 1e-6,
            "B {}",
            plan.batch_real
        );
        assert_eq!(plan.batch, 3_425_931);
    }

    #[test]
    fn infinite_alpha_drops_the_margin_factor() {
        let mut inputs = reference_inputs();
        let finite = plan_hyperparameters(&inputs).unwrap();
        inputs.alpha = f64::INFINITY;
        let plan = plan_hyperparameters(&inputs).unwrap();
        // (1 + 1/alpha) -> 1: T = ceil(96 ln(20)/0.0025).
        let expected = math::ceil(96.0 * (20.0f64).ln() / 0.0025) as u64;
        assert_eq!(plan.iterations, expected);
        assert!(plan.iterations < finite.iterations);
    }

    #[test]
    fn halving_eps_tilde_more_than_quadruples_iterations() {
        let mut inputs = reference_inputs();
        let t1 = plan_hyperparameters(&inputs).unwrap().iterations;
        // Doubling S halves eps~ with everything else fixed.
        inputs.steps = 4;
        let t2 = plan_hyperparameters(&inputs).unwrap().iterations;
        assert!(t2 > 4 * t1, "T went {t1} -> {t2}");
    }

    #[test]
    fn doubling_alpha_strictly_reduces_iterations() {
        let mut inputs = reference_inputs();
        let t1 = plan_hyperparameters(&inputs).unwrap().iterations;
        inputs.alpha = 2.0;
        let t2 = plan_hyperparameters(&inputs).unwrap().iterations;
        assert!(t2 < t1);
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        let mut bad = reference_inputs();
        bad.epsilon = 0.5;
        assert!(plan_hyperparameters(&bad).is_err());
        let mut bad = reference_inputs();
        bad.delta = 0.0;
        assert!(plan_hyperparameters(&bad).is_err());
        let mut bad = reference_inputs();
        bad.alpha = 0.0;
        assert!(plan_hyperparameters(&bad).is_err());
        let mut bad = reference_inputs();
        bad.p0_min = 1.0;
        assert!(plan_hyperparameters(&bad).is_err());
    }

    #[test]
    fn budget_scaling_preserves_couplings() {
        let inputs = PlanInputs {
            epsilon: 0.2,
            delta: 0.2,
            alpha: 1.0,
            p0_min: 0.5,
            steps: 2,
            tasks: 2,
            gamma: 1.0,
        };
        let full = plan_hyperparameters(&inputs).unwrap();
        assert!(full.total_rollouts() > 1e8);
        let scaled = scale_plan_to_budget(&inputs, 100_000_000).unwrap();
        assert!(scaled.scale > 1.0);
        assert!(scaled.plan.total_rollouts() <= 1e8);
        // The couplings survive the relaxation.
        let p = &scaled.plan;
        assert!((p.eta - p.eps_tilde / 8.0).abs() < 1e-15);
        assert_eq!(p.eps_tilde, scaled.scale * full.eps_tilde);
        // Just below the found scale the budget must not fit.
        let slightly_smaller = plan_for_eps(&inputs, (scaled.scale * 0.98) * full.eps_tilde);
        assert!(slightly_smaller.total_rollouts() > 1e8);
    }

    #[test]
    fn budget_scaling_is_identity_when_it_fits() {
        let inputs = reference_inputs();
        let scaled = scale_plan_to_budget(&inputs, u64::MAX).unwrap();
        assert_eq!(scaled.scale, 1.0);
        assert_eq!(scaled.plan, plan_hyperparameters(&inputs).unwrap());
    }
}
