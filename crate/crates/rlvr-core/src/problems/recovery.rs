//! Recovery problem: the inductive-structure easy case.
//!
//! Each step has one correct task (index 0) and one incorrect task (index
//! 1), emitting distinct constant symbols. The verifier is stochastic: a
//! completed sequence is accepted with probability `prod` of `lambda_s` over
//! the steps that picked the wrong task — each wrong step independently
//! survives with its recovery probability `lambda_s ∈ (0, 1)`. An all-correct
//! sequence is accepted with probability 1 (empty product).

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error};
use crate::mat::Mat;
use crate::problems::{Acceptance, Prefix, Problem, PromptDist, Token};

/// Task index of the correct task at every step.
pub const RECOVERY_CORRECT: usize = 0;
/// Task index of the incorrect task at every step.
pub const RECOVERY_WRONG: usize = 1;

/// Builds the recovery problem with per-step recovery probabilities
/// `lambdas` (length `S`, each strictly inside `(0, 1)`).
pub fn make_recovery(lambdas: &[f64]) -> Result<Problem, Error> {
    if lambdas.is_empty() {
        return Err(invalid("lambdas", "need at least one step"));
    }
    for (s, &l) in lambdas.iter().enumerate() {
        if !(l > 0.0 && l < 1.0) {
            return Err(invalid(
                "lambdas",
                format!("lambda at step {s} must lie in (0, 1), got {l}"),
            ));
        }
    }
    let steps = lambdas.len();
    let tau = vec![RECOVERY_CORRECT; steps];

    let correct = Arc::new(|_: &Prefix| Token::new(RECOVERY_CORRECT as i64));
    let wrong = Arc::new(|_: &Prefix| Token::new(RECOVERY_WRONG as i64));

    let lambdas_v = lambdas.to_vec();
    let verifier = Arc::new(
        move |_prompt: &[Token], _tokens: &[Token], trace: &[Option<usize>]| -> f64 {
            let mut p = 1.0;
            for (s, sel) in trace.iter().enumerate() {
                if *sel != Some(RECOVERY_CORRECT) {
                    p *= lambdas_v[s];
                }
            }
            p
        },
    );

    // Acceptance factorises exactly per step, which lets the oracle skip
    // trace enumeration entirely.
    let mut factors = Mat::zeros(steps, 2);
    for s in 0..steps {
        factors[(s, RECOVERY_CORRECT)] = 1.0;
        factors[(s, RECOVERY_WRONG)] = lambdas[s];
    }
    let acceptance = Acceptance::PerStepFactor {
        factors,
        dead: lambdas.to_vec(),
    };

    Problem::from_parts(
        String::from("recovery"),
        steps,
        2,
        tau,
        vec![correct, wrong],
        PromptDist::singleton(Vec::new()),
        verifier,
        acceptance,
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct_trace_always_accepted() {
        let p = make_recovery(&[0.5, 0.5]).unwrap();
        let trace = [Some(RECOVERY_CORRECT), Some(RECOVERY_CORRECT)];
        assert_eq!(p.accept_probability(&[], &[], &trace), 1.0);
    }

    #[test]
    fn wrong_steps_multiply_lambdas() {
        let p = make_recovery(&[0.5, 0.5]).unwrap();
        let both_wrong = [Some(RECOVERY_WRONG), Some(RECOVERY_WRONG)];
        assert_eq!(p.accept_probability(&[], &[], &both_wrong), 0.25);
        let one_wrong = [Some(RECOVERY_CORRECT), Some(RECOVERY_WRONG)];
        assert_eq!(p.accept_probability(&[], &[], &one_wrong), 0.5);
    }

    #[test]
    fn acceptance_depends_only_on_wrong_set() {
        let p = make_recovery(&[0.25, 0.5, 0.75]).unwrap();
        let a = [
            Some(RECOVERY_WRONG),
            Some(RECOVERY_CORRECT),
            Some(RECOVERY_WRONG),
        ];
        assert!((p.accept_probability(&[], &[], &a) - 0.25 * 0.75).abs() < 1e-15);
    }

    #[test]
    fn dead_token_counts_as_wrong() {
        let p = make_recovery(&[0.5, 0.5]).unwrap();
        let trace = [None, Some(RECOVERY_CORRECT)];
        assert_eq!(p.accept_probability(&[], &[], &trace), 0.5);
    }

    #[test]
    fn rejects_out_of_range_lambda() {
        assert!(make_recovery(&[]).is_err());
        assert!(make_recovery(&[0.0]).is_err());
        assert!(make_recovery(&[1.0]).is_err());
        assert!(make_recovery(&[0.5, 1.5]).is_err());
    }
}
