//! Autoregressive rollout sampling.

use alloc::vec::Vec;

use rand_core::RngCore;

use crate::policy::{PolicyParams, StepDistribution};
use crate::problems::{Prefix, Problem, Token};
use crate::rng::SimRng;

/// One sampled episode: prompt, generated tokens, which task produced each
/// token (`None` for a dead token), and the verifier's draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub prompt: Vec<Token>,
    pub tokens: Vec<Token>,
    pub selected: Vec<Option<usize>>,
    pub verified: bool,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.tokens.len()
    }
}

/// Samples one rollout: a prompt, `S` tokens, and the verifier outcome.
///
/// At each step the selected task emits its token; with the dead-token mass
/// the sentinel [`Token::DEAD`] is emitted and no task event occurs. The
/// verifier outcome is a Bernoulli draw on the acceptance probability, so
/// deterministic verifiers yield their 0/1 value surely.
pub fn sample_rollout<R: RngCore>(
    params: &PolicyParams,
    problem: &Problem,
    rng: &mut R,
) -> Rollout {
    let dists = params.distributions();
    sample_rollout_with_dists(params, &dists, problem, rng)
}

/// As [`sample_rollout`], with the per-step distributions precomputed by the
/// caller (they depend only on the policy, so batch loops hoist them).
pub fn sample_rollout_with_dists<R: RngCore>(
    params: &PolicyParams,
    dists: &[StepDistribution],
    problem: &Problem,
    rng: &mut R,
) -> Rollout {
    assert_eq!(
        problem.num_steps(),
        params.steps(),
        "problem and policy disagree on step count"
    );
    assert_eq!(
        problem.num_tasks(),
        params.tasks(),
        "problem and policy disagree on task count"
    );
    let prompt = problem.sample_prompt(rng);
    let mut tokens: Vec<Token> = Vec::with_capacity(params.steps());
    let mut selected: Vec<Option<usize>> = Vec::with_capacity(params.steps());
    for dist in dists {
        let choice = rng.choose(&dist.task_probs);
        let token = match choice {
            Some(j) => {
                let prefix = Prefix {
                    prompt: &prompt,
                    generated: &tokens,
                };
                problem.task(j, &prefix)
            }
            None => Token::DEAD,
        };
        tokens.push(token);
        selected.push(choice);
    }
    let accept = problem.accept_probability(&prompt, &tokens, &selected);
    let verified = rng.bernoulli(accept);
    Rollout {
        prompt,
        tokens,
        selected,
        verified,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::problems::make_two_token_trap;
    use crate::rng::{purpose, stream};

    fn trap_params(p0: f64) -> PolicyParams {
        let target = Mat::from_rows(&[alloc::vec![p0, 1.0 - p0], alloc::vec![p0, 1.0 - p0]]);
        PolicyParams::from_task_probs(&target, 1.0, alloc::vec![0; 2]).unwrap()
    }

    #[test]
    fn deterministic_policy_reproduces_target() {
        // Huge logit on the correct task: every rollout follows tau and is
        // verified (Assumption 1).
        let u = Mat::from_rows(&[alloc::vec![1e6, 0.0], alloc::vec![1e6, 0.0]]);
        let params = PolicyParams::new(u, 1.0, alloc::vec![0; 2]).unwrap();
        let problem = make_two_token_trap(false).unwrap();
        let mut rng = stream(3, purpose::ESTIMATE, 0, 0);
        for _ in 0..200 {
            let r = sample_rollout(&params, &problem, &mut rng);
            assert_eq!(r.selected, alloc::vec![Some(0), Some(0)]);
            assert_eq!(r.tokens, problem.correct_completion(&r.prompt));
            assert!(r.verified);
        }
    }

    #[test]
    fn success_rate_is_one_at_p_one_minus_epsilon() {
        let params = trap_params(1.0 - 1e-12);
        let problem = make_two_token_trap(false).unwrap();
        let mut rng = stream(4, purpose::ESTIMATE, 0, 0);
        let hits = (0..10_000)
            .filter(|_| sample_rollout(&params, &problem, &mut rng).verified)
            .count();
        assert_eq!(hits, 10_000);
    }

    #[test]
    fn success_rate_matches_enumeration_at_half() {
        // Exact value from the 8-outcome enumeration: 0.375.
        let params = trap_params(0.5);
        let problem = make_two_token_trap(false).unwrap();
        let mut rng = stream(5, purpose::ESTIMATE, 0, 0);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_rollout(&params, &problem, &mut rng).verified)
            .count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.375).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn identical_seed_gives_identical_rollout() {
        let params = trap_params(0.37);
        let problem = make_two_token_trap(false).unwrap();
        let mut a = stream(9, purpose::BATCH_SLOT, 11, 7);
        let mut b = stream(9, purpose::BATCH_SLOT, 11, 7);
        for _ in 0..50 {
            assert_eq!(
                sample_rollout(&params, &problem, &mut a),
                sample_rollout(&params, &problem, &mut b)
            );
        }
    }
}
