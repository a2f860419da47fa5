//! Two-token trap: the base-model-quality negative example.
//!
//! Vocabulary `{1, 2}`, two steps, two constant tasks (task 0 emits `1`,
//! task 1 emits `2`), prompt `1` or `2` with probability 1/2 each. The
//! verifier accepts exactly the sequences `(1,1,1)`, `(2,1,1)`, `(1,2,2)`:
//! always answering `1` is perfect, but answering `2` twice is rewarded half
//! the time, and training bifurcates on the initial correct-task
//! probability.
//!
//! The `strict` variant drops `(1,2,2)` from the accepted set, which drives
//! the task-2 advantage ratio to exactly zero.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;

use crate::error::Error;
use crate::problems::{Acceptance, Prefix, Problem, PromptDist, Token};

/// Task index of the correct constant task (emits value 1).
pub const TRAP_CORRECT: usize = 0;
/// Task index of the trap constant task (emits value 2).
pub const TRAP_WRONG: usize = 1;

/// Builds the two-token trap. With `strict = true` the `(1, 2, 2)` escape
/// hatch is removed from the accepted set.
pub fn make_two_token_trap(strict: bool) -> Result<Problem, Error> {
    let tau = vec![TRAP_CORRECT; 2];
    let emit_one = Arc::new(|_: &Prefix| Token::new(1));
    let emit_two = Arc::new(|_: &Prefix| Token::new(2));

    let gen = Arc::new(|i: u64| (vec![Token::new(1 + i as i64)], 0.5));

    let verifier = Arc::new(
        move |prompt: &[Token], tokens: &[Token], _trace: &[Option<usize>]| -> f64 {
            let seq = (prompt[0].value, tokens[0].value, tokens[1].value);
            let accepted = match seq {
                (1, 1, 1) | (2, 1, 1) => true,
                (1, 2, 2) => !strict,
                _ => false,
            };
            if accepted {
                1.0
            } else {
                0.0
            }
        },
    );

    // Prompt-marginalised acceptance: trace (1,1) passes for both prompts,
    // trace (2,2) only for prompt 1.
    let per_trace = Arc::new(move |trace: &[Option<usize>]| -> f64 {
        match (trace[0], trace[1]) {
            (Some(TRAP_CORRECT), Some(TRAP_CORRECT)) => 1.0,
            (Some(TRAP_WRONG), Some(TRAP_WRONG)) if !strict => 0.5,
            _ => 0.0,
        }
    });

    Problem::from_parts(
        String::from(if strict { "trap_strict" } else { "trap" }),
        2,
        2,
        tau,
        vec![emit_one, emit_two],
        PromptDist::uniform(2, gen),
        verifier,
        Acceptance::PerTrace(per_trace),
        true,
    )
}
