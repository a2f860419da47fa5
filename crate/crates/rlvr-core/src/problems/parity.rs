//! Parity scan: the no-inductive-structure hard case.
//!
//! Prompts are `d` uniform bits over `{-1, +1}` followed by a constant `+1`
//! bias bit. The string is scanned left to right: at step `s` the "multiply"
//! task emits the running value times bit `x_s`, the "copy" task just
//! repeats the running value, so after `d` steps the final token carries the
//! product over the selected bit positions. The verifier accepts iff that
//! product equals the hidden parity over `parity_set`.
//!
//! Both tasks emit the same raw value whenever `x_s = +1`, so tokens are
//! tagged with the emitting task index to keep tasks distinguishable.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{invalid, Error};
use crate::problems::{Acceptance, Prefix, Problem, PromptDist, Token};

/// Task index of the "copy last value" task.
pub const PARITY_COPY: usize = 0;
/// Task index of the "multiply by the scanned bit" task.
pub const PARITY_MULTIPLY: usize = 1;

/// Builds the parity problem over `d` bits with hidden set `parity_set`
/// (1-based positions in `1..=d`).
pub fn make_parity(d: usize, parity_set: &[usize]) -> Result<Problem, Error> {
    if !(1..=20).contains(&d) {
        return Err(invalid(
            "d",
            format!("bit count must lie in 1..=20, got {d}"),
        ));
    }
    let mut in_set = alloc::vec![false; d];
    for &i in parity_set {
        if i < 1 || i > d {
            return Err(invalid(
                "parity_set",
                format!("position {i} outside 1..={d}"),
            ));
        }
        in_set[i - 1] = true;
    }
    let tau: Vec<usize> = in_set
        .iter()
        .map(|&hit| if hit { PARITY_MULTIPLY } else { PARITY_COPY })
        .collect();

    let count = 1u64 << d;
    let prob = 1.0 / count as f64;
    let gen = Arc::new(move |i: u64| {
        let mut prompt: Vec<Token> = (0..d)
            .map(|k| Token::new(if (i >> k) & 1 == 1 { 1 } else { -1 }))
            .collect();
        prompt.push(Token::new(1)); // bias bit
        (prompt, prob)
    });

    // At step s the bit d positions behind the last token is exactly
    // prompt bit x_{s+1}; the last token is the running value.
    let copy = Arc::new(move |p: &Prefix| Token::tagged(p.last().value, PARITY_COPY as u16));
    let multiply = Arc::new(move |p: &Prefix| {
        Token::tagged(p.from_end(d).value * p.last().value, PARITY_MULTIPLY as u16)
    });

    let set_for_verifier = in_set.clone();
    let verifier = Arc::new(
        move |prompt: &[Token], tokens: &[Token], trace: &[Option<usize>]| -> f64 {
            if trace.iter().any(Option::is_none) {
                return 0.0;
            }
            let mut target = 1i64;
            for (k, &hit) in set_for_verifier.iter().enumerate() {
                if hit {
                    target *= prompt[k].value;
                }
            }
            if tokens.last().map(|t| t.value) == Some(target) {
                1.0
            } else {
                0.0
            }
        },
    );

    // Over uniform prompts a fixed trace is accepted with probability 1 when
    // it selects exactly the hidden set, and 1/2 otherwise (distinct
    // parities are uncorrelated on the cube).
    let set_for_trace = in_set;
    let per_trace = Arc::new(move |trace: &[Option<usize>]| -> f64 {
        let mut matches = true;
        for (s, sel) in trace.iter().enumerate() {
            match sel {
                None => return 0.0,
                Some(j) => {
                    if (*j == PARITY_MULTIPLY) != set_for_trace[s] {
                        matches = false;
                    }
                }
            }
        }
        if matches {
            1.0
        } else {
            0.5
        }
    });

    Problem::from_parts(
        String::from("parity"),
        d,
        2,
        tau,
        alloc::vec![copy, multiply],
        PromptDist::uniform(count, gen),
        verifier,
        Acceptance::PerTrace(per_trace),
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bit_full_parity_example() {
        // prompt (-1, -1, +1), both steps multiply: final value (+1)(-1)(-1) = +1.
        let p = make_parity(2, &[1, 2]).unwrap();
        let prompt = [Token::new(-1), Token::new(-1), Token::new(1)];
        let generated = p.correct_completion(&prompt);
        assert_eq!(generated[1].value, 1);
        let trace = [Some(PARITY_MULTIPLY), Some(PARITY_MULTIPLY)];
        assert_eq!(p.accept_probability(&prompt, &generated, &trace), 1.0);
    }

    /// Independent check of the per-trace acceptance shortcut by summing
    /// over all prompts.
    fn acceptance_by_enumeration(p: &Problem, trace: &[usize]) -> f64 {
        let count = p.prompt_count().unwrap();
        let mut total = 0.0;
        for i in 0..count {
            let (prompt, prob) = p.prompt(i);
            let mut generated: Vec<Token> = Vec::new();
            for &j in trace {
                let prefix = Prefix {
                    prompt: &prompt,
                    generated: &generated,
                };
                generated.push(p.task(j, &prefix));
            }
            let opt: Vec<Option<usize>> = trace.iter().map(|&j| Some(j)).collect();
            total += prob * p.accept_probability(&prompt, &generated, &opt);
        }
        total
    }

    #[test]
    fn wrong_traces_accept_half_the_time() {
        // d=3, P={2}: the correct trace always passes, any other trace
        // passes on exactly half the prompts.
        let p = make_parity(3, &[2]).unwrap();
        for bits in 0..8u32 {
            let trace: Vec<usize> = (0..3).map(|s| ((bits >> s) & 1) as usize).collect();
            let expected = if trace == [0, 1, 0] { 1.0 } else { 0.5 };
            assert_eq!(
                acceptance_by_enumeration(&p, &trace),
                expected,
                "trace {trace:?}"
            );
        }
    }

    #[test]
    fn selected_set_subset_accepts_half() {
        // d=3, P={1,3}, trace selecting only {1}: accepted iff x3 = +1.
        let p = make_parity(3, &[1, 3]).unwrap();
        let trace = [PARITY_MULTIPLY, PARITY_COPY, PARITY_COPY];
        assert_eq!(acceptance_by_enumeration(&p, &trace), 0.5);
    }

    #[test]
    fn per_trace_shortcut_matches_enumeration() {
        let p = make_parity(4, &[2, 3]).unwrap();
        let Acceptance::PerTrace(short) = p.acceptance().clone() else {
            panic!("parity should provide the per-trace shortcut");
        };
        for bits in 0..16u32 {
            let trace: Vec<usize> = (0..4).map(|s| ((bits >> s) & 1) as usize).collect();
            let opt: Vec<Option<usize>> = trace.iter().map(|&j| Some(j)).collect();
            let a = short(&opt);
            let b = acceptance_by_enumeration(&p, &trace);
            assert!((a - b).abs() < 1e-15, "trace {trace:?}: {a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_parity(0, &[]).is_err());
        assert!(make_parity(21, &[1]).is_err());
        assert!(make_parity(3, &[4]).is_err());
        assert!(make_parity(3, &[0]).is_err());
    }
}
