//! Long addition demo: column-by-column addition with a carry-dropping
//! corruption task.
//!
//! The prompt encodes two numbers in `[0, 10^d)` as little-endian digit
//! tokens (`a`'s digits first, then `b`'s). There are `d + 1` column steps.
//! Task 0 emits the correct column result `a_s + b_s + carry_in`, task 1
//! computes the same column with the incoming carry dropped. A column token
//! with value `t` encodes digit `t % 10` and outgoing carry `t / 10`; tokens
//! are tagged by task since both tasks agree whenever no carry is pending.
//! The verifier accepts iff the emitted digits spell out `a + b`.
//!
//! This is a demo environment only; it is not part of the theory checks.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error};
use crate::problems::{Acceptance, Prefix, Problem, PromptDist, Token};
use crate::rng::SimRng;

/// Task index of the correct column adder.
pub const ADDITION_CORRECT: usize = 0;
/// Task index of the carry-dropping adder.
pub const ADDITION_DROP_CARRY: usize = 1;

fn digits_to_tokens(mut n: u64, d: usize, out: &mut Vec<Token>) {
    for _ in 0..d {
        out.push(Token::new((n % 10) as i64));
        n /= 10;
    }
}

fn column_inputs(prefix: &Prefix, d: usize) -> (i64, i64, i64) {
    let s = prefix.step();
    let (a, b) = if s < d {
        (prefix.prompt[s].value, prefix.prompt[d + s].value)
    } else {
        (0, 0)
    };
    let carry = if s == 0 {
        0
    } else {
        prefix.generated[s - 1].value / 10
    };
    (a, b, carry)
}

/// Builds the long-addition problem over two `num_digits`-digit numbers.
/// Enumerable for `num_digits <= 2`, sample-only above.
pub fn make_addition(num_digits: usize) -> Result<Problem, Error> {
    if !(1..=6).contains(&num_digits) {
        return Err(invalid(
            "num_digits",
            format!("must lie in 1..=6, got {num_digits}"),
        ));
    }
    let d = num_digits;
    let limit = 10u64.pow(d as u32);
    let steps = d + 1;
    let tau = vec![ADDITION_CORRECT; steps];

    let correct = Arc::new(move |p: &Prefix| {
        let (a, b, carry) = column_inputs(p, d);
        Token::tagged(a + b + carry, ADDITION_CORRECT as u16)
    });
    let drop_carry = Arc::new(move |p: &Prefix| {
        let (a, b, _) = column_inputs(p, d);
        Token::tagged(a + b, ADDITION_DROP_CARRY as u16)
    });

    let prompt_dist = if d <= 2 {
        let count = limit * limit;
        let prob = 1.0 / count as f64;
        let gen = Arc::new(move |i: u64| {
            let (a, b) = (i / limit, i % limit);
            let mut prompt = Vec::with_capacity(2 * d);
            digits_to_tokens(a, d, &mut prompt);
            digits_to_tokens(b, d, &mut prompt);
            (prompt, prob)
        });
        PromptDist::uniform(count, gen)
    } else {
        PromptDist::SampleOnly {
            sample: Arc::new(move |rng| {
                let (a, b) = (rng.below(limit), rng.below(limit));
                let mut prompt = Vec::with_capacity(2 * d);
                digits_to_tokens(a, d, &mut prompt);
                digits_to_tokens(b, d, &mut prompt);
                prompt
            }),
        }
    };

    let verifier = Arc::new(
        move |prompt: &[Token], tokens: &[Token], trace: &[Option<usize>]| -> f64 {
            if trace.iter().any(Option::is_none) {
                return 0.0;
            }
            let decode = |ts: &[Token]| -> u64 {
                ts.iter()
                    .rev()
                    .fold(0u64, |acc, t| acc * 10 + (t.value as u64 % 10))
            };
            let a = decode(&prompt[..d]);
            let b = decode(&prompt[d..]);
            let emitted = tokens
                .iter()
                .rev()
                .fold(0u64, |acc, t| acc * 10 + (t.value.rem_euclid(10) as u64));
            if emitted == a + b {
                1.0
            } else {
                0.0
            }
        },
    );

    Problem::from_parts(
        String::from("addition"),
        steps,
        2,
        tau,
        vec![correct, drop_carry],
        prompt_dist,
        verifier,
        Acceptance::Generic,
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_trace(p: &Problem, prompt: &[Token], trace: &[usize]) -> (Vec<Token>, f64) {
        let mut generated = Vec::new();
        for &j in trace {
            let prefix = Prefix {
                prompt,
                generated: &generated,
            };
            generated.push(p.task(j, &prefix));
        }
        let opt: Vec<Option<usize>> = trace.iter().map(|&j| Some(j)).collect();
        let acc = p.accept_probability(prompt, &generated, &opt);
        (generated, acc)
    }

    fn prompt_for(p: &Problem, a: u64, b: u64, d: usize) -> Vec<Token> {
        let limit = 10u64.pow(d as u32);
        p.prompt(a * limit + b).0
    }

    #[test]
    fn seven_plus_five_carries() {
        let p = make_addition(1).unwrap();
        let prompt = prompt_for(&p, 7, 5, 1);
        let (tokens, acc) = run_trace(&p, &prompt, &[0, 0]);
        // Column digits little-endian: (2, 1) spells 12.
        assert_eq!(tokens[0].value % 10, 2);
        assert_eq!(tokens[1].value % 10, 1);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn carry_free_instance_accepts_any_trace() {
        let p = make_addition(1).unwrap();
        let prompt = prompt_for(&p, 2, 3, 1);
        for t0 in 0..2 {
            for t1 in 0..2 {
                let (_, acc) = run_trace(&p, &prompt, &[t0, t1]);
                assert_eq!(acc, 1.0, "trace ({t0},{t1})");
            }
        }
    }

    #[test]
    fn dropped_carry_gets_rejected() {
        let p = make_addition(2).unwrap();
        let prompt = prompt_for(&p, 19, 3, 2);
        let (tokens, acc) = run_trace(&p, &prompt, &[1, 1, 1]);
        // 9+3 = 12 keeps digit 2, but the pending carry is dropped at the
        // next column: output spells 012 = 12 instead of 22.
        let emitted: Vec<i64> = tokens.iter().map(|t| t.value % 10).collect();
        assert_eq!(emitted, vec![2, 1, 0]);
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn large_instances_are_sample_only() {
        let p = make_addition(3).unwrap();
        assert!(!p.is_enumerable());
        let mut rng = crate::rng::stream(1, 0, 0, 0);
        let prompt = p.sample_prompt(&mut rng);
        assert_eq!(prompt.len(), 6);
    }

    #[test]
    fn rejects_out_of_range_digits() {
        assert!(make_addition(0).is_err());
        assert!(make_addition(7).is_err());
    }
}
