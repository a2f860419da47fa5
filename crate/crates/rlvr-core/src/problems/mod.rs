//! Problem environments: tasks, correct composition, prompts, verifier.
//!
//! A [`Problem`] bundles `J` deterministic tasks (each mapping a prefix to a
//! single next token), the correct task sequence `tau`, a prompt
//! distribution, and a verifier that scores a completed sequence with an
//! acceptance probability in `[0, 1]`. Two structural assumptions hold for
//! every built-in problem and are checked on construction:
//!
//! 1. following `tau` from any prompt is accepted with probability 1;
//! 2. distinct tasks never emit the same token on the same prefix
//!    (incoherence) — where raw task outputs could collide, tokens carry the
//!    emitting task's index as a tag, which restores distinctness.

mod addition;
mod parity;
mod recovery;
mod trap;

pub use addition::make_addition;
pub use parity::make_parity;
pub use recovery::make_recovery;
pub use trap::make_two_token_trap;

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{invalid, Error};
use crate::mat::Mat;
use crate::math;
use crate::rng::SimRng;

/// One vocabulary symbol. `task_tag` realises the `V x [J]` vocabulary
/// expansion: when set, tokens emitted by different tasks are distinct even
/// if their raw values coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token {
    pub value: i64,
    pub task_tag: Option<u16>,
}

impl Token {
    /// Sentinel emitted when the sampler hits the dead-token mass.
    pub const DEAD: Token = Token {
        value: i64::MIN,
        task_tag: None,
    };

    pub const fn new(value: i64) -> Self {
        Token {
            value,
            task_tag: None,
        }
    }

    pub const fn tagged(value: i64, tag: u16) -> Self {
        Token {
            value,
            task_tag: Some(tag),
        }
    }

    pub fn is_dead(&self) -> bool {
        *self == Token::DEAD
    }
}

/// Borrowed view of a partially generated sequence.
#[derive(Debug, Clone, Copy)]
pub struct Prefix<'a> {
    pub prompt: &'a [Token],
    pub generated: &'a [Token],
}

impl<'a> Prefix<'a> {
    /// Step index: the number of CoT tokens generated so far.
    pub fn step(&self) -> usize {
        self.generated.len()
    }

    pub fn len(&self) -> usize {
        self.prompt.len() + self.generated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element `k` positions back from the end (`k = 0` is the last token).
    pub fn from_end(&self, k: usize) -> Token {
        assert!(
            k < self.len(),
            "from_end({k}) on prefix of length {}",
            self.len()
        );
        if k < self.generated.len() {
            self.generated[self.generated.len() - 1 - k]
        } else {
            let k = k - self.generated.len();
            self.prompt[self.prompt.len() - 1 - k]
        }
    }

    pub fn last(&self) -> Token {
        self.from_end(0)
    }
}

pub(crate) type TaskFn = dyn Fn(&Prefix) -> Token + Send + Sync;
pub(crate) type VerifierFn = dyn Fn(&[Token], &[Token], &[Option<usize>]) -> f64 + Send + Sync;
pub(crate) type TraceAcceptFn = dyn Fn(&[Option<usize>]) -> f64 + Send + Sync;
pub(crate) type PromptGenFn = dyn Fn(u64) -> (Vec<Token>, f64) + Send + Sync;
pub(crate) type PromptSampleFn = dyn Fn(&mut dyn RngCore) -> Vec<Token> + Send + Sync;
pub(crate) type PromptIndexFn = dyn Fn(&mut dyn RngCore) -> u64 + Send + Sync;

/// Distribution over prompts.
#[derive(Clone)]
pub enum PromptDist {
    /// Finitely enumerable: `gen(i)` returns the `i`-th prompt and its
    /// probability; `sample_index` draws `i` with those probabilities.
    Enumerable {
        count: u64,
        gen: Arc<PromptGenFn>,
        sample_index: Arc<PromptIndexFn>,
    },
    /// Sampling only (used when enumeration would be too large).
    SampleOnly { sample: Arc<PromptSampleFn> },
}

impl PromptDist {
    /// Uniform distribution over `count` generated prompts.
    pub fn uniform(count: u64, gen: Arc<PromptGenFn>) -> Self {
        PromptDist::Enumerable {
            count,
            gen,
            sample_index: Arc::new(move |rng: &mut dyn RngCore| rng.below(count)),
        }
    }

    /// A single fixed prompt.
    pub fn singleton(prompt: Vec<Token>) -> Self {
        PromptDist::Enumerable {
            count: 1,
            gen: Arc::new(move |_| (prompt.clone(), 1.0)),
            sample_index: Arc::new(|_| 0),
        }
    }
}

/// How the verifier's acceptance probability relates to the task trace,
/// marginalised over prompts. Richer structure unlocks cheaper exact
/// enumeration; `Generic` always works.
#[derive(Clone)]
pub enum Acceptance {
    /// No structure: enumerate (prompt, trace) pairs.
    Generic,
    /// Acceptance depends on the trace only (after marginalising prompts).
    PerTrace(Arc<TraceAcceptFn>),
    /// Acceptance factorises per step: `prod_s factors[s][trace_s]`, with
    /// `dead[s]` applying when the step emitted a dead token.
    PerStepFactor { factors: Mat, dead: Vec<f64> },
}

/// A complete environment. Immutable once constructed; all closures are
/// pure, so a `Problem` can be shared freely across threads.
#[derive(Clone)]
pub struct Problem {
    name: String,
    num_steps: usize,
    num_tasks: usize,
    tau: Vec<usize>,
    tasks: Vec<Arc<TaskFn>>,
    prompt_dist: PromptDist,
    verifier: Arc<VerifierFn>,
    acceptance: Acceptance,
    incoherence_guaranteed: bool,
}

/// Enumeration ceiling for the construction-time assumption checks.
const CHECK_NODE_BUDGET: u128 = 1 << 22;

impl Problem {
    /// Assembles and validates a problem. Checks prompt-probability
    /// normalisation, Assumption 1 (the correct composition is always
    /// accepted), and incoherence (Assumption 2) — exhaustively when the
    /// prompt/trace space fits the budget, otherwise on sampled probes.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        name: String,
        num_steps: usize,
        num_tasks: usize,
        tau: Vec<usize>,
        tasks: Vec<Arc<TaskFn>>,
        prompt_dist: PromptDist,
        verifier: Arc<VerifierFn>,
        acceptance: Acceptance,
        incoherence_guaranteed: bool,
    ) -> Result<Self, Error> {
        if num_steps == 0 {
            return Err(invalid("problem", "num_steps must be at least 1"));
        }
        if num_tasks == 0 {
            return Err(invalid("problem", "num_tasks must be at least 1"));
        }
        if tau.len() != num_steps || tau.iter().any(|&j| j >= num_tasks) {
            return Err(invalid("tau", "need one valid task index per step"));
        }
        if tasks.len() != num_tasks {
            return Err(invalid("tasks", "need exactly num_tasks task functions"));
        }
        let problem = Problem {
            name,
            num_steps,
            num_tasks,
            tau,
            tasks,
            prompt_dist,
            verifier,
            acceptance,
            incoherence_guaranteed,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    /// Correct task index per step.
    pub fn tau(&self) -> &[usize] {
        &self.tau
    }

    /// Evaluates task `j` on a prefix.
    pub fn task(&self, j: usize, prefix: &Prefix) -> Token {
        (self.tasks[j])(prefix)
    }

    /// Acceptance probability of a completed sequence.
    pub fn accept_probability(
        &self,
        prompt: &[Token],
        tokens: &[Token],
        trace: &[Option<usize>],
    ) -> f64 {
        (self.verifier)(prompt, tokens, trace)
    }

    pub fn prompt_dist(&self) -> &PromptDist {
        &self.prompt_dist
    }

    pub fn acceptance(&self) -> &Acceptance {
        &self.acceptance
    }

    pub fn is_enumerable(&self) -> bool {
        matches!(self.prompt_dist, PromptDist::Enumerable { .. })
    }

    /// Number of enumerable prompts, if any.
    pub fn prompt_count(&self) -> Option<u64> {
        match &self.prompt_dist {
            PromptDist::Enumerable { count, .. } => Some(*count),
            PromptDist::SampleOnly { .. } => None,
        }
    }

    /// The `i`-th prompt and its probability (enumerable problems).
    pub fn prompt(&self, i: u64) -> (Vec<Token>, f64) {
        match &self.prompt_dist {
            PromptDist::Enumerable { gen, .. } => gen(i),
            PromptDist::SampleOnly { .. } => {
                panic!("prompt({i}) on a sample-only distribution")
            }
        }
    }

    pub fn sample_prompt(&self, rng: &mut dyn RngCore) -> Vec<Token> {
        match &self.prompt_dist {
            PromptDist::Enumerable {
                gen, sample_index, ..
            } => gen(sample_index(rng)).0,
            PromptDist::SampleOnly { sample } => sample(rng),
        }
    }

    /// Runs the correct composition `tau` on a prompt.
    pub fn correct_completion(&self, prompt: &[Token]) -> Vec<Token> {
        let mut generated = Vec::with_capacity(self.num_steps);
        for s in 0..self.num_steps {
            let prefix = Prefix {
                prompt,
                generated: &generated,
            };
            generated.push(self.task(self.tau[s], &prefix));
        }
        generated
    }

    fn validate(&self) -> Result<(), Error> {
        match &self.prompt_dist {
            PromptDist::Enumerable { count, gen, .. } => {
                let mut total = 0.0;
                for i in 0..*count {
                    let (prompt, prob) = gen(i);
                    total += prob;
                    self.check_assumption_one(&prompt)?;
                }
                if math::abs(total - 1.0) > 1e-12 {
                    return Err(invalid(
                        "prompt distribution",
                        format!("probabilities sum to {total}, expected 1"),
                    ));
                }
                let nodes = (*count as u128)
                    .saturating_mul((self.num_tasks as u128).saturating_pow(self.num_steps as u32));
                if nodes <= CHECK_NODE_BUDGET {
                    for i in 0..*count {
                        let (prompt, _) = gen(i);
                        self.check_incoherence(&prompt)?;
                    }
                } else if !self.incoherence_guaranteed {
                    return Err(invalid(
                        "problem",
                        "task space too large for exhaustive incoherence check and \
                         incoherence is not structurally guaranteed",
                    ));
                }
            }
            PromptDist::SampleOnly { sample } => {
                // Sampled probes; exhaustiveness is impossible here.
                let mut rng = crate::rng::stream(0x52_4c_56_52, 0, 0, 0);
                for _ in 0..64 {
                    let prompt = sample(&mut rng);
                    self.check_assumption_one(&prompt)?;
                    self.check_incoherence(&prompt)?;
                }
            }
        }
        Ok(())
    }

    fn check_assumption_one(&self, prompt: &[Token]) -> Result<(), Error> {
        let generated = self.correct_completion(prompt);
        let trace: Vec<Option<usize>> = self.tau.iter().map(|&j| Some(j)).collect();
        let p = self.accept_probability(prompt, &generated, &trace);
        if p != 1.0 {
            return Err(invalid(
                "problem",
                format!("correct composition accepted with probability {p} != 1"),
            ));
        }
        Ok(())
    }

    /// Walks every task trace from `prompt`, checking pairwise-distinct task
    /// outputs at each reachable prefix.
    fn check_incoherence(&self, prompt: &[Token]) -> Result<(), Error> {
        let mut generated: Vec<Token> = Vec::with_capacity(self.num_steps);
        self.check_incoherence_rec(prompt, &mut generated)
    }

    fn check_incoherence_rec(
        &self,
        prompt: &[Token],
        generated: &mut Vec<Token>,
    ) -> Result<(), Error> {
        if generated.len() == self.num_steps {
            return Ok(());
        }
        let outputs: Vec<Token> = {
            let prefix = Prefix { prompt, generated };
            (0..self.num_tasks).map(|j| self.task(j, &prefix)).collect()
        };
        for a in 0..self.num_tasks {
            for b in (a + 1)..self.num_tasks {
                if outputs[a] == outputs[b] {
                    return Err(invalid(
                        "problem",
                        format!(
                            "tasks {a} and {b} both emit {:?} at step {}",
                            outputs[a],
                            generated.len()
                        ),
                    ));
                }
            }
        }
        for token in outputs {
            generated.push(token);
            self.check_incoherence_rec(prompt, generated)?;
            generated.pop();
        }
        Ok(())
    }
}

impl core::fmt::Debug for Problem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("num_steps", &self.num_steps)
            .field("num_tasks", &self.num_tasks)
            .field("tau", &self.tau)
            .finish()
    }
}
