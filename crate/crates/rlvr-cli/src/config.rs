//! Experiment configuration: a single JSON document, strictly validated.
//!
//! Unknown keys are rejected everywhere, as are sections that do not belong
//! to the requested experiment kind, so typos fail fast instead of being
//! silently ignored. Resolution fills every default and produces a value
//! that is embedded verbatim in all output files; re-running a command with
//! the same resolved config reproduces the outputs byte for byte.

use std::fmt;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use rlvr_core::{
    make_addition, make_parity, make_recovery, make_two_token_trap, params_from_correct_prob, Mat,
    MetricsMode, PolicyParams, Problem, TrainConfig,
};

/// Marker error for anything that should exit with code 2.
#[derive(Debug)]
pub struct InvalidConfig(pub String);

impl fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for InvalidConfig {}

pub fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(anyhow!(InvalidConfig(msg.into())))
}

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Simulate,
    SweepLength,
    SweepP0,
    Verify,
    Plan,
    MeanField,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Kind::Simulate => "simulate",
            Kind::SweepLength => "sweep_length",
            Kind::SweepP0 => "sweep_p0",
            Kind::Verify => "verify",
            Kind::Plan => "plan",
            Kind::MeanField => "mean_field",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub schema_version: Option<u32>,
    pub kind: Kind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub train: Option<TrainSpec>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub p0_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub mean_field: Option<MeanFieldSpec>,
    #[serde(default)]
    pub plan: Option<PlanSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Trap {
        #[serde(default)]
        strict: bool,
    },
    Parity {
        #[serde(default)]
        d: Option<usize>,
        #[serde(default)]
        parity_set: Option<Vec<usize>>,
    },
    Recovery {
        #[serde(default)]
        lambdas: Option<Vec<f64>>,
        /// Uniform recovery probability; with `sweep-length` the grid
        /// supplies the step count.
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        steps: Option<usize>,
    },
    Addition {
        num_digits: usize,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Uniform,
    CorrectProb { p0: f64 },
    Logits { u: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub max_resample: Option<usize>,
    #[serde(default)]
    pub metrics: Option<MetricsSpec>,
    #[serde(default)]
    pub stop_at_success: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricsSpec {
    Exact,
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    /// Use the configured eta at every grid point.
    Fixed,
    /// Use `eta / length` at grid point `length`.
    InverseLength,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub grid: Vec<u64>,
    #[serde(default)]
    pub eta_rule: Option<EtaRule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFieldSpec {
    pub p0_grid: Vec<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Keep every n-th trajectory point in trajectory.jsonl (0 = summary only).
    #[serde(default)]
    pub trajectory_stride: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub p0_min: f64,
    pub steps: usize,
    pub tasks: usize,
    pub gamma: f64,
    #[serde(default)]
    pub rollout_budget: Option<u64>,
}

// ---------------------------------------------------------------------------
// Resolved configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedTrain {
    pub eta: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub max_resample: usize,
    pub metrics: MetricsSpec,
    pub stop_at_success: Option<f64>,
}

impl ResolvedTrain {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            eta: self.eta,
            batch_size: self.batch_size,
            iterations: self.iterations,
            max_resample: self.max_resample,
            seed,
            metrics: match self.metrics {
                MetricsSpec::Exact => MetricsMode::Exact,
                MetricsSpec::MonteCarlo { samples } => MetricsMode::MonteCarlo { samples },
            },
            stop_at_success: self.stop_at_success,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulatePayload {
    pub problem: ProblemSpec,
    pub init: InitSpec,
    pub gamma: f64,
    pub train: ResolvedTrain,
    pub replicates: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepProblem {
    Recovery,
    Parity,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepLengthPayload {
    pub problem: SweepProblem,
    /// Recovery probability (recovery sweeps only).
    pub lambda: Option<f64>,
    pub grid: Vec<u64>,
    pub eta_rule: EtaRule,
    pub gamma: f64,
    pub train: ResolvedTrain,
    pub replicates: usize,
    pub seeds: Vec<u64>,
    pub target_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepP0Payload {
    pub p0_grid: Vec<f64>,
    pub gamma: f64,
    pub train: ResolvedTrain,
    pub replicates: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanFieldPayload {
    pub p0_grid: Vec<f64>,
    pub eta: f64,
    pub max_iterations: u64,
    pub tolerance: f64,
    pub trajectory_stride: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanPayload {
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub p0_min: f64,
    pub steps: usize,
    pub tasks: usize,
    pub gamma: f64,
    pub rollout_budget: Option<u64>,
}

#[derive(Debug, Clone)]
pub enum Payload {
    Simulate(SimulatePayload),
    SweepLength(SweepLengthPayload),
    SweepP0(SweepP0Payload),
    Verify,
    Plan(PlanPayload),
    MeanField(MeanFieldPayload),
}

/// Fully resolved experiment: every default filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub kind: Kind,
    pub seed: u64,
    pub payload: Payload,
}

impl Resolved {
    /// The resolved config as embedded in every output file. Excludes the
    /// output directory and thread count: those affect where and how fast
    /// results are produced, never what they contain.
    pub fn to_value(&self) -> Value {
        let mut v = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "seed": self.seed,
        });
        let obj = v.as_object_mut().unwrap();
        match &self.payload {
            Payload::Simulate(p) => {
                obj.insert("simulate".into(), serde_json::to_value(p).unwrap());
            }
            Payload::SweepLength(p) => {
                obj.insert("sweep_length".into(), serde_json::to_value(p).unwrap());
            }
            Payload::SweepP0(p) => {
                obj.insert("sweep_p0".into(), serde_json::to_value(p).unwrap());
            }
            Payload::Verify => {}
            Payload::Plan(p) => {
                obj.insert("plan".into(), serde_json::to_value(p).unwrap());
            }
            Payload::MeanField(p) => {
                obj.insert("mean_field".into(), serde_json::to_value(p).unwrap());
            }
        }
        v
    }
}

pub fn parse_file(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    match serde_json::from_str::<RawConfig>(&text) {
        Ok(cfg) => Ok(cfg),
        Err(e) => invalid(format!("{}: {e}", path.display())),
    }
}

/// Derived per-replicate seeds when the config does not list them.
fn replicate_seeds(master: u64, replicates: usize, explicit: Option<Vec<u64>>) -> Result<Vec<u64>> {
    match explicit {
        Some(seeds) => {
            if seeds.len() != replicates {
                return invalid(format!(
                    "seeds lists {} entries but replicates is {replicates}",
                    seeds.len()
                ));
            }
            Ok(seeds)
        }
        None => Ok((0..replicates)
            .map(|r| master.wrapping_add((r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
            .collect()),
    }
}

fn forbid<T>(section: &Option<T>, name: &str, kind: Kind) -> Result<()> {
    if section.is_some() {
        return invalid(format!("section `{name}` does not apply to kind `{kind}`"));
    }
    Ok(())
}

struct TrainDefaults {
    eta: f64,
    batch_size: usize,
    iterations: usize,
}

fn resolve_train(spec: Option<TrainSpec>, defaults: TrainDefaults) -> ResolvedTrain {
    let spec = spec.unwrap_or(TrainSpec {
        eta: None,
        batch_size: None,
        iterations: None,
        max_resample: None,
        metrics: None,
        stop_at_success: None,
    });
    let batch_size = spec.batch_size.unwrap_or(defaults.batch_size);
    ResolvedTrain {
        eta: spec.eta.unwrap_or(defaults.eta),
        batch_size,
        iterations: spec.iterations.unwrap_or(defaults.iterations),
        max_resample: spec
            .max_resample
            .unwrap_or_else(|| rlvr_core::training::default_max_resample(batch_size)),
        metrics: spec.metrics.unwrap_or(MetricsSpec::Exact),
        stop_at_success: spec.stop_at_success,
    }
}

/// Per-problem training defaults. The trap defaults reproduce the
/// bifurcation figure convention (gamma = 1, batch 256); the others use a
/// sharper softmax since only relative logits matter there.
fn problem_defaults(problem: &ProblemSpec) -> (f64, TrainDefaults) {
    match problem {
        ProblemSpec::Trap { .. } => (
            1.0,
            TrainDefaults {
                eta: 0.1,
                batch_size: 256,
                iterations: 2000,
            },
        ),
        ProblemSpec::Parity { .. } => (
            10.0,
            TrainDefaults {
                eta: 0.05,
                batch_size: 512,
                iterations: 1000,
            },
        ),
        ProblemSpec::Recovery { .. } => (
            1.0,
            TrainDefaults {
                eta: 0.1,
                batch_size: 256,
                iterations: 1000,
            },
        ),
        ProblemSpec::Addition { .. } => (
            10.0,
            TrainDefaults {
                eta: 0.05,
                batch_size: 512,
                iterations: 500,
            },
        ),
    }
}

pub fn resolve(raw: RawConfig, seed_override: Option<u64>) -> Result<Resolved> {
    if let Some(v) = raw.schema_version {
        if v != SCHEMA_VERSION {
            return invalid(format!(
                "unsupported schema_version {v} (expected {SCHEMA_VERSION})"
            ));
        }
    }
    let seed = seed_override.or(raw.seed).unwrap_or(DEFAULT_SEED);
    let kind = raw.kind;
    let payload = match kind {
        Kind::Simulate => {
            forbid(&raw.sweep, "sweep", kind)?;
            forbid(&raw.p0_grid, "p0_grid", kind)?;
            forbid(&raw.mean_field, "mean_field", kind)?;
            forbid(&raw.plan, "plan", kind)?;
            forbid(&raw.target_accuracy, "target_accuracy", kind)?;
            let problem = match raw.problem {
                Some(p) => p,
                None => return invalid("simulate requires a `problem` section"),
            };
            validate_concrete_problem(&problem)?;
            let (gamma_default, train_defaults) = problem_defaults(&problem);
            let replicates = raw.replicates.unwrap_or(1).max(1);
            Payload::Simulate(SimulatePayload {
                problem,
                init: raw.init.unwrap_or(InitSpec::Uniform),
                gamma: raw.gamma.unwrap_or(gamma_default),
                train: resolve_train(raw.train, train_defaults),
                replicates,
                seeds: replicate_seeds(seed, replicates, raw.seeds)?,
            })
        }
        Kind::SweepLength => {
            forbid(&raw.p0_grid, "p0_grid", kind)?;
            forbid(&raw.mean_field, "mean_field", kind)?;
            forbid(&raw.plan, "plan", kind)?;
            forbid(&raw.init, "init", kind)?;
            let sweep = match raw.sweep {
                Some(s) => s,
                None => return invalid("sweep_length requires a `sweep` section"),
            };
            if sweep.grid.is_empty() {
                return invalid("sweep grid must be nonempty");
            }
            let (problem, lambda) = match raw.problem {
                Some(ProblemSpec::Recovery {
                    lambda,
                    lambdas,
                    steps,
                }) => {
                    if lambdas.is_some() || steps.is_some() {
                        return invalid(
                            "sweep_length recovery takes a scalar `lambda`; the grid sets the length",
                        );
                    }
                    let l = lambda.unwrap_or(0.5);
                    if !(l > 0.0 && l < 1.0) {
                        return invalid(format!("lambda must lie in (0, 1), got {l}"));
                    }
                    (SweepProblem::Recovery, Some(l))
                }
                Some(ProblemSpec::Parity { d, parity_set }) => {
                    if d.is_some() || parity_set.is_some() {
                        return invalid(
                            "sweep_length parity takes no `d`/`parity_set`; the grid sets the \
                             bit count and the hidden set is all bits",
                        );
                    }
                    (SweepProblem::Parity, None)
                }
                Some(_) => return invalid("sweep_length supports recovery or parity problems"),
                None => return invalid("sweep_length requires a `problem` section"),
            };
            for &g in &sweep.grid {
                let max = if problem == SweepProblem::Parity {
                    20
                } else {
                    64
                };
                if g < 1 || g > max {
                    return invalid(format!("grid value {g} outside 1..={max}"));
                }
            }
            // Both sweeps scale eta like 1/length, mirroring the planner's
            // eps~/S coupling.
            let (gamma, train, eta_rule) = match problem {
                SweepProblem::Recovery => (
                    1.0,
                    resolve_train(
                        raw.train,
                        TrainDefaults {
                            eta: 0.4,
                            batch_size: 256,
                            iterations: 1_000_000,
                        },
                    ),
                    sweep.eta_rule.unwrap_or(EtaRule::InverseLength),
                ),
                SweepProblem::Parity => (
                    10.0,
                    resolve_train(
                        raw.train,
                        TrainDefaults {
                            eta: 0.012,
                            batch_size: 1024,
                            iterations: 1_000_000,
                        },
                    ),
                    sweep.eta_rule.unwrap_or(EtaRule::InverseLength),
                ),
            };
            let replicates = raw.replicates.unwrap_or(5).max(1);
            Payload::SweepLength(SweepLengthPayload {
                problem,
                lambda,
                grid: sweep.grid,
                eta_rule,
                gamma: raw.gamma.unwrap_or(gamma),
                train,
                replicates,
                seeds: replicate_seeds(seed, replicates, raw.seeds)?,
                target_accuracy: raw.target_accuracy.unwrap_or(0.9),
            })
        }
        Kind::SweepP0 => {
            forbid(&raw.sweep, "sweep", kind)?;
            forbid(&raw.mean_field, "mean_field", kind)?;
            forbid(&raw.plan, "plan", kind)?;
            forbid(&raw.init, "init", kind)?;
            forbid(&raw.target_accuracy, "target_accuracy", kind)?;
            if let Some(p) = &raw.problem {
                if !matches!(p, ProblemSpec::Trap { strict: false }) {
                    return invalid("sweep_p0 runs on the (non-strict) trap problem");
                }
            }
            let p0_grid = match raw.p0_grid {
                Some(g) if !g.is_empty() => g,
                _ => return invalid("sweep_p0 requires a nonempty `p0_grid`"),
            };
            for &p in &p0_grid {
                if !(p > 0.0 && p < 1.0) {
                    return invalid(format!("p0 {p} outside (0, 1)"));
                }
            }
            let replicates = raw.replicates.unwrap_or(1).max(1);
            Payload::SweepP0(SweepP0Payload {
                p0_grid,
                gamma: raw.gamma.unwrap_or(1.0),
                train: resolve_train(
                    raw.train,
                    TrainDefaults {
                        eta: 0.1,
                        batch_size: 256,
                        iterations: 2000,
                    },
                ),
                replicates,
                seeds: replicate_seeds(seed, replicates, raw.seeds)?,
            })
        }
        Kind::Verify => {
            forbid(&raw.problem, "problem", kind)?;
            forbid(&raw.train, "train", kind)?;
            forbid(&raw.sweep, "sweep", kind)?;
            forbid(&raw.p0_grid, "p0_grid", kind)?;
            forbid(&raw.mean_field, "mean_field", kind)?;
            forbid(&raw.plan, "plan", kind)?;
            forbid(&raw.init, "init", kind)?;
            Payload::Verify
        }
        Kind::Plan => {
            forbid(&raw.problem, "problem", kind)?;
            forbid(&raw.train, "train", kind)?;
            forbid(&raw.sweep, "sweep", kind)?;
            forbid(&raw.p0_grid, "p0_grid", kind)?;
            forbid(&raw.mean_field, "mean_field", kind)?;
            forbid(&raw.init, "init", kind)?;
            let p = match raw.plan {
                Some(p) => p,
                None => return invalid("plan requires a `plan` section"),
            };
            Payload::Plan(PlanPayload {
                epsilon: p.epsilon,
                delta: p.delta,
                alpha: p.alpha,
                p0_min: p.p0_min,
                steps: p.steps,
                tasks: p.tasks,
                gamma: p.gamma,
                rollout_budget: p.rollout_budget,
            })
        }
        Kind::MeanField => {
            forbid(&raw.problem, "problem", kind)?;
            forbid(&raw.train, "train", kind)?;
            forbid(&raw.sweep, "sweep", kind)?;
            forbid(&raw.p0_grid, "p0_grid", kind)?;
            forbid(&raw.plan, "plan", kind)?;
            forbid(&raw.init, "init", kind)?;
            let mf = match raw.mean_field {
                Some(m) => m,
                None => return invalid("mean_field requires a `mean_field` section"),
            };
            if mf.p0_grid.is_empty() {
                return invalid("mean_field requires a nonempty `p0_grid`");
            }
            Payload::MeanField(MeanFieldPayload {
                p0_grid: mf.p0_grid,
                eta: mf.eta.unwrap_or(0.1),
                max_iterations: mf.max_iterations.unwrap_or(100_000),
                tolerance: mf.tolerance.unwrap_or(5e-4),
                trajectory_stride: mf.trajectory_stride.unwrap_or(100),
            })
        }
    };
    Ok(Resolved {
        kind,
        seed,
        payload,
    })
}

fn validate_concrete_problem(spec: &ProblemSpec) -> Result<()> {
    match spec {
        ProblemSpec::Trap { .. } => Ok(()),
        ProblemSpec::Parity { d, parity_set } => {
            if d.is_none() || parity_set.is_none() {
                invalid("parity requires `d` and `parity_set`")
            } else {
                Ok(())
            }
        }
        ProblemSpec::Recovery {
            lambdas,
            lambda,
            steps,
        } => match (lambdas, lambda, steps) {
            (Some(_), None, None) => Ok(()),
            (None, Some(_), Some(_)) => Ok(()),
            _ => invalid("recovery requires `lambdas`, or `lambda` plus `steps`"),
        },
        ProblemSpec::Addition { .. } => Ok(()),
    }
}

/// Instantiates the environment described by a (validated) problem spec.
pub fn build_problem(spec: &ProblemSpec) -> Result<Problem> {
    let built = match spec {
        ProblemSpec::Trap { strict } => make_two_token_trap(*strict),
        ProblemSpec::Parity { d, parity_set } => {
            let d = d.ok_or_else(|| anyhow!(InvalidConfig("parity requires `d`".into())))?;
            let set = parity_set
                .clone()
                .ok_or_else(|| anyhow!(InvalidConfig("parity requires `parity_set`".into())))?;
            make_parity(d, &set)
        }
        ProblemSpec::Recovery {
            lambdas,
            lambda,
            steps,
        } => {
            let lambdas = match (lambdas, lambda, steps) {
                (Some(l), _, _) => l.clone(),
                (None, Some(l), Some(s)) => vec![*l; *s],
                _ => {
                    return invalid("recovery requires `lambdas`, or `lambda` plus `steps`");
                }
            };
            make_recovery(&lambdas)
        }
        ProblemSpec::Addition { num_digits } => make_addition(*num_digits),
    };
    built.map_err(|e| anyhow!(InvalidConfig(e.to_string())))
}

/// Builds initial policy parameters for a problem.
pub fn build_params(problem: &Problem, init: &InitSpec, gamma: f64) -> Result<PolicyParams> {
    let steps = problem.num_steps();
    let tasks = problem.num_tasks();
    let built = match init {
        InitSpec::Uniform => Ok(PolicyParams::uniform(steps, tasks, gamma)),
        InitSpec::CorrectProb { p0 } => {
            params_from_correct_prob(steps, tasks, |s| problem.tau()[s], *p0, gamma)
        }
        InitSpec::Logits { u } => PolicyParams::new(Mat::from_rows(u), gamma, vec![0; steps]),
    };
    built.map_err(|e| anyhow!(InvalidConfig(e.to_string())))
}
