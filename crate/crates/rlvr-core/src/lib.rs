//! Simulator and analysis library for reinforcement learning with verifiable
//! rewards (RLVR) over autoregressive task compositions.
//!
//! The model is a per-step softmax over a finite set of deterministic tasks:
//! at CoT step `s` the policy picks task `j` with probability proportional to
//! `exp(gamma * u[s][j])`, the chosen task emits one token, and after `S`
//! steps a verifier accepts or rejects the completed sequence. Training is
//! plain REINFORCE on verified (positive) rollouts only.
//!
//! The crate is organised as:
//!
//! * [`policy`] — the logit table, per-step distributions, and the update rule;
//! * [`problems`] — the task/verifier environments (parity scan, recovery,
//!   two-token trap, long addition);
//! * [`rollout`] — autoregressive sampling of single rollouts;
//! * [`training`] — positive-batch collection, the Q statistic, and the
//!   training loop;
//! * [`analysis`] — an exact enumeration oracle for success probabilities,
//!   task-advantage ratios, margins, expected updates, and verifier/loss
//!   bounds;
//! * [`mean_field`] — the infinite-batch recursion for the trap problem;
//! * [`planner`] — closed-form hyperparameter planning for a target accuracy.
//!
//! The crate is `no_std`-compatible (`--no-default-features --features libm`);
//! everything here is pure computation over heap data, with all randomness
//! injected through seeded [`rand_chacha`] streams so that results are
//! bit-reproducible regardless of host parallelism.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod mat;
pub(crate) mod math;
pub mod mean_field;
pub mod planner;
pub mod policy;
pub mod problems;
pub mod rng;
pub mod rollout;
pub mod training;

pub use analysis::{
    advantage_ratio, bound_report, enumerate_outcomes, enumerate_outcomes_with,
    estimate_advantage_ratio, estimate_success_prob, expected_update, expected_update_from_table,
    margin_alpha, margin_from_table, BoundReport, MarginCheck, MarginViolation, OracleOptions,
    OutcomeTable, RatioEstimate,
};
pub use error::Error;
pub use mat::Mat;
pub use mean_field::{
    implied_success, mean_field_step, mean_field_trajectory, MeanFieldLimit, MeanFieldState,
    MeanFieldTrajectory,
};
pub use planner::{plan_hyperparameters, scale_plan_to_budget, Plan, PlanInputs, ScaledPlan};
pub use policy::{params_from_correct_prob, PolicyParams, StepDistribution};
pub use problems::{
    make_addition, make_parity, make_recovery, make_two_token_trap, Acceptance, Prefix, Problem,
    PromptDist, Token,
};
pub use rollout::{sample_rollout, sample_rollout_with_dists, Rollout};
pub use training::{
    collect_positive_batch, compute_q_stats, train, FloorViolation, MetricsMode, MetricsRecord,
    QMatrix, TrainConfig, TrainRun,
};
