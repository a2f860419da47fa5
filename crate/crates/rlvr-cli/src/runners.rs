//! Experiment recipes: simulate, the two sweeps, mean-field, and plan.
//!
//! Replicates and grid points run in parallel; every run derives its
//! randomness from its own (seed, iteration, slot) streams, and results are
//! merged in deterministic order, so output bytes are independent of the
//! thread count.

use std::path::Path;

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use rlvr_core::rng::{purpose, stream};
use rlvr_core::{
    enumerate_outcomes, estimate_success_prob, mean_field_trajectory, plan_hyperparameters,
    scale_plan_to_budget, MeanFieldLimit, MetricsRecord, Plan, PlanInputs, PolicyParams, Problem,
    TrainRun,
};

use crate::config::{
    build_params, build_problem, EtaRule, InitSpec, MeanFieldPayload, MetricsSpec, PlanPayload,
    ProblemSpec, Resolved, SimulatePayload, SweepLengthPayload, SweepP0Payload, SweepProblem,
    SCHEMA_VERSION,
};
use crate::output::{fmt_f64, json_line, ratio_value, write_atomic, CsvDoc, JsonlDoc};

fn write_config(resolved: &Resolved, out_dir: &Path) -> Result<()> {
    let mut text = json_line(&resolved.to_value());
    text.push('\n');
    write_atomic(&out_dir.join("config.json"), &text)
}

fn record_value(replicate: usize, seed: u64, rec: &MetricsRecord) -> Value {
    let rho = rec.rho.as_ref().map(|m| {
        Value::Array(
            (0..m.rows())
                .map(|s| Value::Array((0..m.cols()).map(|j| ratio_value(m[(s, j)])).collect()))
                .collect(),
        )
    });
    json!({
        "replicate": replicate,
        "seed": seed,
        "iteration": rec.iteration,
        "success_prob": rec.success_prob,
        "success_samples": rec.success_samples,
        "correct_prob": rec.correct_prob,
        "rho": rho,
        "margin_alpha": rec.margin_alpha,
        "margin_satisfied": rec.margin_satisfied,
        "error_ratios": rec.error_ratios,
        "verifier_lower_bound": rec.verifier_lower_bound,
        "ce_loss": rec.ce_loss,
        "acceptance_rate": rec.acceptance_rate,
    })
}

/// Exact success probability when the problem is enumerable, otherwise a
/// seeded Monte-Carlo estimate. Returns the value and its mode label.
fn final_success(
    params: &PolicyParams,
    problem: &Problem,
    metrics: MetricsSpec,
    seed: u64,
) -> (f64, &'static str) {
    if problem.is_enumerable() {
        let table = enumerate_outcomes(params, problem).expect("enumerable problem fits budget");
        (table.success_prob, "exact")
    } else {
        let samples = match metrics {
            MetricsSpec::MonteCarlo { samples } => samples,
            MetricsSpec::Exact => 4096,
        };
        let mut rng = stream(seed, purpose::METRICS, u64::MAX, 0);
        (
            estimate_success_prob(params, problem, samples, &mut rng),
            "monte_carlo",
        )
    }
}

pub fn run_simulate(resolved: &Resolved, payload: &SimulatePayload, out_dir: &Path) -> Result<()> {
    let problem = build_problem(&payload.problem)?;
    let params0 = build_params(&problem, &payload.init, payload.gamma)?;

    let runs: Vec<(usize, u64, TrainRun)> = payload
        .seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            let config = payload.train.to_train_config(seed);
            rlvr_core::train(&params0, &problem, &config).map(|run| (r, seed, run))
        })
        .collect::<Result<Vec<_>, rlvr_core::Error>>()
        .map_err(|e| anyhow!(e))?;

    let config_value = resolved.to_value();
    let mut metrics = JsonlDoc::new(SCHEMA_VERSION, resolved.seed, &config_value);
    let mut summary = CsvDoc::new(
        SCHEMA_VERSION,
        resolved.seed,
        &config_value,
        &[
            "replicate",
            "seed",
            "iterations_run",
            "stopped_early",
            "final_success_prob",
            "final_success_mode",
            "last_batch_acceptance",
            "final_ce_loss",
            "floor_violations",
        ],
    );

    for (r, seed, run) in &runs {
        for rec in &run.metrics {
            metrics.push(&record_value(*r, *seed, rec));
        }
        let (success, mode) =
            final_success(&run.final_params, &problem, payload.train.metrics, *seed);
        let last_acceptance = run
            .metrics
            .iter()
            .rev()
            .find_map(|m| m.acceptance_rate)
            .unwrap_or(f64::NAN);
        let ce: f64 = problem
            .tau()
            .iter()
            .enumerate()
            .map(|(s, &j)| -run.final_params.step_distribution(s).task_probs[j].ln())
            .sum();
        summary.push_row(&[
            r.to_string(),
            seed.to_string(),
            run.iterations_run.to_string(),
            run.stopped_early.to_string(),
            fmt_f64(success),
            mode.to_string(),
            fmt_f64(last_acceptance),
            fmt_f64(ce),
            run.floor_violations.len().to_string(),
        ]);
    }

    write_config(resolved, out_dir)?;
    metrics.write(&out_dir.join("metrics.jsonl"))?;
    summary.write(&out_dir.join("summary.csv"))?;
    println!(
        "simulate: {} replicate(s) written to {}",
        runs.len(),
        out_dir.display()
    );
    Ok(())
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

struct SweepPoint {
    length: u64,
    replicate: usize,
    seed: u64,
    iterations: usize,
    capped: bool,
}

pub fn run_sweep_length(
    resolved: &Resolved,
    payload: &SweepLengthPayload,
    out_dir: &Path,
) -> Result<()> {
    let jobs: Vec<(u64, usize, u64)> = payload
        .grid
        .iter()
        .flat_map(|&g| {
            payload
                .seeds
                .iter()
                .enumerate()
                .map(move |(r, &seed)| (g, r, seed))
        })
        .collect();

    let points: Vec<SweepPoint> = jobs
        .par_iter()
        .map(
            |&(length, replicate, seed)| -> Result<SweepPoint, rlvr_core::Error> {
                let problem = match payload.problem {
                    SweepProblem::Recovery => {
                        let lambda = payload.lambda.expect("resolved recovery sweep has lambda");
                        rlvr_core::make_recovery(&vec![lambda; length as usize])?
                    }
                    SweepProblem::Parity => {
                        let set: Vec<usize> = (1..=length as usize).collect();
                        rlvr_core::make_parity(length as usize, &set)?
                    }
                };
                let params =
                    PolicyParams::uniform(problem.num_steps(), problem.num_tasks(), payload.gamma);
                let mut config = payload.train.to_train_config(seed);
                config.eta = match payload.eta_rule {
                    EtaRule::Fixed => payload.train.eta,
                    EtaRule::InverseLength => payload.train.eta / length as f64,
                };
                config.stop_at_success = Some(payload.target_accuracy);
                let run = rlvr_core::train(&params, &problem, &config)?;
                Ok(SweepPoint {
                    length,
                    replicate,
                    seed,
                    iterations: if run.stopped_early {
                        run.iterations_run
                    } else {
                        config.iterations
                    },
                    capped: !run.stopped_early,
                })
            },
        )
        .collect::<Result<Vec<_>, rlvr_core::Error>>()
        .map_err(|e| anyhow!(e))?;

    let config_value = resolved.to_value();
    let mut sweep = CsvDoc::new(
        SCHEMA_VERSION,
        resolved.seed,
        &config_value,
        &["length", "replicate", "seed", "iterations", "capped"],
    );
    for p in &points {
        sweep.push_row(&[
            p.length.to_string(),
            p.replicate.to_string(),
            p.seed.to_string(),
            p.iterations.to_string(),
            p.capped.to_string(),
        ]);
    }

    let mut summary = CsvDoc::new(
        SCHEMA_VERSION,
        resolved.seed,
        &config_value,
        &["stat", "length", "value"],
    );
    let mut medians: Vec<(f64, f64)> = Vec::new();
    for &g in &payload.grid {
        let mut vals: Vec<f64> = points
            .iter()
            .filter(|p| p.length == g && !p.capped)
            .map(|p| p.iterations as f64)
            .collect();
        let capped = points.iter().filter(|p| p.length == g && p.capped).count();
        if let Some(m) = median(&mut vals) {
            summary.push_row(&["median_iterations".into(), g.to_string(), fmt_f64(m)]);
            medians.push((g as f64, m));
        }
        summary.push_row(&["capped_count".into(), g.to_string(), capped.to_string()]);
    }
    let log_points: Vec<(f64, f64)> = medians
        .iter()
        .filter(|&&(_, m)| m > 0.0)
        .map(|&(g, m)| (g.ln(), m.ln()))
        .collect();
    if let Some(slope) = least_squares_slope(&log_points) {
        summary.push_row(&["log_log_slope".into(), String::new(), fmt_f64(slope)]);
    }

    write_config(resolved, out_dir)?;
    sweep.write(&out_dir.join("sweep.csv"))?;
    summary.write(&out_dir.join("summary.csv"))?;
    println!(
        "sweep-length: {} point(s) written to {}",
        points.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn run_sweep_p0(resolved: &Resolved, payload: &SweepP0Payload, out_dir: &Path) -> Result<()> {
    let problem = build_problem(&ProblemSpec::Trap { strict: false })?;
    let jobs: Vec<(f64, usize, u64)> = payload
        .p0_grid
        .iter()
        .flat_map(|&p0| {
            payload
                .seeds
                .iter()
                .enumerate()
                .map(move |(r, &seed)| (p0, r, seed))
        })
        .collect();

    struct P0Point {
        p0: f64,
        replicate: usize,
        seed: u64,
        last_batch_accuracy: f64,
        exact_success_prob: f64,
    }

    let points: Vec<P0Point> = jobs
        .par_iter()
        .map(
            |&(p0, replicate, seed)| -> Result<P0Point, rlvr_core::Error> {
                let params = build_params(&problem, &InitSpec::CorrectProb { p0 }, payload.gamma)
                    .map_err(|e| rlvr_core::Error::InvalidParameter {
                    what: "p0",
                    detail: e.to_string(),
                })?;
                let config = payload.train.to_train_config(seed);
                let run = rlvr_core::train(&params, &problem, &config)?;
                let table = enumerate_outcomes(&run.final_params, &problem)?;
                let last = run
                    .metrics
                    .iter()
                    .rev()
                    .find_map(|m| m.acceptance_rate)
                    .unwrap_or(f64::NAN);
                Ok(P0Point {
                    p0,
                    replicate,
                    seed,
                    last_batch_accuracy: last,
                    exact_success_prob: table.success_prob,
                })
            },
        )
        .collect::<Result<Vec<_>, rlvr_core::Error>>()
        .map_err(|e| anyhow!(e))?;

    // The bifurcation point itself is recorded but never classified.
    let classify = |p: &P0Point| -> &'static str {
        if p.p0 == 1.0 / 3.0 {
            "boundary"
        } else if p.exact_success_prob >= 0.95 {
            "success"
        } else if (p.exact_success_prob - 0.5).abs() <= 0.05 {
            "collapse"
        } else {
            "undetermined"
        }
    };

    let config_value = resolved.to_value();
    let mut sweep = CsvDoc::new(
        SCHEMA_VERSION,
        resolved.seed,
        &config_value,
        &[
            "p0",
            "replicate",
            "seed",
            "last_batch_accuracy",
            "exact_success_prob",
            "classification",
        ],
    );
    for p in &points {
        sweep.push_row(&[
            fmt_f64(p.p0),
            p.replicate.to_string(),
            p.seed.to_string(),
            fmt_f64(p.last_batch_accuracy),
            fmt_f64(p.exact_success_prob),
            classify(p).to_string(),
        ]);
    }

    let mut summary = CsvDoc::new(
        SCHEMA_VERSION,
        resolved.seed,
        &config_value,
        &["p0", "median_exact_success_prob"],
    );
    for &p0 in &payload.p0_grid {
        let mut vals: Vec<f64> = points
            .iter()
            .filter(|p| p.p0 == p0)
            .map(|p| p.exact_success_prob)
            .collect();
        if let Some(m) = median(&mut vals) {
            summary.push_row(&[fmt_f64(p0), fmt_f64(m)]);
        }
    }

    write_config(resolved, out_dir)?;
    sweep.write(&out_dir.join("sweep.csv"))?;
    summary.write(&out_dir.join("summary.csv"))?;
    println!(
        "sweep-p0: {} point(s) written to {}",
        points.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn run_mean_field(
    resolved: &Resolved,
    payload: &MeanFieldPayload,
    out_dir: &Path,
) -> Result<()> {
    let config_value = resolved.to_value();
    let mut summary = CsvDoc::new(
        SCHEMA_VERSION,
        resolved.seed,
        &config_value,
        &[
            "p0",
            "iterations",
            "limit",
            "final_p",
            "implied_success_prob",
        ],
    );
    let mut trajectories = JsonlDoc::new(SCHEMA_VERSION, resolved.seed, &config_value);

    for &p0 in &payload.p0_grid {
        let t = mean_field_trajectory(p0, payload.eta, payload.max_iterations, payload.tolerance)
            .map_err(|e| anyhow!(crate::config::InvalidConfig(e.to_string())))?;
        let final_p = *t.p.last().unwrap();
        let limit = match t.limit {
            MeanFieldLimit::Success => "success",
            MeanFieldLimit::Collapse => "collapse",
            MeanFieldLimit::Undetermined => "undetermined",
        };
        summary.push_row(&[
            fmt_f64(p0),
            (t.p.len() - 1).to_string(),
            limit.to_string(),
            fmt_f64(final_p),
            fmt_f64(rlvr_core::implied_success(final_p)),
        ]);
        if payload.trajectory_stride > 0 {
            let last = t.p.len() - 1;
            for (i, &p) in t.p.iter().enumerate() {
                if (i as u64).is_multiple_of(payload.trajectory_stride) || i == last {
                    trajectories.push(&json!({
                        "p0": p0,
                        "iteration": i,
                        "p": p,
                        "implied_success_prob": rlvr_core::implied_success(p),
                    }));
                }
            }
        }
    }

    write_config(resolved, out_dir)?;
    summary.write(&out_dir.join("summary.csv"))?;
    if payload.trajectory_stride > 0 {
        trajectories.write(&out_dir.join("trajectory.jsonl"))?;
    }
    println!(
        "mean-field: {} trajectory(ies) written to {}",
        payload.p0_grid.len(),
        out_dir.display()
    );
    Ok(())
}

fn plan_value(plan: &Plan) -> Value {
    json!({
        "eps_tilde": plan.eps_tilde,
        "eta": plan.eta,
        "iterations": plan.iterations,
        "batch_real": plan.batch_real,
        "batch": plan.batch,
        "total_rollouts": plan.total_rollouts(),
    })
}

pub fn run_plan(resolved: &Resolved, payload: &PlanPayload, out_dir: Option<&Path>) -> Result<()> {
    let inputs = PlanInputs {
        epsilon: payload.epsilon,
        delta: payload.delta,
        alpha: payload.alpha,
        p0_min: payload.p0_min,
        steps: payload.steps,
        tasks: payload.tasks,
        gamma: payload.gamma,
    };
    let plan = plan_hyperparameters(&inputs)
        .map_err(|e| anyhow!(crate::config::InvalidConfig(e.to_string())))?;
    // Worst-case acceptance guess: every step must pick the correct task.
    let acceptance_guess = payload.p0_min.powi(payload.steps as i32);

    println!("hyperparameter plan");
    println!("  eps~              {}", fmt_f64(plan.eps_tilde));
    println!("  eta               {}", fmt_f64(plan.eta));
    println!("  iterations (T)    {}", plan.iterations);
    println!(
        "  batch size (B)    {} (exact {})",
        plan.batch,
        fmt_f64(plan.batch_real)
    );
    println!("  verified rollouts {}", fmt_f64(plan.total_rollouts()));
    println!(
        "  feasibility       ~{} raw draws at acceptance guess {}",
        fmt_f64(plan.estimated_draws(acceptance_guess)),
        fmt_f64(acceptance_guess)
    );

    let scaled = match payload.rollout_budget {
        Some(budget) => {
            let s = scale_plan_to_budget(&inputs, budget)
                .map_err(|e| anyhow!(crate::config::InvalidConfig(e.to_string())))?;
            println!(
                "  budget {budget}: eps~ scaled x{} -> eta {}, T {}, B {}",
                fmt_f64(s.scale),
                fmt_f64(s.plan.eta),
                s.plan.iterations,
                s.plan.batch
            );
            Some(s)
        }
        None => None,
    };

    if let Some(dir) = out_dir {
        let value = json!({
            "schema_version": SCHEMA_VERSION,
            "master_seed": resolved.seed,
            "config": resolved.to_value(),
            "plan": plan_value(&plan),
            "scaled": scaled.map(|s| {
                let mut v = plan_value(&s.plan);
                v.as_object_mut().unwrap().insert("scale".into(), Value::from(s.scale));
                v
            }),
            "acceptance_guess": acceptance_guess,
        });
        let mut text = json_line(&value);
        text.push('\n');
        write_config(resolved, dir)?;
        write_atomic(&dir.join("plan.json"), &text)?;
    }
    Ok(())
}
