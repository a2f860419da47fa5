//! The theory-check suite behind `rlvr verify`.
//!
//! Each check pins one exact identity or closed form to the enumeration
//! oracle, or one Monte-Carlo estimate to its analytic value at three
//! standard errors. All randomness is derived from the master seed, so a
//! verify run is reproducible byte for byte.

use serde_json::Value;

use rlvr_core::rng::{purpose, stream};
use rlvr_core::{
    collect_positive_batch, compute_q_stats, enumerate_outcomes, expected_update_from_table,
    make_parity, make_recovery, make_two_token_trap, mean_field_step, mean_field_trajectory,
    params_from_correct_prob, sample_rollout_with_dists, train, MarginCheck, Mat, MeanFieldLimit,
    MeanFieldState, MetricsMode, PolicyParams, Problem, TrainConfig,
};

use crate::output::ratio_value;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub struct VerifyOutput {
    pub checks: Vec<CheckResult>,
    /// Named outcome tables computed along the way, for emission.
    pub tables: Vec<(String, rlvr_core::OutcomeTable)>,
}

impl VerifyOutput {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn trap_params(p0: f64) -> PolicyParams {
    params_from_correct_prob(2, 2, |_| 0, p0, 1.0).unwrap()
}

/// Bayes identity plus internal consistency of the stored ratios: `rho`
/// must equal the ratio of `P(V|A)` to the complement-conditional success
/// probability reconstructed by total probability. Returns the maximum
/// absolute deviation found.
pub fn bayes_identity_check(table: &rlvr_core::OutcomeTable) -> (bool, f64) {
    let mut max_dev = 0.0f64;
    let mut consistent = true;
    for s in 0..table.steps() {
        for j in 0..table.tasks() {
            let pa = table.p_task[(s, j)];
            let pav = table.p_task_given_success[(s, j)];
            let pva = table.p_success_given_task[(s, j)];
            let dev = (pa * pva - pav * table.success_prob).abs();
            max_dev = max_dev.max(dev);

            let comp = 1.0 - pa;
            let den = if comp > 0.0 {
                ((table.success_prob - pva * pa) / comp).max(0.0)
            } else {
                0.0
            };
            let rho = table.rho[(s, j)];
            if pva == 0.0 {
                consistent &= rho == 0.0;
            } else if den == 0.0 {
                consistent &= rho.is_infinite();
            } else {
                let recon = pva / den;
                let dev = (rho - recon).abs() / (1.0 + recon);
                max_dev = max_dev.max(dev);
            }
        }
    }
    (consistent && max_dev <= 1e-10, max_dev)
}

struct Case {
    name: String,
    problem: Problem,
    params: PolicyParams,
}

fn table_cases(seed: u64) -> Vec<Case> {
    let mut cases = Vec::new();
    for &p0 in &[0.1, 0.25, 1.0 / 3.0, 0.5, 0.9] {
        cases.push(Case {
            name: format!("trap_p{p0:.6}"),
            problem: make_two_token_trap(false).unwrap(),
            params: trap_params(p0),
        });
    }
    cases.push(Case {
        name: "trap_strict_p0.5".into(),
        problem: make_two_token_trap(true).unwrap(),
        params: trap_params(0.5),
    });
    cases.push(Case {
        name: "parity_d3_uniform".into(),
        problem: make_parity(3, &[1, 3]).unwrap(),
        params: PolicyParams::uniform(3, 2, 1.0),
    });
    let lambdas = [0.25, 0.5, 0.75];
    cases.push(Case {
        name: "recovery_l0.25_0.5_0.75".into(),
        problem: make_recovery(&lambdas).unwrap(),
        params: random_params(3, 2, 1.0, seed, 900),
    });
    cases
}

/// Random logits in [-2, 2], for "arbitrary policy" checks.
fn random_params(steps: usize, tasks: usize, gamma: f64, seed: u64, salt: u64) -> PolicyParams {
    use rlvr_core::rng::SimRng;
    let mut rng = stream(seed, purpose::PARAM_DRAW, salt, 0);
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..tasks).map(|_| 4.0 * rng.next_f64() - 2.0).collect())
        .collect();
    PolicyParams::new(Mat::from_rows(&rows), gamma, vec![0; steps]).unwrap()
}

pub fn run_verify(seed: u64) -> VerifyOutput {
    let mut checks = Vec::new();
    let mut tables = Vec::new();

    // Shared table set.
    let cases = table_cases(seed);
    for case in &cases {
        let table = enumerate_outcomes(&case.params, &case.problem).unwrap();
        tables.push((case.name.clone(), table));
    }

    // 1. Bayes identity + ratio consistency on every table.
    {
        let mut worst = 0.0f64;
        let mut passed = true;
        for (_, table) in &tables {
            let (ok, dev) = bayes_identity_check(table);
            passed &= ok;
            worst = worst.max(dev);
        }
        checks.push(CheckResult {
            name: "bayes_identity",
            passed,
            detail: format!("max deviation {worst:.3e} (tol 1e-10)"),
        });
    }

    // 2. Verifier lower bound and loss upper bound.
    {
        let mut passed = true;
        let mut worst = f64::NEG_INFINITY;
        for (_, table) in &tables {
            let report = rlvr_core::bound_report(table);
            passed &= report.verifier_bound_ok && report.loss_bound_ok;
            worst = worst
                .max(report.verifier_lower_bound - report.success_prob)
                .max(report.ce_loss - report.sum_error_ratios);
        }
        checks.push(CheckResult {
            name: "verifier_loss_bounds",
            passed,
            detail: format!("max bound slack violation {worst:.3e} (tol 1e-10)"),
        });
    }

    // 3. Parity margin closed form: alpha = 2^-(d-1) at uniform init.
    {
        let mut passed = true;
        let mut worst = 0.0f64;
        for d in 2..=8usize {
            let set: Vec<usize> = (1..=d).collect();
            let problem = make_parity(d, &set).unwrap();
            let params = PolicyParams::uniform(d, 2, 1.0);
            match rlvr_core::margin_alpha(&params, &problem).unwrap() {
                MarginCheck::Satisfied { alpha } => {
                    let expected = 0.5f64.powi(d as i32 - 1);
                    worst = worst.max((alpha - expected).abs());
                }
                MarginCheck::Violated { .. } => passed = false,
            }
        }
        passed &= worst <= 1e-10;
        checks.push(CheckResult {
            name: "parity_margin_closed_form",
            passed,
            detail: format!("max |alpha - 2^-(d-1)| = {worst:.3e} over d=2..8"),
        });
    }

    // 4. Recovery margin closed form: rho = 1/lambda for arbitrary policies.
    {
        let mut passed = true;
        let mut worst = 0.0f64;
        for (i, &lambda) in [0.25, 0.5, 0.75].iter().enumerate() {
            let problem = make_recovery(&[lambda; 3]).unwrap();
            for draw in 0..5u64 {
                let params = random_params(3, 2, 1.0, seed, 1000 + 10 * i as u64 + draw);
                let table = enumerate_outcomes(&params, &problem).unwrap();
                for s in 0..3 {
                    worst = worst.max((table.rho[(s, 0)] - 1.0 / lambda).abs());
                    passed &= table.rho[(s, 1)] < 1.0;
                }
            }
        }
        passed &= worst <= 1e-10;
        checks.push(CheckResult {
            name: "recovery_margin_closed_form",
            passed,
            detail: format!("max |rho - 1/lambda| = {worst:.3e} over 5 draws x 3 lambdas"),
        });
    }

    // 5. Trap closed forms: rho_1 = 2p/(1-p), rho_2 = (1-p)/(2p), D(p).
    {
        let mut worst = 0.0f64;
        let problem = make_two_token_trap(false).unwrap();
        for &p in &[0.1, 0.25, 1.0 / 3.0, 0.5, 0.9] {
            let table = enumerate_outcomes(&trap_params(p), &problem).unwrap();
            let d = p * p / (p * p + 0.5 * (1.0 - p) * (1.0 - p));
            for s in 0..2 {
                worst = worst.max((table.rho[(s, 0)] - 2.0 * p / (1.0 - p)).abs());
                worst = worst.max((table.rho[(s, 1)] - (1.0 - p) / (2.0 * p)).abs());
                worst = worst.max((table.p_task_given_success[(s, 0)] - d).abs());
            }
            worst = worst.max((table.success_prob - (p * p + 0.5 * (1.0 - p) * (1.0 - p))).abs());
        }
        checks.push(CheckResult {
            name: "trap_closed_forms",
            passed: worst <= 1e-10,
            detail: format!("max closed-form deviation {worst:.3e} over the p grid"),
        });
    }

    // 6. Expected-update identity, Monte Carlo vs analytic (both branches).
    {
        let (passed, detail) = expected_update_mc(seed, 20_000, 32);
        checks.push(CheckResult {
            name: "expected_update_monte_carlo",
            passed,
            detail,
        });
    }

    // 7. Single-step probability floor along real trainings.
    {
        let mut passed = true;
        let recovery = make_recovery(&[0.5; 4]).unwrap();
        let mut config = TrainConfig::new(0.1, 256, 300, seed ^ 0x5eed);
        config.stop_at_success = Some(0.99);
        let run = train(&PolicyParams::uniform(4, 2, 1.0), &recovery, &config).unwrap();
        passed &= run.floor_violations.is_empty();
        let parity = make_parity(3, &[1, 2]).unwrap();
        let mut config = TrainConfig::new(0.001, 512, 300, seed ^ 0xf100d);
        config.metrics = MetricsMode::Exact;
        config.stop_at_success = Some(0.98);
        let run = train(&PolicyParams::uniform(3, 2, 10.0), &parity, &config).unwrap();
        passed &= run.floor_violations.is_empty();
        checks.push(CheckResult {
            name: "lipschitz_floor",
            passed,
            detail: "no per-iteration correct-task drop beyond 2*eta*gamma^2".into(),
        });
    }

    // 8. Mean-field recursion: fixed point, sign structure, bifurcation.
    {
        let mut passed = true;
        let fixed = MeanFieldState::from_p(1.0 / 3.0).unwrap();
        passed &= mean_field_step(&fixed, 0.1).z == fixed.z;
        for &p in &[0.05, 0.2, 0.3, 0.4, 0.7, 0.95] {
            let st = MeanFieldState::from_p(p).unwrap();
            let dz = mean_field_step(&st, 0.1).z - st.z;
            passed &= (dz > 0.0) == (p > 1.0 / 3.0);
        }
        let up = mean_field_trajectory(0.34, 0.1, 100_000, 5e-4).unwrap();
        passed &= up.limit == MeanFieldLimit::Success;
        let down = mean_field_trajectory(0.32, 0.1, 100_000, 5e-4).unwrap();
        passed &= down.limit == MeanFieldLimit::Collapse;
        checks.push(CheckResult {
            name: "mean_field_fixed_point",
            passed,
            detail: "dZ sign matches (3p-1); 0.34 -> success, 0.32 -> collapse".into(),
        });
    }

    // 9. Q centering over unconditioned rollouts.
    {
        let problem = make_two_token_trap(false).unwrap();
        let params = trap_params(0.35);
        let dists = params.distributions();
        let n = 100_000usize;
        let mut rng = stream(seed, purpose::ESTIMATE, 9, 0);
        let mut rollouts = Vec::with_capacity(n);
        for _ in 0..n {
            rollouts.push(sample_rollout_with_dists(
                &params, &dists, &problem, &mut rng,
            ));
        }
        let q = compute_q_stats(&rollouts, &params).unwrap();
        let tol = 3.0 * 0.5 / (n as f64).sqrt();
        let worst = (0..2)
            .flat_map(|s| (0..2).map(move |j| (s, j)))
            .map(|(s, j)| q.as_mat()[(s, j)].abs())
            .fold(0.0f64, f64::max);
        checks.push(CheckResult {
            name: "q_centering",
            passed: worst <= tol,
            detail: format!("max |mean q| = {worst:.3e} (3 sigma = {tol:.3e})"),
        });
    }

    // 10. Oracle probabilities vs empirical frequencies.
    {
        let mut passed = true;
        let mut detail = String::new();
        let targets: Vec<(&str, Problem, PolicyParams)> = vec![
            (
                "trap",
                make_two_token_trap(false).unwrap(),
                trap_params(0.45),
            ),
            (
                "recovery",
                make_recovery(&[0.3, 0.7]).unwrap(),
                params_from_correct_prob(2, 2, |_| 0, 0.6, 1.0).unwrap(),
            ),
            (
                "parity",
                make_parity(3, &[2]).unwrap(),
                PolicyParams::uniform(3, 2, 1.0),
            ),
        ];
        let n = 100_000usize;
        for (i, (name, problem, params)) in targets.iter().enumerate() {
            let exact = enumerate_outcomes(params, problem).unwrap().success_prob;
            let dists = params.distributions();
            let mut rng = stream(seed, purpose::ESTIMATE, 10 + i as u64, 0);
            let hits = (0..n)
                .filter(|_| sample_rollout_with_dists(params, &dists, problem, &mut rng).verified)
                .count();
            let freq = hits as f64 / n as f64;
            let sigma = (exact * (1.0 - exact) / n as f64).sqrt();
            let ok = (freq - exact).abs() <= 3.0 * sigma + 1e-9;
            passed &= ok;
            detail.push_str(&format!("{name}: |{freq:.4}-{exact:.4}| "));
        }
        checks.push(CheckResult {
            name: "oracle_vs_monte_carlo",
            passed,
            detail,
        });
    }

    VerifyOutput { checks, tables }
}

/// Monte-Carlo check of the expected single-step logit change against the
/// analytic formula, on the trap (positive-rho branch) and the strict trap
/// (zero-rho branch).
fn expected_update_mc(seed: u64, batches: usize, batch_size: usize) -> (bool, String) {
    let eta = 0.1;
    let mut passed = true;
    let mut worst_z = 0.0f64;
    for (idx, strict) in [(0u64, false), (1u64, true)] {
        let problem = make_two_token_trap(strict).unwrap();
        let params = trap_params(0.5);
        let table = enumerate_outcomes(&params, &problem).unwrap();
        for s in 0..2 {
            for j in 0..2 {
                let analytic = expected_update_from_table(&table, s, j, eta, 1.0);
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for it in 0..batches {
                    let (batch, _) = collect_positive_batch(
                        &params,
                        &problem,
                        batch_size,
                        100_000,
                        seed ^ (0xE0 + idx),
                        it,
                    )
                    .unwrap();
                    let q = compute_q_stats(&batch, &params).unwrap();
                    let x = eta * q.as_mat()[(s, j)];
                    sum += x;
                    sum_sq += x * x;
                }
                let n = batches as f64;
                let mean = sum / n;
                let var = (sum_sq / n - mean * mean).max(0.0);
                let stderr = (var / n).sqrt();
                let dev = (mean - analytic).abs();
                if stderr > 0.0 {
                    worst_z = worst_z.max(dev / stderr);
                    passed &= dev <= 3.0 * stderr;
                } else {
                    passed &= dev <= 1e-12;
                }
            }
        }
    }
    (
        passed,
        format!("worst |mc - analytic| = {worst_z:.2} sigma over both trap variants"),
    )
}

/// Flattens a table to one JSON object with documented scalar keys.
pub fn flat_table(case: &str, table: &rlvr_core::OutcomeTable) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("case".into(), Value::from(case));
    obj.insert("success_prob".into(), Value::from(table.success_prob));
    obj.insert("ce_loss".into(), Value::from(table.ce_loss));
    obj.insert(
        "sum_error_ratios".into(),
        Value::from(table.sum_error_ratios()),
    );
    obj.insert(
        "verifier_lower_bound".into(),
        Value::from(table.verifier_lower_bound()),
    );
    for s in 0..table.steps() {
        obj.insert(format!("tau.s{s}"), Value::from(table.tau[s]));
        obj.insert(
            format!("error_ratio.s{s}"),
            Value::from(table.error_ratio[s]),
        );
        for j in 0..table.tasks() {
            obj.insert(
                format!("p_task.s{s}.j{j}"),
                Value::from(table.p_task[(s, j)]),
            );
            obj.insert(
                format!("p_task_given_success.s{s}.j{j}"),
                Value::from(table.p_task_given_success[(s, j)]),
            );
            obj.insert(
                format!("p_success_given_task.s{s}.j{j}"),
                Value::from(table.p_success_given_task[(s, j)]),
            );
            obj.insert(format!("rho.s{s}.j{j}"), ratio_value(table.rho[(s, j)]));
        }
    }
    Value::Object(obj)
}
