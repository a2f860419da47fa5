//! Monte-Carlo verification of the expected-update identity and the
//! trajectory-safety floor.

use rlvr_core::rng::{purpose, stream};
use rlvr_core::{
    collect_positive_batch, compute_q_stats, enumerate_outcomes, expected_update_from_table,
    make_parity, make_recovery, make_two_token_trap, params_from_correct_prob, train, MetricsMode,
    PolicyParams, Problem, TrainConfig,
};

/// Empirical mean and standard error of the single-iteration logit change
/// `eta*gamma^2*Q[s][j]` over `batches` positive batches of size `b`.
#[allow(clippy::too_many_arguments)]
fn mc_logit_change(
    params: &PolicyParams,
    problem: &Problem,
    s: usize,
    j: usize,
    eta: f64,
    batches: usize,
    b: usize,
    seed: u64,
) -> (f64, f64) {
    let g2 = eta * params.gamma() * params.gamma();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for it in 0..batches {
        let (batch, _) = collect_positive_batch(params, problem, b, 100_000, seed, it).unwrap();
        let q = compute_q_stats(&batch, params).unwrap();
        let x = g2 * q.as_mat()[(s, j)];
        sum += x;
        sum_sq += x * x;
    }
    let n = batches as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

#[test]
fn expected_update_matches_monte_carlo_on_trap() {
    let problem = make_two_token_trap(false).unwrap();
    let eta = 0.1;
    let params = params_from_correct_prob(2, 2, |_| 0, 0.5, 1.0).unwrap();
    let table = enumerate_outcomes(&params, &problem).unwrap();
    for s in 0..2 {
        for j in 0..2 {
            let analytic = expected_update_from_table(&table, s, j, eta, 1.0);
            let (mean, stderr) =
                mc_logit_change(&params, &problem, s, j, eta, 20_000, 32, 90 + s as u64);
            assert!(
                (mean - analytic).abs() <= 3.0 * stderr + 1e-12,
                "({s},{j}): mc {mean} vs analytic {analytic} (stderr {stderr})"
            );
        }
    }
}

#[test]
fn expected_update_matches_monte_carlo_on_strict_trap() {
    // The rho = 0 branch: every accepted trace avoids task 1, so the update
    // at its token is exactly -eta*gamma^2*P(A).
    let problem = make_two_token_trap(true).unwrap();
    let eta = 0.1;
    let params = params_from_correct_prob(2, 2, |_| 0, 0.5, 1.0).unwrap();
    let table = enumerate_outcomes(&params, &problem).unwrap();
    assert_eq!(table.rho[(0, 1)], 0.0);
    for s in 0..2 {
        let analytic = expected_update_from_table(&table, s, 1, eta, 1.0);
        assert!((analytic + eta * 0.5).abs() < 1e-12);
        let (mean, stderr) =
            mc_logit_change(&params, &problem, s, 1, eta, 5_000, 32, 97 + s as u64);
        assert!(
            (mean - analytic).abs() <= 3.0 * stderr + 1e-12,
            "mc {mean} vs analytic {analytic}"
        );
    }
}

#[test]
fn oracle_probabilities_match_empirical_frequencies() {
    // Every OutcomeTable probability is also an observable frequency.
    let cases: Vec<(Problem, PolicyParams)> = vec![
        (
            make_two_token_trap(false).unwrap(),
            params_from_correct_prob(2, 2, |_| 0, 0.45, 1.0).unwrap(),
        ),
        (
            make_recovery(&[0.3, 0.7]).unwrap(),
            params_from_correct_prob(2, 2, |_| 0, 0.6, 1.0).unwrap(),
        ),
        (
            make_parity(3, &[1, 3]).unwrap(),
            PolicyParams::uniform(3, 2, 1.0),
        ),
    ];
    let n = 100_000usize;
    for (case_idx, (problem, params)) in cases.iter().enumerate() {
        let table = enumerate_outcomes(params, problem).unwrap();
        let mut rng = stream(400 + case_idx as u64, purpose::ESTIMATE, 0, 0);
        let mut success = 0usize;
        let steps = problem.num_steps();
        let mut task_counts = vec![vec![0usize; 2]; steps];
        let mut task_and_v = vec![vec![0usize; 2]; steps];
        for _ in 0..n {
            let r = rlvr_core::sample_rollout(params, problem, &mut rng);
            success += usize::from(r.verified);
            for s in 0..steps {
                if let Some(j) = r.selected[s] {
                    task_counts[s][j] += 1;
                    task_and_v[s][j] += usize::from(r.verified);
                }
            }
        }
        let nf = n as f64;
        let freq_tol = |p: f64| 3.0 * (p * (1.0 - p) / nf).sqrt() + 1e-9;
        let p_hat = success as f64 / nf;
        assert!(
            (p_hat - table.success_prob).abs() <= freq_tol(table.success_prob),
            "case {case_idx} success: {p_hat} vs {}",
            table.success_prob
        );
        for s in 0..steps {
            for j in 0..2 {
                let p = table.p_task[(s, j)];
                let got = task_counts[s][j] as f64 / nf;
                assert!(
                    (got - p).abs() <= freq_tol(p),
                    "case {case_idx} p_task[{s}][{j}]"
                );
                if success > 0 {
                    let cond = task_and_v[s][j] as f64 / success as f64;
                    let p = table.p_task_given_success[(s, j)];
                    let tol = 3.0 * (p * (1.0 - p) / success as f64).sqrt() + 1e-9;
                    assert!(
                        (cond - p).abs() <= tol,
                        "case {case_idx} p(A|V)[{s}][{j}]: {cond} vs {p}"
                    );
                }
            }
        }
    }
}

#[test]
fn parity_training_respects_the_probability_floor() {
    // Theta_+ tracking on parity from uniform init: per-step correct-task
    // probability never drops more than 2*eta*gamma^2 in one iteration.
    let problem = make_parity(3, &[1, 3]).unwrap();
    let params = PolicyParams::uniform(3, 2, 10.0);
    let mut config = TrainConfig::new(0.001, 512, 400, 1234);
    config.metrics = MetricsMode::Exact;
    config.stop_at_success = Some(0.98);
    let run = train(&params, &problem, &config).unwrap();
    assert!(
        run.floor_violations.is_empty(),
        "{:?}",
        run.floor_violations
    );
    let slack = 2.0 * 0.001 * 100.0 + 1e-9;
    for w in run.metrics.windows(2) {
        for s in 0..3 {
            assert!(w[1].correct_prob[s] >= w[0].correct_prob[s] - slack);
        }
    }
}
