//! Infinite-batch-size dynamics of the two-token trap.
//!
//! In the infinite-batch limit the two steps share a single logit gap
//! `Z = z_correct - z_wrong`, and one training iteration moves it by
//!
//! ```text
//! dZ = 2 * eta * p(1-p)(3p - 1) / (2p^2 + (1-p)^2),   p = sigmoid(Z)
//! ```
//!
//! so the flow has an unstable fixed point at `p = 1/3`: above it the policy
//! converges to always answering correctly (success probability 1), below
//! it the policy collapses onto the opposite constant answer (success
//! probability 1/2). Applies to the non-strict trap with `gamma = 1`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error};
use crate::math;

/// State of the shared logit gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldState {
    /// Logit gap between the correct and the wrong task.
    pub z: f64,
    /// Correct-task probability, `sigmoid(z)`.
    pub p: f64,
    pub iteration: u64,
}

impl MeanFieldState {
    pub fn from_p(p0: f64) -> Result<Self, Error> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(invalid("p0", format!("must lie in (0, 1), got {p0}")));
        }
        Ok(MeanFieldState {
            z: math::ln(p0 / (1.0 - p0)),
            p: p0,
            iteration: 0,
        })
    }
}

/// Limit classification of a mean-field trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanFieldLimit {
    /// `p -> 1`, implied success probability `-> 1`.
    Success,
    /// `p -> 0`, implied success probability `-> 1/2`.
    Collapse,
    /// Hit the iteration cap before either tolerance.
    Undetermined,
}

/// Trajectory of correct-task probabilities plus the limit call.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldTrajectory {
    /// `p` at iterations `0..=n`.
    pub p: Vec<f64>,
    pub limit: MeanFieldLimit,
}

/// Success probability of the trap as a function of the per-step
/// correct-task probability: `p^2 + (1-p)^2 / 2`.
pub fn implied_success(p: f64) -> f64 {
    p * p + 0.5 * (1.0 - p) * (1.0 - p)
}

/// One mean-field iteration of the logit-gap recursion.
pub fn mean_field_step(state: &MeanFieldState, eta: f64) -> MeanFieldState {
    let p = state.p;
    let dz = 2.0 * eta * p * (1.0 - p) * (3.0 * p - 1.0) / (2.0 * p * p + (1.0 - p) * (1.0 - p));
    let z = state.z + dz;
    MeanFieldState {
        z,
        p: math::sigmoid(z),
        iteration: state.iteration + 1,
    }
}

/// Iterates [`mean_field_step`] from `p0` until `|1 - p| < tol` (success),
/// `p < tol` (collapse), or `max_iter` iterations.
///
/// `p0 = 1/3` is the unstable fixed point and is rejected.
pub fn mean_field_trajectory(
    p0: f64,
    eta: f64,
    max_iter: u64,
    tol: f64,
) -> Result<MeanFieldTrajectory, Error> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid("eta", "must be positive and finite"));
    }
    if !(tol > 0.0 && tol < 0.5) {
        return Err(invalid("tol", format!("must lie in (0, 0.5), got {tol}")));
    }
    if p0 == 1.0 / 3.0 {
        return Err(invalid("p0", "1/3 is the unstable fixed point"));
    }
    let mut state = MeanFieldState::from_p(p0)?;
    let mut trajectory = Vec::new();
    trajectory.push(state.p);
    let mut limit = MeanFieldLimit::Undetermined;
    for _ in 0..max_iter {
        state = mean_field_step(&state, eta);
        trajectory.push(state.p);
        if 1.0 - state.p < tol {
            limit = MeanFieldLimit::Success;
            break;
        }
        if state.p < tol {
            limit = MeanFieldLimit::Collapse;
            break;
        }
    }
    Ok(MeanFieldTrajectory {
        p: trajectory,
        limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_third_is_a_fixed_point() {
        let state = MeanFieldState::from_p(1.0 / 3.0).unwrap();
        let next = mean_field_step(&state, 0.1);
        assert_eq!(next.z, state.z);
        assert_eq!(next.p, state.p);
    }

    #[test]
    fn step_at_one_half() {
        // dZ = 2*0.1*0.125/0.75 = 1/30; p' = sigmoid(1/30).
        let state = MeanFieldState::from_p(0.5).unwrap();
        let next = mean_field_step(&state, 0.1);
        assert!((next.z - 1.0 / 30.0).abs() < 1e-15, "z {}", next.z);
        let expected_p = 1.0 / (1.0 + (-1.0f64 / 30.0).exp());
        assert!((next.p - expected_p).abs() < 1e-15);
        assert!((next.p - 0.50833).abs() < 1e-4);
    }

    #[test]
    fn step_at_one_quarter_moves_down() {
        // dZ = 2*0.1*0.1875*(-0.25)/0.6875.
        let state = MeanFieldState::from_p(0.25).unwrap();
        let next = mean_field_step(&state, 0.1);
        let dz = next.z - state.z;
        assert!((dz - (-0.009375 / 0.6875)).abs() < 1e-15, "dz {dz}");
        assert!(dz < 0.0);
    }

    #[test]
    fn sign_structure_of_the_gap_update() {
        for i in 1..200 {
            let p = i as f64 / 200.0;
            let state = MeanFieldState::from_p(p).unwrap();
            let dz = mean_field_step(&state, 0.3).z - state.z;
            if p > 1.0 / 3.0 + 1e-12 {
                assert!(dz > 0.0, "p={p}");
            } else if p < 1.0 / 3.0 - 1e-12 {
                assert!(dz < 0.0, "p={p}");
            }
        }
    }

    #[test]
    fn trajectories_classify_the_bifurcation() {
        let up = mean_field_trajectory(0.34, 0.1, 100_000, 1e-4).unwrap();
        assert_eq!(up.limit, MeanFieldLimit::Success);
        assert!(implied_success(*up.p.last().unwrap()) > 0.999);

        let down = mean_field_trajectory(0.32, 0.1, 100_000, 1e-4).unwrap();
        assert_eq!(down.limit, MeanFieldLimit::Collapse);
        assert!((implied_success(*down.p.last().unwrap()) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn high_start_is_strictly_increasing() {
        let t = mean_field_trajectory(0.9, 0.1, 100_000, 1e-3).unwrap();
        assert_eq!(t.limit, MeanFieldLimit::Success);
        for w in t.p.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn fixed_point_start_is_rejected() {
        assert!(mean_field_trajectory(1.0 / 3.0, 0.1, 100, 1e-4).is_err());
        assert!(mean_field_trajectory(0.0, 0.1, 100, 1e-4).is_err());
        assert!(mean_field_trajectory(1.0, 0.1, 100, 1e-4).is_err());
    }
}
