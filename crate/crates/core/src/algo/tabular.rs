//! Closed-form full M-step on the one-step MDP and the support lower bound.
//!
//! With a tabular policy and uniform goals, a full M-step is the maximum
//! likelihood table: `pi(a|g)` is the empirical frequency of `a` among the
//! hindsight-relabeled samples with goal `g`; goals with no samples keep the
//! uniform policy. The exact return then satisfies
//! `J(pi) >= |support| / |goal space|`, and the support can only grow as the
//! buffer grows.

use crate::env::Action;
use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;

/// Full M-step and bound from raw relabeled-sample counts
/// (`counts[goal][action]`). Returns `(exact J, support lower bound)`.
pub fn lower_bound_from_counts(counts: &[Vec<u64>], k: usize) -> Result<(f64, f64)> {
    if counts.len() != k || counts.iter().any(|row| row.len() != k) {
        return Err(Error::Shape(format!("counts must be {k}x{k}")));
    }
    let kf = k as f64;
    let mut support = 0usize;
    // Sum of per-goal success probabilities; divided by k once at the end so
    // full support gives exactly 1.0.
    let mut success_sum = 0.0;
    for g in 0..k {
        let total: u64 = counts[g].iter().sum();
        if total > 0 {
            support += 1;
        }
        // Exact per-goal return by enumerating actions.
        for a in 0..k {
            let pi = if total > 0 {
                counts[g][a] as f64 / total as f64
            } else {
                1.0 / kf
            };
            let reward = if a == g { 1.0 } else { 0.0 };
            success_sum += pi * reward;
        }
    }
    Ok((success_sum / kf, support as f64 / kf))
}

/// Perform the closed-form full M-step over every relabeled sample the
/// buffer can produce (for one-step trajectories that is the pair
/// `(action, achieved goal)` of each episode) and return the exact return of
/// the resulting policy together with the support bound.
pub fn tabular_lower_bound_check(buffer: &ReplayBuffer, k: usize) -> Result<(f64, f64)> {
    if buffer.is_empty() {
        return Err(Error::State("lower-bound check needs a non-empty buffer".into()));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for traj in buffer.trajectories() {
        if traj.len() != 1 {
            return Err(Error::Input("lower-bound check expects one-step trajectories".into()));
        }
        let a = match traj.actions[0] {
            Action::Discrete(a) if a < k => a,
            _ => return Err(Error::Input("bad one-step action".into())),
        };
        let g = traj.achieved[0][0] as usize;
        if g >= k {
            return Err(Error::Input("achieved goal outside the goal space".into()));
        }
        counts[g][a] += 1;
    }
    lower_bound_from_counts(&counts, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GoalEnv, Trajectory};
    use crate::estlab::OneStepMdp;
    use crate::rng;
    use rand::Rng;

    fn one_step_traj(env: &OneStepMdp, goal: usize, action: usize) -> Trajectory {
        let step = env
            .step(&[-1.0], &[goal as f64], &Action::Discrete(action))
            .unwrap();
        Trajectory {
            goal: vec![goal as f64],
            states: vec![vec![-1.0], step.next_state.clone()],
            actions: vec![Action::Discrete(action)],
            rewards: vec![step.reward],
            achieved: vec![env.achieved_goal(&step.next_state)],
            success: step.success,
        }
    }

    #[test]
    fn full_support_is_optimal() {
        let k = 4;
        let env = OneStepMdp::new(k).unwrap();
        let mut buffer = ReplayBuffer::new(1000);
        for a in 0..k {
            buffer.push(one_step_traj(&env, (a + 1) % k, a)).unwrap();
        }
        let (j, bound) = tabular_lower_bound_check(&buffer, k).unwrap();
        assert_eq!(j, 1.0);
        assert_eq!(bound, 1.0);
    }

    #[test]
    fn partial_support_bound_holds() {
        let k = 8;
        let env = OneStepMdp::new(k).unwrap();
        let mut buffer = ReplayBuffer::new(1000);
        for a in 0..3 {
            buffer.push(one_step_traj(&env, 0, a)).unwrap();
        }
        let (j, bound) = tabular_lower_bound_check(&buffer, k).unwrap();
        assert_eq!(bound, 3.0 / 8.0);
        assert!(j >= bound);
        // Covered goals are learned exactly; the rest stay uniform.
        let expect = 3.0 / 8.0 + 5.0 / 64.0;
        assert!((j - expect).abs() < 1e-15);
    }

    #[test]
    fn empty_support_is_uniform_policy() {
        let (j, bound) = lower_bound_from_counts(&vec![vec![0u64; 5]; 5], 5).unwrap();
        assert_eq!(bound, 0.0);
        assert!((j - 0.2).abs() < 1e-15);
    }

    #[test]
    fn empty_buffer_is_state_error() {
        let buffer = ReplayBuffer::new(10);
        assert!(matches!(
            tabular_lower_bound_check(&buffer, 4),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn bound_never_decreases_as_buffer_grows() {
        let k = 6;
        let env = OneStepMdp::new(k).unwrap();
        let mut buffer = ReplayBuffer::new(100_000);
        let mut r = rng::stream(3, &[rng::tag::LAB]);
        let mut prev_bound = 0.0;
        for _ in 0..50 {
            let goal = r.gen_range(0..k);
            let action = r.gen_range(0..k);
            buffer.push(one_step_traj(&env, goal, action)).unwrap();
            let (j, bound) = tabular_lower_bound_check(&buffer, k).unwrap();
            assert!(j >= bound);
            assert!(bound >= prev_bound);
            prev_bound = bound;
        }
    }
}
