//! Trajectory replay buffer with future-strategy hindsight relabeling.
//!
//! Sampling follows the future strategy: pick a stored trajectory uniformly,
//! a step `t` uniformly, then a later step `t' >= t` uniformly, and relabel
//! with the goal achieved at `t' + 1`. Relabeled at the achieving index
//! (`t' = t`) the sample is rewarding by construction.

use crate::env::{Action, GoalEnv, Trajectory};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

pub const DEFAULT_CAPACITY: usize = 1_000_000;

/// Reward convention for TD learning: binary success, or the shifted
/// `r - 1` form that rewards `-1` on failure and `0` on success.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    ZeroOne,
    MinusOneZero,
}

impl RewardMode {
    pub fn map(&self, r01: f64) -> f64 {
        match self {
            RewardMode::ZeroOne => r01,
            RewardMode::MinusOneZero => r01 - 1.0,
        }
    }

    /// Range of achievable returns under this mode, used to clip TD targets.
    pub fn return_range(&self, gamma: f64) -> (f64, f64) {
        match self {
            RewardMode::ZeroOne => (0.0, 1.0),
            RewardMode::MinusOneZero => (-1.0 / (1.0 - gamma), 0.0),
        }
    }
}

/// One relabeled supervised sample `(s_t, a_t, g')` for the M-step.
#[derive(Debug, Clone)]
pub struct HindsightSample {
    pub state: Vec<f64>,
    pub action: Action,
    pub relabeled_goal: Vec<f64>,
    pub weight: f64,
}

/// One TD tuple for Q-learning, possibly goal-relabeled.
#[derive(Debug, Clone)]
pub struct TdTuple {
    pub state: Vec<f64>,
    pub action: Action,
    pub next_state: Vec<f64>,
    pub goal: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Bounded FIFO store of trajectories; capacity counts transitions.
#[derive(Debug)]
pub struct ReplayBuffer {
    trajectories: VecDeque<Trajectory>,
    capacity: usize,
    stored_transitions: usize,
    total_pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            trajectories: VecDeque::new(),
            capacity,
            stored_transitions: 0,
            total_pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.stored_transitions
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter()
    }

    /// Append a trajectory, evicting oldest-first once the transition
    /// capacity is exceeded.
    pub fn push(&mut self, trajectory: Trajectory) -> Result<()> {
        trajectory.validate()?;
        if trajectory.len() > self.capacity {
            return Err(Error::Input(format!(
                "trajectory of {} transitions exceeds buffer capacity {}",
                trajectory.len(),
                self.capacity
            )));
        }
        self.stored_transitions += trajectory.len();
        self.trajectories.push_back(trajectory);
        self.total_pushed += 1;
        while self.stored_transitions > self.capacity {
            let evicted = self.trajectories.pop_front().expect("non-empty by invariant");
            self.stored_transitions -= evicted.len();
        }
        Ok(())
    }

    /// Future-strategy hindsight samples for the M-step. Each sample is drawn
    /// independently: trajectory uniform, `t` uniform, `t'` uniform in
    /// `[t, L-1]`, relabeled goal = achieved goal at `t' + 1`.
    pub fn sample_hindsight(
        &self,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<HindsightSample>> {
        if self.trajectories.is_empty() {
            return Err(Error::State("cannot sample from an empty buffer".into()));
        }
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let traj = &self.trajectories[rng.gen_range(0..self.trajectories.len())];
            let l = traj.len();
            let t = rng.gen_range(0..l);
            let t_future = rng.gen_range(t..l);
            batch.push(HindsightSample {
                state: traj.states[t].clone(),
                action: traj.actions[t].clone(),
                relabeled_goal: traj.achieved[t_future].clone(),
                weight: 1.0,
            });
        }
        Ok(batch)
    }

    /// A transition from a successful episode paired with its original goal,
    /// or `None` if no stored trajectory succeeded. Used by the optional
    /// original-goal mixing of the M-step; rewarding either way, since
    /// success means the original goal was reached.
    pub fn sample_original_success(&self, rng: &mut ChaCha8Rng) -> Result<Option<HindsightSample>> {
        if self.trajectories.is_empty() {
            return Err(Error::State("cannot sample from an empty buffer".into()));
        }
        // Bounded rejection keeps sampling O(1); a miss falls back to the
        // hindsight path at the call site.
        for _ in 0..32 {
            let traj = &self.trajectories[rng.gen_range(0..self.trajectories.len())];
            if !traj.success {
                continue;
            }
            let t = rng.gen_range(0..traj.len());
            return Ok(Some(HindsightSample {
                state: traj.states[t].clone(),
                action: traj.actions[t].clone(),
                relabeled_goal: traj.goal.clone(),
                weight: 1.0,
            }));
        }
        Ok(None)
    }

    /// TD tuples for DQN+HER: with probability `k_her / (k_her + 1)` the goal
    /// is future-relabeled and the reward recomputed; otherwise the original
    /// goal and reward are kept. `done` marks success under the tuple's goal
    /// (time-limit truncation does not stop bootstrapping).
    pub fn sample_her_transition(
        &self,
        env: &dyn GoalEnv,
        batch_size: usize,
        k_her: usize,
        mode: RewardMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<TdTuple>> {
        if self.trajectories.is_empty() {
            return Err(Error::State("cannot sample from an empty buffer".into()));
        }
        let relabel_prob = k_her as f64 / (k_her as f64 + 1.0);
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let traj = &self.trajectories[rng.gen_range(0..self.trajectories.len())];
            let l = traj.len();
            let t = rng.gen_range(0..l);
            let relabel = k_her > 0 && rng.gen::<f64>() < relabel_prob;
            let (goal, r01) = if relabel {
                let t_future = rng.gen_range(t..l);
                let goal = traj.achieved[t_future].clone();
                let r01 = env.reward_fn(&traj.states[t + 1], &goal);
                (goal, r01)
            } else {
                (traj.goal.clone(), traj.rewards[t])
            };
            batch.push(TdTuple {
                state: traj.states[t].clone(),
                action: traj.actions[t].clone(),
                next_state: traj.states[t + 1].clone(),
                goal,
                reward: mode.map(r01),
                done: r01 == 1.0,
            });
        }
        Ok(batch)
    }
}
