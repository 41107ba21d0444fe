//! Goal-conditioned DQN with hindsight experience replay.

use super::{
    collect_path, collect_trajectories, eval_path, evaluate, train_path, GreedyActor, MetricRow,
    RolloutActor,
};
use crate::env::{Action, GoalEnv};
use crate::error::{Error, Result};
use crate::nn::{AdamState, GradBundle, MlpParams};
use crate::replay::{ReplayBuffer, RewardMode};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Q-network with a frozen target copy refreshed on a fixed schedule.
pub struct QNetwork {
    pub net: MlpParams,
    target_net: MlpParams,
    pub gamma: f64,
    pub sync_interval: usize,
    pub reward_mode: RewardMode,
    state_dim: usize,
    goal_dim: usize,
    updates: u64,
}

impl QNetwork {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        goal_dim: usize,
        n_actions: usize,
        hidden: &[usize],
        seed: u64,
        gamma: f64,
        sync_interval: usize,
        reward_mode: RewardMode,
    ) -> Result<Self> {
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(Error::Config(format!("gamma {gamma} must be in (0,1)")));
        }
        if sync_interval == 0 {
            return Err(Error::Config("sync_interval must be positive".into()));
        }
        let mut sizes = vec![state_dim + goal_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        let net = MlpParams::init(&sizes, seed)?;
        Ok(QNetwork {
            target_net: net.clone(),
            net,
            gamma,
            sync_interval,
            reward_mode,
            state_dim,
            goal_dim,
            updates: 0,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn input(&self, state: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim || goal.len() != self.goal_dim {
            return Err(Error::Shape("state/goal dims do not match q-network".into()));
        }
        let mut x = Vec::with_capacity(state.len() + goal.len());
        x.extend_from_slice(state);
        x.extend_from_slice(goal);
        Ok(x)
    }

    pub fn q_values(&self, state: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.input(state, goal)?)?.0)
    }

    pub fn target_max(&self, state: &[f64], goal: &[f64]) -> Result<f64> {
        let (q, _) = self.target_net.forward(&self.input(state, goal)?)?;
        Ok(q.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Epsilon-greedy action over the online network.
    pub fn act(&self, state: &[f64], goal: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<Action> {
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            return Ok(Action::Discrete(rng.gen_range(0..self.n_actions())));
        }
        self.greedy_action(state, goal)
    }

    fn sync_target_if_due(&mut self) {
        if self.updates.is_multiple_of(self.sync_interval as u64) {
            self.target_net = self.net.clone();
        }
    }
}

impl GreedyActor for QNetwork {
    fn greedy_action(&self, state: &[f64], goal: &[f64]) -> Result<Action> {
        let q = self.q_values(state, goal)?;
        let mut best = 0;
        for (i, v) in q.iter().enumerate().skip(1) {
            if *v > q[best] {
                best = i;
            }
        }
        Ok(Action::Discrete(best))
    }
}

struct EpsilonGreedy<'q> {
    q: &'q QNetwork,
    epsilon: f64,
}

impl RolloutActor for EpsilonGreedy<'_> {
    fn rollout_action(&self, state: &[f64], goal: &[f64], rng: &mut ChaCha8Rng) -> Result<Action> {
        self.q.act(state, goal, self.epsilon, rng)
    }
}

/// One Q-learning step on a hindsight-relabeled batch.
///
/// Targets are `r + gamma * (1 - done) * max_a' Q_target(s', a', g)`, clipped
/// to the achievable return range of the reward mode; `done` marks success
/// under the tuple's goal, so time-limit truncation keeps bootstrapping.
/// Returns the mean squared TD error.
#[allow(clippy::too_many_arguments)]
pub fn dqn_her_update(
    q: &mut QNetwork,
    adam: &mut AdamState,
    env: &dyn GoalEnv,
    buffer: &ReplayBuffer,
    batch_size: usize,
    k_her: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batch = buffer.sample_her_transition(env, batch_size, k_her, q.reward_mode, rng)?;
    let (lo, hi) = q.reward_mode.return_range(q.gamma);
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = GradBundle::zeros_like(&q.net);
    for tuple in &batch {
        let a = match tuple.action {
            Action::Discrete(a) => a,
            _ => return Err(Error::Input("dqn requires discrete actions".into())),
        };
        let x = q.input(&tuple.state, &tuple.goal)?;
        let (values, cache) = q.net.forward(&x)?;
        let bootstrap = if tuple.done {
            0.0
        } else {
            q.gamma * q.target_max(&tuple.next_state, &tuple.goal)?
        };
        let target = (tuple.reward + bootstrap).clamp(lo, hi);
        let td = values[a] - target;
        loss += td * td;
        let mut out_grad = vec![0.0; values.len()];
        out_grad[a] = 2.0 * td * inv;
        grads.add_assign(&q.net.backward(&cache, &out_grad)?);
    }
    adam.step(&mut q.net, &grads, lr)?;
    q.updates += 1;
    q.sync_target_if_due();
    Ok(loss * inv)
}

#[derive(Debug, Clone)]
pub struct DqnConfig {
    pub episodes_per_iteration: usize,
    pub updates_per_iteration: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epsilon: f64,
    pub k_her: usize,
    pub gamma: f64,
    pub sync_interval: usize,
    pub reward_mode: RewardMode,
    pub eval_episodes: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            episodes_per_iteration: 16,
            updates_per_iteration: 40,
            batch_size: 64,
            lr: 1e-3,
            epsilon: 0.3,
            k_her: 4,
            gamma: 0.98,
            sync_interval: 200,
            reward_mode: RewardMode::ZeroOne,
            eval_episodes: 100,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_iteration == 0
            || self.updates_per_iteration == 0
            || self.batch_size == 0
            || self.eval_episodes == 0
        {
            return Err(Error::Config("all dqn counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config("epsilon must be in [0,1]".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

pub struct DqnTrainer<'e> {
    env: &'e dyn GoalEnv,
    pub q: QNetwork,
    pub buffer: ReplayBuffer,
    pub cfg: DqnConfig,
    adam: AdamState,
    seed: u64,
    workers: usize,
    iteration: u64,
    env_steps: u64,
}

impl<'e> DqnTrainer<'e> {
    pub fn new(
        env: &'e dyn GoalEnv,
        q: QNetwork,
        cfg: DqnConfig,
        replay_capacity: usize,
        seed: u64,
        workers: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(&q.net);
        Ok(DqnTrainer {
            env,
            q,
            buffer: ReplayBuffer::new(replay_capacity),
            cfg,
            adam,
            seed,
            workers,
            iteration: 0,
            env_steps: 0,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn run_iteration(&mut self) -> Result<MetricRow> {
        let iteration = self.iteration;
        let actor = EpsilonGreedy {
            q: &self.q,
            epsilon: self.cfg.epsilon,
        };
        let trajectories = collect_trajectories(
            self.env,
            &actor,
            self.cfg.episodes_per_iteration,
            self.seed,
            &collect_path(iteration),
            self.workers,
        )?;
        for t in trajectories {
            self.env_steps += t.len() as u64;
            self.buffer.push(t)?;
        }

        let mut train_rng = rng::stream(self.seed, &train_path(iteration));
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for _ in 0..self.cfg.updates_per_iteration {
            if self.buffer.transitions() < self.cfg.batch_size {
                break;
            }
            loss_sum += dqn_her_update(
                &mut self.q,
                &mut self.adam,
                self.env,
                &self.buffer,
                self.cfg.batch_size,
                self.cfg.k_her,
                self.cfg.lr,
                &mut train_rng,
            )?;
            steps += 1;
        }

        let success_rate = evaluate(&self.q, self.env, self.cfg.eval_episodes, self.seed, &eval_path(iteration))?;
        self.iteration += 1;
        Ok(MetricRow {
            iteration,
            env_steps: self.env_steps,
            success_rate,
            // Negated TD loss: the quantity this trainer drives upward.
            m_step_objective: if steps > 0 { -loss_sum / steps as f64 } else { 0.0 },
            buffer_size: self.buffer.transitions(),
            wall_clock_s: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{FlipBit, Trajectory};

    fn successful_traj() -> Trajectory {
        Trajectory {
            goal: vec![1.0, 0.0],
            states: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            actions: vec![Action::Discrete(0)],
            rewards: vec![1.0],
            achieved: vec![vec![1.0, 0.0]],
            success: true,
        }
    }

    fn failed_traj() -> Trajectory {
        Trajectory {
            goal: vec![1.0, 1.0],
            states: vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]],
            actions: vec![Action::Discrete(1), Action::Discrete(1)],
            rewards: vec![0.0, 0.0],
            achieved: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            success: false,
        }
    }

    fn qnet(mode: RewardMode, seed: u64) -> QNetwork {
        QNetwork::new(2, 2, 2, &[8], seed, 0.98, 10, mode).unwrap()
    }

    #[test]
    fn terminal_targets_per_mode() {
        // Terminal (done) tuples bootstrap nothing: the target is exactly the
        // mode's success reward. Verified through the clip range.
        assert_eq!(RewardMode::ZeroOne.map(1.0), 1.0);
        assert_eq!(RewardMode::MinusOneZero.map(1.0), 0.0);
        let (lo, hi) = RewardMode::ZeroOne.return_range(0.98);
        assert_eq!((lo, hi), (0.0, 1.0));
        let (lo, hi) = RewardMode::MinusOneZero.return_range(0.98);
        assert!((lo - (-50.0)).abs() < 1e-9);
        assert_eq!(hi, 0.0);
    }

    #[test]
    fn zero_nets_zero_rewards_zero_loss() {
        // Mode 0/1, all-zero networks, batch without successes: every target
        // and prediction is 0, so the loss is exactly 0.
        let env = FlipBit::new(2).unwrap();
        let mut q = qnet(RewardMode::ZeroOne, 0);
        let zeros = |sizes: &[(usize, usize)], net: &mut MlpParams| {
            for (l, &(n_in, n_out)) in sizes.iter().enumerate() {
                net.set_layer(l, vec![0.0; n_in * n_out], vec![0.0; n_out]);
            }
        };
        zeros(&[(4, 8), (8, 2)], &mut q.net);
        q.target_net = q.net.clone();
        let mut buffer = ReplayBuffer::new(100);
        buffer.push(failed_traj()).unwrap();
        let mut adam = AdamState::new(&q.net);
        let mut r = rng::stream(0, &[1]);
        // k_her = 0 keeps the original (failed) goals.
        let loss = dqn_her_update(&mut q, &mut adam, &env, &buffer, 16, 0, 1e-3, &mut r).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_decreases_on_frozen_batch() {
        let env = FlipBit::new(2).unwrap();
        let mut q = qnet(RewardMode::MinusOneZero, 3);
        q.sync_interval = usize::MAX; // freeze the target for the whole test
        let mut buffer = ReplayBuffer::new(100);
        buffer.push(successful_traj()).unwrap();
        buffer.push(failed_traj()).unwrap();
        let mut adam = AdamState::new(&q.net);
        // Freeze the batch by replaying the same rng stream every update.
        let first = dqn_her_update(&mut q, &mut adam, &env, &buffer, 32, 4, 1e-2, &mut rng::stream(5, &[2])).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = dqn_her_update(&mut q, &mut adam, &env, &buffer, 32, 4, 1e-2, &mut rng::stream(5, &[2])).unwrap();
        }
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn target_sync_schedule() {
        let env = FlipBit::new(2).unwrap();
        let mut q = qnet(RewardMode::ZeroOne, 7);
        q.sync_interval = 3;
        let mut buffer = ReplayBuffer::new(100);
        buffer.push(successful_traj()).unwrap();
        let mut adam = AdamState::new(&q.net);
        let mut r = rng::stream(9, &[3]);
        for step in 1..=7u64 {
            dqn_her_update(&mut q, &mut adam, &env, &buffer, 8, 4, 1e-2, &mut r).unwrap();
            let synced = q.target_net == q.net;
            assert_eq!(synced, step % 3 == 0, "step {step}");
        }
    }

    #[test]
    fn empty_buffer_is_state_error() {
        let env = FlipBit::new(2).unwrap();
        let mut q = qnet(RewardMode::ZeroOne, 1);
        let buffer = ReplayBuffer::new(10);
        let mut adam = AdamState::new(&q.net);
        let mut r = rng::stream(0, &[4]);
        assert!(matches!(
            dqn_her_update(&mut q, &mut adam, &env, &buffer, 8, 4, 1e-3, &mut r),
            Err(Error::State(_))
        ));
    }
}
