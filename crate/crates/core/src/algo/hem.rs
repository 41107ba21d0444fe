//! The hindsight EM trainer.
//!
//! Each iteration alternates three phases: collect exploratory trajectories
//! and push them into the replay buffer; repeat a partial E-step (sample a
//! hindsight-relabeled batch) and a partial M-step (one Adam ascent step on
//! the batch log-likelihood); then evaluate greedily on fresh goals.

use super::{
    collect_path, collect_trajectories, eval_path, evaluate, train_path, zero_grad, MetricRow,
    PolicyActor, PolicyAdam,
};
use crate::env::GoalEnv;
use crate::error::{Error, Result};
use crate::policy::{ExploreCfg, Policy, PolicyGrad};
use crate::replay::{HindsightSample, ReplayBuffer};
use crate::rng;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct HemConfig {
    /// Trajectories collected per iteration (N).
    pub n_trajectories: usize,
    /// Partial M-step gradient ascents per iteration.
    pub gradient_steps: usize,
    /// Relabeled samples per gradient step (B).
    pub batch_size: usize,
    pub lr: f64,
    pub explore: ExploreCfg,
    pub eval_episodes: usize,
    /// Fraction of each M-step batch drawn from successful episodes with
    /// their original goals instead of relabeled ones. Off by default: the
    /// relabeled distribution already contains every rewarding pair.
    pub mix_original: f64,
}

impl Default for HemConfig {
    fn default() -> Self {
        HemConfig {
            n_trajectories: 64,
            gradient_steps: 40,
            batch_size: 64,
            lr: 1e-3,
            explore: ExploreCfg::EpsilonUniform { epsilon: 0.3 },
            eval_episodes: 100,
            mix_original: 0.0,
        }
    }
}

impl HemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0
            || self.gradient_steps == 0
            || self.batch_size == 0
            || self.eval_episodes == 0
        {
            return Err(Error::Config("all hem counts must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_original) {
            return Err(Error::Config("mix_original must be in [0,1]".into()));
        }
        self.explore.validate()
    }
}

/// Mean log-likelihood of the batch actions under their relabeled goals:
/// the policy-dependent part of the lower bound being maximized.
pub fn m_step_objective(policy: &Policy, batch: &[HindsightSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("m-step batch is empty".into()));
    }
    let mut sum = 0.0;
    for s in batch {
        sum += s.weight * policy.log_prob(&s.state, &s.relabeled_goal, &s.action)?;
    }
    Ok(sum / batch.len() as f64)
}

/// Batch objective together with its mean ascent gradient.
pub fn m_step_gradient(policy: &Policy, batch: &[HindsightSample]) -> Result<(f64, PolicyGrad)> {
    if batch.is_empty() {
        return Err(Error::Input("m-step batch is empty".into()));
    }
    let mut obj = 0.0;
    let mut acc = zero_grad(policy);
    for s in batch {
        obj += s.weight * policy.log_prob(&s.state, &s.relabeled_goal, &s.action)?;
        let mut g = policy.log_prob_grad(&s.state, &s.relabeled_goal, &s.action)?;
        if s.weight != 1.0 {
            g.scale(s.weight);
        }
        acc.add_assign(&g)?;
    }
    let inv = 1.0 / batch.len() as f64;
    acc.scale(inv);
    Ok((obj * inv, acc))
}

pub struct HemTrainer<'e> {
    env: &'e dyn GoalEnv,
    pub policy: Policy,
    pub buffer: ReplayBuffer,
    pub cfg: HemConfig,
    opt: PolicyAdam,
    seed: u64,
    workers: usize,
    iteration: u64,
    env_steps: u64,
}

impl<'e> HemTrainer<'e> {
    pub fn new(
        env: &'e dyn GoalEnv,
        policy: Policy,
        cfg: HemConfig,
        replay_capacity: usize,
        seed: u64,
        workers: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let opt = PolicyAdam::new(&policy);
        Ok(HemTrainer {
            env,
            policy,
            buffer: ReplayBuffer::new(replay_capacity),
            cfg,
            opt,
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
        let row = hem_iteration(
            self.env,
            &mut self.policy,
            &mut self.buffer,
            &mut self.opt,
            &self.cfg,
            self.seed,
            self.workers,
            self.iteration,
            &mut self.env_steps,
        )?;
        self.iteration += 1;
        Ok(row)
    }
}

/// One EM iteration: collect, train on relabeled batches, evaluate.
///
/// The gradient phase waits until the buffer holds at least one full batch
/// of transitions; with default sizes that is always true after the first
/// collection phase.
#[allow(clippy::too_many_arguments)]
pub fn hem_iteration(
    env: &dyn GoalEnv,
    policy: &mut Policy,
    buffer: &mut ReplayBuffer,
    opt: &mut PolicyAdam,
    cfg: &HemConfig,
    seed: u64,
    workers: usize,
    iteration: u64,
    env_steps: &mut u64,
) -> Result<MetricRow> {
    let actor = PolicyActor {
        policy,
        explore: cfg.explore,
    };
    let trajectories = collect_trajectories(
        env,
        &actor,
        cfg.n_trajectories,
        seed,
        &collect_path(iteration),
        workers,
    )?;
    for t in trajectories {
        *env_steps += t.len() as u64;
        buffer.push(t)?;
    }

    let mut train_rng = rng::stream(seed, &train_path(iteration));
    let mut objective_sum = 0.0;
    let mut steps_taken = 0usize;
    for _ in 0..cfg.gradient_steps {
        if buffer.transitions() < cfg.batch_size {
            break;
        }
        let mut batch = buffer.sample_hindsight(cfg.batch_size, &mut train_rng)?;
        if cfg.mix_original > 0.0 {
            for sample in batch.iter_mut() {
                if train_rng.gen::<f64>() < cfg.mix_original {
                    if let Some(original) = buffer.sample_original_success(&mut train_rng)? {
                        *sample = original;
                    }
                }
            }
        }
        let (objective, grad) = m_step_gradient(policy, &batch)?;
        opt.ascend(policy, &grad, cfg.lr)?;
        objective_sum += objective;
        steps_taken += 1;
    }

    let success_rate = evaluate(policy, env, cfg.eval_episodes, seed, &eval_path(iteration))?;
    Ok(MetricRow {
        iteration,
        env_steps: *env_steps,
        success_rate,
        m_step_objective: if steps_taken > 0 {
            objective_sum / steps_taken as f64
        } else {
            0.0
        },
        buffer_size: buffer.transitions(),
        wall_clock_s: 0.0,
    })
}
