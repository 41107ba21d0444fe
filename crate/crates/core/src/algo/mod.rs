//! Trainers and evaluation: the hindsight EM loop, on-policy policy-gradient
//! baselines, DQN with hindsight replay, and the tabular lower-bound check.
//!
//! Collection is the only parallel phase: episodes draw from per-episode RNG
//! streams and are merged in episode order, so results are identical for any
//! worker count. Parameter updates are strictly single-writer.

pub mod dqn;
pub mod hem;
pub mod pg;
pub mod tabular;

pub use dqn::{dqn_her_update, DqnConfig, DqnTrainer, QNetwork};
pub use hem::{hem_iteration, m_step_gradient, m_step_objective, HemConfig, HemTrainer};
pub use pg::{hpg_update, reinforce_update, Baseline, HpgUpdate, PgConfig, PgKind, PgTrainer};
pub use tabular::{lower_bound_from_counts, tabular_lower_bound_check};

use crate::env::{Action, GoalEnv, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{AdamState, VecAdamState};
use crate::policy::{ExploreCfg, Policy, PolicyGrad};
use crate::rng::{self, tag};
use rand_chacha::ChaCha8Rng;

/// One row of training metrics; the CSV schema is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iteration: u64,
    pub env_steps: u64,
    pub success_rate: f64,
    pub m_step_objective: f64,
    pub buffer_size: usize,
    pub wall_clock_s: f64,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str =
        "iteration,env_steps,success_rate,m_step_objective,buffer_size,wall_clock_s";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            self.success_rate,
            self.m_step_objective,
            self.buffer_size,
            self.wall_clock_s
        )
    }
}

/// Something that chooses actions during data collection.
pub trait RolloutActor: Sync {
    fn rollout_action(&self, state: &[f64], goal: &[f64], rng: &mut ChaCha8Rng) -> Result<Action>;
}

/// A policy plus its exploration wrapper.
pub struct PolicyActor<'p> {
    pub policy: &'p Policy,
    pub explore: ExploreCfg,
}

impl RolloutActor for PolicyActor<'_> {
    fn rollout_action(&self, state: &[f64], goal: &[f64], rng: &mut ChaCha8Rng) -> Result<Action> {
        self.policy.act(state, goal, self.explore, rng)
    }
}

/// Something that acts deterministically for evaluation.
pub trait GreedyActor: Sync {
    fn greedy_action(&self, state: &[f64], goal: &[f64]) -> Result<Action>;
}

impl GreedyActor for Policy {
    fn greedy_action(&self, state: &[f64], goal: &[f64]) -> Result<Action> {
        self.greedy(state, goal)
    }
}

/// Roll out one episode, terminating early on success or at the horizon.
pub fn rollout_episode(
    env: &dyn GoalEnv,
    actor: &dyn RolloutActor,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let (mut state, goal) = env.reset(rng);
    let horizon = env.spec().horizon;
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(state.clone());
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut achieved = Vec::with_capacity(horizon);
    let mut success = false;
    for _ in 0..horizon {
        let action = actor.rollout_action(&state, &goal, rng)?;
        let step = env.step(&state, &goal, &action)?;
        actions.push(action);
        rewards.push(step.reward);
        achieved.push(env.achieved_goal(&step.next_state));
        states.push(step.next_state.clone());
        state = step.next_state;
        if step.done {
            success = step.success;
            break;
        }
    }
    Ok(Trajectory {
        goal,
        states,
        actions,
        rewards,
        achieved,
        success,
    })
}

/// Collect `n` episodes. Episode `e` draws from the stream `(seed, path + [e])`,
/// so the result is a pure function of `(seed, path)` no matter how many
/// workers execute it; workers only split the index range.
pub fn collect_trajectories(
    env: &dyn GoalEnv,
    actor: &dyn RolloutActor,
    n: usize,
    seed: u64,
    path: &[u64],
    workers: usize,
) -> Result<Vec<Trajectory>> {
    let episode = |e: usize| -> Result<Trajectory> {
        let mut stream_path = path.to_vec();
        stream_path.push(e as u64);
        let mut episode_rng = rng::stream(seed, &stream_path);
        rollout_episode(env, actor, &mut episode_rng)
    };
    let workers = workers.max(1).min(n.max(1));
    if workers == 1 {
        return (0..n).map(episode).collect();
    }
    let chunk = n.div_ceil(workers);
    let mut out: Vec<Result<Vec<Trajectory>>> = Vec::with_capacity(workers);
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(n);
            let episode = &episode;
            handles.push(scope.spawn(move || (lo..hi).map(episode).collect()));
        }
        for h in handles {
            out.push(h.join().expect("rollout worker panicked"));
        }
    });
    let mut merged = Vec::with_capacity(n);
    for chunk in out {
        merged.extend(chunk?);
    }
    Ok(merged)
}

/// Fraction of greedy episodes that reach the goal, over fresh goals drawn
/// from per-episode streams `(seed, path + [e])`.
pub fn evaluate(
    actor: &dyn GreedyActor,
    env: &dyn GoalEnv,
    episodes: usize,
    seed: u64,
    path: &[u64],
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut wins = 0usize;
    for e in 0..episodes {
        let mut stream_path = path.to_vec();
        stream_path.push(e as u64);
        let mut episode_rng = rng::stream(seed, &stream_path);
        let (mut state, goal) = env.reset(&mut episode_rng);
        for _ in 0..env.spec().horizon {
            let action = actor.greedy_action(&state, &goal)?;
            let step = env.step(&state, &goal, &action)?;
            state = step.next_state;
            if step.done {
                if step.success {
                    wins += 1;
                }
                break;
            }
        }
    }
    Ok(wins as f64 / episodes as f64)
}

/// Adam over whichever parameter blocks a policy has. `ascend` negates the
/// given ascent gradient into the underlying descent update and re-applies
/// the Gaussian log-std clamp.
pub struct PolicyAdam {
    net: Option<AdamState>,
    vec: Option<VecAdamState>,
}

impl PolicyAdam {
    pub fn new(policy: &Policy) -> Self {
        match policy {
            Policy::Categorical(p) => PolicyAdam {
                net: Some(AdamState::new(&p.net)),
                vec: None,
            },
            Policy::Gaussian(p) => PolicyAdam {
                net: Some(AdamState::new(&p.mean_net)),
                vec: Some(VecAdamState::new(p.log_std.len())),
            },
            Policy::Tabular(p) => PolicyAdam {
                net: None,
                vec: Some(VecAdamState::new(p.logits.len())),
            },
        }
    }

    pub fn ascend(&mut self, policy: &mut Policy, grad: &PolicyGrad, lr: f64) -> Result<()> {
        match (policy, grad) {
            (Policy::Categorical(p), PolicyGrad::Net(g)) => {
                let mut descent = g.clone();
                descent.scale(-1.0);
                self.net
                    .as_mut()
                    .expect("optimizer built for this policy")
                    .step(&mut p.net, &descent, lr)
            }
            (Policy::Gaussian(p), PolicyGrad::Gaussian { mean, log_std }) => {
                let mut descent = mean.clone();
                descent.scale(-1.0);
                self.net
                    .as_mut()
                    .expect("optimizer built for this policy")
                    .step(&mut p.mean_net, &descent, lr)?;
                let neg_ls: Vec<f64> = log_std.iter().map(|g| -g).collect();
                self.vec
                    .as_mut()
                    .expect("optimizer built for this policy")
                    .step(&mut p.log_std, &neg_ls, lr)?;
                p.clamp_log_std();
                Ok(())
            }
            (Policy::Tabular(p), PolicyGrad::Table(g)) => {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.vec
                    .as_mut()
                    .expect("optimizer built for this policy")
                    .step(&mut p.logits, &neg, lr)
            }
            _ => Err(Error::Shape("gradient kind does not match policy".into())),
        }
    }
}

/// Zero gradient shaped like the policy's parameters.
pub fn zero_grad(policy: &Policy) -> PolicyGrad {
    match policy {
        Policy::Categorical(p) => PolicyGrad::Net(crate::nn::GradBundle::zeros_like(&p.net)),
        Policy::Gaussian(p) => PolicyGrad::Gaussian {
            mean: crate::nn::GradBundle::zeros_like(&p.mean_net),
            log_std: vec![0.0; p.log_std.len()],
        },
        Policy::Tabular(p) => PolicyGrad::Table(vec![0.0; p.logits.len()]),
    }
}

/// Plain on-policy sampling (no exploration wrapper) for the given policy.
pub fn on_policy_explore(policy: &Policy) -> ExploreCfg {
    match policy {
        Policy::Gaussian(_) => ExploreCfg::GaussianNoise { sigma: 0.0 },
        _ => ExploreCfg::EpsilonUniform { epsilon: 0.0 },
    }
}

/// Shared iteration path tags so trainers never collide on streams.
pub(crate) fn collect_path(iteration: u64) -> [u64; 2] {
    [tag::COLLECT, iteration]
}

pub(crate) fn train_path(iteration: u64) -> [u64; 2] {
    [tag::TRAIN, iteration]
}

pub(crate) fn eval_path(iteration: u64) -> [u64; 2] {
    [tag::EVAL, iteration]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::FlipBit;
    use crate::policy::MlpCategorical;

    fn setup() -> (FlipBit, Policy) {
        let env = FlipBit::new(4).unwrap();
        let policy =
            Policy::Categorical(MlpCategorical::new(4, 4, 4, &[16], 3).unwrap());
        (env, policy)
    }

    #[test]
    fn rollout_respects_horizon_and_termination() {
        let (env, policy) = setup();
        let actor = PolicyActor {
            policy: &policy,
            explore: ExploreCfg::EpsilonUniform { epsilon: 0.5 },
        };
        for e in 0..50 {
            let mut r = rng::stream(e, &[tag::COLLECT, 0, e]);
            let t = rollout_episode(&env, &actor, &mut r).unwrap();
            t.validate().unwrap();
            assert!(t.len() <= env.spec().horizon);
            if t.success {
                assert_eq!(*t.rewards.last().unwrap(), 1.0);
            } else {
                assert_eq!(t.len(), env.spec().horizon);
            }
        }
    }

    #[test]
    fn parallel_collection_matches_sequential() {
        let (env, policy) = setup();
        let actor = PolicyActor {
            policy: &policy,
            explore: ExploreCfg::EpsilonUniform { epsilon: 0.3 },
        };
        let seq = collect_trajectories(&env, &actor, 17, 9, &[tag::COLLECT, 5], 1).unwrap();
        let par = collect_trajectories(&env, &actor, 17, 9, &[tag::COLLECT, 5], 4).unwrap();
        assert_eq!(seq.len(), par.len());
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.goal, b.goal);
            assert_eq!(a.actions, b.actions);
            assert_eq!(a.states, b.states);
        }
    }

    #[test]
    fn rollout_rewards_match_reward_fn_in_every_env() {
        use crate::env::{make_env, ActionKind};
        for (name, k) in [("flipbit", 5), ("nav", 3), ("fourroom", 0)] {
            let env = make_env(name, k).unwrap();
            let spec = env.spec();
            let policy = match spec.action_kind {
                ActionKind::Discrete(n) => Policy::Categorical(
                    MlpCategorical::new(spec.state_dim, spec.goal_dim, n, &[8], 7).unwrap(),
                ),
                ActionKind::Continuous { dim, .. } => Policy::Gaussian(
                    crate::policy::GaussianPolicy::new(spec.state_dim, spec.goal_dim, dim, &[8], 7)
                        .unwrap(),
                ),
            };
            let explore = on_policy_explore(&policy);
            let actor = PolicyActor {
                policy: &policy,
                explore,
            };
            let trajs =
                collect_trajectories(env.as_ref(), &actor, 10, 3, &[tag::COLLECT, 9], 1).unwrap();
            for t in &trajs {
                for step in 0..t.len() {
                    // Emitted reward equals the pure reward function.
                    assert_eq!(
                        t.rewards[step],
                        env.reward_fn(&t.states[step + 1], &t.goal),
                        "{name}"
                    );
                    // Relabeling at the achieving index is rewarding.
                    assert_eq!(env.reward_fn(&t.states[step + 1], &t.achieved[step]), 1.0);
                }
            }
        }
    }

    #[test]
    fn uniform_policy_rarely_solves_flipbit10() {
        // Greedy evaluation of exactly-uniform logits, and stochastic
        // uniform rollouts, both stay under the random-walk success bound.
        let env = FlipBit::new(10).unwrap();
        let mut p = MlpCategorical::new(10, 10, 10, &[4], 0).unwrap();
        p.net.set_layer(0, vec![0.0; 80], vec![0.0; 4]);
        p.net.set_layer(1, vec![0.0; 40], vec![0.0; 10]);
        let policy = Policy::Categorical(p);
        let greedy_rate = evaluate(&policy, &env, 200, 5, &[tag::EVAL, 1]).unwrap();
        assert!(greedy_rate < 0.05, "greedy uniform success {greedy_rate}");
        let actor = PolicyActor {
            policy: &policy,
            explore: ExploreCfg::EpsilonUniform { epsilon: 1.0 },
        };
        let trajs = collect_trajectories(&env, &actor, 2000, 6, &[tag::COLLECT, 2], 2).unwrap();
        let wins = trajs.iter().filter(|t| t.success).count();
        assert!(
            (wins as f64) / 2000.0 < 0.02,
            "random-walk success rate {wins}/2000"
        );
    }

    #[test]
    fn policy_adam_clamps_log_std() {
        let policy = Policy::Gaussian(
            crate::policy::GaussianPolicy::new(2, 2, 2, &[4], 3).unwrap(),
        );
        let mut policy = policy;
        let mut opt = PolicyAdam::new(&policy);
        // Large positive ascent gradient on log_std pushes toward the upper
        // clamp and must never exceed it.
        for _ in 0..2000 {
            let grad = PolicyGrad::Gaussian {
                mean: crate::nn::GradBundle::zeros_like(match &policy {
                    Policy::Gaussian(p) => &p.mean_net,
                    _ => unreachable!(),
                }),
                log_std: vec![100.0, 100.0],
            };
            opt.ascend(&mut policy, &grad, 0.05).unwrap();
        }
        if let Policy::Gaussian(p) = &policy {
            for &ls in &p.log_std {
                assert!(ls <= crate::policy::LOG_STD_MAX + 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_bounds_and_determinism() {
        let (env, policy) = setup();
        let s1 = evaluate(&policy, &env, 50, 4, &[tag::EVAL, 0]).unwrap();
        let s2 = evaluate(&policy, &env, 50, 4, &[tag::EVAL, 0]).unwrap();
        assert_eq!(s1, s2);
        assert!((0.0..=1.0).contains(&s1));
        assert!(evaluate(&policy, &env, 0, 4, &[tag::EVAL, 0]).is_err());
    }
}
