//! On-policy policy-gradient baselines: reward-to-go score-function updates
//! and the importance-weighted hindsight variant.

use super::{
    collect_path, collect_trajectories, eval_path, evaluate, on_policy_explore, train_path,
    zero_grad, MetricRow, PolicyActor, PolicyAdam,
};
use crate::env::{GoalEnv, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyGrad};
use crate::rng;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Off,
    /// Subtract the batch-mean episodic return from every reward-to-go
    /// coefficient (the zero-mean score control variate).
    Mean,
}

fn reward_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc += r;
        out[i] = acc;
    }
    out
}

/// Mean reward-to-go score-function gradient over on-policy trajectories.
pub fn reinforce_update(
    policy: &Policy,
    trajectories: &[Trajectory],
    baseline: Baseline,
) -> Result<PolicyGrad> {
    if trajectories.is_empty() {
        return Err(Error::Input("reinforce needs at least one trajectory".into()));
    }
    let b = match baseline {
        Baseline::Off => 0.0,
        Baseline::Mean => {
            trajectories.iter().map(Trajectory::total_return).sum::<f64>()
                / trajectories.len() as f64
        }
    };
    let mut acc = zero_grad(policy);
    for traj in trajectories {
        let gtg = reward_to_go(&traj.rewards);
        let mut per_traj = zero_grad(policy);
        for t in 0..traj.len() {
            let coef = gtg[t] - b;
            if coef == 0.0 {
                continue;
            }
            let mut g = policy.log_prob_grad(&traj.states[t], &traj.goal, &traj.actions[t])?;
            g.scale(coef);
            per_traj.add_assign(&g)?;
        }
        acc.add_assign(&per_traj)?;
    }
    acc.scale(1.0 / trajectories.len() as f64);
    Ok(acc)
}

/// Default clip for the per-decision importance weights.
pub const HPG_RATIO_CLIP: f64 = 10.0;

#[derive(Debug)]
pub struct HpgUpdate {
    pub grad: PolicyGrad,
    /// Trajectories dropped because an importance denominator underflowed to zero.
    pub skipped: usize,
}

/// Per-decision importance-weighted policy gradient over relabeled goals.
///
/// For each `(trajectory, g')` pair, step `t`'s score is weighted by the
/// running product of ratios `pi(a|s,g') / pi(a|s,g)` over steps up to `t`
/// (clipped into `[0, clip]`) times the reward-to-go under `g'`. The episode
/// is truncated at the first success under `g'`, where it would have ended.
pub fn hpg_update(
    policy: &Policy,
    env: &dyn GoalEnv,
    batch: &[(Trajectory, Vec<f64>)],
    clip: f64,
) -> Result<HpgUpdate> {
    if batch.is_empty() {
        return Err(Error::Input("hpg needs at least one trajectory".into()));
    }
    let mut acc = zero_grad(policy);
    let mut skipped = 0usize;
    'trajectories: for (traj, relabeled) in batch {
        let l = traj.len();
        let mut rewards: Vec<f64> = (0..l)
            .map(|t| env.reward_fn(&traj.states[t + 1], relabeled))
            .collect();
        let last = rewards.iter().position(|&r| r == 1.0).unwrap_or(l - 1);
        for r in rewards.iter_mut().skip(last + 1) {
            *r = 0.0;
        }
        let gtg = reward_to_go(&rewards);

        let mut per_traj = zero_grad(policy);
        let mut weight = 1.0;
        for t in 0..=last {
            let lp_rel = policy.log_prob(&traj.states[t], relabeled, &traj.actions[t])?;
            let lp_orig = policy.log_prob(&traj.states[t], &traj.goal, &traj.actions[t])?;
            if lp_orig.exp() == 0.0 {
                skipped += 1;
                continue 'trajectories;
            }
            weight = (weight * (lp_rel - lp_orig).exp()).clamp(0.0, clip);
            let coef = weight * gtg[t];
            if coef == 0.0 {
                continue;
            }
            let mut g = policy.log_prob_grad(&traj.states[t], relabeled, &traj.actions[t])?;
            g.scale(coef);
            per_traj.add_assign(&g)?;
        }
        acc.add_assign(&per_traj)?;
    }
    acc.scale(1.0 / batch.len() as f64);
    Ok(HpgUpdate { grad: acc, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgKind {
    Reinforce(Baseline),
    Hpg,
}

#[derive(Debug, Clone)]
pub struct PgConfig {
    pub n_trajectories: usize,
    pub lr: f64,
    pub eval_episodes: usize,
    pub kind: PgKind,
}

impl Default for PgConfig {
    fn default() -> Self {
        PgConfig {
            n_trajectories: 64,
            lr: 1e-3,
            eval_episodes: 100,
            kind: PgKind::Hpg,
        }
    }
}

impl PgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("all pg counts must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// On-policy trainer: fresh trajectories each iteration, one ascent step.
/// The metric row reports the batch mean return in the objective column and
/// no buffer (these baselines are bufferless by construction).
pub struct PgTrainer<'e> {
    env: &'e dyn GoalEnv,
    pub policy: Policy,
    pub cfg: PgConfig,
    opt: PolicyAdam,
    seed: u64,
    workers: usize,
    iteration: u64,
    env_steps: u64,
    pub skipped_total: u64,
}

impl<'e> PgTrainer<'e> {
    pub fn new(
        env: &'e dyn GoalEnv,
        policy: Policy,
        cfg: PgConfig,
        seed: u64,
        workers: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let opt = PolicyAdam::new(&policy);
        Ok(PgTrainer {
            env,
            policy,
            cfg,
            opt,
            seed,
            workers,
            iteration: 0,
            env_steps: 0,
            skipped_total: 0,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn run_iteration(&mut self) -> Result<MetricRow> {
        let iteration = self.iteration;
        let actor = PolicyActor {
            policy: &self.policy,
            explore: on_policy_explore(&self.policy),
        };
        let trajectories = collect_trajectories(
            self.env,
            &actor,
            self.cfg.n_trajectories,
            self.seed,
            &collect_path(iteration),
            self.workers,
        )?;
        for t in &trajectories {
            self.env_steps += t.len() as u64;
        }
        let mean_return = trajectories.iter().map(Trajectory::total_return).sum::<f64>()
            / trajectories.len() as f64;

        let grad = match self.cfg.kind {
            PgKind::Reinforce(baseline) => reinforce_update(&self.policy, &trajectories, baseline)?,
            PgKind::Hpg => {
                // Future-strategy relabel: one goal per trajectory.
                let mut relabel_rng = rng::stream(self.seed, &train_path(iteration));
                let batch: Vec<(Trajectory, Vec<f64>)> = trajectories
                    .into_iter()
                    .map(|t| {
                        let idx = relabel_rng.gen_range(0..t.len());
                        let goal = t.achieved[idx].clone();
                        (t, goal)
                    })
                    .collect();
                let update = hpg_update(&self.policy, self.env, &batch, HPG_RATIO_CLIP)?;
                self.skipped_total += update.skipped as u64;
                update.grad
            }
        };
        self.opt.ascend(&mut self.policy, &grad, self.cfg.lr)?;

        let success_rate = evaluate(
            &self.policy,
            self.env,
            self.cfg.eval_episodes,
            self.seed,
            &eval_path(iteration),
        )?;
        self.iteration += 1;
        Ok(MetricRow {
            iteration,
            env_steps: self.env_steps,
            success_rate,
            m_step_objective: mean_return,
            buffer_size: 0,
            wall_clock_s: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, FlipBit};
    use crate::estlab;
    use crate::policy::{MlpCategorical, TabularCategorical};

    fn one_step_traj(k: usize, goal: usize, action: usize) -> Trajectory {
        let reward = if action == goal { 1.0 } else { 0.0 };
        let _ = k;
        Trajectory {
            goal: vec![goal as f64],
            states: vec![vec![-1.0], vec![action as f64]],
            actions: vec![Action::Discrete(action)],
            rewards: vec![reward],
            achieved: vec![vec![action as f64]],
            success: reward == 1.0,
        }
    }

    #[test]
    fn zero_returns_give_zero_gradient() {
        let k = 3;
        let policy = Policy::Tabular(TabularCategorical::uniform(k, k));
        let trajs = vec![one_step_traj(k, 0, 1), one_step_traj(k, 2, 0)];
        let grad = reinforce_update(&policy, &trajs, Baseline::Off).unwrap();
        if let PolicyGrad::Table(t) = grad {
            assert!(t.iter().all(|&x| x == 0.0));
        } else {
            panic!("expected table grad");
        }
    }

    #[test]
    fn single_sample_matches_closed_form() {
        // eta_{a,g} = I[b=g'] I[g=g'] (I[a=b] - pi(a|s,g)) for one sample (b, g').
        let k = 4;
        let policy = Policy::Tabular(TabularCategorical::uniform(k, k));
        let (b, gp) = (2usize, 2usize); // rewarding sample
        let grad = reinforce_update(&policy, &[one_step_traj(k, gp, b)], Baseline::Off).unwrap();
        if let PolicyGrad::Table(t) = grad {
            for a in 0..k {
                for g in 0..k {
                    let expect = if g == gp {
                        (if a == b { 1.0 } else { 0.0 }) - 1.0 / k as f64
                    } else {
                        0.0
                    };
                    assert!((t[a * k + g] - expect).abs() < 1e-15, "a={a} g={g}");
                }
            }
        } else {
            panic!("expected table grad");
        }
    }

    #[test]
    fn enumerated_mean_is_unbiased() {
        // Average the update over all k^2 equiprobable one-step outcomes at
        // uniform init; compare against the exact gradient of J.
        let k = 5;
        let policy = Policy::Tabular(TabularCategorical::uniform(k, k));
        let mut mean = vec![0.0; k * k];
        for gp in 0..k {
            for b in 0..k {
                let grad =
                    reinforce_update(&policy, &[one_step_traj(k, gp, b)], Baseline::Off).unwrap();
                if let PolicyGrad::Table(t) = grad {
                    for (m, v) in mean.iter_mut().zip(&t) {
                        *m += v / (k * k) as f64;
                    }
                }
            }
        }
        for a in 0..k {
            for g in 0..k {
                let expect = estlab::on_policy_mean(k, a == g);
                assert!(
                    (mean[a * k + g] - expect).abs() < 1e-12,
                    "a={a} g={g}: {} vs {expect}",
                    mean[a * k + g]
                );
            }
        }
    }

    #[test]
    fn mean_baseline_centers_equal_returns() {
        // Every trajectory in the batch has the same return, so the batch
        // mean cancels every coefficient exactly.
        let k = 3;
        let policy = Policy::Tabular(TabularCategorical::uniform(k, k));
        let trajs: Vec<Trajectory> = (0..k).map(|b| one_step_traj(k, b, b)).collect();
        let grad = reinforce_update(&policy, &trajs, Baseline::Mean).unwrap();
        if let PolicyGrad::Table(t) = grad {
            assert!(t.iter().all(|&x| x == 0.0));
        } else {
            panic!("expected table grad");
        }
    }

    #[test]
    fn mean_baseline_is_zero_mean_shift_over_full_enumeration() {
        // Over the complete outcome batch the summed score is zero, so the
        // mean-baseline update matches the plain one.
        let k = 3;
        let policy = Policy::Tabular(TabularCategorical::uniform(k, k));
        let mut batch = Vec::new();
        for gp in 0..k {
            for b in 0..k {
                batch.push(one_step_traj(k, gp, b));
            }
        }
        let off = reinforce_update(&policy, &batch, Baseline::Off).unwrap();
        let mean = reinforce_update(&policy, &batch, Baseline::Mean).unwrap();
        if let (PolicyGrad::Table(a), PolicyGrad::Table(b)) = (off, mean) {
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        } else {
            panic!("expected table grads");
        }
    }

    #[test]
    fn hpg_without_relabel_equals_reinforce_bitwise() {
        let env = FlipBit::new(4).unwrap();
        let policy = Policy::Categorical(MlpCategorical::new(4, 4, 4, &[8], 5).unwrap());
        let actor = PolicyActor {
            policy: &policy,
            explore: on_policy_explore(&policy),
        };
        let trajs = collect_trajectories(&env, &actor, 6, 3, &[0, 0], 1).unwrap();
        let batch: Vec<(Trajectory, Vec<f64>)> =
            trajs.iter().map(|t| (t.clone(), t.goal.clone())).collect();
        let r = reinforce_update(&policy, &trajs, Baseline::Off).unwrap();
        let h = hpg_update(&policy, &env, &batch, HPG_RATIO_CLIP).unwrap();
        assert_eq!(h.skipped, 0);
        match (r, h.grad) {
            (PolicyGrad::Net(a), PolicyGrad::Net(b)) => {
                for (wa, wb) in a.weights.iter().zip(&b.weights) {
                    assert_eq!(wa, wb);
                }
                for (ba, bb) in a.biases.iter().zip(&b.biases) {
                    assert_eq!(ba, bb);
                }
            }
            _ => panic!("expected net grads"),
        }
    }

    #[test]
    fn hpg_goal_independent_policy_has_unit_ratios() {
        // A policy that ignores its goal input: ratios are exactly 1, so the
        // relabeled update equals the same update computed with weight 1.
        let mut p = MlpCategorical::new(4, 4, 4, &[], 7).unwrap();
        // Zero out goal columns of the single layer (input = state ++ goal).
        let mut w = p.net.layer_weights(0).to_vec();
        for o in 0..4 {
            for i in 4..8 {
                w[o * 8 + i] = 0.0;
            }
        }
        let weights_biases = vec![0.0; 4];
        p.net.set_layer(0, w, weights_biases);
        let policy = Policy::Categorical(p);
        let env = FlipBit::new(4).unwrap();
        let actor = PolicyActor {
            policy: &policy,
            explore: on_policy_explore(&policy),
        };
        let trajs = collect_trajectories(&env, &actor, 4, 9, &[0, 1], 1).unwrap();
        for t in &trajs {
            let g_rel = t.achieved[t.len() - 1].clone();
            for step in 0..t.len() {
                let lp_rel = policy.log_prob(&t.states[step], &g_rel, &t.actions[step]).unwrap();
                let lp_orig = policy.log_prob(&t.states[step], &t.goal, &t.actions[step]).unwrap();
                assert_eq!(lp_rel, lp_orig);
            }
        }
    }

    #[test]
    fn hpg_one_step_matches_enumeration_oracle() {
        // At uniform init, the hindsight-relabeled one-step update for the
        // outcome b is (up to the 1/k normalization the estimator lab
        // applies) I[g=b](I[a=b] - 1/k).
        let k = 4;
        let policy = Policy::Tabular(TabularCategorical::uniform(k, k));
        let env = estlab::OneStepMdp::new(k).unwrap();
        for b in 0..k {
            let traj = one_step_traj(k, (b + 1) % k, b); // original goal missed
            let relabeled = vec![b as f64];
            let update = hpg_update(&policy, &env, &[(traj, relabeled)], HPG_RATIO_CLIP).unwrap();
            assert_eq!(update.skipped, 0);
            if let PolicyGrad::Table(t) = update.grad {
                for a in 0..k {
                    for g in 0..k {
                        let expect = (if g == b { 1.0 } else { 0.0 })
                            * ((if a == b { 1.0 } else { 0.0 }) - 1.0 / k as f64);
                        assert!((t[a * k + g] - expect).abs() < 1e-12);
                    }
                }
            } else {
                panic!("expected table grad");
            }
        }
    }
}
