//! Goal-conditioned stochastic policies and their log-probability gradients.
//!
//! Three parameterizations share one interface: an MLP categorical (logits
//! from `net(concat(s,g))`), a tabular categorical (logit table indexed by
//! `(action, goal)` for the one-step analysis MDP), and a diagonal Gaussian
//! (MLP mean plus one global per-dimension log-std).

use crate::env::Action;
use crate::error::{Error, Result};
use crate::nn::{GradBundle, MlpParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const LOG_STD_MIN: f64 = -6.907755278982137; // ln(1e-3)
pub const LOG_STD_MAX: f64 = 0.0; // ln(1)
pub const LN_2PI: f64 = 1.8378770664093453;

/// Exploration wrapper applied while collecting trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExploreCfg {
    /// Argmax / mean action; deterministic, used for evaluation.
    Greedy,
    /// Sample from the policy, then replace with a uniform action with
    /// probability `epsilon`. `epsilon = 0` is plain on-policy sampling.
    EpsilonUniform { epsilon: f64 },
    /// Sample from the policy, then add `N(0, sigma^2)` noise per dimension.
    /// `sigma = 0` is plain on-policy sampling.
    GaussianNoise { sigma: f64 },
}

impl ExploreCfg {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ExploreCfg::Greedy => Ok(()),
            ExploreCfg::EpsilonUniform { epsilon } => {
                if (0.0..=1.0).contains(&epsilon) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("epsilon {epsilon} not in [0,1]")))
                }
            }
            ExploreCfg::GaussianNoise { sigma } => {
                if sigma >= 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("sigma {sigma} must be >= 0")))
                }
            }
        }
    }
}

/// Gradient of a log-probability with respect to policy parameters.
#[derive(Debug, Clone)]
pub enum PolicyGrad {
    Net(GradBundle),
    /// Row-major `(n_actions, n_goals)` table gradient.
    Table(Vec<f64>),
    Gaussian { mean: GradBundle, log_std: Vec<f64> },
}

impl PolicyGrad {
    pub fn scale(&mut self, factor: f64) {
        match self {
            PolicyGrad::Net(g) => g.scale(factor),
            PolicyGrad::Table(t) => t.iter_mut().for_each(|x| *x *= factor),
            PolicyGrad::Gaussian { mean, log_std } => {
                mean.scale(factor);
                log_std.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    pub fn add_assign(&mut self, other: &PolicyGrad) -> Result<()> {
        match (self, other) {
            (PolicyGrad::Net(a), PolicyGrad::Net(b)) => {
                a.add_assign(b);
                Ok(())
            }
            (PolicyGrad::Table(a), PolicyGrad::Table(b)) if a.len() == b.len() => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(())
            }
            (
                PolicyGrad::Gaussian { mean: am, log_std: als },
                PolicyGrad::Gaussian { mean: bm, log_std: bls },
            ) if als.len() == bls.len() => {
                am.add_assign(bm);
                als.iter_mut().zip(bls).for_each(|(x, y)| *x += y);
                Ok(())
            }
            _ => Err(Error::Shape("incompatible policy gradients".into())),
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|l| l.exp()).collect()
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(values: &[f64]) -> usize {
    // Ties break to the lowest index.
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn concat(state: &[f64], goal: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + goal.len());
    x.extend_from_slice(state);
    x.extend_from_slice(goal);
    x
}

// ---------------------------------------------------------------------------
// Categorical (MLP logits)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MlpCategorical {
    pub net: MlpParams,
    state_dim: usize,
    goal_dim: usize,
}

impl MlpCategorical {
    pub fn new(state_dim: usize, goal_dim: usize, n_actions: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![state_dim + goal_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        Ok(MlpCategorical {
            net: MlpParams::init(&sizes, seed)?,
            state_dim,
            goal_dim,
        })
    }

    pub fn from_net(net: MlpParams, state_dim: usize, goal_dim: usize) -> Result<Self> {
        if net.input_dim() != state_dim + goal_dim {
            return Err(Error::Shape("net input dim != state_dim + goal_dim".into()));
        }
        Ok(MlpCategorical { net, state_dim, goal_dim })
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn logits(&self, state: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(state, goal)?;
        Ok(self.net.forward(&concat(state, goal))?.0)
    }

    pub fn probs(&self, state: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(state, goal)?))
    }

    fn check_dims(&self, state: &[f64], goal: &[f64]) -> Result<()> {
        if state.len() != self.state_dim || goal.len() != self.goal_dim {
            return Err(Error::Shape(format!(
                "state/goal dims ({}, {}) != ({}, {})",
                state.len(),
                goal.len(),
                self.state_dim,
                self.goal_dim
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Categorical (tabular logits for the one-step MDP)
// ---------------------------------------------------------------------------

/// Logit table `L[(a, g)]` over a finite action and goal set; the single-state
/// policy of the one-step analysis MDP. The goal vector is `[g_index]`.
#[derive(Debug, Clone)]
pub struct TabularCategorical {
    n_actions: usize,
    n_goals: usize,
    /// Row-major `(n_actions, n_goals)`.
    pub logits: Vec<f64>,
}

impl TabularCategorical {
    /// All-equal logits: the uniform random initialization of the analysis setup.
    pub fn uniform(n_actions: usize, n_goals: usize) -> Self {
        TabularCategorical {
            n_actions,
            n_goals,
            logits: vec![0.0; n_actions * n_goals],
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_goals(&self) -> usize {
        self.n_goals
    }

    fn goal_index(&self, goal: &[f64]) -> Result<usize> {
        if goal.len() != 1 {
            return Err(Error::Shape("tabular policy expects a 1-dim goal index".into()));
        }
        let g = goal[0] as usize;
        if g >= self.n_goals {
            return Err(Error::Input(format!("goal index {g} out of range")));
        }
        Ok(g)
    }

    pub fn column_logits(&self, g: usize) -> Vec<f64> {
        (0..self.n_actions)
            .map(|a| self.logits[a * self.n_goals + g])
            .collect()
    }

    pub fn probs_for_goal(&self, g: usize) -> Vec<f64> {
        softmax(&self.column_logits(g))
    }
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub mean_net: MlpParams,
    /// Global per-dimension log standard deviation, clamped to
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Vec<f64>,
    state_dim: usize,
    goal_dim: usize,
}

impl GaussianPolicy {
    pub fn new(state_dim: usize, goal_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![state_dim + goal_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Ok(GaussianPolicy {
            mean_net: MlpParams::init(&sizes, seed)?,
            log_std: vec![0.2f64.ln(); action_dim],
            state_dim,
            goal_dim,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn mean(&self, state: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(state, goal)?;
        Ok(self.mean_net.forward(&concat(state, goal))?.0)
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    fn check_dims(&self, state: &[f64], goal: &[f64]) -> Result<()> {
        if state.len() != self.state_dim || goal.len() != self.goal_dim {
            return Err(Error::Shape("state/goal dims do not match policy".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Unified policy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Policy {
    Categorical(MlpCategorical),
    Tabular(TabularCategorical),
    Gaussian(GaussianPolicy),
}

impl Policy {
    /// Sample an action under the exploration wrapper.
    ///
    /// Discrete: sample from the softmax, then with probability epsilon
    /// replace with a uniform action (greedy: argmax, ties to lowest index).
    /// Continuous: sample `N(mu, sigma^2)`, then add `N(0, sigma_a^2)` noise
    /// (greedy: the mean). The returned continuous action is pre-clipping;
    /// the environment applies its own box clip.
    pub fn act(
        &self,
        state: &[f64],
        goal: &[f64],
        explore: ExploreCfg,
        rng: &mut ChaCha8Rng,
    ) -> Result<Action> {
        match self {
            Policy::Categorical(p) => {
                let logits = p.logits(state, goal)?;
                Ok(Action::Discrete(discrete_act(&logits, explore, rng)?))
            }
            Policy::Tabular(p) => {
                let g = p.goal_index(goal)?;
                let logits = p.column_logits(g);
                Ok(Action::Discrete(discrete_act(&logits, explore, rng)?))
            }
            Policy::Gaussian(p) => {
                let mu = p.mean(state, goal)?;
                match explore {
                    ExploreCfg::Greedy => Ok(Action::Continuous(mu)),
                    ExploreCfg::GaussianNoise { sigma } => {
                        let mut a = Vec::with_capacity(mu.len());
                        for (d, m) in mu.iter().enumerate() {
                            let z: f64 = StandardNormal.sample(rng);
                            a.push(m + p.log_std[d].exp() * z);
                        }
                        if sigma > 0.0 {
                            for v in &mut a {
                                let z: f64 = StandardNormal.sample(rng);
                                *v += sigma * z;
                            }
                        }
                        Ok(Action::Continuous(a))
                    }
                    ExploreCfg::EpsilonUniform { .. } => Err(Error::Config(
                        "epsilon-uniform exploration is for discrete policies".into(),
                    )),
                }
            }
        }
    }

    /// Deterministic action: argmax logits or the Gaussian mean.
    pub fn greedy(&self, state: &[f64], goal: &[f64]) -> Result<Action> {
        match self {
            Policy::Categorical(p) => Ok(Action::Discrete(argmax(&p.logits(state, goal)?))),
            Policy::Tabular(p) => {
                let g = p.goal_index(goal)?;
                Ok(Action::Discrete(argmax(&p.column_logits(g))))
            }
            Policy::Gaussian(p) => Ok(Action::Continuous(p.mean(state, goal)?)),
        }
    }

    /// `log pi(action | state, goal)`. Continuous actions are evaluated at the
    /// stored pre-clip value.
    pub fn log_prob(&self, state: &[f64], goal: &[f64], action: &Action) -> Result<f64> {
        match (self, action) {
            (Policy::Categorical(p), Action::Discrete(a)) => {
                let logits = p.logits(state, goal)?;
                check_action(*a, logits.len())?;
                Ok(log_softmax(&logits)[*a])
            }
            (Policy::Tabular(p), Action::Discrete(a)) => {
                let g = p.goal_index(goal)?;
                check_action(*a, p.n_actions)?;
                Ok(log_softmax(&p.column_logits(g))[*a])
            }
            (Policy::Gaussian(p), Action::Continuous(a)) => {
                if a.len() != p.action_dim() {
                    return Err(Error::Shape("action dim mismatch".into()));
                }
                let mu = p.mean(state, goal)?;
                let mut lp = 0.0;
                for d in 0..a.len() {
                    let sigma = p.log_std[d].exp();
                    let z = (a[d] - mu[d]) / sigma;
                    lp += -0.5 * z * z - p.log_std[d] - 0.5 * LN_2PI;
                }
                Ok(lp)
            }
            _ => Err(Error::Input("action kind does not match policy".into())),
        }
    }

    /// Exact ascent gradient of `log pi(action | state, goal)` in parameters.
    pub fn log_prob_grad(&self, state: &[f64], goal: &[f64], action: &Action) -> Result<PolicyGrad> {
        match (self, action) {
            (Policy::Categorical(p), Action::Discrete(a)) => {
                let x = concat(state, goal);
                p.check_dims(state, goal)?;
                let (logits, cache) = p.net.forward(&x)?;
                check_action(*a, logits.len())?;
                let probs = softmax(&logits);
                // d log pi(a) / d logit_j = onehot(a)_j - softmax_j
                let out_grad: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(j, pj)| (if j == *a { 1.0 } else { 0.0 }) - pj)
                    .collect();
                Ok(PolicyGrad::Net(p.net.backward(&cache, &out_grad)?))
            }
            (Policy::Tabular(p), Action::Discrete(a)) => {
                let g = p.goal_index(goal)?;
                check_action(*a, p.n_actions)?;
                let probs = p.probs_for_goal(g);
                let mut table = vec![0.0; p.n_actions * p.n_goals];
                for ap in 0..p.n_actions {
                    let delta = if ap == *a { 1.0 } else { 0.0 };
                    table[ap * p.n_goals + g] = delta - probs[ap];
                }
                Ok(PolicyGrad::Table(table))
            }
            (Policy::Gaussian(p), Action::Continuous(a)) => {
                if a.len() != p.action_dim() {
                    return Err(Error::Shape("action dim mismatch".into()));
                }
                p.check_dims(state, goal)?;
                let x = concat(state, goal);
                let (mu, cache) = p.mean_net.forward(&x)?;
                // d log pi / d mu_d = (a_d - mu_d) / sigma_d^2
                let out_grad: Vec<f64> = (0..a.len())
                    .map(|d| {
                        let sigma2 = (2.0 * p.log_std[d]).exp();
                        (a[d] - mu[d]) / sigma2
                    })
                    .collect();
                // d log pi / d log_std_d = z_d^2 - 1 with z = (a - mu) / sigma
                let ls_grad: Vec<f64> = (0..a.len())
                    .map(|d| {
                        let sigma = p.log_std[d].exp();
                        let z = (a[d] - mu[d]) / sigma;
                        z * z - 1.0
                    })
                    .collect();
                Ok(PolicyGrad::Gaussian {
                    mean: p.mean_net.backward(&cache, &out_grad)?,
                    log_std: ls_grad,
                })
            }
            _ => Err(Error::Input("action kind does not match policy".into())),
        }
    }
}

fn check_action(a: usize, n: usize) -> Result<()> {
    if a < n {
        Ok(())
    } else {
        Err(Error::Input(format!("action {a} out of range 0..{n}")))
    }
}

fn discrete_act(logits: &[f64], explore: ExploreCfg, rng: &mut ChaCha8Rng) -> Result<usize> {
    match explore {
        ExploreCfg::Greedy => Ok(argmax(logits)),
        ExploreCfg::EpsilonUniform { epsilon } => {
            let probs = softmax(logits);
            let mut a = sample_categorical(&probs, rng);
            if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                a = rng.gen_range(0..logits.len());
            }
            Ok(a)
        }
        ExploreCfg::GaussianNoise { .. } => Err(Error::Config(
            "gaussian-noise exploration is for continuous policies".into(),
        )),
    }
}
