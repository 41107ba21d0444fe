//! Exact and Monte Carlo analysis of gradient estimators on the one-step MDP.
//!
//! The setting: a single state, `k` actions equal to `k` goals, reward
//! `r(s,a,g) = I[a=g]`, uniform goal distribution, and a uniformly
//! initialized tabular softmax policy. Two one-sample estimators of the
//! gradient component at logit `(a,g)` are analyzed:
//!
//! - on-policy score estimator: `eta = r(s,b,g') d/dL log pi(b|s,g')` with
//!   `g'` uniform and `b ~ pi(.|s,g')`;
//! - hindsight estimator: `eta_h = r(s,b,g') d/dL log pi(b|s,g') / k` with
//!   `b` on-policy and `g'` relabeled to the goal that makes the step
//!   rewarding (here `g' = b`), normalized by `1/k`.
//!
//! Everything is computed two ways: closed-form moment formulas and exact
//! enumeration over all equiprobable outcomes. The enumeration path never
//! consults the formulas (it derives its reference mean by enumerating the
//! on-policy estimator), so the two routes are independent checks of each
//! other.

use crate::env::{Action, ActionKind, GoalEnv, GoalEnvSpec, StepResult};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Enumeration is quadratic in `k`; above this, only the closed forms apply.
pub const ENUMERATION_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Reinforce,
    Hindsight,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Reinforce => write!(f, "reinforce"),
            EstimatorKind::Hindsight => write!(f, "hindsight"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSource {
    ExactFormula,
    Enumeration,
    MonteCarlo(u64),
}

impl fmt::Display for MomentSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentSource::ExactFormula => write!(f, "exact_formula"),
            MomentSource::Enumeration => write!(f, "enumeration"),
            MomentSource::MonteCarlo(n) => write!(f, "monte_carlo({n})"),
        }
    }
}

/// First and second moments of a gradient-component estimator.
///
/// `mse` and `relative_error` are taken with respect to the on-policy mean
/// `E[eta] = delta/k^2 - 1/k^3` (for the hindsight estimator the two means
/// coincide exactly at uniform initialization, so `mse == variance` there
/// as an identity, not an assumption).
#[derive(Debug, Clone)]
pub struct EstimatorMoments {
    pub k: usize,
    /// Whether the component sits on the diagonal `a = g`.
    pub delta: bool,
    pub mean: f64,
    pub variance: f64,
    pub mse: f64,
    pub relative_error: f64,
    pub source: MomentSource,
}

impl EstimatorMoments {
    fn from_parts(
        k: usize,
        delta: bool,
        mean: f64,
        variance: f64,
        reference_mean: f64,
        source: MomentSource,
    ) -> Self {
        let bias = mean - reference_mean;
        let mse = variance + bias * bias;
        EstimatorMoments {
            k,
            delta,
            mean,
            variance,
            mse,
            relative_error: mse.sqrt() / reference_mean.abs(),
            source,
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        Err(Error::Input(format!("one-step MDP needs k >= 2, got {k}")))
    } else {
        Ok(())
    }
}

fn d(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// On-policy mean `delta/k^2 - 1/k^3`; shared reference for both estimators.
pub fn on_policy_mean(k: usize, delta: bool) -> f64 {
    let kf = k as f64;
    d(delta) / (kf * kf) - 1.0 / kf.powi(3)
}

/// Closed-form moments of the on-policy score estimator.
pub fn analytic_reinforce_moments(k: usize, delta: bool) -> Result<EstimatorMoments> {
    check_k(k)?;
    let kf = k as f64;
    let mean = on_policy_mean(k, delta);
    let variance = d(delta)
        * (1.0 / kf.powi(2) + 2.0 / kf.powi(5) - 2.0 / kf.powi(3) - 1.0 / kf.powi(4))
        + 1.0 / kf.powi(4)
        - 1.0 / kf.powi(6);
    Ok(EstimatorMoments::from_parts(
        k,
        delta,
        mean,
        variance,
        mean,
        MomentSource::ExactFormula,
    ))
}

/// Closed-form moments of the normalized hindsight estimator: the mean
/// coincides with the on-policy mean, the second moment is `(delta - 1/k)^2 / k^3`.
pub fn analytic_hindsight_moments(k: usize, delta: bool) -> Result<EstimatorMoments> {
    check_k(k)?;
    let kf = k as f64;
    let reference = on_policy_mean(k, delta);
    let mean = reference;
    let second_moment = (d(delta) - 1.0 / kf).powi(2) / kf.powi(3);
    let variance = second_moment - mean * mean;
    Ok(EstimatorMoments::from_parts(
        k,
        delta,
        mean,
        variance,
        reference,
        MomentSource::ExactFormula,
    ))
}

// ---------------------------------------------------------------------------
// Enumeration oracles
// ---------------------------------------------------------------------------

/// Value of the on-policy estimator at outcome `(g', b)` for component `(a, g)`
/// under the uniform policy: `I[b=g'] I[g=g'] (I[a=b] - 1/k)`.
fn reinforce_outcome(k: usize, a: usize, g: usize, g_prime: usize, b: usize) -> f64 {
    if b != g_prime || g != g_prime {
        return 0.0;
    }
    d(a == b) - 1.0 / k as f64
}

/// Value of the normalized hindsight estimator at outcome `b` (relabeled
/// `g' = b`): `I[g=b] (I[a=b] - 1/k) / k`.
fn hindsight_outcome(k: usize, a: usize, g: usize, b: usize) -> f64 {
    let kf = k as f64;
    d(g == b) * (d(a == b) - 1.0 / kf) / kf
}

fn component(delta: bool) -> (usize, usize) {
    // Fix a = 0; the diagonal component uses g = 0, the off-diagonal g = 1.
    if delta {
        (0, 0)
    } else {
        (0, 1)
    }
}

/// Enumerated on-policy mean, used as the reference everywhere enumeration
/// must stay independent of the closed forms.
fn enumerated_on_policy_mean(k: usize, delta: bool) -> f64 {
    let (a, g) = component(delta);
    let mut sum = 0.0;
    for g_prime in 0..k {
        for b in 0..k {
            sum += reinforce_outcome(k, a, g, g_prime, b);
        }
    }
    sum / (k * k) as f64
}

/// Exact moments of the on-policy estimator from its `k^2` equiprobable outcomes.
pub fn enumerate_reinforce(k: usize, delta: bool) -> Result<EstimatorMoments> {
    check_k(k)?;
    if k > ENUMERATION_CAP {
        return Err(Error::Input(format!("enumeration capped at k = {ENUMERATION_CAP}")));
    }
    let (a, g) = component(delta);
    let n = (k * k) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for g_prime in 0..k {
        for b in 0..k {
            let v = reinforce_outcome(k, a, g, g_prime, b);
            sum += v;
            sum_sq += v * v;
        }
    }
    let mean = sum / n;
    let variance = sum_sq / n - mean * mean;
    Ok(EstimatorMoments::from_parts(
        k,
        delta,
        mean,
        variance,
        mean,
        MomentSource::Enumeration,
    ))
}

/// Exact moments of the hindsight estimator from its `k` equiprobable outcomes.
pub fn enumerate_hindsight(k: usize, delta: bool) -> Result<EstimatorMoments> {
    check_k(k)?;
    if k > ENUMERATION_CAP {
        return Err(Error::Input(format!("enumeration capped at k = {ENUMERATION_CAP}")));
    }
    let (a, g) = component(delta);
    let n = k as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for b in 0..k {
        let v = hindsight_outcome(k, a, g, b);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n;
    let variance = sum_sq / n - mean * mean;
    Ok(EstimatorMoments::from_parts(
        k,
        delta,
        mean,
        variance,
        enumerated_on_policy_mean(k, delta),
        MomentSource::Enumeration,
    ))
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// Empirical moments from `n_samples` i.i.d. draws at uniform initialization.
pub fn monte_carlo_moments(
    estimator: EstimatorKind,
    k: usize,
    delta: bool,
    n_samples: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EstimatorMoments> {
    check_k(k)?;
    if n_samples == 0 {
        return Err(Error::Input("need at least one sample".into()));
    }
    let (a, g) = component(delta);
    // Welford accumulation.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 1..=n_samples {
        let v = match estimator {
            EstimatorKind::Reinforce => {
                let g_prime = rng.gen_range(0..k);
                let b = rng.gen_range(0..k);
                reinforce_outcome(k, a, g, g_prime, b)
            }
            EstimatorKind::Hindsight => {
                let b = rng.gen_range(0..k);
                hindsight_outcome(k, a, g, b)
            }
        };
        let delta1 = v - mean;
        mean += delta1 / i as f64;
        m2 += delta1 * (v - mean);
    }
    let variance = m2 / n_samples as f64;
    Ok(EstimatorMoments::from_parts(
        k,
        delta,
        mean,
        variance,
        enumerated_on_policy_mean(k, delta),
        MomentSource::MonteCarlo(n_samples),
    ))
}

// ---------------------------------------------------------------------------
// Control variates
// ---------------------------------------------------------------------------

/// Score control variate analysis by exact enumeration, with
/// `X = eta_{a,g}` and `Y = d/dL_{a,g} log pi(b|s,g')`.
///
/// Returns `(alpha_star, rho^2)` where `alpha_star = Cov[X,Y]/V[Y]` minimizes
/// `V[X - alpha Y]` and `rho^2 = Cov^2 / (V[X] V[Y])` is the achievable
/// variance-reduction fraction. `E[Y] = 0` is verified exactly.
pub fn control_variate_analysis(k: usize, delta: bool) -> Result<(f64, f64)> {
    check_k(k)?;
    let (a, g) = component(delta);
    let kf = k as f64;
    let n = (k * k) as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for g_prime in 0..k {
        for b in 0..k {
            let x = reinforce_outcome(k, a, g, g_prime, b);
            let y = d(g == g_prime) * (d(a == b) - 1.0 / kf);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
    }
    let (ex, ey) = (sx / n, sy / n);
    if ey.abs() > 1e-14 {
        return Err(Error::Numeric(format!("score control variate has nonzero mean {ey}")));
    }
    let vx = sxx / n - ex * ex;
    let vy = syy / n - ey * ey;
    let cov = sxy / n - ex * ey;
    Ok((cov / vy, cov * cov / (vx * vy)))
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

/// Relative error of the diagonal component per `k`, from enumeration up to
/// [`ENUMERATION_CAP`] and the closed forms beyond.
pub fn scaling_experiment(ks: &[usize], estimator: EstimatorKind) -> Result<Vec<(usize, f64)>> {
    let mut table = Vec::with_capacity(ks.len());
    for &k in ks {
        check_k(k)?;
        let m = if k <= ENUMERATION_CAP {
            match estimator {
                EstimatorKind::Reinforce => enumerate_reinforce(k, true)?,
                EstimatorKind::Hindsight => enumerate_hindsight(k, true)?,
            }
        } else {
            match estimator {
                EstimatorKind::Reinforce => analytic_reinforce_moments(k, true)?,
                EstimatorKind::Hindsight => analytic_hindsight_moments(k, true)?,
            }
        };
        table.push((k, m.relative_error));
    }
    Ok(table)
}

/// Least-squares growth exponent of `rel_err = k^a`. Both estimators obey
/// unit-coefficient power laws asymptotically (`k` and `sqrt(k)`), so the
/// fit is `log rel_err = a log k` through the origin.
pub fn fit_growth_exponent(table: &[(usize, f64)]) -> Result<f64> {
    if table.len() < 2 {
        return Err(Error::Input("need at least two points to fit a slope".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &(k, rel) in table {
        if rel <= 0.0 {
            return Err(Error::Numeric("relative error must be positive".into()));
        }
        let x = (k as f64).ln();
        num += x * rel.ln();
        den += x * x;
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// The one-step MDP as a goal environment
// ---------------------------------------------------------------------------

/// The analysis MDP wired into the environment interface: one step, the
/// state after acting is `[action]`, so the achieved goal of a transition is
/// the action taken and hindsight relabeling recovers `g' = b`.
pub struct OneStepMdp {
    spec: GoalEnvSpec,
    k: usize,
}

impl OneStepMdp {
    pub fn new(k: usize) -> Result<Self> {
        check_k(k)?;
        Ok(OneStepMdp {
            spec: GoalEnvSpec {
                name: format!("onestep-{k}"),
                state_dim: 1,
                goal_dim: 1,
                action_kind: ActionKind::Discrete(k),
                horizon: 1,
            },
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl GoalEnv for OneStepMdp {
    fn spec(&self) -> &GoalEnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        // The single pre-action state is a sentinel outside the goal space.
        (vec![-1.0], vec![rng.gen_range(0..self.k) as f64])
    }

    fn step(&self, _state: &[f64], goal: &[f64], action: &Action) -> Result<StepResult> {
        let a = match action {
            Action::Discrete(a) if *a < self.k => *a,
            _ => return Err(Error::Input("bad one-step action".into())),
        };
        let next = vec![a as f64];
        let reward = self.reward_fn(&next, goal);
        Ok(StepResult {
            success: reward == 1.0,
            done: true,
            next_state: next,
            reward,
        })
    }

    fn achieved_goal(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn reward_fn(&self, next_state: &[f64], goal: &[f64]) -> f64 {
        if next_state[0] == goal[0] {
            1.0
        } else {
            0.0
        }
    }
}
