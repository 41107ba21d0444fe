//! Experiment harness: builds a trainer from a config, streams metric rows to
//! a crash-safe CSV, and writes the manifest and final checkpoint.
//!
//! Everything written to metrics.csv and the checkpoint is a pure function of
//! `(config, seed, workers)`. Wall-clock timing is opt-in via
//! `HEM_TIMING=real` because measured times would break the byte-determinism
//! contract; the manifest carries the (non-deterministic) start timestamp.

use crate::algo::{
    DqnConfig, DqnTrainer, HemConfig, HemTrainer, MetricRow, PgConfig, PgKind, PgTrainer, QNetwork,
};
use crate::config::{Algorithm, BaselineConfig, EnvConfig, ExperimentConfig};
use crate::env::{make_env, ActionKind, GoalEnv};
use crate::error::{Error, Result};
use crate::estlab::{
    analytic_hindsight_moments, analytic_reinforce_moments, enumerate_hindsight,
    enumerate_reinforce, EstimatorKind, EstimatorMoments, ENUMERATION_CAP,
};
use crate::policy::{ExploreCfg, GaussianPolicy, MlpCategorical, Policy};
use crate::replay::RewardMode;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub artifact_version: String,
    /// Unix seconds at launch; informational only, not reproducible.
    pub start_unix_s: u64,
    pub metrics_path: String,
    pub checkpoint_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub env: EnvConfig,
    /// "categorical", "gaussian" or "qnet".
    pub kind: String,
    /// Flat parameter array: sizes header, row-major weights, biases.
    pub net: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<Vec<f64>>,
    pub state_dim: usize,
    pub goal_dim: usize,
}

pub const CHECKPOINT_FORMAT: &str = "hem-checkpoint-v1";

fn default_explore(action_kind: &ActionKind) -> ExploreCfg {
    match action_kind {
        ActionKind::Discrete(_) => ExploreCfg::EpsilonUniform { epsilon: 0.3 },
        ActionKind::Continuous { .. } => ExploreCfg::GaussianNoise { sigma: 0.5 },
    }
}

fn build_policy(env: &dyn GoalEnv, hidden: &[usize], seed: u64) -> Result<Policy> {
    let spec = env.spec();
    match spec.action_kind {
        ActionKind::Discrete(n) => Ok(Policy::Categorical(MlpCategorical::new(
            spec.state_dim,
            spec.goal_dim,
            n,
            hidden,
            seed,
        )?)),
        ActionKind::Continuous { dim, .. } => Ok(Policy::Gaussian(GaussianPolicy::new(
            spec.state_dim,
            spec.goal_dim,
            dim,
            hidden,
            seed,
        )?)),
    }
}

enum AnyTrainer<'e> {
    Hem(HemTrainer<'e>),
    Pg(PgTrainer<'e>),
    Dqn(DqnTrainer<'e>),
}

impl AnyTrainer<'_> {
    fn run_iteration(&mut self) -> Result<MetricRow> {
        match self {
            AnyTrainer::Hem(t) => t.run_iteration(),
            AnyTrainer::Pg(t) => t.run_iteration(),
            AnyTrainer::Dqn(t) => t.run_iteration(),
        }
    }

    fn env_steps(&self) -> u64 {
        match self {
            AnyTrainer::Hem(t) => t.env_steps(),
            AnyTrainer::Pg(t) => t.env_steps(),
            AnyTrainer::Dqn(t) => t.env_steps(),
        }
    }

    fn checkpoint(&self, env_cfg: &EnvConfig, env: &dyn GoalEnv) -> CheckpointFile {
        let spec = env.spec();
        match self {
            AnyTrainer::Hem(t) => policy_checkpoint(&t.policy, env_cfg, spec.state_dim, spec.goal_dim),
            AnyTrainer::Pg(t) => policy_checkpoint(&t.policy, env_cfg, spec.state_dim, spec.goal_dim),
            AnyTrainer::Dqn(t) => CheckpointFile {
                format: CHECKPOINT_FORMAT.into(),
                env: env_cfg.clone(),
                kind: "qnet".into(),
                net: t.q.net.to_flat(),
                log_std: None,
                state_dim: spec.state_dim,
                goal_dim: spec.goal_dim,
            },
        }
    }
}

fn policy_checkpoint(
    policy: &Policy,
    env_cfg: &EnvConfig,
    state_dim: usize,
    goal_dim: usize,
) -> CheckpointFile {
    match policy {
        Policy::Categorical(p) => CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            env: env_cfg.clone(),
            kind: "categorical".into(),
            net: p.net.to_flat(),
            log_std: None,
            state_dim,
            goal_dim,
        },
        Policy::Gaussian(p) => CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            env: env_cfg.clone(),
            kind: "gaussian".into(),
            net: p.mean_net.to_flat(),
            log_std: Some(p.log_std.clone()),
            state_dim,
            goal_dim,
        },
        Policy::Tabular(_) => unreachable!("trainers never hold tabular policies"),
    }
}

fn explore_from_config(cfg: &ExperimentConfig, env: &dyn GoalEnv) -> ExploreCfg {
    cfg.explore
        .map(ExploreCfg::from)
        .unwrap_or_else(|| default_explore(&env.spec().action_kind))
}

fn build_trainer<'e>(cfg: &ExperimentConfig, env: &'e dyn GoalEnv) -> Result<AnyTrainer<'e>> {
    let policy_seed = crate::rng::derive_seed(cfg.seed, &[crate::rng::tag::ENV]);
    match cfg.algorithm {
        Algorithm::Hem => {
            let policy = build_policy(env, &cfg.net, policy_seed)?;
            let hem_cfg = HemConfig {
                n_trajectories: cfg.n_trajectories,
                gradient_steps: cfg.gradient_steps,
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                explore: explore_from_config(cfg, env),
                eval_episodes: cfg.eval_episodes,
                mix_original: cfg.mix_original,
            };
            Ok(AnyTrainer::Hem(HemTrainer::new(
                env,
                policy,
                hem_cfg,
                cfg.replay_capacity,
                cfg.seed,
                cfg.workers,
            )?))
        }
        Algorithm::Reinforce | Algorithm::Hpg => {
            let policy = build_policy(env, &cfg.net, policy_seed)?;
            let kind = match cfg.algorithm {
                Algorithm::Reinforce => PgKind::Reinforce(match cfg.baseline {
                    BaselineConfig::Off => crate::algo::Baseline::Off,
                    BaselineConfig::Mean => crate::algo::Baseline::Mean,
                }),
                _ => PgKind::Hpg,
            };
            let pg_cfg = PgConfig {
                n_trajectories: cfg.n_trajectories,
                lr: cfg.lr,
                eval_episodes: cfg.eval_episodes,
                kind,
            };
            Ok(AnyTrainer::Pg(PgTrainer::new(
                env,
                policy,
                pg_cfg,
                cfg.seed,
                cfg.workers,
            )?))
        }
        Algorithm::DqnHer => {
            let n_actions = match env.spec().action_kind {
                ActionKind::Discrete(n) => n,
                ActionKind::Continuous { .. } => {
                    return Err(Error::Config(
                        "dqn_her requires a discrete action environment".into(),
                    ))
                }
            };
            let epsilon = match explore_from_config(cfg, env) {
                ExploreCfg::EpsilonUniform { epsilon } => epsilon,
                ExploreCfg::Greedy => 0.0,
                ExploreCfg::GaussianNoise { .. } => {
                    return Err(Error::Config(
                        "dqn_her uses epsilon_uniform exploration".into(),
                    ))
                }
            };
            let q = QNetwork::new(
                env.spec().state_dim,
                env.spec().goal_dim,
                n_actions,
                &cfg.net,
                policy_seed,
                cfg.gamma,
                cfg.target_sync,
                RewardMode::from(cfg.reward_mode),
            )?;
            let dqn_cfg = DqnConfig {
                episodes_per_iteration: cfg.n_trajectories,
                updates_per_iteration: cfg.gradient_steps,
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                epsilon,
                k_her: cfg.k_her,
                gamma: cfg.gamma,
                sync_interval: cfg.target_sync,
                reward_mode: RewardMode::from(cfg.reward_mode),
                eval_episodes: cfg.eval_episodes,
            };
            Ok(AnyTrainer::Dqn(DqnTrainer::new(
                env,
                q,
                dqn_cfg,
                cfg.replay_capacity,
                cfg.seed,
                cfg.workers,
            )?))
        }
    }
}

/// Run one experiment to its env-step budget. Returns the metrics.csv path.
///
/// Rows are flushed as they are produced, so a killed run leaves a valid
/// partial CSV. If the budget is smaller than a single iteration, one full
/// iteration runs anyway (with a warning on stderr).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let env = make_env(&cfg.env.name, cfg.env.k)?;
    let out_dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let checkpoint_path = out_dir.join("checkpoint.json");

    let manifest = RunManifest {
        config: cfg.clone(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        start_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        metrics_path: metrics_path.display().to_string(),
        checkpoint_path: checkpoint_path.display().to_string(),
    };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    let real_timing = std::env::var("HEM_TIMING").map(|v| v == "real").unwrap_or(false);
    let started = Instant::now();

    let mut trainer = build_trainer(cfg, env.as_ref())?;
    let mut file = fs::File::create(&metrics_path)?;
    writeln!(file, "{}", MetricRow::CSV_HEADER)?;
    file.flush()?;

    let mut first = true;
    while trainer.env_steps() < cfg.total_env_steps {
        let mut row = trainer.run_iteration()?;
        row.wall_clock_s = if real_timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        writeln!(file, "{}", row.to_csv())?;
        file.flush()?;
        if first && trainer.env_steps() >= cfg.total_env_steps && row.env_steps > cfg.total_env_steps
        {
            eprintln!(
                "warning: budget {} is smaller than one iteration ({} steps); completed one iteration",
                cfg.total_env_steps, row.env_steps
            );
        }
        first = false;
    }

    let checkpoint = trainer.checkpoint(&cfg.env, env.as_ref());
    fs::write(&checkpoint_path, serde_json::to_string(&checkpoint)?)?;
    Ok(metrics_path)
}

/// Load a checkpoint and run greedy evaluation episodes on its environment.
pub fn eval_checkpoint(path: &Path, episodes: usize, seed: u64) -> Result<f64> {
    let text = fs::read_to_string(path)?;
    let ckpt: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Input(format!("bad checkpoint {}: {e}", path.display())))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Input(format!("unsupported checkpoint format '{}'", ckpt.format)));
    }
    let env = make_env(&ckpt.env.name, ckpt.env.k)?;
    let net = crate::nn::MlpParams::from_flat(&ckpt.net)?;
    let policy = match ckpt.kind.as_str() {
        // Greedy evaluation of a Q-network is the argmax of its outputs,
        // identical to a categorical policy over the same net.
        "categorical" | "qnet" => {
            Policy::Categorical(MlpCategorical::from_net(net, ckpt.state_dim, ckpt.goal_dim)?)
        }
        "gaussian" => {
            let mut p = GaussianPolicy::new(
                ckpt.state_dim,
                ckpt.goal_dim,
                net.output_dim(),
                &[1],
                0,
            )?;
            p.mean_net = net;
            if let Some(ls) = ckpt.log_std {
                p.log_std = ls;
            }
            Policy::Gaussian(p)
        }
        other => return Err(Error::Input(format!("unknown checkpoint kind '{other}'"))),
    };
    crate::algo::evaluate(&policy, env.as_ref(), episodes, seed, &[crate::rng::tag::EVAL])
}

/// Estimator-lab table: one row per (k, estimator, delta), enumerated where
/// feasible and closed-form beyond the enumeration cap.
pub fn lab_table(ks: &[usize]) -> Result<String> {
    let mut out = String::from("k,delta,estimator,mean,variance,mse,rel_err,source\n");
    for &k in ks {
        for kind in [EstimatorKind::Reinforce, EstimatorKind::Hindsight] {
            for delta in [true, false] {
                let m: EstimatorMoments = if k <= ENUMERATION_CAP {
                    match kind {
                        EstimatorKind::Reinforce => enumerate_reinforce(k, delta)?,
                        EstimatorKind::Hindsight => enumerate_hindsight(k, delta)?,
                    }
                } else {
                    match kind {
                        EstimatorKind::Reinforce => analytic_reinforce_moments(k, delta)?,
                        EstimatorKind::Hindsight => analytic_hindsight_moments(k, delta)?,
                    }
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    k,
                    u8::from(delta),
                    kind,
                    m.mean,
                    m.variance,
                    m.mse,
                    m.relative_error,
                    m.source
                ));
            }
        }
    }
    Ok(out)
}

/// Gradient and oracle self-tests behind the `check` subcommand. Returns
/// `(name, passed)` per check.
pub fn self_check() -> Vec<(String, bool)> {
    use crate::env::Action;
    use crate::nn::{grad_check, GradBundle, MlpParams};
    use crate::policy::PolicyGrad;

    let mut results: Vec<(String, bool)> = Vec::new();
    let mut push = |name: &str, ok: bool| results.push((name.to_string(), ok));

    // Backprop against finite differences on a random net.
    {
        let params = MlpParams::init(&[6, 16, 12, 4], 51).unwrap();
        let input: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let loss = |p: &MlpParams| -> Result<f64> {
            let (y, _) = p.forward(&input)?;
            Ok(0.5 * y.iter().map(|v| v * v).sum::<f64>())
        };
        let (y, cache) = params.forward(&input).unwrap();
        let analytic = params.backward(&cache, &y).unwrap();
        let rel = grad_check(loss, &params, &analytic, 1e-5).unwrap();
        push("backprop finite-difference", rel < 1e-5);
    }

    // Categorical log-prob gradient.
    {
        let p = MlpCategorical::new(4, 4, 5, &[12, 8], 52).unwrap();
        let s = [0.2, -0.5, 0.8, 0.1];
        let g = [1.0, 0.0, 1.0, 1.0];
        let a = Action::Discrete(3);
        let pol = Policy::Categorical(p.clone());
        let analytic = match pol.log_prob_grad(&s, &g, &a).unwrap() {
            PolicyGrad::Net(gb) => gb,
            _ => unreachable!(),
        };
        let loss = |net: &MlpParams| -> Result<f64> {
            Policy::Categorical(MlpCategorical::from_net(net.clone(), 4, 4)?).log_prob(&s, &g, &a)
        };
        let rel = grad_check(loss, &p.net, &analytic, 1e-5).unwrap();
        push("categorical log-prob gradient", rel < 1e-5);
    }

    // Gaussian log-prob gradient.
    {
        let p = GaussianPolicy::new(3, 3, 2, &[10], 53).unwrap();
        let s = [0.4, -0.1, 0.9];
        let g = [0.2, 0.7, -0.3];
        let a = Action::Continuous(vec![0.05, -0.2]);
        let pol = Policy::Gaussian(p.clone());
        let analytic = match pol.log_prob_grad(&s, &g, &a).unwrap() {
            PolicyGrad::Gaussian { mean, .. } => mean,
            _ => unreachable!(),
        };
        let log_std = p.log_std.clone();
        let loss = |net: &MlpParams| -> Result<f64> {
            let mut trial = p.clone();
            trial.mean_net = net.clone();
            trial.log_std = log_std.clone();
            Policy::Gaussian(trial).log_prob(&s, &g, &a)
        };
        let rel = grad_check(loss, &p.mean_net, &analytic, 1e-5).unwrap();
        push("gaussian log-prob gradient", rel < 1e-5);
    }

    // Q TD-loss gradient against finite differences with frozen targets.
    {
        let net = MlpParams::init(&[6, 12, 3], 54).unwrap();
        let xs: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..6).map(|j| ((i * 7 + j) as f64 * 0.3).cos()).collect())
            .collect();
        let actions: Vec<usize> = (0..8).map(|i| i % 3).collect();
        let targets: Vec<f64> = (0..8).map(|i| (i as f64 * 0.17).sin()).collect();
        let loss = |p: &MlpParams| -> Result<f64> {
            let mut total = 0.0;
            for ((x, &a), y) in xs.iter().zip(&actions).zip(&targets) {
                let (q, _) = p.forward(x)?;
                let td = q[a] - y;
                total += td * td;
            }
            Ok(total / xs.len() as f64)
        };
        let mut analytic = GradBundle::zeros_like(&net);
        for ((x, &a), y) in xs.iter().zip(&actions).zip(&targets) {
            let (q, cache) = net.forward(x).unwrap();
            let mut out = vec![0.0; 3];
            out[a] = 2.0 * (q[a] - y) / xs.len() as f64;
            analytic.add_assign(&net.backward(&cache, &out).unwrap());
        }
        let rel = grad_check(loss, &net, &analytic, 1e-5).unwrap();
        push("q td-loss gradient", rel < 1e-5);
    }

    // Oracle identities and dominance for small k.
    {
        let mut ok = true;
        for k in 2..=16usize {
            for delta in [true, false] {
                let er = enumerate_reinforce(k, delta).unwrap();
                let ar = analytic_reinforce_moments(k, delta).unwrap();
                let eh = enumerate_hindsight(k, delta).unwrap();
                let ah = analytic_hindsight_moments(k, delta).unwrap();
                ok &= (er.mean - ar.mean).abs() <= 1e-12
                    && (er.variance - ar.variance).abs() <= 1e-12
                    && (eh.mean - ah.mean).abs() <= 1e-12
                    && (eh.variance - ah.variance).abs() <= 1e-12
                    && eh.mse <= er.mse + 1e-12;
            }
        }
        push("estimator oracle identities", ok);
    }

    // Control variate zero-mean and frozen values.
    {
        let cv2 = crate::estlab::control_variate_analysis(2, true);
        let cv4 = crate::estlab::control_variate_analysis(4, true);
        let ok = matches!(cv2, Ok((_, rho)) if (rho - 2.0 / 3.0).abs() < 1e-12)
            && matches!(cv4, Ok((_, rho)) if (rho - 0.8).abs() < 1e-12);
        push("control variate analysis", ok);
    }

    // Softmax normalization and zero-sum logit gradients on random probes.
    {
        use rand::Rng;
        let p = MlpCategorical::new(3, 3, 6, &[16], 55).unwrap();
        let pol = Policy::Categorical(p.clone());
        let mut rng_probe = crate::rng::stream(56, &[crate::rng::tag::LAB]);
        let mut ok = true;
        for _ in 0..1000 {
            let s: Vec<f64> = (0..3).map(|_| rng_probe.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..3).map(|_| rng_probe.gen_range(-1.0..1.0)).collect();
            let probs = p.probs(&s, &g).unwrap();
            ok &= (probs.iter().sum::<f64>() - 1.0).abs() < 1e-12;
            let a = rng_probe.gen_range(0..6);
            if let PolicyGrad::Net(gb) = pol.log_prob_grad(&s, &g, &Action::Discrete(a)).unwrap() {
                ok &= gb.biases.last().unwrap().iter().sum::<f64>().abs() < 1e-12;
            }
        }
        push("softmax and logit-gradient invariants", ok);
    }

    results
}
