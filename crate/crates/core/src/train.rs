//! Training loops for PPO, HJB value iteration and HJBPPO, and evaluation.
//!
//! All three algorithms share one loop: collect `horizon` transitions, run
//! GAE, then optimize. They differ in where actions come from, which loss the
//! critic is fitted to, and whether the actor is trained.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::env::{EnvConfig, PackCoolingEnv, TrajectoryBuffer};
use crate::error::{Error, Result};
use crate::grid::GridState;
use crate::hjb::optimal_action;
use crate::nn::{layer_sizes, policy_mean, Activation, MlpParams, PolicyDistribution};
use crate::ppo::{update_epochs, ActionSource, CriticLoss, Learner, RolloutBatch, TrainConfig, Transition, UpdateMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Ppo,
    HjbVi,
    HjbPpo,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::HjbVi => "hjbvi",
            Algorithm::HjbPpo => "hjbppo",
        }
    }

    pub fn recipe(self) -> Recipe {
        match self {
            Algorithm::Ppo => Recipe {
                hjb_probability: 0.0,
                critic: CriticLoss::Mse,
                update_actor: true,
            },
            Algorithm::HjbVi => Recipe {
                hjb_probability: 1.0,
                critic: CriticLoss::Hjb,
                update_actor: false,
            },
            Algorithm::HjbPpo => Recipe {
                hjb_probability: 0.5,
                critic: CriticLoss::Hjb,
                update_actor: true,
            },
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "hjbvi" => Ok(Algorithm::HjbVi),
            "hjbppo" => Ok(Algorithm::HjbPpo),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// What distinguishes the algorithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    /// Chance that a step's action comes from the HJB controller.
    pub hjb_probability: f64,
    pub critic: CriticLoss,
    pub update_actor: bool,
}

/// Independent random streams of one run.
struct Streams {
    noise: ChaCha8Rng,
    coin: ChaCha8Rng,
    shuffle: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        Self {
            noise: stream(1),
            coin: stream(2),
            shuffle: stream(3),
        }
    }
}

/// Fresh actor and critic for a seed.
pub fn init_networks(env: &EnvConfig, cfg: &TrainConfig, seed: u64) -> Result<(MlpParams, MlpParams)> {
    let sizes = layer_sizes(2 * env.n_x, &cfg.hidden);
    let base = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut policy = MlpParams::init(&sizes, Activation::Tanh, base ^ 0x5eed_0001)?;
    let mut value = MlpParams::init(&sizes, Activation::Identity, base ^ 0x5eed_0002)?;
    if cfg.zero_policy_output {
        policy.zero_output_layer();
    }
    if cfg.zero_value_output {
        value.zero_output_layer();
    }
    Ok((policy, value))
}

/// One action draw: the HJB controller with probability `hjb_probability`,
/// otherwise a clipped sample from the policy. The log-probability is always
/// taken under the current policy distribution.
#[allow(clippy::too_many_arguments)]
pub fn select_action<C: Rng + ?Sized, N: Rng + ?Sized>(
    state: &GridState,
    policy: &MlpParams,
    value: &MlpParams,
    env: &EnvConfig,
    scale: f64,
    hjb_probability: f64,
    coin: &mut C,
    noise: &mut N,
) -> Result<(f64, ActionSource, f64)> {
    let obs = state.observation();
    let dist = PolicyDistribution::new(policy_mean(policy, &obs)?, scale)?;
    let use_hjb = coin.gen::<f64>() < hjb_probability;
    let (action, source) = if use_hjb {
        (optimal_action(value, state, env)?, ActionSource::HjbController)
    } else {
        (dist.sample(noise), ActionSource::Policy)
    };
    Ok((action, source, dist.log_prob(action)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub update: usize,
    pub steps: usize,
    pub episodes: usize,
    pub metrics: UpdateMetrics,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub episode_rewards: Vec<f64>,
    pub total_steps: usize,
    pub updates: Vec<UpdateReport>,
    pub final_checkpoint: Checkpoint,
    /// Actions taken, by step; only kept when asked for.
    pub action_log: Vec<(f64, ActionSource)>,
}

/// Knobs that do not change what is learned.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where metrics and checkpoints go; nothing is written without it.
    pub out_dir: Option<PathBuf>,
    pub record_actions: bool,
    /// Keeps the critic at its initial parameters.
    pub freeze_value: bool,
}

pub fn train(
    algo: Algorithm,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
    opts: &RunOptions,
    progress: &mut dyn FnMut(&UpdateReport),
) -> Result<RunOutput> {
    train_recipe(algo.recipe(), env_cfg, cfg, seed, opts, progress)
        .map_err(|e| e.in_context(format!("{} seed {seed}", algo.name())))
}

pub fn train_recipe(
    recipe: Recipe,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
    opts: &RunOptions,
    progress: &mut dyn FnMut(&UpdateReport),
) -> Result<RunOutput> {
    env_cfg.validate()?;
    cfg.validate()?;
    let env_cfg = EnvConfig {
        seed,
        ..env_cfg.clone()
    };
    let mut env = PackCoolingEnv::new(env_cfg.clone())?;
    env.set_recording(false);
    let (policy, value) = init_networks(&env_cfg, cfg, seed)?;
    let mut learner = Learner::new(policy, value, cfg);
    let mut streams = Streams::new(seed);
    let schedule = cfg.std_schedule();
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let iterations = cfg.total_steps.div_ceil(cfg.horizon);
    let mut out = RunOutput {
        episode_rewards: Vec::new(),
        total_steps: 0,
        updates: Vec::with_capacity(iterations),
        final_checkpoint: Checkpoint {
            policy: learner.policy.clone(),
            value: learner.value.clone(),
        },
        action_log: Vec::new(),
    };
    let mut obs = env.reset();
    let mut episode_reward = 0.0;
    for update in 1..=iterations {
        let mut transitions = Vec::with_capacity(cfg.horizon);
        for _ in 0..cfg.horizon {
            let state = env.state().clone();
            let scale = schedule.at(out.episode_rewards.len());
            let (action, source, log_prob) = select_action(
                &state,
                &learner.policy,
                &learner.value,
                &env_cfg,
                scale,
                recipe.hjb_probability,
                &mut streams.coin,
                &mut streams.noise,
            )?;
            let value_old = learner.value.forward(&obs)?;
            let step = env.step(action)?;
            out.total_steps += 1;
            if opts.record_actions {
                out.action_log.push((action, source));
            }
            episode_reward += step.reward;
            transitions.push(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: step.reward,
                log_prob_old: log_prob,
                value_old,
                done: step.done,
                source,
                scale,
                next_u: env.state().u.clone(),
            });
            if step.done {
                out.episode_rewards.push(episode_reward);
                episode_reward = 0.0;
                obs = env.reset();
            } else {
                obs = step.observation;
            }
        }
        let bootstrap = learner.value.forward(&obs)?;
        let batch = RolloutBatch::new(transitions, bootstrap, cfg)?;
        let frozen = opts.freeze_value.then(|| learner.value.clone());
        let metrics = update_epochs(
            &batch,
            &mut learner,
            cfg,
            &env_cfg,
            recipe.critic,
            recipe.update_actor,
            &mut streams.shuffle,
        )?;
        if let Some(v) = frozen {
            learner.value = v;
        }
        if learner.policy.data().iter().chain(learner.value.data()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                step: out.total_steps,
                detail: format!("network parameters became non-finite in update {update}"),
            });
        }
        let report = UpdateReport {
            update,
            steps: out.total_steps,
            episodes: out.episode_rewards.len(),
            metrics,
        };
        progress(&report);
        out.updates.push(report);
        if let Some(dir) = &opts.out_dir {
            if update % cfg.checkpoint_every == 0 {
                checkpoint_of(&learner).save(&dir.join(format!("ckpt_{update:06}.ckpt")))?;
            }
        }
    }
    out.final_checkpoint = checkpoint_of(&learner);
    if let Some(dir) = &opts.out_dir {
        out.final_checkpoint.save(&dir.join("final.ckpt"))?;
        write_run_logs(dir, &out)?;
    }
    Ok(out)
}

fn checkpoint_of(learner: &Learner) -> Checkpoint {
    Checkpoint {
        policy: learner.policy.clone(),
        value: learner.value.clone(),
    }
}

/// Episodes of the trailing window used for smoothed curves.
pub const ROLLING_WINDOW: usize = 20;

/// Mean and population standard deviation of the trailing window ending at each episode.
pub fn rolling_stats(rewards: &[f64], window: usize) -> Vec<(f64, f64)> {
    (0..rewards.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let w = &rewards[lo..=i];
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// `metrics.csv`, `rolling.csv` and `updates.csv` of a run.
pub fn write_run_logs(dir: &Path, out: &RunOutput) -> Result<()> {
    let mut metrics = String::from("episode,reward\n");
    for (i, r) in out.episode_rewards.iter().enumerate() {
        writeln!(metrics, "{i},{r}").unwrap();
    }
    let mut rolling = String::from("episode,mean_reward_20,std_reward_20\n");
    for (i, (m, s)) in rolling_stats(&out.episode_rewards, ROLLING_WINDOW).iter().enumerate() {
        writeln!(rolling, "{i},{m},{s}").unwrap();
    }
    let mut updates = String::from("update,steps,episodes,policy_loss,value_loss,mse_f,mse_u,mse_n\n");
    for u in &out.updates {
        let m = &u.metrics;
        writeln!(
            updates,
            "{},{},{},{},{},{},{},{}",
            u.update, u.steps, u.episodes, m.policy_loss, m.value_loss, m.hjb.mse_f, m.hjb.mse_u, m.hjb.mse_n
        )
        .unwrap();
    }
    for (name, text) in [("metrics.csv", metrics), ("rolling.csv", rolling), ("updates.csv", updates)] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Policy mean, no exploration noise.
    GreedyPolicy,
    HjbController,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy" => Ok(EvalMode::GreedyPolicy),
            "hjb" => Ok(EvalMode::HjbController),
            other => Err(Error::Config(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub cumulative_reward: f64,
    pub trajectory: TrajectoryBuffer,
    pub initial: GridState,
}

/// One full deterministic episode from the initial condition drawn by `seed`.
pub fn evaluate(ckpt: &Checkpoint, env_cfg: &EnvConfig, mode: EvalMode, seed: u64) -> Result<EvalResult> {
    evaluate_with(env_cfg, seed, |state| match mode {
        EvalMode::GreedyPolicy => policy_mean(&ckpt.policy, &state.observation()),
        EvalMode::HjbController => optimal_action(&ckpt.value, state, env_cfg),
    })
}

/// One full episode under an arbitrary state-feedback action rule.
pub fn evaluate_with(
    env_cfg: &EnvConfig,
    seed: u64,
    mut act: impl FnMut(&GridState) -> Result<f64>,
) -> Result<EvalResult> {
    env_cfg.validate()?;
    let cfg = EnvConfig {
        seed,
        ..env_cfg.clone()
    };
    let mut env = PackCoolingEnv::new(cfg)?;
    env.set_recording(true);
    env.reset();
    let initial = env.state().clone();
    let mut total = 0.0;
    loop {
        let a = act(env.state())?;
        let step = env.step(a)?;
        total += step.reward;
        if step.done {
            break;
        }
    }
    Ok(EvalResult {
        cumulative_reward: total,
        trajectory: env.trajectory().clone(),
        initial,
    })
}
