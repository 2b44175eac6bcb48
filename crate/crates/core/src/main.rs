use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use packcool::checkpoint::Checkpoint;
use packcool::io::{dump_trajectory, plot_runs, RunConfig};
use packcool::train::{evaluate, train, Algorithm, EvalMode, RunOptions};
use packcool::{Error, Result};

#[derive(Parser)]
#[command(name = "packcool", version, about = "Battery-pack cooling control with PPO and HJB critics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Ppo,
    Hjbvi,
    Hjbppo,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Ppo => Algorithm::Ppo,
            AlgoArg::Hjbvi => Algorithm::HjbVi,
            AlgoArg::Hjbppo => Algorithm::HjbPpo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Policy,
    Hjb,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Policy => EvalMode::GreedyPolicy,
            ModeArg::Hjb => EvalMode::HjbController,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm for one or more seeds; writes OUT/seed{S}/.
    Train {
        #[arg(long, value_enum)]
        algo: AlgoArg,
        /// Repeatable; defaults to the seeds of the config (0-4).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Environment steps per seed; defaults to the config's total_steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Flat key = value file overriding environment and training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one deterministic episode from a checkpoint and dump the trajectory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "policy")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge per-seed reward logs into smoothed curves with a 0.2-std band.
    Plot {
        /// LABEL=DIR, where DIR holds seed*/metrics.csv.
        #[arg(required = true, value_parser = parse_input)]
        inputs: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_input(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, dir)) if !label.is_empty() && !dir.is_empty() => Ok((label.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected LABEL=DIR, got {s:?}")),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_train(algo: Algorithm, seeds: Vec<u64>, steps: Option<usize>, config: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(n) = steps {
        if n == 0 {
            return Err(Error::Config("--steps must be positive".into()));
        }
        cfg.train.total_steps = n;
    }
    let seeds = if seeds.is_empty() { cfg.train.seeds.clone() } else { seeds };
    let iterations = cfg.train.total_steps.div_ceil(cfg.train.horizon);
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let cfg = &cfg;
                scope.spawn(move || {
                    let opts = RunOptions {
                        out_dir: Some(out.join(format!("seed{seed}"))),
                        ..RunOptions::default()
                    };
                    train(algo, &cfg.env, &cfg.train, seed, &opts, &mut |r| {
                        eprintln!(
                            "[{} seed {seed}] update {}/{iterations} steps {} episodes {} policy_loss {:.4} value_loss {:.4}",
                            algo.name(),
                            r.update,
                            r.steps,
                            r.episodes,
                            r.metrics.policy_loss,
                            r.metrics.value_loss
                        );
                    })
                    .map(|run| {
                        let n = run.episode_rewards.len();
                        let tail = &run.episode_rewards[n.saturating_sub(20)..];
                        let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
                        eprintln!("[{} seed {seed}] done: {n} episodes, last-20 mean reward {mean}", algo.name());
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidState("training thread panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

fn cmd_eval(ckpt: &Path, mode: EvalMode, seed: u64, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let nets = Checkpoint::load(ckpt)?;
    let result = evaluate(&nets, &cfg.env, mode, seed)?;
    dump_trajectory(&result.trajectory, &cfg.env.grid()?.nodes(), out)?;
    println!("cumulative_reward={}", result.cumulative_reward);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            algo,
            seeds,
            steps,
            config,
            out,
        } => cmd_train(algo.into(), seeds, steps, config.as_deref(), &out),
        Command::Eval {
            ckpt,
            mode,
            seed,
            config,
            out,
        } => cmd_eval(&ckpt, mode.into(), seed, config.as_deref(), &out),
        Command::Plot { inputs, out } => plot_runs(&inputs, &out).map(|curves| {
            for (label, points) in curves {
                let last = points.last().map(|p| p.mean).unwrap_or(f64::NAN);
                println!("{label}: {} episodes, final smoothed reward {last}", points.len());
            }
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
