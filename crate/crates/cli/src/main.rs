use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use platoon_privacy::experiment::{cmd_attack, cmd_eval, cmd_train, ExperimentConfig};
use platoon_privacy::Exec;

/// Train, evaluate and attack privacy-preserving data-sharing policies for a
/// three-vehicle mixed-autonomy platoon.
#[derive(Parser, Debug)]
#[command(name = "platoon-privacy", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set training.episodes=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Experiment seed; shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; shorthand for `--set output.dir=DIR`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, PathBuf, Exec)> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        let mut cfg = ExperimentConfig::load(&self.config, &overrides)?;
        if let Some(out) = &self.out {
            cfg.output.dir = out.display().to_string();
        }
        let exec = if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        };
        let out = PathBuf::from(&cfg.output.dir);
        Ok((cfg, out, exec))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy; writes reward.csv and checkpoints.
    Train(Common),
    /// Evaluate a checkpoint against the RLS and Bayesian attackers.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Replay both attackers over a shared-data trace.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Shared-data trace (as written by `eval`).
        #[arg(long)]
        trace: PathBuf,
        /// Needed when the trace holds policy-shared grid cells.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the effective configuration with defaults and overrides applied.
    Config(Common),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(common) => {
            let (cfg, out, exec) = common.load()?;
            let res = cmd_train(&cfg, &out, exec).context("training failed")?;
            let last = res.curve.last().map(|r| r.diag.reward);
            println!(
                "trained {} episodes; final reward {}; checkpoint {}",
                res.curve.len(),
                last.map_or("n/a".to_string(), |r| format!("{r:.3}")),
                res.checkpoint.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let (cfg, out, exec) = common.load()?;
            let ev = cmd_eval(&cfg, &checkpoint, &out, exec).context("evaluation failed")?;
            println!("theta    sigma_e(R)  SR(R)   sigma_e(F)  SR(F)   fuel(R)  fuel(F)  delta%  p(R)   p(F)");
            for m in &ev.metrics {
                println!(
                    "{:<8} {:<11.4} {:<7.4} {:<11.4} {:<7.4} {:<8.4} {:<8.4} {:<7.2} {:<6.3} {:.3}",
                    m.label(),
                    m.sigma_e_real,
                    m.sr_real,
                    m.sigma_e_filtered,
                    m.sr_filtered,
                    m.fuel_real,
                    m.fuel_filtered,
                    m.delta_pct,
                    m.p_true_real,
                    m.p_true_filtered
                );
            }
            println!("metrics written to {}", out.join("metrics.csv").display());
        }
        Command::Attack {
            common,
            trace,
            checkpoint,
        } => {
            let (cfg, out, exec) = common.load()?;
            let (path, rows) = cmd_attack(&cfg, &trace, checkpoint.as_deref(), &out, exec)
                .with_context(|| format!("attack on {} failed", trace.display()))?;
            match rows.last() {
                Some(r) => println!(
                    "{} data; final p(theta*) {:.4}, RLS estimate ({:.4}, {:.4}), sigma_e {:.4}",
                    rows.len(),
                    r.p_true_theta,
                    r.theta_hat[0],
                    r.theta_hat[1],
                    r.sigma_e
                ),
                None => println!("empty trace"),
            }
            println!("attack trace written to {}", path.display());
        }
        Command::Config(common) => {
            let (cfg, _, _) = common.load()?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
