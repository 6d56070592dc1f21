use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use semcom::config::RunConfig;
use semcom::par::{configure_threads, Execution};
use semcom::run;

#[derive(Parser)]
#[command(name = "semcom", version, about = "Emergent-language signaling games over a noisy symbol channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (defaults to `out_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially, 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train one speaker/listener pair.
    Train(Common),
    /// Evaluate a checkpoint on seen and unseen concepts across test epsilons.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (defaults to <out>/checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate the train-epsilon x seed grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Only evaluate checkpoints that already exist.
        #[arg(long)]
        eval_only: bool,
    },
    /// Data-size table and transmission-latency simulation.
    Sim(Common),
    /// Topographic similarity of a checkpoint's messages.
    Topsim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference gradient check of the training pipeline.
    Gradcheck(Common),
}

struct Setup {
    cfg: RunConfig,
    out: PathBuf,
    exec: Execution,
}

fn setup(c: &Common) -> anyhow::Result<Setup> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let exec = if c.jobs == 1 {
        Execution::Sequential
    } else {
        if c.jobs > 1 {
            configure_threads(c.jobs);
        }
        Execution::Parallel
    };
    Ok(Setup { cfg, out, exec })
}

fn checkpoint_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(run::CHECKPOINT_FILE))
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train(c) => {
            let s = setup(&c)?;
            let art = run::run_train(&s.cfg, &s.out, s.exec)?;
            if let Some(last) = art.history.last() {
                println!(
                    "epoch {}: loss {:.4} train accuracy {:.4}",
                    last.epoch, last.mean_loss, last.mean_acc
                );
            }
            match art.convergence.and_then(|c| c.epoch()) {
                Some(e) => println!("converged at epoch {e}"),
                None => println!("did not converge"),
            }
            println!("wrote {}", s.out.display());
        }
        Command::Eval { common, checkpoint } => {
            let s = setup(&common)?;
            let path = checkpoint_path(&checkpoint, &s.out);
            let report = run::run_eval(&s.cfg, &path, &s.out, s.exec)?;
            for r in &report.rows {
                println!(
                    "{:<6} test eps {:.2}: accuracy {:.4} +/- {:.4}",
                    r.set.as_str(),
                    r.test_epsilon,
                    r.accuracy,
                    r.stderr
                );
            }
        }
        Command::Sweep { common, eval_only } => {
            let s = setup(&common)?;
            let models = s.out.join("models");
            let outcome = run::run_sweep(&s.cfg, &s.out, &models, !eval_only, s.exec)?;
            for a in &outcome.report.absent {
                println!("absent: train eps {} seed {}", a.train_epsilon, a.seed);
            }
            println!("{} rows written to {}", outcome.report.rows.len(), s.out.join("sweep.csv").display());
        }
        Command::Sim(c) => {
            let s = setup(&c)?;
            for r in run::run_sim(&s.cfg, &s.out)? {
                println!(
                    "{:<16} {:>12} bits  mean latency {:.6} s  expected flips {}",
                    r.mode, r.total_bits, r.mean_latency_s, r.expected_flips
                );
            }
        }
        Command::Topsim { common, checkpoint } => {
            let s = setup(&common)?;
            let path = checkpoint_path(&checkpoint, &s.out);
            for r in run::run_topsim(&s.cfg, &path, &s.out)? {
                let rho = r.correlation.map_or("undefined".to_string(), |x| format!("{x:.4}"));
                println!("{:<6} rho {rho} (null p95 {:.4})", r.set, r.null_p95);
            }
        }
        Command::Gradcheck(c) => {
            let s = setup(&c)?;
            let report = run::run_gradcheck(&s.cfg, &s.out)?;
            println!(
                "max relative error {:.3e} (tolerance {:.0e})",
                report.max_rel_error(),
                report.tolerance
            );
            if !report.passed() {
                eprintln!("gradient check failed");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
