use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use surrogate_harness::commands::{
    cmd_corr_eval, cmd_gradcheck, cmd_sweep, cmd_synthetic, cmd_train_loss, cmd_train_model,
    LossChoice,
};
use surrogate_harness::sweep::SweepKind;
use surrogate_harness::{ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "surrogate",
    version,
    about = "Learned surrogate loss experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Comma-separated seeds.
    #[arg(long)]
    seed: Option<String>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Run seeds on separate threads (outputs are still written in seed order).
    #[arg(long)]
    parallel: bool,

    /// Record wall-clock time in training logs.
    #[arg(long)]
    timing: bool,
}

impl Common {
    /// Defaults, then the file, then `--set`, then dedicated flags.
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                HarnessError::Usage(format!("--set expects KEY=VALUE, got {kv:?}"))
            })?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seeds) = &self.seed {
            cfg.set("seed", seeds)?;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.parallel |= self.parallel;
        cfg.timing |= self.timing;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Direct, approximation and correlation arms on the synthetic metric.
    Synthetic {
        #[command(flatten)]
        common: Common,
    },
    /// Trains a classification surrogate per seed (mode from the config).
    TrainLoss {
        #[command(flatten)]
        common: Common,
    },
    /// Trains the toy classifier under every loss and writes the report.
    TrainModel {
        #[command(flatten)]
        common: Common,
        /// Use this correlation-trained checkpoint instead of training one.
        #[arg(long)]
        loss: Option<PathBuf>,
    },
    /// Rank correlation of a loss with accuracy over fresh draws.
    CorrEval {
        #[command(flatten)]
        common: Common,
        /// `ce`, `negated-metric`, `constant`, or a checkpoint path.
        #[arg(long, default_value = "ce")]
        loss: String,
        /// Negate a checkpoint's output (for regression-trained losses).
        #[arg(long)]
        negate: bool,
        /// Number of sub-batches; defaults to `eval_samples`.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// `levels` or `capacity` sweep.
    Sweep {
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference checks of every gradient.
    Gradcheck {
        /// Swap in an elu with a wrong derivative (negative control).
        #[arg(long)]
        corrupt_elu: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synthetic { common } => {
            for r in cmd_synthetic(&common.config()?)? {
                println!(
                    "seed {}: spearman correlation {:.4} approximation {:.4} | final metric direct {:.4} approximation {:.4} correlation {:.4}",
                    r.seed,
                    r.final_spearman("correlation"),
                    r.final_spearman("approximation"),
                    r.final_metric("direct"),
                    r.final_metric("approximation"),
                    r.final_metric("correlation"),
                );
            }
        }
        Command::TrainLoss { common } => {
            for (seed, o) in cmd_train_loss(&common.config()?)? {
                println!(
                    "seed {seed}: best spearman {:.4} at step {} ({} steps, {:?})",
                    o.best.spearman,
                    o.best.step,
                    o.log.rows().len(),
                    o.stop
                );
            }
        }
        Command::TrainModel { common, loss } => {
            for run in cmd_train_model(&common.config()?, loss.as_ref())? {
                for r in &run.rows {
                    println!(
                        "seed {} {:<22} accuracy {:.4} spearman {:.4} kendall {:.4}",
                        run.seed,
                        r.loss,
                        r.accuracy,
                        r.correlations.spearman,
                        r.correlations.kendall
                    );
                }
            }
        }
        Command::CorrEval {
            common,
            loss,
            negate,
            samples,
        } => {
            let cfg = common.config()?;
            let samples = samples.unwrap_or(cfg.eval_samples);
            for (seed, c) in cmd_corr_eval(&cfg, &LossChoice::parse(&loss, negate), samples)? {
                println!(
                    "seed {seed}: spearman {:.6} kendall {:.6}",
                    c.spearman, c.kendall
                );
            }
        }
        Command::Sweep { kind, common } => {
            let table = cmd_sweep(&common.config()?, kind.parse::<SweepKind>()?)?;
            print!("{}", table.to_csv()?);
        }
        Command::Gradcheck { corrupt_elu } => {
            let report = cmd_gradcheck(corrupt_elu)?;
            print!("{report}");
            println!("all gradient checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
