//! One function per subcommand. Each returns what it wrote so callers and
//! tests can inspect results without re-reading files.

use std::path::PathBuf;
use std::thread;

use surrogate_core::lossnet::load_checkpoint;
use surrogate_core::trainer::{Mode, SurrogateOutcome};

use crate::checks::{run_gradcheck, SuiteReport};
use crate::classification::{
    correlate, eval_batches, prepare, report_table, run_classification, train_surrogate,
    write_surrogates, ClassificationRun, Correlations, LossSource,
};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, num, seed_dir, write_checkpoint, write_log, write_text, Table};
use crate::sweep::{check_grid, sweep_capacity, sweep_levels, SweepKind};
use crate::synthetic::{run_synthetic, write_synthetic, SyntheticRun};

/// Runs `f` for every configured seed, on one thread each when `parallel`
/// is set. Results come back in seed order either way.
pub fn for_seeds<T, F>(cfg: &ExperimentConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if !cfg.parallel {
        return cfg.seeds.iter().map(|&s| f(s)).collect();
    }
    thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&s| scope.spawn(move || f(s)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    })
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("config.txt"), &cfg.to_text())
}

pub fn cmd_synthetic(cfg: &ExperimentConfig) -> Result<Vec<SyntheticRun>> {
    prepare_out(cfg)?;
    let runs = for_seeds(cfg, |seed| run_synthetic(cfg, seed))?;
    for run in &runs {
        write_synthetic(cfg, run)?;
    }
    Ok(runs)
}

/// Trains one classification surrogate per seed in the configured mode and
/// writes its checkpoint, log, and the CE pre-run's prediction dumps.
pub fn cmd_train_loss(cfg: &ExperimentConfig) -> Result<Vec<(u64, SurrogateOutcome)>> {
    prepare_out(cfg)?;
    let mode = cfg.trainer.mode;
    let runs = for_seeds(cfg, |seed| {
        let prep = prepare(cfg, seed)?;
        let (outcome, _) = train_surrogate(cfg, &prep, mode)?;
        Ok((seed, outcome, prep.ce.train_dumps))
    })?;
    let name = match mode {
        Mode::Correlation => "reloss",
        Mode::Approximation => "approx",
    };
    let mut out = Vec::with_capacity(runs.len());
    for (seed, outcome, dumps) in runs {
        let dir = seed_dir(&cfg.out, seed);
        write_checkpoint(&dir.join(format!("{name}.reloss")), &outcome.weights)?;
        write_log(
            &dir.join(format!("{name}_log.csv")),
            &outcome.log,
            cfg.timing,
        )?;
        for (epoch, d) in dumps.iter().enumerate() {
            let path = dir.join("dumps").join(format!("epoch-{epoch}.csv"));
            ensure_dir(path.parent().unwrap())?;
            d.write_csv(&path)?;
        }
        out.push((seed, outcome));
    }
    Ok(out)
}

/// The toy classification report, `toy_classification.csv`.
pub fn cmd_train_model(
    cfg: &ExperimentConfig,
    loss: Option<&PathBuf>,
) -> Result<Vec<ClassificationRun>> {
    prepare_out(cfg)?;
    let weights = loss.map(load_checkpoint).transpose()?;
    let runs = for_seeds(cfg, |seed| run_classification(cfg, seed, weights.as_ref()))?;
    for run in &runs {
        write_surrogates(cfg, run)?;
    }
    report_table(&runs)?.write(&cfg.out.join("toy_classification.csv"))?;
    Ok(runs)
}

/// Loss choices for `corr-eval`.
#[derive(Clone, Debug, PartialEq)]
pub enum LossChoice {
    Ce,
    NegatedMetric,
    Constant,
    /// A checkpoint; `negate` flips its output (regression-trained losses
    /// rise with accuracy).
    Checkpoint {
        path: PathBuf,
        negate: bool,
    },
}

impl LossChoice {
    pub fn parse(s: &str, negate: bool) -> Self {
        match s {
            "ce" => LossChoice::Ce,
            "negated-metric" => LossChoice::NegatedMetric,
            "constant" => LossChoice::Constant,
            path => LossChoice::Checkpoint {
                path: PathBuf::from(path),
                negate,
            },
        }
    }

    fn source(&self) -> Result<LossSource> {
        Ok(match self {
            LossChoice::Ce => LossSource::Ce,
            LossChoice::NegatedMetric => LossSource::NegatedMetric,
            LossChoice::Constant => LossSource::Constant,
            LossChoice::Checkpoint { path, negate } => {
                LossSource::from_checkpoint(path, if *negate { -1.0 } else { 1.0 })?
            }
        })
    }
}

pub const CORR_EVAL_HEADER: [&str; 4] = ["seed", "samples", "spearman", "kendall"];

/// Spearman and Kendall of a loss against accuracy over `samples` fresh
/// draws per seed; also written to `corr_eval.csv`.
pub fn cmd_corr_eval(
    cfg: &ExperimentConfig,
    loss: &LossChoice,
    samples: usize,
) -> Result<Vec<(u64, Correlations)>> {
    if samples < 3 {
        return Err(HarnessError::Usage(format!(
            "corr-eval needs at least 3 samples, got {samples}"
        )));
    }
    prepare_out(cfg)?;
    let source = loss.source()?;
    let results = for_seeds(cfg, |seed| {
        Ok((
            seed,
            correlate(&source, &eval_batches(cfg, seed, samples)?)?,
        ))
    })?;
    let mut t = Table::new(&CORR_EVAL_HEADER);
    for (seed, c) in &results {
        t.push(vec![
            seed.to_string(),
            samples.to_string(),
            num("spearman", c.spearman)?,
            num("kendall", c.kendall)?,
        ]);
    }
    t.write(&cfg.out.join("corr_eval.csv"))?;
    Ok(results)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, kind: SweepKind) -> Result<Table> {
    check_grid(cfg, kind)?;
    prepare_out(cfg)?;
    let tables = for_seeds(cfg, |seed| match kind {
        SweepKind::Levels => sweep_levels(cfg, seed),
        SweepKind::Capacity => sweep_capacity(cfg, seed),
    })?;
    let mut all = tables[0].clone();
    for t in &tables[1..] {
        all.rows.extend(t.rows.iter().cloned());
    }
    let name = match kind {
        SweepKind::Levels => "sweep_levels.csv",
        SweepKind::Capacity => "sweep_capacity.csv",
    };
    all.write(&cfg.out.join(name))?;
    Ok(all)
}

/// Runs the suite; a tolerance failure is a verification error carrying
/// the report.
pub fn cmd_gradcheck(corrupt_elu: bool) -> Result<SuiteReport> {
    let report = run_gradcheck(corrupt_elu)?;
    if report.passed() {
        return Ok(report);
    }
    let names: Vec<&str> = report.failures().iter().map(|r| r.name.as_str()).collect();
    Err(HarnessError::Verification(format!(
        "gradient check failed for {}\n{report}",
        names.join(", ")
    )))
}
