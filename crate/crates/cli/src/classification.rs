//! The toy classification pipeline: a CE pre-run supplies `G_M` dumps,
//! surrogates are learned on `G_R`/`G_M`, and classifiers are trained under
//! each loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use surrogate_core::correlation::{kendall_tau, spearman_hard};
use surrogate_core::data::Blobs;
use surrogate_core::generators::{BatchGenerator, GeneratorConfig, PredictionDump};
use surrogate_core::lossnet::{forward_loss, load_checkpoint, LossNetWeights};
use surrogate_core::metrics::{accuracy, BatchSample};
use surrogate_core::trainer::{
    cross_entropy, rank_loss, train_alternate, train_prediction_model, ClassificationTask,
    FrozenLoss, LossMode, Mode, PredictionConfig, PredictionOutcome, SurrogateOutcome,
    SurrogateTrainer, TrainerConfig,
};

use crate::config::{ExperimentConfig, CLASSIFICATION_STEPS};
use crate::error::{HarnessError, Result};
use crate::output::{num, seed_dir, write_checkpoint, write_log, Table};
use crate::synthetic::lossnet_spec;

/// Stream of the held-out evaluation draws (validation-split dumps).
const HELDOUT_STREAM: u64 = 1 << 33;

pub const REPORT_HEADER: [&str; 5] = ["seed", "loss", "accuracy", "spearman", "kendall"];

/// Per-seed data, CE pre-run and the surrogate's training generator.
pub struct Prepared {
    pub seed: u64,
    pub blobs: Blobs,
    pub ce: PredictionOutcome,
    pub generator: BatchGenerator,
}

pub fn prediction_config(cfg: &ExperimentConfig, seed: u64) -> PredictionConfig {
    PredictionConfig {
        seed,
        ..cfg.prediction.clone()
    }
}

fn generator_config(cfg: &ExperimentConfig, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        ..cfg.generator.clone()
    }
}

/// Dumps listed in `dump_paths`, read once.
pub fn external_dumps(cfg: &ExperimentConfig) -> Result<Vec<PredictionDump>> {
    Ok(cfg
        .generator
        .dump_paths
        .iter()
        .map(PredictionDump::read_csv)
        .collect::<surrogate_core::Result<_>>()?)
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let blobs = Blobs::generate(cfg.blobs, seed)?;
    let ce = train_prediction_model(LossMode::Ce, &prediction_config(cfg, seed), &blobs, None)?;
    let mut dumps = external_dumps(cfg)?;
    dumps.extend(ce.train_dumps.iter().cloned());
    let generator = BatchGenerator::with_dumps(generator_config(cfg, seed), dumps)?;
    Ok(Prepared {
        seed,
        blobs,
        ce,
        generator,
    })
}

/// Classification trainer settings; the surrogate sees `y_pos` only.
pub fn classification_trainer(cfg: &ExperimentConfig, seed: u64, mode: Mode) -> TrainerConfig {
    TrainerConfig {
        mode,
        ..cfg.trainer_for(seed, CLASSIFICATION_STEPS)
    }
}

pub fn surrogate_trainer(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    mode: Mode,
    width: usize,
    depth: usize,
) -> Result<SurrogateTrainer<ClassificationTask>> {
    let spec = lossnet_spec(
        &ExperimentConfig {
            lossnet_width: width,
            lossnet_depth: depth,
            ..cfg.clone()
        },
        1,
    )?;
    let task = ClassificationTask::new(prep.generator.clone());
    Ok(SurrogateTrainer::new(
        classification_trainer(cfg, prep.seed, mode),
        &spec,
        task,
    )?)
}

/// Trains a surrogate of the configured architecture; returns it with the
/// frozen loss built from its best weights.
pub fn train_surrogate(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    mode: Mode,
) -> Result<(SurrogateOutcome, FrozenLoss)> {
    let t = surrogate_trainer(cfg, prep, mode, cfg.lossnet_width, cfg.lossnet_depth)?;
    let sign = t.output_sign();
    let outcome = t.run()?;
    let frozen = FrozenLoss::new(outcome.weights.clone(), sign)?;
    Ok((outcome, frozen))
}

/// `count` sub-batches drawn like training data but from the validation
/// split's dumps, on a stream the surrogate never sees.
pub fn heldout_batches(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    count: usize,
) -> Result<Vec<BatchSample>> {
    let generator =
        BatchGenerator::with_dumps(generator_config(cfg, prep.seed), prep.ce.val_dumps.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(prep.seed);
    rng.set_stream(HELDOUT_STREAM);
    (0..count)
        .map(|_| Ok(generator.sample_with(&mut rng)?.0))
        .collect()
}

/// A loss evaluated per sub-batch for correlation measurements.
#[derive(Clone, Debug)]
pub enum LossSource {
    Ce,
    Learned(FrozenLoss),
    /// `CE + α · learned`.
    CeLearned(FrozenLoss, f64),
    Rank(f64),
    NegatedMetric,
    Constant,
}

impl LossSource {
    pub fn for_mode(
        mode: LossMode,
        pcfg: &PredictionConfig,
        reloss: &FrozenLoss,
        approx: &FrozenLoss,
    ) -> Self {
        match mode {
            LossMode::Ce => LossSource::Ce,
            LossMode::Reloss => LossSource::Learned(reloss.clone()),
            LossMode::CeReloss => LossSource::CeLearned(reloss.clone(), pcfg.alpha),
            LossMode::Approx => LossSource::Learned(approx.clone()),
            LossMode::RankLoss => LossSource::Rank(pcfg.rank_steepness),
        }
    }

    pub fn from_checkpoint(path: &std::path::Path, sign: f64) -> Result<Self> {
        Ok(LossSource::Learned(FrozenLoss::new(
            load_checkpoint(path)?,
            sign,
        )?))
    }

    pub fn value(&self, batch: &BatchSample) -> Result<f64> {
        let learned = |f: &FrozenLoss| -> Result<f64> {
            Ok(f.sign * forward_loss(&f.weights, batch)? as f64)
        };
        Ok(match self {
            LossSource::Ce => cross_entropy(batch)?,
            LossSource::Learned(f) => learned(f)?,
            LossSource::CeLearned(f, alpha) => cross_entropy(batch)? + alpha * learned(f)?,
            LossSource::Rank(s) => rank_loss(batch, *s)?,
            LossSource::NegatedMetric => -accuracy(batch)?,
            LossSource::Constant => 0.0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlations {
    pub spearman: f64,
    pub kendall: f64,
}

/// Rank correlations between a loss and accuracy over `batches`.
pub fn correlate(source: &LossSource, batches: &[BatchSample]) -> Result<Correlations> {
    if batches.len() < 3 {
        return Err(HarnessError::Usage(format!(
            "correlation needs at least 3 samples, got {}",
            batches.len()
        )));
    }
    let losses = batches
        .iter()
        .map(|b| source.value(b))
        .collect::<Result<Vec<_>>>()?;
    let accs = batches
        .iter()
        .map(accuracy)
        .collect::<surrogate_core::Result<Vec<_>>>()?;
    Ok(Correlations {
        spearman: spearman_hard(&losses, &accs)?.value,
        kendall: kendall_tau(&losses, &accs)?.value,
    })
}

pub struct ReportRow {
    pub loss: String,
    pub accuracy: f64,
    pub correlations: Correlations,
}

pub struct ClassificationRun {
    pub seed: u64,
    pub reloss: SurrogateOutcome,
    pub approx: SurrogateOutcome,
    pub rows: Vec<ReportRow>,
}

impl ClassificationRun {
    pub fn row(&self, loss: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.loss == loss)
    }
}

/// Trains both surrogates (or loads the correlation one from `loss`) and a
/// classifier under every loss mode, plus the alternating variant when
/// `alternate_training` is set.
pub fn run_classification(
    cfg: &ExperimentConfig,
    seed: u64,
    loss: Option<&LossNetWeights>,
) -> Result<ClassificationRun> {
    let prep = prepare(cfg, seed)?;
    let (reloss_outcome, trained) = train_surrogate(cfg, &prep, Mode::Correlation)?;
    let reloss = match loss {
        Some(w) => FrozenLoss::new(w.clone(), 1.0)?,
        None => trained,
    };
    let (approx_outcome, approx) = train_surrogate(cfg, &prep, Mode::Approximation)?;
    let batches = heldout_batches(cfg, &prep, cfg.eval_samples)?;
    let pcfg = prediction_config(cfg, seed);

    let mut rows = Vec::new();
    for mode in LossMode::ALL {
        let accuracy = match mode {
            LossMode::Ce => prep.ce.final_accuracy(),
            LossMode::Approx => {
                train_prediction_model(mode, &pcfg, &prep.blobs, Some(&approx))?.final_accuracy()
            }
            LossMode::RankLoss => {
                train_prediction_model(mode, &pcfg, &prep.blobs, None)?.final_accuracy()
            }
            _ => train_prediction_model(mode, &pcfg, &prep.blobs, Some(&reloss))?.final_accuracy(),
        };
        let source = LossSource::for_mode(mode, &pcfg, &reloss, &approx);
        rows.push(ReportRow {
            loss: mode.to_string(),
            accuracy,
            correlations: correlate(&source, &batches)?,
        });
    }
    if cfg.trainer.alternate_training {
        let task = ClassificationTask::new(prep.generator.clone());
        let alt = train_alternate(
            &classification_trainer(cfg, seed, Mode::Correlation),
            &pcfg,
            cfg.alternate_k,
            reloss.weights.clone(),
            task,
            &prep.blobs,
        )?;
        let source = LossSource::CeLearned(FrozenLoss::new(alt.loss, 1.0)?, pcfg.alpha);
        rows.push(ReportRow {
            loss: "ce+reloss(alternate)".into(),
            accuracy: alt.prediction.final_accuracy(),
            correlations: correlate(&source, &batches)?,
        });
    }
    Ok(ClassificationRun {
        seed,
        reloss: reloss_outcome,
        approx: approx_outcome,
        rows,
    })
}

pub fn report_table(runs: &[ClassificationRun]) -> Result<Table> {
    let mut t = Table::new(&REPORT_HEADER);
    for run in runs {
        for r in &run.rows {
            t.push(vec![
                run.seed.to_string(),
                r.loss.clone(),
                num("accuracy", r.accuracy)?,
                num("spearman", r.correlations.spearman)?,
                num("kendall", r.correlations.kendall)?,
            ]);
        }
    }
    Ok(t)
}

/// Writes the surrogate checkpoints and logs of one seed.
pub fn write_surrogates(cfg: &ExperimentConfig, run: &ClassificationRun) -> Result<()> {
    let dir = seed_dir(&cfg.out, run.seed);
    for (name, o) in [("reloss", &run.reloss), ("approx", &run.approx)] {
        write_checkpoint(&dir.join(format!("{name}.reloss")), &o.weights)?;
        write_log(&dir.join(format!("{name}_log.csv")), &o.log, cfg.timing)?;
    }
    Ok(())
}

/// Fresh draws for `corr-eval`: the configured generator and dumps, or
/// `G_R` alone when no dumps are given.
pub fn eval_batches(cfg: &ExperimentConfig, seed: u64, count: usize) -> Result<Vec<BatchSample>> {
    if count < 3 {
        return Err(HarnessError::Usage(format!(
            "correlation needs at least 3 samples, got {count}"
        )));
    }
    let dumps = external_dumps(cfg)?;
    let mut gcfg = generator_config(cfg, seed);
    if dumps.is_empty() {
        gcfg.p = 1.0;
    }
    let generator = BatchGenerator::with_dumps(gcfg, dumps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(HELDOUT_STREAM);
    (0..count)
        .map(|_| Ok(generator.sample_with(&mut rng)?.0))
        .collect()
}
