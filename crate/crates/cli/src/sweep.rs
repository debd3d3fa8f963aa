//! Downstream accuracy against surrogate correlation level and capacity.

use surrogate_core::lossnet::{LossNetSpec, LossNetWeights};
use surrogate_core::trainer::{
    train_prediction_model, ClassificationTask, FrozenLoss, LossMode, Mode, SurrogateTrainer,
    ValidationPoint,
};

use crate::classification::{
    correlate, heldout_batches, prediction_config, prepare, surrogate_trainer, LossSource,
};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{num, Table};

pub const LEVELS_HEADER: [&str; 6] = [
    "seed",
    "level",
    "step",
    "spearman",
    "heldout_spearman",
    "accuracy",
];
pub const CAPACITY_HEADER: [&str; 7] = [
    "seed",
    "width",
    "depth",
    "param_count",
    "spearman",
    "heldout_spearman",
    "accuracy",
];

/// Downstream classifier trained under the learned loss alone, so its
/// accuracy reflects the surrogate rather than CE.
const DOWNSTREAM: LossMode = LossMode::Reloss;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Levels,
    Capacity,
}

impl std::str::FromStr for SweepKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "levels" => Ok(SweepKind::Levels),
            "capacity" => Ok(SweepKind::Capacity),
            _ => Err(HarnessError::Usage(format!(
                "unknown sweep {s:?} (levels, capacity)"
            ))),
        }
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(HarnessError::Usage("the levels grid is empty".into()));
    }
    if let Some(l) = levels.iter().find(|l| !(-1.0..=0.0).contains(*l)) {
        return Err(HarnessError::Usage(format!(
            "correlation level {l} is outside [-1, 0]"
        )));
    }
    Ok(())
}

fn check_capacity(widths: &[usize], depths: &[usize]) -> Result<()> {
    if widths.is_empty() || depths.is_empty() {
        return Err(HarnessError::Usage("the capacity grid is empty".into()));
    }
    if widths.contains(&0) || depths.contains(&0) {
        return Err(HarnessError::Usage(
            "widths and depths must be positive".into(),
        ));
    }
    Ok(())
}

type Snapshot = Option<(ValidationPoint, LossNetWeights)>;

/// Fills every unfilled level reached by a validation point newer than
/// `seen`.
fn record(
    trainer: &SurrogateTrainer<ClassificationTask>,
    levels: &[f64],
    snaps: &mut [Snapshot],
    seen: &mut usize,
) {
    let history = trainer.validation_history();
    if history.len() == *seen {
        return;
    }
    *seen = history.len();
    let p = *history.last().unwrap();
    for (slot, &level) in snaps.iter_mut().zip(levels) {
        if slot.is_none() && p.spearman <= level {
            *slot = Some((p, trainer.weights().clone()));
        }
    }
}

/// One correlation-trained surrogate per seed, snapshotted the first time
/// its validation Spearman reaches each level. A level never reached takes
/// the best weights seen.
pub fn sweep_levels(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    check_levels(&cfg.levels)?;
    let prep = prepare(cfg, seed)?;
    let mut trainer = surrogate_trainer(
        cfg,
        &prep,
        Mode::Correlation,
        cfg.lossnet_width,
        cfg.lossnet_depth,
    )?;
    let sign = trainer.output_sign();
    let mut snaps: Vec<Snapshot> = vec![None; cfg.levels.len()];
    let mut seen = 0;
    trainer.validate()?;
    record(&trainer, &cfg.levels, &mut snaps, &mut seen);
    let stop = loop {
        if snaps.iter().all(Option::is_some) {
            break None;
        }
        if let Some(reason) = trainer.stop_reason() {
            break Some(reason);
        }
        trainer.step()?;
        record(&trainer, &cfg.levels, &mut snaps, &mut seen);
    };
    let best = match stop {
        Some(reason) => {
            let o = trainer.finish(reason)?;
            Some((o.best, o.weights))
        }
        None => None,
    };

    let batches = heldout_batches(cfg, &prep, cfg.eval_samples)?;
    let pcfg = prediction_config(cfg, seed);
    let mut table = Table::new(&LEVELS_HEADER);
    for (slot, &level) in snaps.into_iter().zip(&cfg.levels) {
        let (point, weights) = slot
            .or_else(|| best.clone())
            .expect("a snapshot or the best weights");
        let frozen = FrozenLoss::new(weights, sign)?;
        let heldout = correlate(&LossSource::Learned(frozen.clone()), &batches)?;
        let acc =
            train_prediction_model(DOWNSTREAM, &pcfg, &prep.blobs, Some(&frozen))?.final_accuracy();
        table.push(vec![
            seed.to_string(),
            level.to_string(),
            point.step.to_string(),
            num("spearman", point.spearman)?,
            num("held-out spearman", heldout.spearman)?,
            num("accuracy", acc)?,
        ]);
    }
    Ok(table)
}

/// Surrogates over the width × depth grid, each trained to its stopping
/// rule and kept at its best validation point.
pub fn sweep_capacity(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    check_capacity(&cfg.widths, &cfg.depths)?;
    let prep = prepare(cfg, seed)?;
    let batches = heldout_batches(cfg, &prep, cfg.eval_samples)?;
    let pcfg = prediction_config(cfg, seed);
    let mut table = Table::new(&CAPACITY_HEADER);
    for &width in &cfg.widths {
        for &depth in &cfg.depths {
            let trainer = surrogate_trainer(cfg, &prep, Mode::Correlation, width, depth)?;
            let sign = trainer.output_sign();
            let o = trainer.run()?;
            let frozen = FrozenLoss::new(o.weights, sign)?;
            let heldout = correlate(&LossSource::Learned(frozen.clone()), &batches)?;
            let acc = train_prediction_model(DOWNSTREAM, &pcfg, &prep.blobs, Some(&frozen))?
                .final_accuracy();
            table.push(vec![
                seed.to_string(),
                width.to_string(),
                depth.to_string(),
                LossNetSpec::mlp(1, width, depth)?.param_count().to_string(),
                num("spearman", o.best.spearman)?,
                num("held-out spearman", heldout.spearman)?,
                num("accuracy", acc)?,
            ]);
        }
    }
    Ok(table)
}

/// Validates a grid before any training starts.
pub fn check_grid(cfg: &ExperimentConfig, kind: SweepKind) -> Result<()> {
    match kind {
        SweepKind::Levels => check_levels(&cfg.levels),
        SweepKind::Capacity => check_capacity(&cfg.widths, &cfg.depths),
    }
}
