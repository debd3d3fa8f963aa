//! Alternating surrogate and prediction-model training.

use crate::data::Blobs;
use crate::error::{CoreError, Result};
use crate::lossnet::LossNetWeights;
use crate::trainer::config::{Mode, TrainerConfig};
use crate::trainer::prediction::{
    ClassifierTrainer, FrozenLoss, LossMode, PredictionConfig, PredictionOutcome,
};
use crate::trainer::surrogate::SurrogateTrainer;
use crate::trainer::task::ClassificationTask;

#[derive(Clone, Debug)]
pub struct AlternateOutcome {
    pub loss: LossNetWeights,
    pub prediction: PredictionOutcome,
    pub surrogate_steps: usize,
}

/// Trains the classifier under `CE + α · ReLoss`, running `k` further
/// surrogate steps after every epoch with `G_M` extended by the live model's
/// training-split predictions. `k = 0` reduces to training under the frozen
/// `initial` loss.
pub fn train_alternate(
    cfg: &TrainerConfig,
    pcfg: &PredictionConfig,
    k: usize,
    initial: LossNetWeights,
    task: ClassificationTask,
    blobs: &Blobs,
) -> Result<AlternateOutcome> {
    if !cfg.alternate_training {
        return Err(CoreError::Config(
            "train_alternate needs alternate_training = true".into(),
        ));
    }
    if cfg.mode != Mode::Correlation {
        return Err(CoreError::Config(
            "alternate training learns the loss by correlation".into(),
        ));
    }
    let frozen = FrozenLoss::new(initial.clone(), 1.0)?;
    let mut model = ClassifierTrainer::new(LossMode::CeReloss, pcfg, blobs, Some(frozen))?;
    let mut surrogate = if k > 0 {
        let cfg = TrainerConfig {
            orient_init: false,
            ..cfg.clone()
        };
        Some(SurrogateTrainer::with_weights(cfg, initial.clone(), task)?)
    } else {
        None
    };
    let base_dumps = surrogate
        .as_ref()
        .map(|s| s.task().generator().dumps().to_vec())
        .unwrap_or_default();
    for _ in 0..pcfg.epochs {
        model.run_epoch()?;
        if let Some(s) = surrogate.as_mut() {
            let mut dumps = base_dumps.clone();
            dumps.push(model.model().dump(&blobs.train)?);
            s.task_mut().generator_mut().set_dumps(dumps)?;
            for _ in 0..k {
                s.step()?;
            }
            model.set_frozen(FrozenLoss::new(s.weights().clone(), s.output_sign())?)?;
        }
    }
    let (loss, steps) = match surrogate {
        Some(s) => (s.weights().clone(), s.steps_done()),
        None => (initial, 0),
    };
    Ok(AlternateOutcome {
        loss,
        prediction: model.finish(),
        surrogate_steps: steps,
    })
}
