use rand::Rng;
use rand_chacha::ChaCha8Rng;
use surrogate_core::data::{Blobs, BlobsConfig};
use surrogate_core::generators::{BatchGenerator, GeneratorConfig};
use surrogate_core::lossnet::{build_lossnet, LossNetSpec, LossNetWeights};
use surrogate_core::metrics::SyntheticMetric;
use surrogate_core::trainer::{
    pooled_losses, train_alternate, train_prediction_model, ClassificationTask, Draw, FrozenLoss,
    LossMode, MetricTask, Mode, PredictionConfig, SurrogateTrainer, SyntheticTask, TrainerConfig,
};
use surrogate_core::Result;

fn synthetic(seed: u64) -> SyntheticTask {
    SyntheticTask::new(SyntheticMetric::new(16, seed).unwrap())
}

fn small(mode: Mode, steps: usize) -> TrainerConfig {
    TrainerConfig {
        n: 16,
        max_steps: steps,
        min_steps: steps,
        val_batches: 32,
        warmup: 64,
        eval_every: 10,
        mode,
        seed: 7,
        ..Default::default()
    }
}

fn spec() -> LossNetSpec {
    LossNetSpec::mlp(16, 32, 2).unwrap()
}

#[test]
fn same_seed_gives_identical_checkpoints_and_logs() {
    for mode in [Mode::Correlation, Mode::Approximation] {
        let run = || {
            SurrogateTrainer::new(small(mode, 40), &spec(), synthetic(3))
                .unwrap()
                .run()
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.weights.to_bytes(), b.weights.to_bytes(), "{mode}");
        assert_eq!(
            a.final_weights.to_bytes(),
            b.final_weights.to_bytes(),
            "{mode}"
        );
        assert_eq!(
            a.log.without_timing().to_csv(),
            b.log.without_timing().to_csv(),
            "{mode}"
        );
    }
}

#[test]
fn logged_objective_is_reproducible_from_weights() {
    for mode in [Mode::Correlation, Mode::Approximation] {
        let mut t = SurrogateTrainer::new(small(mode, 30), &spec(), synthetic(1)).unwrap();
        for s in 0..30 {
            let before = t.weights().clone();
            let bytes = before.to_bytes();
            let restored = LossNetWeights::from_bytes(&bytes).unwrap();
            let row = t.step().unwrap();
            assert_eq!(row.step, s);
            assert_eq!(
                t.objective_at(&restored, s).unwrap().to_bits(),
                row.objective.to_bits(),
                "{mode} step {s}"
            );
        }
    }
}

#[test]
fn zero_lambda_objective_is_the_soft_spearman() {
    let cfg = TrainerConfig {
        lambda: 0.0,
        ..small(Mode::Correlation, 40)
    };
    let out = SurrogateTrainer::new(cfg, &spec(), synthetic(2))
        .unwrap()
        .run()
        .unwrap();
    for r in out.log.rows() {
        assert_eq!(r.objective, r.spearman_soft, "step {}", r.step);
    }
}

#[test]
fn soft_and_hard_spearman_agree_once_strong() {
    let cfg = TrainerConfig {
        n: 64,
        ..small(Mode::Correlation, 300)
    };
    let out = SurrogateTrainer::new(cfg, &spec(), synthetic(0))
        .unwrap()
        .run()
        .unwrap();
    let strong: Vec<_> = out
        .log
        .rows()
        .iter()
        .filter(|r| r.spearman_soft.abs() >= 0.9)
        .collect();
    assert!(strong.len() > 100, "only {} strong steps", strong.len());
    for r in strong {
        assert!(
            (r.spearman_soft - r.spearman_hard).abs() <= 0.05,
            "step {}: soft {} hard {}",
            r.step,
            r.spearman_soft,
            r.spearman_hard
        );
    }
}

#[test]
fn penalty_settles_below_threshold() {
    let cfg = TrainerConfig {
        n: 64,
        ..small(Mode::Correlation, 600)
    };
    let out = SurrogateTrainer::new(cfg, &spec(), synthetic(0))
        .unwrap()
        .run()
        .unwrap();
    let tail = out.log.trailing_mean(100, |r| r.penalty_mean).unwrap();
    assert!(tail <= 1e-2, "trailing penalty {tail}");
    let head = out.log.rows()[..100]
        .iter()
        .map(|r| r.penalty_mean)
        .sum::<f64>()
        / 100.0;
    assert!(tail < head, "penalty rose from {head} to {tail}");
}

/// Every draw has the same metric value.
struct Constant {
    value: f64,
}

impl MetricTask for Constant {
    fn width(&self) -> usize {
        2
    }

    fn rows(&self) -> usize {
        4
    }

    fn higher_is_better(&self) -> bool {
        false
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Draw> {
        Ok(Draw {
            inputs: (0..8).map(|_| rng.gen_range(-1.0f32..=1.0)).collect(),
            metric: self.value,
        })
    }
}

#[test]
fn approximation_of_a_constant_metric_converges_to_it() {
    let cfg = small(Mode::Approximation, 500);
    let task = Constant { value: 0.3 };
    let out = SurrogateTrainer::new(cfg, &LossNetSpec::mlp(2, 16, 1).unwrap(), task)
        .unwrap()
        .run()
        .unwrap();
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(99);
    let inputs: Vec<f32> = (0..4 * 64).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    for l in pooled_losses(&out.weights, &inputs, 4).unwrap() {
        assert!((l as f64 - 0.3).abs() <= 1e-2, "{l}");
    }
}

fn toy(cfg: BlobsConfig, epochs: usize) -> (Blobs, PredictionConfig, ClassificationTask) {
    let blobs = Blobs::generate(cfg, 5).unwrap();
    let pcfg = PredictionConfig {
        epochs,
        seed: 5,
        ..Default::default()
    };
    let ce = train_prediction_model(LossMode::Ce, &pcfg, &blobs, None).unwrap();
    let generator = BatchGenerator::with_dumps(
        GeneratorConfig {
            seed: 5,
            ..Default::default()
        },
        ce.train_dumps,
    )
    .unwrap();
    (blobs, pcfg, ClassificationTask::new(generator))
}

fn alternate_cfg() -> TrainerConfig {
    TrainerConfig {
        alternate_training: true,
        ..small(Mode::Correlation, 200)
    }
}

fn initial_loss(task: &ClassificationTask) -> LossNetWeights {
    SurrogateTrainer::new(
        alternate_cfg(),
        &LossNetSpec::mlp(1, 32, 2).unwrap(),
        task.clone(),
    )
    .unwrap()
    .run()
    .unwrap()
    .weights
}

#[test]
fn alternate_with_no_surrogate_steps_is_frozen_training() {
    let small = BlobsConfig {
        train: 512,
        val: 256,
        ..Default::default()
    };
    let (blobs, pcfg, task) = toy(small, 4);
    let w = initial_loss(&task);
    let alt = train_alternate(&alternate_cfg(), &pcfg, 0, w.clone(), task, &blobs).unwrap();
    let frozen = train_prediction_model(
        LossMode::CeReloss,
        &pcfg,
        &blobs,
        Some(&FrozenLoss::new(w.clone(), 1.0).unwrap()),
    )
    .unwrap();
    assert_eq!(alt.loss, w);
    assert_eq!(alt.surrogate_steps, 0);
    assert_eq!(alt.prediction.accuracy, frozen.accuracy);
    assert_eq!(alt.prediction.train_dumps, frozen.train_dumps);
}

#[test]
fn alternate_training_is_deterministic_and_close_to_frozen() {
    let (blobs, pcfg, task) = toy(BlobsConfig::default(), 10);
    let w = initial_loss(&task);
    let run =
        || train_alternate(&alternate_cfg(), &pcfg, 10, w.clone(), task.clone(), &blobs).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.loss.to_bytes(), b.loss.to_bytes());
    assert_eq!(a.prediction.accuracy, b.prediction.accuracy);
    assert_eq!(a.surrogate_steps, 10 * pcfg.epochs);
    let frozen = train_prediction_model(
        LossMode::CeReloss,
        &pcfg,
        &blobs,
        Some(&FrozenLoss::new(w, 1.0).unwrap()),
    )
    .unwrap()
    .final_accuracy();
    let gap = (a.prediction.final_accuracy() - frozen).abs();
    assert!(
        gap <= 0.01,
        "alternate {} frozen {frozen}",
        a.prediction.final_accuracy()
    );
}

#[test]
fn build_is_seeded() {
    let a = build_lossnet(&spec(), 11).unwrap();
    assert_eq!(a, build_lossnet(&spec(), 11).unwrap());
    assert_ne!(a, build_lossnet(&spec(), 12).unwrap());
}
