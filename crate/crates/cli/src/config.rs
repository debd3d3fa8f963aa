//! Flat `key = value` experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use surrogate_core::data::BlobsConfig;
use surrogate_core::generators::GeneratorConfig;
use surrogate_core::trainer::{DescentConfig, PredictionConfig, TrainerConfig};

use crate::error::{HarnessError, Result};

/// Step budget used when `max_steps` is not set.
pub const SYNTHETIC_STEPS: usize = 2000;
pub const CLASSIFICATION_STEPS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub trainer: TrainerConfig,
    /// Explicit surrogate step budget; per-task default otherwise.
    pub max_steps: Option<usize>,
    pub generator: GeneratorConfig,
    pub prediction: PredictionConfig,
    pub descent: DescentConfig,
    pub blobs: BlobsConfig,
    /// Synthetic metric input width.
    pub metric_dim: usize,
    pub metric_gain: f32,
    /// Finite pool of synthetic observations; 0 draws fresh inputs.
    pub pool: usize,
    /// Surrogate architecture: hidden width and hidden layer count.
    pub lossnet_width: usize,
    pub lossnet_depth: usize,
    /// Held-out sub-batches for correlation evaluation.
    pub eval_samples: usize,
    /// Surrogate steps per epoch in alternate training.
    pub alternate_k: usize,
    pub levels: Vec<f64>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Record wall-clock milliseconds in training logs (breaks byte
    /// reproducibility).
    pub timing: bool,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trainer: TrainerConfig::default(),
            max_steps: None,
            generator: GeneratorConfig::default(),
            prediction: PredictionConfig::default(),
            descent: DescentConfig::default(),
            blobs: BlobsConfig::default(),
            metric_dim: 16,
            metric_gain: 1.0,
            pool: 0,
            lossnet_width: 128,
            lossnet_depth: 3,
            eval_samples: 200,
            alternate_k: 10,
            levels: vec![-0.5, -0.8, -0.95],
            widths: vec![16, 32, 64, 128],
            depths: vec![1, 2, 3],
            seeds: vec![0],
            out: PathBuf::from("out"),
            timing: false,
            parallel: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Usage(format!(
            "invalid value {value:?} for {key}"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl ExperimentConfig {
    /// Every accepted key, in documentation order.
    pub const KEYS: &'static [&'static str] = &[
        "n",
        "p",
        "lambda",
        "steepness",
        "standardize",
        "lr",
        "weight_decay",
        "beta1",
        "beta2",
        "adam_eps",
        "max_steps",
        "window",
        "plateau_tol",
        "min_steps",
        "mode",
        "alternate_training",
        "orient_init",
        "eval_every",
        "val_batches",
        "warmup",
        "sub_batch",
        "num_classes",
        "dump_paths",
        "epochs",
        "batch_size",
        "model_lr",
        "model_hidden",
        "alpha",
        "rank_steepness",
        "descent_starts",
        "descent_steps",
        "descent_lr",
        "descent_every",
        "blob_dim",
        "blob_train",
        "blob_val",
        "blob_spread",
        "metric_dim",
        "metric_gain",
        "pool",
        "lossnet_width",
        "lossnet_depth",
        "eval_samples",
        "alternate_k",
        "levels",
        "widths",
        "depths",
        "seed",
        "out",
        "timing",
        "parallel",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.trainer;
        match key {
            "n" => t.n = parse(key, v)?,
            "p" => {
                t.p = parse(key, v)?;
                self.generator.p = t.p;
            }
            "lambda" => t.lambda = parse(key, v)?,
            "steepness" => t.steepness = parse(key, v)?,
            "standardize" => t.standardize = parse_bool(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "weight_decay" => t.weight_decay = parse(key, v)?,
            "beta1" => t.beta1 = parse(key, v)?,
            "beta2" => t.beta2 = parse(key, v)?,
            "adam_eps" => t.adam_eps = parse(key, v)?,
            "max_steps" => self.max_steps = Some(parse(key, v)?),
            "window" => t.window = parse(key, v)?,
            "plateau_tol" => t.plateau_tol = parse(key, v)?,
            "min_steps" => t.min_steps = parse(key, v)?,
            "mode" => t.mode = v.parse().map_err(|e| HarnessError::Usage(format!("{e}")))?,
            "alternate_training" => t.alternate_training = parse_bool(key, v)?,
            "orient_init" => t.orient_init = parse_bool(key, v)?,
            "eval_every" => t.eval_every = parse(key, v)?,
            "val_batches" => t.val_batches = parse(key, v)?,
            "warmup" => t.warmup = parse(key, v)?,
            "sub_batch" => self.generator.sub_batch = parse(key, v)?,
            "num_classes" => {
                self.generator.num_classes = parse(key, v)?;
                self.blobs.classes = self.generator.num_classes;
            }
            "dump_paths" => {
                self.generator.dump_paths = parse_list::<String>(key, v)?
                    .into_iter()
                    .map(PathBuf::from)
                    .collect()
            }
            "epochs" => self.prediction.epochs = parse(key, v)?,
            "batch_size" => self.prediction.batch_size = parse(key, v)?,
            "model_lr" => self.prediction.lr = parse(key, v)?,
            "model_hidden" => self.prediction.hidden = parse(key, v)?,
            "alpha" => self.prediction.alpha = parse(key, v)?,
            "rank_steepness" => self.prediction.rank_steepness = parse(key, v)?,
            "descent_starts" => self.descent.starts = parse(key, v)?,
            "descent_steps" => self.descent.steps = parse(key, v)?,
            "descent_lr" => self.descent.lr = parse(key, v)?,
            "descent_every" => self.descent.eval_every = parse(key, v)?,
            "blob_dim" => self.blobs.dim = parse(key, v)?,
            "blob_train" => self.blobs.train = parse(key, v)?,
            "blob_val" => self.blobs.val = parse(key, v)?,
            "blob_spread" => self.blobs.spread = parse(key, v)?,
            "metric_dim" => self.metric_dim = parse(key, v)?,
            "metric_gain" => self.metric_gain = parse(key, v)?,
            "pool" => self.pool = parse(key, v)?,
            "lossnet_width" => self.lossnet_width = parse(key, v)?,
            "lossnet_depth" => self.lossnet_depth = parse(key, v)?,
            "eval_samples" => self.eval_samples = parse(key, v)?,
            "alternate_k" => self.alternate_k = parse(key, v)?,
            "levels" => self.levels = parse_list(key, v)?,
            "widths" => self.widths = parse_list(key, v)?,
            "depths" => self.depths = parse_list(key, v)?,
            "seed" => self.seeds = parse_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "timing" => self.timing = parse_bool(key, v)?,
            "parallel" => self.parallel = parse_bool(key, v)?,
            _ => return Err(HarnessError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Usage(format!("line {}: expected key = value", i + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| HarnessError::Usage(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        self.apply_text(&text)
    }

    /// Serialized form accepted by [`ExperimentConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let t = &self.trainer;
        let list = |v: &[String]| v.join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("n", t.n.to_string());
        put("p", self.generator.p.to_string());
        put("lambda", t.lambda.to_string());
        put("steepness", t.steepness.to_string());
        put("standardize", t.standardize.to_string());
        put("lr", t.lr.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("beta1", t.beta1.to_string());
        put("beta2", t.beta2.to_string());
        put("adam_eps", t.adam_eps.to_string());
        if let Some(m) = self.max_steps {
            put("max_steps", m.to_string());
        }
        put("window", t.window.to_string());
        put("plateau_tol", t.plateau_tol.to_string());
        put("min_steps", t.min_steps.to_string());
        put("mode", t.mode.to_string());
        put("alternate_training", t.alternate_training.to_string());
        put("orient_init", t.orient_init.to_string());
        put("eval_every", t.eval_every.to_string());
        put("val_batches", t.val_batches.to_string());
        put("warmup", t.warmup.to_string());
        put("sub_batch", self.generator.sub_batch.to_string());
        put("num_classes", self.generator.num_classes.to_string());
        put(
            "dump_paths",
            list(
                &self
                    .generator
                    .dump_paths
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>(),
            ),
        );
        put("epochs", self.prediction.epochs.to_string());
        put("batch_size", self.prediction.batch_size.to_string());
        put("model_lr", self.prediction.lr.to_string());
        put("model_hidden", self.prediction.hidden.to_string());
        put("alpha", self.prediction.alpha.to_string());
        put("rank_steepness", self.prediction.rank_steepness.to_string());
        put("descent_starts", self.descent.starts.to_string());
        put("descent_steps", self.descent.steps.to_string());
        put("descent_lr", self.descent.lr.to_string());
        put("descent_every", self.descent.eval_every.to_string());
        put("blob_dim", self.blobs.dim.to_string());
        put("blob_train", self.blobs.train.to_string());
        put("blob_val", self.blobs.val.to_string());
        put("blob_spread", self.blobs.spread.to_string());
        put("metric_dim", self.metric_dim.to_string());
        put("metric_gain", self.metric_gain.to_string());
        put("pool", self.pool.to_string());
        put("lossnet_width", self.lossnet_width.to_string());
        put("lossnet_depth", self.lossnet_depth.to_string());
        put("eval_samples", self.eval_samples.to_string());
        put("alternate_k", self.alternate_k.to_string());
        put(
            "levels",
            list(
                &self
                    .levels
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>(),
            ),
        );
        put(
            "widths",
            list(
                &self
                    .widths
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>(),
            ),
        );
        put(
            "depths",
            list(
                &self
                    .depths
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>(),
            ),
        );
        put(
            "seed",
            list(&self.seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>()),
        );
        put("out", self.out.display().to_string());
        put("timing", self.timing.to_string());
        put("parallel", self.parallel.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Usage("at least one seed is required".into()));
        }
        if self.metric_dim == 0 || self.lossnet_width == 0 || self.lossnet_depth == 0 {
            return Err(HarnessError::Usage(
                "metric_dim, lossnet_width and lossnet_depth must be positive".into(),
            ));
        }
        if self.eval_samples < 3 {
            return Err(HarnessError::Usage(format!(
                "eval_samples must be at least 3, got {}",
                self.eval_samples
            )));
        }
        self.trainer.validate()?;
        self.generator.validate()?;
        self.prediction.validate()?;
        self.descent.validate()?;
        Ok(())
    }

    /// Trainer settings for one seed with the task's default budget.
    pub fn trainer_for(&self, seed: u64, default_steps: usize) -> TrainerConfig {
        TrainerConfig {
            seed,
            max_steps: self.max_steps.unwrap_or(default_steps),
            ..self.trainer.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_accepted_and_round_trips() {
        let mut c = ExperimentConfig {
            max_steps: Some(7),
            ..Default::default()
        };
        c.generator.dump_paths = vec![PathBuf::from("a.csv"), PathBuf::from("b.csv")];
        c.seeds = vec![3, 4];
        let text = c.to_text();
        let keys: Vec<&str> = text
            .lines()
            .map(|l| l.split(" = ").next().unwrap())
            .collect();
        assert_eq!(keys, ExperimentConfig::KEYS);
        let mut back = ExperimentConfig::default();
        back.apply_text(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_blank_lines_and_errors() {
        let mut c = ExperimentConfig::default();
        c.apply_text("# budget\n\nmax_steps = 12  # short\nlambda=0\n")
            .unwrap();
        assert_eq!(c.max_steps, Some(12));
        assert_eq!(c.trainer.lambda, 0.0);
        assert!(matches!(
            c.apply_text("nonsense"),
            Err(HarnessError::Usage(_))
        ));
        assert!(matches!(
            c.apply_text("bogus = 1"),
            Err(HarnessError::Usage(_))
        ));
        assert!(matches!(
            c.apply_text("n = many"),
            Err(HarnessError::Usage(_))
        ));
        assert!(matches!(
            c.apply_text("standardize = maybe"),
            Err(HarnessError::Usage(_))
        ));
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let mut c = ExperimentConfig::default();
        c.set("seed", "").unwrap();
        assert!(matches!(c.validate(), Err(HarnessError::Usage(_))));
    }
}
