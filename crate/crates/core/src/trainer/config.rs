use crate::error::{CoreError, Result};
use crate::optim::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Soft Spearman between loss values and metric scores, plus the
    /// gradient penalty.
    Correlation,
    /// Mean squared error against min-max normalized metric values.
    Approximation,
}

impl std::str::FromStr for Mode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlation" => Ok(Mode::Correlation),
            "approximation" => Ok(Mode::Approximation),
            _ => Err(CoreError::Config(format!("unknown mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Correlation => "correlation",
            Mode::Approximation => "approximation",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    /// Sub-batches per step.
    pub n: usize,
    /// Probability of drawing from `G_R`.
    pub p: f64,
    pub lambda: f64,
    pub steepness: f64,
    /// Z-score the loss values before soft ranking.
    pub standardize: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_steps: usize,
    /// Trailing window (steps) for the stopping rules.
    pub window: usize,
    pub plateau_tol: f64,
    /// No stopping rule fires before this many steps.
    pub min_steps: usize,
    pub seed: u64,
    pub mode: Mode,
    pub alternate_training: bool,
    /// Negate a positively correlated initial net (correlation mode).
    pub orient_init: bool,
    /// Validation interval in steps.
    pub eval_every: usize,
    /// Held-out sub-batches used for validation.
    pub val_batches: usize,
    /// Metric draws used to fix the approximation-mode normalization.
    pub warmup: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            n: 64,
            p: 0.5,
            lambda: 10.0,
            steepness: 30.0,
            standardize: true,
            lr: 0.01,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_steps: 2000,
            window: 50,
            plateau_tol: 1e-3,
            min_steps: 0,
            seed: 0,
            mode: Mode::Correlation,
            alternate_training: false,
            orient_init: true,
            eval_every: 25,
            val_batches: 256,
            warmup: 1024,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.n < 3 {
            return fail(format!("n must be at least 3, got {}", self.n));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.steepness > 0.0) {
            return fail(format!(
                "steepness must be positive, got {}",
                self.steepness
            ));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return fail(format!("p must be in [0, 1], got {}", self.p));
        }
        if self.window == 0 || self.eval_every == 0 {
            return fail("window and eval_every must be positive".into());
        }
        if self.val_batches < 3 {
            return fail(format!(
                "val_batches must be at least 3, got {}",
                self.val_batches
            ));
        }
        if self.mode == Mode::Approximation && self.warmup < 2 {
            return fail("approximation mode needs at least 2 warmup draws".into());
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}
