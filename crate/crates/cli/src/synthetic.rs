//! The synthetic study: surrogates of a frozen random network learned by
//! correlation and by regression, then used to descend free inputs.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use surrogate_core::correlation::spearman_hard;
use surrogate_core::lossnet::LossNetSpec;
use surrogate_core::metrics::SyntheticMetric;
use surrogate_core::trainer::{
    descend_inputs, draw_sub_batches, DescentConfig, DescentTrace, MetricTask, Mode,
    SurrogateOutcome, SurrogateTrainer, SyntheticTask, TrainerConfig, ValidationPoint,
};

use crate::config::{ExperimentConfig, SYNTHETIC_STEPS};
use crate::error::Result;
use crate::output::{num, seed_dir, write_checkpoint, write_log, Table};

/// Stream for drawing the finite observation pool.
const POOL_STREAM: u64 = 1 << 32;

pub const FIG2B_HEADER: [&str; 4] = ["step", "direct", "approximation", "correlation"];
pub const FIG2C_HEADER: [&str; 4] = ["step", "direct", "approximation", "correlation"];

pub struct Arm {
    pub outcome: SurrogateOutcome,
    /// Sign turning the raw output into the loss that is minimized.
    pub sign: f64,
    pub elapsed: Duration,
    pub descent: DescentTrace,
}

pub struct SyntheticRun {
    pub seed: u64,
    pub correlation: Arm,
    pub approximation: Arm,
    pub direct: DescentTrace,
    /// Held-out Spearman of the metric against its own score.
    pub direct_spearman: f64,
    pub fig2b: Table,
    pub fig2c: Table,
}

impl SyntheticRun {
    fn final_value(table: &Table, column: &str) -> f64 {
        *table.column(column).unwrap().last().unwrap()
    }

    pub fn final_spearman(&self, arm: &str) -> f64 {
        Self::final_value(&self.fig2b, arm)
    }

    pub fn final_metric(&self, arm: &str) -> f64 {
        Self::final_value(&self.fig2c, arm)
    }
}

pub fn synthetic_task(cfg: &ExperimentConfig, seed: u64) -> Result<SyntheticTask> {
    let metric = SyntheticMetric::with_gain(cfg.metric_dim, seed, cfg.metric_gain)?;
    if cfg.pool == 0 {
        return Ok(SyntheticTask::new(metric));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POOL_STREAM);
    let pool = (0..cfg.pool)
        .map(|_| SyntheticTask::sample_input(cfg.metric_dim, &mut rng))
        .collect();
    Ok(SyntheticTask::with_pool(metric, pool)?)
}

pub fn lossnet_spec(cfg: &ExperimentConfig, input: usize) -> Result<LossNetSpec> {
    Ok(LossNetSpec::mlp(
        input,
        cfg.lossnet_width,
        cfg.lossnet_depth,
    )?)
}

fn descent_config(cfg: &ExperimentConfig, seed: u64) -> DescentConfig {
    DescentConfig {
        seed,
        ..cfg.descent.clone()
    }
}

fn run_arm(cfg: &ExperimentConfig, seed: u64, mode: Mode) -> Result<Arm> {
    let started = Instant::now();
    let task = synthetic_task(cfg, seed)?;
    let metric = task.metric().clone();
    // Both arms spend the whole budget so their curves are comparable.
    let budget = cfg.trainer_for(seed, SYNTHETIC_STEPS);
    let tcfg = TrainerConfig {
        mode,
        min_steps: budget.max_steps,
        ..budget
    };
    let trainer = SurrogateTrainer::new(tcfg, &lossnet_spec(cfg, cfg.metric_dim)?, task)?;
    let sign = trainer.output_sign();
    let outcome = trainer.run()?;
    let elapsed = started.elapsed();
    let descent = descend_inputs(&metric, &outcome.weights, sign, &descent_config(cfg, seed))?;
    Ok(Arm {
        outcome,
        sign,
        elapsed,
        descent,
    })
}

/// Latest validation value at or before `step`.
fn value_at(history: &[ValidationPoint], step: usize) -> f64 {
    history
        .iter()
        .take_while(|p| p.step <= step)
        .last()
        .map_or(history[0].spearman, |p| p.spearman)
}

pub fn run_synthetic(cfg: &ExperimentConfig, seed: u64) -> Result<SyntheticRun> {
    let correlation = run_arm(cfg, seed, Mode::Correlation)?;
    let approximation = run_arm(cfg, seed, Mode::Approximation)?;

    let task = synthetic_task(cfg, seed)?;
    let metric = task.metric().clone();
    let (_, held_out) = draw_sub_batches(&task, seed, u64::MAX, cfg.trainer.val_batches)?;
    let scores: Vec<f64> = held_out.iter().map(|&m| task.score(m)).collect();
    let direct_spearman = spearman_hard(&held_out, &scores)?.value;
    let direct = descend_inputs(&metric, metric.network(), 1.0, &descent_config(cfg, seed))?;

    let ca = &correlation.outcome.validation;
    let aa = &approximation.outcome.validation;
    let mut steps: Vec<usize> = ca.iter().chain(aa.iter()).map(|p| p.step).collect();
    steps.sort_unstable();
    steps.dedup();
    let mut fig2b = Table::new(&FIG2B_HEADER);
    for s in steps {
        fig2b.push(vec![
            s.to_string(),
            num("direct spearman", direct_spearman)?,
            num("approximation spearman", value_at(aa, s))?,
            num("correlation spearman", value_at(ca, s))?,
        ]);
    }
    let mut fig2c = Table::new(&FIG2C_HEADER);
    for ((d, a), c) in direct
        .points
        .iter()
        .zip(&approximation.descent.points)
        .zip(&correlation.descent.points)
    {
        fig2c.push(vec![
            d.0.to_string(),
            num("direct metric", d.1)?,
            num("approximation metric", a.1)?,
            num("correlation metric", c.1)?,
        ]);
    }
    Ok(SyntheticRun {
        seed,
        correlation,
        approximation,
        direct,
        direct_spearman,
        fig2b,
        fig2c,
    })
}

/// Writes `fig2b.csv`, `fig2c.csv`, both surrogate checkpoints and their
/// training logs under `seed-<n>/`.
pub fn write_synthetic(cfg: &ExperimentConfig, run: &SyntheticRun) -> Result<()> {
    let dir = seed_dir(&cfg.out, run.seed);
    run.fig2b.write(&dir.join("fig2b.csv"))?;
    run.fig2c.write(&dir.join("fig2c.csv"))?;
    for (name, arm) in [
        ("correlation", &run.correlation),
        ("approximation", &run.approximation),
    ] {
        write_checkpoint(&dir.join(format!("{name}.reloss")), &arm.outcome.weights)?;
        write_log(
            &dir.join(format!("{name}_log.csv")),
            &arm.outcome.log,
            cfg.timing,
        )?;
    }
    Ok(())
}
