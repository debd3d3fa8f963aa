//! Sources of (loss-net input, metric value) pairs for surrogate training.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::generators::{BatchGenerator, Source};
use crate::metrics::{accuracy, SyntheticMetric};

/// One sub-batch as the loss net sees it, with its metric value.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    /// Row-major `rows × width` loss-net inputs.
    pub inputs: Vec<f32>,
    pub metric: f64,
}

pub trait MetricTask {
    /// Loss-net input width per row.
    fn width(&self) -> usize;

    /// Rows per sub-batch.
    fn rows(&self) -> usize;

    fn higher_is_better(&self) -> bool;

    /// Draws one sub-batch. Must be a pure function of the stream state.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Draw>;

    /// Metric value oriented so that larger is better.
    fn score(&self, metric: f64) -> f64 {
        if self.higher_is_better() {
            metric
        } else {
            -metric
        }
    }
}

/// Accuracy over `G_R`/`G_M` sub-batches; the loss net sees `y_pos` per
/// sample.
#[derive(Clone, Debug)]
pub struct ClassificationTask {
    generator: BatchGenerator,
}

impl ClassificationTask {
    pub fn new(generator: BatchGenerator) -> Self {
        ClassificationTask { generator }
    }

    pub fn generator(&self) -> &BatchGenerator {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut BatchGenerator {
        &mut self.generator
    }

    /// Like [`MetricTask::draw`], also reporting which generator was used.
    pub fn draw_with_source(&self, rng: &mut ChaCha8Rng) -> Result<(Draw, Source)> {
        let (batch, source) = self.generator.sample_with(rng)?;
        let draw = Draw {
            inputs: batch.y_pos()?,
            metric: accuracy(&batch)?,
        };
        Ok((draw, source))
    }
}

impl MetricTask for ClassificationTask {
    fn width(&self) -> usize {
        1
    }

    fn rows(&self) -> usize {
        self.generator.config().sub_batch
    }

    fn higher_is_better(&self) -> bool {
        true
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Draw> {
        Ok(self.draw_with_source(rng)?.0)
    }
}

/// The synthetic metric over inputs drawn uniformly from `[−1, 1]^d`, or
/// uniformly from a fixed pool of such inputs.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    metric: SyntheticMetric,
    pool: Option<Vec<Vec<f32>>>,
}

impl SyntheticTask {
    pub fn new(metric: SyntheticMetric) -> Self {
        SyntheticTask { metric, pool: None }
    }

    pub fn with_pool(metric: SyntheticMetric, pool: Vec<Vec<f32>>) -> Result<Self> {
        if pool.is_empty() || pool.iter().any(|x| x.len() != metric.dim()) {
            return Err(CoreError::invalid(
                "pool must be non-empty rows of the metric width",
            ));
        }
        Ok(SyntheticTask {
            metric,
            pool: Some(pool),
        })
    }

    pub fn metric(&self) -> &SyntheticMetric {
        &self.metric
    }

    pub fn sample_input(dim: usize, rng: &mut impl Rng) -> Vec<f32> {
        (0..dim).map(|_| rng.gen_range(-1.0f32..=1.0)).collect()
    }
}

impl MetricTask for SyntheticTask {
    fn width(&self) -> usize {
        self.metric.dim()
    }

    fn rows(&self) -> usize {
        1
    }

    fn higher_is_better(&self) -> bool {
        false
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Draw> {
        let x = match &self.pool {
            Some(pool) => pool[rng.gen_range(0..pool.len())].clone(),
            None => Self::sample_input(self.metric.dim(), rng),
        };
        let metric = self.metric.evaluate(&x)?;
        Ok(Draw { inputs: x, metric })
    }
}
