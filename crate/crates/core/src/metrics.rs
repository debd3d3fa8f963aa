//! Evaluation metrics: accuracy over a classification sub-batch, and a
//! frozen random network used as a synthetic metric.

use crate::error::{CoreError, Result};
use crate::lossnet::{build_lossnet, LossNetSpec, LossNetWeights};

/// Tolerance on the per-sample probability sum.
pub const PROB_SUM_TOL: f32 = 1e-5;

/// One sub-batch: `size` rows of `width` values each.
///
/// Classification samples hold class-probability rows with a label per row;
/// synthetic samples hold raw input vectors and no labels.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSample {
    predictions: Vec<f32>,
    width: usize,
    labels: Option<Vec<usize>>,
}

impl BatchSample {
    pub fn classification(
        predictions: Vec<f32>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(CoreError::invalid("num_classes must be at least 1"));
        }
        if labels.is_empty() {
            return Err(CoreError::invalid("empty batch"));
        }
        if predictions.len() != labels.len() * num_classes {
            return Err(CoreError::invalid(format!(
                "{} probabilities for {} samples of {num_classes} classes",
                predictions.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(CoreError::invalid(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        for (i, row) in predictions.chunks(num_classes).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(CoreError::invalid(format!(
                    "sample {i} has a negative or non-finite probability"
                )));
            }
            let s: f32 = row.iter().sum();
            if (s - 1.0).abs() > PROB_SUM_TOL {
                return Err(CoreError::invalid(format!(
                    "sample {i} probabilities sum to {s}"
                )));
            }
        }
        Ok(BatchSample {
            predictions,
            width: num_classes,
            labels: Some(labels),
        })
    }

    /// Raw input vectors of width `width`, no labels.
    pub fn vectors(values: Vec<f32>, width: usize) -> Result<Self> {
        if width == 0 || values.is_empty() || !values.len().is_multiple_of(width) {
            return Err(CoreError::invalid(format!(
                "{} values do not form rows of width {width}",
                values.len()
            )));
        }
        Ok(BatchSample {
            predictions: values,
            width,
            labels: None,
        })
    }

    pub fn size(&self) -> usize {
        self.predictions.len() / self.width
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn predictions(&self) -> &[f32] {
        &self.predictions
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.predictions[i * self.width..(i + 1) * self.width]
    }

    /// Probability assigned to the true class of each sample.
    pub fn y_pos(&self) -> Result<Vec<f32>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| CoreError::invalid("y_pos needs a labelled batch"))?;
        Ok(labels
            .iter()
            .enumerate()
            .map(|(i, &l)| self.row(i)[l])
            .collect())
    }

    /// Loss-network input rows: `y_pos` (width 1) for classification, the
    /// raw rows otherwise.
    pub fn lossnet_input(&self) -> Result<(Vec<f32>, usize)> {
        match self.labels {
            Some(_) => Ok((self.y_pos()?, 1)),
            None => Ok((self.predictions.clone(), self.width)),
        }
    }

    /// Same rows in a different order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.size()];
        if order.len() != self.size()
            || order
                .iter()
                .any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true))
        {
            return Err(CoreError::invalid(
                "order is not a permutation of the batch",
            ));
        }
        let predictions = order
            .iter()
            .flat_map(|&i| self.row(i).iter().copied())
            .collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| order.iter().map(|&i| l[i]).collect());
        Ok(BatchSample {
            predictions,
            width: self.width,
            labels,
        })
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(batch: &BatchSample) -> Result<f64> {
    let labels = batch
        .labels()
        .ok_or_else(|| CoreError::invalid("accuracy needs a classification batch"))?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(batch.row(i)) == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Frozen random elu network `d → 32 → 32 → 1`; lower output is better.
#[derive(Clone, Debug)]
pub struct SyntheticMetric {
    net: LossNetWeights,
    seed: u64,
}

impl SyntheticMetric {
    pub const HIDDEN: usize = 32;
    pub const DEFAULT_GAIN: f32 = 1.0;

    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        Self::with_gain(dim, seed, Self::DEFAULT_GAIN)
    }

    /// Every parameter of the `±sqrt(1/fan_in)` initialization scaled by
    /// `gain`; larger gains give a less linear metric.
    pub fn with_gain(dim: usize, seed: u64, gain: f32) -> Result<Self> {
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(CoreError::invalid(format!(
                "gain must be positive, got {gain}"
            )));
        }
        let spec = LossNetSpec::new(vec![dim, Self::HIDDEN, Self::HIDDEN, 1])?;
        let mut net = build_lossnet(&spec, seed)?;
        for buf in net.buffers_mut() {
            buf.iter_mut().for_each(|v| *v *= gain);
        }
        Ok(SyntheticMetric { net, seed })
    }

    pub fn dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn network(&self) -> &LossNetWeights {
        &self.net
    }

    pub fn evaluate(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(CoreError::invalid(format!(
                "metric expects width {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.net.forward_row(x) as f64)
    }
}
