//! Descent of free input vectors under a frozen loss, scored by the true
//! synthetic metric.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use surrogate_autodiff::{Bindings, Graph, Tensor};

use crate::error::{CoreError, Result};
use crate::lossnet::{declare_params, mlp_node, LossNetWeights};
use crate::metrics::SyntheticMetric;
use crate::optim::{Adam, AdamConfig};
use crate::trainer::task::SyntheticTask;

#[derive(Clone, Debug, PartialEq)]
pub struct DescentConfig {
    /// Independent starting points descended together.
    pub starts: usize,
    pub steps: usize,
    pub lr: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            starts: 64,
            steps: 500,
            lr: 0.01,
            eval_every: 10,
            seed: 0,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(CoreError::Config("starts must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(CoreError::Config("eval_every must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(CoreError::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Mean true metric over the starting points at each evaluated step.
#[derive(Clone, Debug, PartialEq)]
pub struct DescentTrace {
    pub points: Vec<(usize, f64)>,
}

impl DescentTrace {
    pub fn initial(&self) -> f64 {
        self.points[0].1
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1].1
    }

    pub fn best(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.1)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Starting points shared by every arm with the same seed.
pub fn descent_starts(dim: usize, cfg: &DescentConfig) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.starts)
        .flat_map(|_| SyntheticTask::sample_input(dim, &mut rng))
        .collect()
}

fn mean_metric(metric: &SyntheticMetric, x: &[f32]) -> Result<f64> {
    let d = metric.dim();
    let mut total = 0.0;
    for row in x.chunks(d) {
        total += metric.evaluate(row)?;
    }
    Ok(total / (x.len() / d) as f64)
}

/// Minimizes `sign · loss(x)` over inputs kept in `[−1, 1]^d` with Adam, and
/// records the true metric along the way. Passing the metric's own network
/// with `sign = 1` descends the metric directly.
pub fn descend_inputs(
    metric: &SyntheticMetric,
    loss: &LossNetWeights,
    sign: f64,
    cfg: &DescentConfig,
) -> Result<DescentTrace> {
    cfg.validate()?;
    let d = metric.dim();
    if loss.input_width() != d {
        return Err(CoreError::invalid(format!(
            "loss width {} does not match metric width {d}",
            loss.input_width()
        )));
    }
    let mut g = Graph::<f32>::new();
    let x = g.param(vec![cfg.starts, d]);
    let params = declare_params(&mut g, &loss.spec(), false);
    let out = mlp_node(&mut g, x, &params)?;
    let total = g.sum(out)?;
    let objective = g.scale(total, sign)?;
    let grad = g.gradient(objective, &[x])?[0];

    let mut b = Bindings::new();
    loss.bind(&mut b, &params);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..AdamConfig::default()
    })?;
    let mut xs = descent_starts(d, cfg);
    let mut points = vec![(0, mean_metric(metric, &xs)?)];
    for step in 1..=cfg.steps {
        b.bind(x, Tensor::new(vec![cfg.starts, d], xs.clone())?);
        let gx = g.evaluate(grad, &b)?;
        if !gx.is_finite() {
            return Err(CoreError::Diverged {
                step,
                detail: "non-finite input gradient".into(),
            });
        }
        adam.step(&mut [&mut xs], &[gx.data()])?;
        xs.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        if step % cfg.eval_every == 0 || step == cfg.steps {
            points.push((step, mean_metric(metric, &xs)?));
        }
    }
    Ok(DescentTrace { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_descent_lowers_the_metric() {
        let m = SyntheticMetric::new(16, 0).unwrap();
        let cfg = DescentConfig {
            starts: 8,
            steps: 100,
            ..Default::default()
        };
        let t = descend_inputs(&m, m.network(), 1.0, &cfg).unwrap();
        assert!(t.last() < t.initial());
        assert_eq!(t.points.len(), 11);
    }

    #[test]
    fn inputs_stay_in_the_box() {
        let m = SyntheticMetric::new(4, 1).unwrap();
        let cfg = DescentConfig {
            starts: 2,
            steps: 0,
            ..Default::default()
        };
        let xs = descent_starts(4, &cfg);
        assert!(xs.iter().all(|v| (-1.0..=1.0).contains(v)));
        let t = descend_inputs(&m, m.network(), 1.0, &cfg).unwrap();
        assert_eq!(t.points.len(), 1);
    }
}
