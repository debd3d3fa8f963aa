//! Surrogate loss training: the correlation objective with gradient penalty,
//! and the regression baseline.
//!
//! Every step draws `n` sub-batches from a stream keyed by `(seed, step)`,
//! so any logged objective can be recomputed from the weights that produced
//! it.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use surrogate_autodiff::{Bindings, Graph, NodeId, Scalar, Tensor};

use crate::correlation::{kendall_tau, soft_spearman_node, spearman_hard};
use crate::error::{CoreError, Result};
use crate::lossnet::{
    build_lossnet, declare_params, pooled_loss_node, LossNetSpec, LossNetWeights,
};
use crate::optim::Adam;
use crate::softrank::hard_rank;
use crate::trainer::config::{Mode, TrainerConfig};
use crate::trainer::log::{LogRow, TrainLog};
use crate::trainer::penalty::penalty_node;
use crate::trainer::task::MetricTask;

const VALIDATION_STREAM: u64 = u64::MAX;
const WARMUP_STREAM: u64 = u64::MAX - 1;

/// Hard Spearman at or below this counts as converged.
pub const CONVERGED_SPEARMAN: f64 = -0.99;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationPoint {
    /// Optimizer steps completed when measured.
    pub step: usize,
    /// Hard Spearman between the oriented loss and the metric score.
    pub spearman: f64,
    pub kendall: f64,
    /// Regression error against normalized targets (approximation mode).
    pub mse: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    Converged,
    Plateau,
}

#[derive(Clone, Debug)]
pub struct SurrogateOutcome {
    /// Best weights by validation.
    pub weights: LossNetWeights,
    pub final_weights: LossNetWeights,
    pub log: TrainLog,
    pub validation: Vec<ValidationPoint>,
    pub best: ValidationPoint,
    pub stop: StopReason,
}

/// Draws `count` sub-batches from stream `stream` of `seed`.
pub fn draw_sub_batches<M: MetricTask>(
    task: &M,
    seed: u64,
    stream: u64,
    count: usize,
) -> Result<(Vec<f32>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut inputs = Vec::with_capacity(count * task.rows() * task.width());
    let mut metrics = Vec::with_capacity(count);
    for _ in 0..count {
        let d = task.draw(&mut rng)?;
        inputs.extend(d.inputs);
        metrics.push(d.metric);
    }
    Ok((inputs, metrics))
}

/// `(v − mean) / sqrt(var + 1e−12)` over a vector node.
pub fn standardize_node<T: Scalar>(g: &mut Graph<T>, v: NodeId, n: usize) -> Result<NodeId> {
    let m = g.mean(v)?;
    let m = g.broadcast(m, vec![n])?;
    let c = g.sub(v, m)?;
    let sq = g.square(c)?;
    let var = g.mean(sq)?;
    let var = g.add_scalar(var, 1e-12)?;
    let sd = g.sqrt(var)?;
    let sd = g.broadcast(sd, vec![n])?;
    Ok(g.div(c, sd)?)
}

/// Nodes of the surrogate training objective over `n` sub-batches.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveNodes {
    /// Raw pooled losses `[n]`.
    pub loss: NodeId,
    pub soft: NodeId,
    pub penalty: NodeId,
    pub objective: NodeId,
}

/// Builds the objective of `cfg.mode` from loss-net inputs `x = [n·rows,
/// width]`. `ranks` holds the hard ranks of the metric scores and `target`
/// the normalized metrics (approximation mode only).
#[allow(clippy::too_many_arguments)]
pub fn objective_node<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &TrainerConfig,
    x: NodeId,
    params: &[NodeId],
    ranks: NodeId,
    target: Option<NodeId>,
    rows: usize,
    sign: f64,
) -> Result<ObjectiveNodes> {
    let n = cfg.n;
    let loss = pooled_loss_node(g, x, params, n, rows)?;
    let oriented = if sign < 0.0 { g.neg(loss)? } else { loss };
    let ranked = if cfg.standardize {
        standardize_node(g, oriented, n)?
    } else {
        oriented
    };
    let soft = soft_spearman_node(g, ranked, ranks, cfg.steepness)?;
    let per_group = penalty_node(g, loss, x, n, rows)?;
    let penalty = g.mean(per_group)?;
    let objective = match cfg.mode {
        Mode::Correlation if cfg.lambda > 0.0 => {
            let weighted = g.scale(penalty, cfg.lambda)?;
            g.add(soft, weighted)?
        }
        Mode::Correlation => soft,
        Mode::Approximation => {
            let t = target
                .ok_or_else(|| CoreError::invalid("approximation objective needs targets"))?;
            let d = g.sub(loss, t)?;
            let sq = g.square(d)?;
            g.mean(sq)?
        }
    };
    Ok(ObjectiveNodes {
        loss,
        soft,
        penalty,
        objective,
    })
}

struct StepGraph {
    g: Graph<f32>,
    x: NodeId,
    params: Vec<NodeId>,
    ranks: NodeId,
    target: Option<NodeId>,
    loss: NodeId,
    soft: NodeId,
    penalty: NodeId,
    objective: NodeId,
    grads: Vec<NodeId>,
}

impl StepGraph {
    fn build(cfg: &TrainerConfig, spec: &LossNetSpec, rows: usize, sign: f64) -> Result<Self> {
        let n = cfg.n;
        let mut g = Graph::new();
        let x = g.input(vec![n * rows, spec.input_width()]);
        let params = declare_params(&mut g, spec, true);
        let ranks = g.input(vec![n]);
        let target = match cfg.mode {
            Mode::Approximation => Some(g.input(vec![n])),
            Mode::Correlation => None,
        };
        let o = objective_node(&mut g, cfg, x, &params, ranks, target, rows, sign)?;
        let grads = g.gradient(o.objective, &params)?;
        Ok(StepGraph {
            g,
            x,
            params,
            ranks,
            target,
            loss: o.loss,
            soft: o.soft,
            penalty: o.penalty,
            objective: o.objective,
            grads,
        })
    }
}

struct StepValues {
    objective: f64,
    soft: f64,
    penalty: f64,
    losses: Vec<f32>,
    grads: Vec<Tensor<f32>>,
}

/// Forward-only evaluation of pooled losses over many sub-batches.
struct ForwardGraph {
    g: Graph<f32>,
    x: NodeId,
    params: Vec<NodeId>,
    loss: NodeId,
    width: usize,
}

impl ForwardGraph {
    fn build(spec: &LossNetSpec, groups: usize, rows: usize) -> Result<Self> {
        let width = spec.input_width();
        let mut g = Graph::new();
        let x = g.input(vec![groups * rows, width]);
        let params = declare_params(&mut g, spec, false);
        let loss = pooled_loss_node(&mut g, x, &params, groups, rows)?;
        Ok(ForwardGraph {
            g,
            x,
            params,
            loss,
            width,
        })
    }

    fn losses(&self, w: &LossNetWeights, inputs: &[f32]) -> Result<Vec<f32>> {
        let mut b = Bindings::new();
        w.bind(&mut b, &self.params);
        b.bind(
            self.x,
            Tensor::new(vec![inputs.len() / self.width, self.width], inputs.to_vec())?,
        );
        Ok(self.g.evaluate(self.loss, &b)?.into_data())
    }
}

/// Evaluates pooled loss values of `w` on sub-batches of `rows` rows each.
pub fn pooled_losses(w: &LossNetWeights, inputs: &[f32], rows: usize) -> Result<Vec<f32>> {
    let width = w.input_width();
    if rows == 0 || inputs.is_empty() || !inputs.len().is_multiple_of(rows * width) {
        return Err(CoreError::invalid("inputs do not form whole sub-batches"));
    }
    let groups = inputs.len() / (rows * width);
    ForwardGraph::build(&w.spec(), groups, rows)?.losses(w, inputs)
}

/// Step-wise surrogate trainer. [`SurrogateTrainer::run`] drives it to a
/// stopping rule; callers needing finer control use `step`/`validate`.
pub struct SurrogateTrainer<M: MetricTask> {
    cfg: TrainerConfig,
    task: M,
    weights: LossNetWeights,
    adam: Adam,
    graph: StepGraph,
    val_graph: ForwardGraph,
    val_inputs: Vec<f32>,
    val_metrics: Vec<f64>,
    /// Affine map metric → regression target (approximation mode).
    norm: (f64, f64),
    log: TrainLog,
    validation: Vec<ValidationPoint>,
    best: Option<(ValidationPoint, LossNetWeights)>,
    step: usize,
    started: Instant,
}

impl<M: MetricTask> SurrogateTrainer<M> {
    pub fn new(cfg: TrainerConfig, spec: &LossNetSpec, task: M) -> Result<Self> {
        let weights = build_lossnet(spec, cfg.seed)?;
        Self::with_weights(cfg, weights, task)
    }

    /// Starts from `weights`; in correlation mode with `orient_init` set,
    /// the output layer is negated first if the net correlates positively
    /// with the metric score on the held-out draws.
    pub fn with_weights(cfg: TrainerConfig, weights: LossNetWeights, task: M) -> Result<Self> {
        cfg.validate()?;
        let spec = weights.spec();
        if spec.input_width() != task.width() {
            return Err(CoreError::Config(format!(
                "loss net input width {} does not match task width {}",
                spec.input_width(),
                task.width()
            )));
        }
        let sign = Self::loss_sign(&cfg, &task);
        let graph = StepGraph::build(&cfg, &spec, task.rows(), sign)?;
        let val_graph = ForwardGraph::build(&spec, cfg.val_batches, task.rows())?;
        let (val_inputs, val_metrics) =
            draw_sub_batches(&task, cfg.seed, VALIDATION_STREAM, cfg.val_batches)?;
        let norm = match cfg.mode {
            Mode::Approximation => {
                let (_, warm) = draw_sub_batches(&task, cfg.seed, WARMUP_STREAM, cfg.warmup)?;
                let lo = warm.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = warm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    (-lo / (hi - lo), 1.0 / (hi - lo))
                } else {
                    // a constant metric is regressed as is
                    (0.0, 1.0)
                }
            }
            Mode::Correlation => (0.0, 1.0),
        };
        let adam = Adam::new(cfg.adam())?;
        let mut weights = weights;
        if cfg.mode == Mode::Correlation && cfg.orient_init {
            // Start on the descending side: a net that ranks the data in the
            // opposite order is a local optimum for low-dimensional inputs.
            let losses = val_graph.losses(&weights, &val_inputs)?;
            let oriented: Vec<f64> = losses.iter().map(|&l| sign * l as f64).collect();
            let scores: Vec<f64> = val_metrics.iter().map(|&m| task.score(m)).collect();
            if spearman_hard(&oriented, &scores)?.value > 0.0 {
                weights.negate_output();
            }
        }
        Ok(SurrogateTrainer {
            cfg,
            task,
            weights,
            adam,
            graph,
            val_graph,
            val_inputs,
            val_metrics,
            norm,
            log: TrainLog::new(),
            validation: Vec::new(),
            best: None,
            step: 0,
            started: Instant::now(),
        })
    }

    /// +1 when the raw loss output is the training loss, −1 when the
    /// negated output is (regression onto a higher-is-better metric).
    fn loss_sign(cfg: &TrainerConfig, task: &M) -> f64 {
        if cfg.mode == Mode::Approximation && task.higher_is_better() {
            -1.0
        } else {
            1.0
        }
    }

    /// Sign applied to the raw network output to obtain the loss used
    /// downstream.
    pub fn output_sign(&self) -> f64 {
        Self::loss_sign(&self.cfg, &self.task)
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn task(&self) -> &M {
        &self.task
    }

    pub fn task_mut(&mut self) -> &mut M {
        &mut self.task
    }

    pub fn weights(&self) -> &LossNetWeights {
        &self.weights
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn validation_history(&self) -> &[ValidationPoint] {
        &self.validation
    }

    /// Maps metric values to regression targets.
    pub fn normalize(&self, metric: f64) -> f64 {
        self.norm.0 + self.norm.1 * metric
    }

    fn evaluate(
        &self,
        w: &LossNetWeights,
        inputs: &[f32],
        metrics: &[f64],
        with_grads: bool,
    ) -> Result<StepValues> {
        let sg = &self.graph;
        let scores: Vec<f64> = metrics.iter().map(|&m| self.task.score(m)).collect();
        let ranks = hard_rank(&scores)?.ranks;
        let mut b = Bindings::new();
        w.bind(&mut b, &sg.params);
        let rows = inputs.len() / self.task.width();
        b.bind(
            sg.x,
            Tensor::new(vec![rows, self.task.width()], inputs.to_vec())?,
        );
        b.bind(
            sg.ranks,
            Tensor::vector(ranks.iter().map(|&r| r as f32).collect()),
        );
        if let Some(t) = sg.target {
            b.bind(
                t,
                Tensor::vector(metrics.iter().map(|&m| self.normalize(m) as f32).collect()),
            );
        }
        let mut roots = vec![sg.objective, sg.soft, sg.penalty, sg.loss];
        if with_grads {
            roots.extend(&sg.grads);
        }
        let mut out = sg.g.evaluate_many(&roots, &b)?.into_iter();
        let objective = out.next().unwrap().item() as f64;
        let soft = out.next().unwrap().item() as f64;
        let penalty = out.next().unwrap().item() as f64;
        let losses = out.next().unwrap().into_data();
        Ok(StepValues {
            objective,
            soft,
            penalty,
            losses,
            grads: out.collect(),
        })
    }

    /// Objective of `w` on the sub-batches of training step `step`.
    pub fn objective_at(&self, w: &LossNetWeights, step: usize) -> Result<f64> {
        let (inputs, metrics) =
            draw_sub_batches(&self.task, self.cfg.seed, step as u64, self.cfg.n)?;
        Ok(self.evaluate(w, &inputs, &metrics, false)?.objective)
    }

    /// One optimizer step; returns its log row.
    pub fn step(&mut self) -> Result<LogRow> {
        if self.validation.is_empty() {
            self.validate()?;
        }
        let s = self.step;
        let (inputs, metrics) = draw_sub_batches(&self.task, self.cfg.seed, s as u64, self.cfg.n)?;
        let v = self.evaluate(&self.weights, &inputs, &metrics, true)?;
        if !v.objective.is_finite() || !v.grads.iter().all(Tensor::is_finite) {
            return Err(CoreError::Diverged {
                step: s,
                detail: format!(
                    "objective {} (soft {}, penalty {})",
                    v.objective, v.soft, v.penalty
                ),
            });
        }
        let sign = self.output_sign();
        let oriented: Vec<f64> = v.losses.iter().map(|&l| sign * l as f64).collect();
        let scores: Vec<f64> = metrics.iter().map(|&m| self.task.score(m)).collect();
        let hard = spearman_hard(&oriented, &scores)?.value;
        let row = LogRow {
            step: s,
            objective: v.objective,
            spearman_soft: v.soft,
            spearman_hard: hard,
            penalty_mean: v.penalty,
            elapsed_ms: self.started.elapsed().as_millis() as u64,
        };
        self.log.push(row.clone())?;

        let grads: Vec<&[f32]> = v.grads.iter().map(|t| t.data()).collect();
        self.adam.step(&mut self.weights.buffers_mut(), &grads)?;
        self.step += 1;
        if self.step.is_multiple_of(self.cfg.eval_every) {
            self.validate()?;
        }
        Ok(row)
    }

    /// Measures the current weights on the held-out sub-batches and updates
    /// the best-so-far snapshot.
    pub fn validate(&mut self) -> Result<ValidationPoint> {
        if let Some(last) = self.validation.last() {
            if last.step == self.step {
                return Ok(*last);
            }
        }
        let p = self.measure(&self.weights)?;
        let better = match &self.best {
            None => true,
            Some((b, _)) => match self.cfg.mode {
                Mode::Correlation => p.spearman < b.spearman,
                Mode::Approximation => p.mse.unwrap() < b.mse.unwrap(),
            },
        };
        if better {
            self.best = Some((p, self.weights.clone()));
        }
        self.validation.push(p);
        Ok(p)
    }

    /// Held-out correlation (and regression error) of arbitrary weights.
    pub fn measure(&self, w: &LossNetWeights) -> Result<ValidationPoint> {
        let losses = self.val_graph.losses(w, &self.val_inputs)?;
        let sign = self.output_sign();
        let oriented: Vec<f64> = losses.iter().map(|&l| sign * l as f64).collect();
        let scores: Vec<f64> = self
            .val_metrics
            .iter()
            .map(|&m| self.task.score(m))
            .collect();
        if let Some(bad) = oriented.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::Diverged {
                step: self.step,
                detail: format!("validation loss {bad}"),
            });
        }
        let mse = match self.cfg.mode {
            Mode::Approximation => Some(
                losses
                    .iter()
                    .zip(&self.val_metrics)
                    .map(|(&l, &m)| (l as f64 - self.normalize(m)).powi(2))
                    .sum::<f64>()
                    / losses.len() as f64,
            ),
            Mode::Correlation => None,
        };
        Ok(ValidationPoint {
            step: self.step,
            spearman: spearman_hard(&oriented, &scores)?.value,
            kendall: kendall_tau(&oriented, &scores)?.value,
            mse,
        })
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        let cfg = &self.cfg;
        if self.step >= cfg.max_steps {
            return Some(StopReason::MaxSteps);
        }
        if self.step < cfg.min_steps {
            return None;
        }
        let rows = self.log.rows();
        let w = cfg.window;
        if rows.len() >= w {
            let recent = self.log.trailing_mean(w, |r| r.spearman_hard).unwrap();
            if recent <= CONVERGED_SPEARMAN {
                return Some(StopReason::Converged);
            }
            if rows.len() >= 2 * w {
                let prev = rows[rows.len() - 2 * w..rows.len() - w]
                    .iter()
                    .map(|r| r.spearman_hard)
                    .sum::<f64>()
                    / w as f64;
                if prev - recent < cfg.plateau_tol {
                    return Some(StopReason::Plateau);
                }
            }
        }
        None
    }

    /// Trains until a stopping rule fires.
    pub fn run(mut self) -> Result<SurrogateOutcome> {
        self.validate()?;
        let stop = loop {
            if let Some(reason) = self.stop_reason() {
                break reason;
            }
            self.step()?;
        };
        self.finish(stop)
    }

    pub fn finish(mut self, stop: StopReason) -> Result<SurrogateOutcome> {
        self.validate()?;
        let (best, weights) = self.best.take().expect("validated at least once");
        Ok(SurrogateOutcome {
            weights,
            final_weights: self.weights,
            log: self.log,
            validation: self.validation,
            best,
            stop,
        })
    }
}

pub fn train_surrogate_correlation<M: MetricTask>(
    cfg: &TrainerConfig,
    spec: &LossNetSpec,
    task: M,
) -> Result<SurrogateOutcome> {
    if cfg.mode != Mode::Correlation {
        return Err(CoreError::Config(
            "train_surrogate_correlation needs mode = correlation".into(),
        ));
    }
    SurrogateTrainer::new(cfg.clone(), spec, task)?.run()
}

pub fn train_surrogate_approximation<M: MetricTask>(
    cfg: &TrainerConfig,
    spec: &LossNetSpec,
    task: M,
) -> Result<SurrogateOutcome> {
    if cfg.mode != Mode::Approximation {
        return Err(CoreError::Config(
            "train_surrogate_approximation needs mode = approximation".into(),
        ));
    }
    SurrogateTrainer::new(cfg.clone(), spec, task)?.run()
}
