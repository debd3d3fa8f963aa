//! The toy classifier and its training under a regular, learned, or
//! rank-based loss.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surrogate_autodiff::{Bindings, Graph, NodeId, Scalar, Tensor};

use crate::data::{Blobs, Split};
use crate::error::{CoreError, Result};
use crate::generators::PredictionDump;
use crate::lossnet::{declare_params, mlp_node, Layer, LossNetWeights};
use crate::metrics::{argmax, BatchSample};
use crate::optim::{Adam, AdamConfig};
use crate::softrank::{soft_rank, soft_rank_node};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    Ce,
    Reloss,
    /// `CE + α · ReLoss`.
    CeReloss,
    Approx,
    RankLoss,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::Ce,
        LossMode::Reloss,
        LossMode::CeReloss,
        LossMode::Approx,
        LossMode::RankLoss,
    ];

    pub fn needs_frozen_loss(self) -> bool {
        matches!(
            self,
            LossMode::Reloss | LossMode::CeReloss | LossMode::Approx
        )
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Ce => "ce",
            LossMode::Reloss => "reloss",
            LossMode::CeReloss => "ce+reloss",
            LossMode::Approx => "approx",
            LossMode::RankLoss => "rankloss",
        })
    }
}

impl FromStr for LossMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown loss mode {s:?}")))
    }
}

/// A trained surrogate used as a fixed training loss: `sign · net(y_pos)`
/// averaged over the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenLoss {
    pub weights: LossNetWeights,
    pub sign: f64,
}

impl FrozenLoss {
    pub fn new(weights: LossNetWeights, sign: f64) -> Result<Self> {
        if weights.input_width() != 1 {
            return Err(CoreError::Config(format!(
                "classification losses take y_pos (width 1), got width {}",
                weights.input_width()
            )));
        }
        Ok(FrozenLoss { weights, sign })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the learned loss in `ce+reloss` mode.
    pub alpha: f64,
    pub rank_steepness: f64,
    pub seed: u64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            hidden: 64,
            epochs: 10,
            batch_size: 32,
            lr: 0.001,
            alpha: 1.0,
            rank_steepness: 1.0,
            seed: 0,
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.hidden == 0 || self.batch_size == 0 {
            return fail("hidden width and batch size must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !self.alpha.is_finite() {
            return fail(format!("alpha must be finite, got {}", self.alpha));
        }
        if !(self.rank_steepness > 0.0) {
            return fail(format!(
                "rank_steepness must be positive, got {}",
                self.rank_steepness
            ));
        }
        Ok(())
    }
}

/// `d → hidden → hidden → classes` elu MLP emitting logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    layers: Vec<Layer>,
}

impl Classifier {
    pub fn new(dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [dim, hidden, hidden, classes];
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (1.0 / w[0] as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f32> {
                    (0..n)
                        .map(|_| rng.gen_range(-bound..=bound) as f32)
                        .collect()
                };
                Layer {
                    in_dim: w[0],
                    out_dim: w[1],
                    weight: draw(w[0] * w[1]),
                    bias: draw(w[1]),
                }
            })
            .collect();
        Classifier { layers }
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f32]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn declare(&self, g: &mut Graph<f32>) -> Vec<NodeId> {
        self.layers
            .iter()
            .flat_map(|l| [g.param(vec![l.out_dim, l.in_dim]), g.param(vec![l.out_dim])])
            .collect()
    }

    fn bind(&self, b: &mut Bindings<f32>, ids: &[NodeId]) {
        for (l, ids) in self.layers.iter().zip(ids.chunks(2)) {
            b.bind(
                ids[0],
                Tensor::new(vec![l.out_dim, l.in_dim], l.weight.clone()).expect("layer shape"),
            );
            b.bind(ids[1], Tensor::vector(l.bias.clone()));
        }
    }

    /// Class probabilities for every row of `x`, row-major.
    pub fn predict(&self, x: &[f32]) -> Vec<f32> {
        let k = self.classes();
        let mut out = Vec::with_capacity(x.len() / self.dim() * k);
        let last = self.layers.len() - 1;
        for row in x.chunks(self.dim()) {
            let mut h = row.to_vec();
            for (i, l) in self.layers.iter().enumerate() {
                let mut next = l.bias.clone();
                for (o, v) in next.iter_mut().enumerate() {
                    *v += l.weight[o * l.in_dim..(o + 1) * l.in_dim]
                        .iter()
                        .zip(&h)
                        .map(|(w, a)| w * a)
                        .sum::<f32>();
                }
                if i < last {
                    next.iter_mut().for_each(|v| {
                        if *v <= 0.0 {
                            *v = v.exp_m1()
                        }
                    });
                }
                h = next;
            }
            let max = h.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let e: Vec<f64> = h.iter().map(|&v| (v as f64 - max).exp()).collect();
            let z: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| (v / z) as f32));
        }
        out
    }

    pub fn accuracy(&self, split: &Split) -> f64 {
        let k = self.classes();
        let probs = self.predict(&split.x);
        let correct = probs
            .chunks(k)
            .zip(&split.y)
            .filter(|(p, &y)| argmax(p) == y)
            .count();
        correct as f64 / split.len() as f64
    }

    pub fn dump(&self, split: &Split) -> Result<PredictionDump> {
        PredictionDump::new(self.predict(&split.x), split.y.clone(), self.classes())
    }
}

/// Mean `−ln p_label` over a classification batch. Probabilities are
/// floored at the smallest normal f32 so an underflowed row stays finite.
pub fn cross_entropy(batch: &BatchSample) -> Result<f64> {
    let y = batch.y_pos()?;
    Ok(y.iter()
        .map(|&p| -(p.max(f32::MIN_POSITIVE) as f64).ln())
        .sum::<f64>()
        / y.len() as f64)
}

/// Mean over samples of `|softrank(p)_true − k|`.
pub fn rank_loss(batch: &BatchSample, steepness: f64) -> Result<f64> {
    let labels = batch
        .labels()
        .ok_or_else(|| CoreError::invalid("rank_loss needs a classification batch"))?;
    let k = batch.width() as f64;
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row: Vec<f64> = batch.row(i).iter().map(|&p| p as f64).collect();
        total += (soft_rank(&row, steepness)?.ranks[l] - k).abs();
    }
    Ok(total / labels.len() as f64)
}

struct BatchGraph {
    g: Graph<f32>,
    x: NodeId,
    onehot: NodeId,
    params: Vec<NodeId>,
    loss_params: Vec<NodeId>,
    loss: NodeId,
    grads: Vec<NodeId>,
}

/// Training loss over logits `[b, k]` and one-hot labels `[b, k]`.
/// `learned` carries the frozen loss net's parameter nodes and output sign,
/// required by the learned modes.
pub fn prediction_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    mode: LossMode,
    logits: NodeId,
    onehot: NodeId,
    cfg: &PredictionConfig,
    learned: Option<(&[NodeId], f64)>,
) -> Result<NodeId> {
    let [b, k] = g.shape(logits)?[..] else {
        return Err(CoreError::invalid("logits must be a matrix"));
    };
    let logp = g.log_softmax_rows(logits)?;
    let picked = g.mul(logp, onehot)?;
    let picked = g.sum_cols(picked)?;
    let ce = g.mean(picked)?;
    let ce = g.neg(ce)?;

    let learned_node = |g: &mut Graph<T>| -> Result<NodeId> {
        let (params, sign) = learned
            .ok_or_else(|| CoreError::Config(format!("loss mode {mode} needs a frozen loss")))?;
        let probs = g.exp(logp)?;
        let pos = g.mul(probs, onehot)?;
        let pos = g.sum_cols(pos)?;
        let pos = g.reshape(pos, vec![b, 1])?;
        let out = mlp_node(g, pos, params)?;
        let m = g.mean(out)?;
        Ok(g.scale(m, sign)?)
    };
    Ok(match mode {
        LossMode::Ce => ce,
        LossMode::Reloss | LossMode::Approx => learned_node(g)?,
        LossMode::CeReloss => {
            let r = learned_node(g)?;
            let r = g.scale(r, cfg.alpha)?;
            g.add(ce, r)?
        }
        LossMode::RankLoss => {
            let probs = g.exp(logp)?;
            let ranks = soft_rank_node(g, probs, cfg.rank_steepness)?;
            let pos = g.mul(ranks, onehot)?;
            let pos = g.sum_cols(pos)?;
            let d = g.add_scalar(pos, -(k as f64))?;
            let d = g.abs(d)?;
            g.mean(d)?
        }
    })
}

impl BatchGraph {
    fn build(
        model: &Classifier,
        mode: LossMode,
        cfg: &PredictionConfig,
        frozen: Option<&FrozenLoss>,
    ) -> Result<Self> {
        let (b, k) = (cfg.batch_size, model.classes());
        let mut g = Graph::new();
        let x = g.input(vec![b, model.dim()]);
        let onehot = g.input(vec![b, k]);
        let params = model.declare(&mut g);
        let logits = mlp_node(&mut g, x, &params)?;
        let loss_params = match (mode.needs_frozen_loss(), frozen) {
            (true, Some(f)) => declare_params(&mut g, &f.weights.spec(), false),
            _ => Vec::new(),
        };
        let learned = frozen.map(|f| (loss_params.as_slice(), f.sign));
        let loss = prediction_loss_node(&mut g, mode, logits, onehot, cfg, learned)?;
        let grads = g.gradient(loss, &params)?;
        Ok(BatchGraph {
            g,
            x,
            onehot,
            params,
            loss_params,
            loss,
            grads,
        })
    }
}

/// Accuracy after each epoch (epoch 0 is the untrained model) and the
/// per-epoch prediction dumps.
#[derive(Clone, Debug)]
pub struct PredictionOutcome {
    pub model: Classifier,
    pub accuracy: Vec<(usize, f64)>,
    pub train_dumps: Vec<PredictionDump>,
    pub val_dumps: Vec<PredictionDump>,
}

impl PredictionOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracy.last().unwrap().1
    }
}

/// Epoch-at-a-time classifier training; the frozen loss may be swapped
/// between epochs.
pub struct ClassifierTrainer<'a> {
    cfg: PredictionConfig,
    mode: LossMode,
    blobs: &'a Blobs,
    model: Classifier,
    adam: Adam,
    graph: BatchGraph,
    frozen: Option<FrozenLoss>,
    epoch: usize,
    outcome: PredictionOutcome,
}

impl<'a> ClassifierTrainer<'a> {
    pub fn new(
        mode: LossMode,
        cfg: &PredictionConfig,
        blobs: &'a Blobs,
        frozen: Option<FrozenLoss>,
    ) -> Result<Self> {
        cfg.validate()?;
        if mode.needs_frozen_loss() && frozen.is_none() {
            return Err(CoreError::Config(format!(
                "loss mode {mode} needs a frozen loss"
            )));
        }
        if cfg.batch_size > blobs.train.len() {
            return Err(CoreError::Config(
                "batch size exceeds the training split".into(),
            ));
        }
        let frozen = if mode.needs_frozen_loss() {
            frozen
        } else {
            None
        };
        let model = Classifier::new(blobs.cfg.dim, cfg.hidden, blobs.cfg.classes, cfg.seed);
        let graph = BatchGraph::build(&model, mode, cfg, frozen.as_ref())?;
        let adam = Adam::new(AdamConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..AdamConfig::default()
        })?;
        let outcome = PredictionOutcome {
            accuracy: vec![(0, model.accuracy(&blobs.val))],
            train_dumps: vec![model.dump(&blobs.train)?],
            val_dumps: vec![model.dump(&blobs.val)?],
            model: model.clone(),
        };
        Ok(ClassifierTrainer {
            cfg: cfg.clone(),
            mode,
            blobs,
            model,
            adam,
            graph,
            frozen,
            epoch: 0,
            outcome,
        })
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn set_frozen(&mut self, frozen: FrozenLoss) -> Result<()> {
        if !self.mode.needs_frozen_loss() {
            return Err(CoreError::Config(format!(
                "loss mode {} takes no learned loss",
                self.mode
            )));
        }
        let current = self.frozen.as_ref().unwrap();
        if frozen.weights.spec() != current.weights.spec() {
            return Err(CoreError::Config(
                "replacement loss has a different architecture".into(),
            ));
        }
        if frozen.sign != current.sign {
            self.graph = BatchGraph::build(&self.model, self.mode, &self.cfg, Some(&frozen))?;
        }
        self.frozen = Some(frozen);
        Ok(())
    }

    /// One pass over the training split in a seeded order; a trailing
    /// partial batch is dropped.
    pub fn run_epoch(&mut self) -> Result<()> {
        let (b, k, d) = (self.cfg.batch_size, self.model.classes(), self.model.dim());
        let train = &self.blobs.train;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut bindings = Bindings::new();
        if let Some(f) = &self.frozen {
            f.weights.bind(&mut bindings, &self.graph.loss_params);
        }
        for (i, idx) in order.chunks_exact(b).enumerate() {
            let x: Vec<f32> = idx
                .iter()
                .flat_map(|&j| train.x[j * d..(j + 1) * d].iter().copied())
                .collect();
            let mut onehot = vec![0.0f32; b * k];
            for (r, &j) in idx.iter().enumerate() {
                onehot[r * k + train.y[j]] = 1.0;
            }
            self.model.bind(&mut bindings, &self.graph.params);
            bindings.bind(self.graph.x, Tensor::new(vec![b, d], x)?);
            bindings.bind(self.graph.onehot, Tensor::new(vec![b, k], onehot)?);
            let mut roots = vec![self.graph.loss];
            roots.extend(&self.graph.grads);
            let out = self.graph.g.evaluate_many(&roots, &bindings)?;
            let loss = out[0].item();
            if !loss.is_finite() || !out[1..].iter().all(Tensor::is_finite) {
                return Err(CoreError::Diverged {
                    step: self.epoch * (train.len() / b) + i,
                    detail: format!("{} loss {loss}", self.mode),
                });
            }
            let grads: Vec<&[f32]> = out[1..].iter().map(|t| t.data()).collect();
            self.adam.step(&mut self.model.buffers_mut(), &grads)?;
        }
        self.epoch += 1;
        self.outcome
            .accuracy
            .push((self.epoch, self.model.accuracy(&self.blobs.val)));
        self.outcome
            .train_dumps
            .push(self.model.dump(&self.blobs.train)?);
        self.outcome
            .val_dumps
            .push(self.model.dump(&self.blobs.val)?);
        Ok(())
    }

    pub fn finish(mut self) -> PredictionOutcome {
        self.outcome.model = self.model;
        self.outcome
    }
}

pub fn train_prediction_model(
    mode: LossMode,
    cfg: &PredictionConfig,
    blobs: &Blobs,
    frozen: Option<&FrozenLoss>,
) -> Result<PredictionOutcome> {
    let mut t = ClassifierTrainer::new(mode, cfg, blobs, frozen.cloned())?;
    for _ in 0..cfg.epochs {
        t.run_epoch()?;
    }
    Ok(t.finish())
}
