//! Finite-difference verification of every differentiable piece, first
//! order and through the gradient penalty.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surrogate_autodiff::gradcheck::weighted_sum;
use surrogate_autodiff::{
    check_gradients, finite_diff_check, CheckedOp, CustomOp, GraphError, Tensor,
};
use surrogate_core::correlation::{pearson_node, soft_spearman_node};
use surrogate_core::lossnet::{
    build_lossnet, mlp_node, pooled_loss_node, LossNetSpec, LossNetWeights,
};
use surrogate_core::softrank::{hard_rank, soft_rank_node};
use surrogate_core::trainer::{
    objective_node, penalty_node, prediction_loss_node, LossMode, Mode, PredictionConfig,
    TrainerConfig,
};
use surrogate_core::CoreError;

use crate::error::{HarnessError, Result};

pub const FIRST_ORDER_TOL: f64 = 1e-4;
pub const SECOND_ORDER_TOL: f64 = 1e-3;
const EPS: f64 = 1e-6;
const SEED: u64 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub order: u8,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<CheckRow>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    pub fn failures(&self) -> Vec<&CheckRow> {
        self.rows.iter().filter(|r| !r.passed()).collect()
    }

    pub fn worst(&self, order: u8) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.order == order)
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(
                f,
                "{:<28} order {}  worst {:.3e}  tol {:.0e}  {}",
                r.name,
                r.order,
                r.max_rel_error,
                r.tolerance,
                if r.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// elu whose derivative is wrong on the negative side; a negative control
/// for the suite.
#[derive(Debug)]
pub struct CorruptElu;

impl CustomOp<f64> for CorruptElu {
    fn name(&self) -> &str {
        "corrupt_elu"
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> surrogate_autodiff::Result<Vec<usize>> {
        Ok(inputs[0].to_vec())
    }

    fn forward(&self, inputs: &[&Tensor<f64>]) -> Tensor<f64> {
        inputs[0].map(|x| if x > 0.0 { x } else { x.exp() - 1.0 })
    }

    fn vjp(
        &self,
        inputs: &[&Tensor<f64>],
        _output: &Tensor<f64>,
        grad: &Tensor<f64>,
    ) -> Vec<Tensor<f64>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { g * 0.5 * x.exp() })
            .collect();
        vec![Tensor::new(inputs[0].shape().to_vec(), data).expect("same shape")]
    }
}

fn graph_err(e: CoreError) -> GraphError {
    match e {
        CoreError::Graph(e) => e,
        e => GraphError::InvalidArgument(e.to_string()),
    }
}

/// Uniform values in `[lo, hi]` kept at least 0.1 from zero, so kinks and
/// singular points are never straddled by a difference step.
fn tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if v.abs() >= 0.1 {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn op_inputs(op: CheckedOp, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let mut t = |shape: Vec<usize>, lo, hi| tensor(rng, shape, lo, hi);
    match op {
        CheckedOp::Affine => vec![
            t(vec![3, 4], -2.0, 2.0),
            t(vec![2, 4], -1.0, 1.0),
            t(vec![2], -1.0, 1.0),
        ],
        CheckedOp::MatMul => vec![t(vec![3, 4], -2.0, 2.0), t(vec![4, 2], -2.0, 2.0)],
        CheckedOp::Div => vec![t(vec![3, 4], -2.0, 2.0), t(vec![3, 4], 0.5, 2.0)],
        CheckedOp::Sqrt | CheckedOp::Log => vec![t(vec![3, 4], 0.2, 3.0)],
        CheckedOp::L2Norm => vec![t(vec![3, 4], 0.5, 2.0)],
        op => (0..op.arity()).map(|_| t(vec![3, 4], -2.0, 2.0)).collect(),
    }
}

fn weight_tensors(w: &LossNetWeights) -> Vec<Tensor<f64>> {
    w.layers()
        .iter()
        .flat_map(|l| {
            [
                Tensor::new(
                    vec![l.out_dim, l.in_dim],
                    l.weight.iter().map(|&v| v as f64).collect(),
                ),
                Tensor::new(vec![l.out_dim], l.bias.iter().map(|&v| v as f64).collect()),
            ]
        })
        .collect::<std::result::Result<_, _>>()
        .expect("layer shapes")
}

struct Suite {
    report: SuiteReport,
    corrupt_elu: bool,
}

impl Suite {
    fn push(
        &mut self,
        order: u8,
        name: &str,
        r: surrogate_autodiff::Result<surrogate_autodiff::GradCheckReport>,
    ) -> Result<()> {
        let r = r.map_err(|e| HarnessError::Verification(format!("{name}: {e}")))?;
        self.report.rows.push(CheckRow {
            name: name.to_string(),
            order,
            max_rel_error: r.max_rel_error(),
            tolerance: if order == 1 {
                FIRST_ORDER_TOL
            } else {
                SECOND_ORDER_TOL
            },
        });
        Ok(())
    }

    fn primitives(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        for op in CheckedOp::ALL {
            let inputs = op_inputs(op, rng);
            let r = if op == CheckedOp::Elu && self.corrupt_elu {
                check_gradients(
                    "elu",
                    |g, x| {
                        let y = g.custom(Arc::new(CorruptElu), &[x[0]])?;
                        weighted_sum(g, y)
                    },
                    &inputs,
                    EPS,
                )
            } else {
                finite_diff_check(op, &inputs, EPS)
            };
            self.push(1, op.name(), r)?;
        }
        Ok(())
    }

    fn core_first_order(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let x = tensor(rng, vec![3, 6], -2.0, 2.0);
        let r = check_gradients(
            "soft_rank",
            |g, x| {
                let r = soft_rank_node(g, x[0], 2.0).map_err(graph_err)?;
                weighted_sum(g, r)
            },
            &[x],
            EPS,
        );
        self.push(1, "soft_rank", r)?;

        let v = tensor(rng, vec![8], -2.0, 2.0);
        let metric: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ranks = Tensor::vector(hard_rank(&metric)?.ranks);
        let r = check_gradients(
            "soft_spearman",
            |g, x| {
                let t = g.constant(ranks.clone());
                soft_spearman_node(g, x[0], t, 30.0).map_err(graph_err)
            },
            &[v],
            EPS,
        );
        self.push(1, "soft_spearman", r)?;

        let a = tensor(rng, vec![7], -2.0, 2.0);
        let b = tensor(rng, vec![7], -2.0, 2.0);
        let r = check_gradients(
            "pearson",
            |g, x| pearson_node(g, x[0], x[1]).map_err(graph_err),
            &[a, b],
            EPS,
        );
        self.push(1, "pearson", r)?;

        let spec = LossNetSpec::new(vec![2, 6, 6, 1])?;
        let w = build_lossnet(&spec, SEED)?;
        let mut inputs = vec![tensor(rng, vec![5, 2], -1.0, 1.0)];
        inputs.extend(weight_tensors(&w));
        let r = check_gradients(
            "lossnet",
            |g, x| {
                let out = mlp_node(g, x[0], &x[1..]).map_err(graph_err)?;
                weighted_sum(g, out)
            },
            &inputs,
            EPS,
        );
        self.push(1, "lossnet", r)?;

        self.prediction_losses(rng)
    }

    /// The classifier's loss heads with respect to logits (and the frozen
    /// loss net's parameters for the learned modes).
    fn prediction_losses(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let (b, k) = (4, 3);
        let logits = tensor(rng, vec![b, k], -2.0, 2.0);
        let mut onehot = vec![0.0; b * k];
        for r in 0..b {
            onehot[r * k + rng.gen_range(0..k)] = 1.0;
        }
        let onehot = Tensor::new(vec![b, k], onehot).expect("shape");
        let spec = LossNetSpec::new(vec![1, 6, 6, 1])?;
        let loss_w = weight_tensors(&build_lossnet(&spec, SEED)?);
        let cfg = PredictionConfig::default();
        for mode in [LossMode::Ce, LossMode::CeReloss, LossMode::RankLoss] {
            let mut inputs = vec![logits.clone()];
            if mode.needs_frozen_loss() {
                inputs.extend(loss_w.iter().cloned());
            }
            let name = format!("loss_{mode}");
            let r = check_gradients(
                &name,
                |g, x| {
                    let oh = g.constant(onehot.clone());
                    let learned = mode.needs_frozen_loss().then(|| (&x[1..], 1.0));
                    prediction_loss_node(g, mode, x[0], oh, &cfg, learned).map_err(graph_err)
                },
                &inputs,
                EPS,
            );
            self.push(1, &name, r)?;
        }
        Ok(())
    }

    /// Gradients of gradient-penalty terms with respect to loss-net
    /// parameters.
    fn second_order(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let (groups, rows) = (4, 3);
        let spec = LossNetSpec::new(vec![1, 6, 6, 1])?;
        let w = weight_tensors(&build_lossnet(&spec, SEED)?);
        let x = tensor(rng, vec![groups * rows, 1], 0.0, 1.0);

        let r = check_gradients(
            "gradient_penalty",
            |g, p| {
                let xn = g.constant(x.clone());
                let loss = pooled_loss_node(g, xn, p, groups, rows).map_err(graph_err)?;
                let pen = penalty_node(g, loss, xn, groups, rows).map_err(graph_err)?;
                g.mean(pen)
            },
            &w,
            EPS,
        );
        self.push(2, "gradient_penalty", r)?;

        let metric: Vec<f64> = (0..groups).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ranks = Tensor::vector(hard_rank(&metric)?.ranks);
        let targets = Tensor::vector(metric.clone());
        for mode in [Mode::Correlation, Mode::Approximation] {
            let cfg = TrainerConfig {
                n: groups,
                mode,
                ..TrainerConfig::default()
            };
            let name = format!("objective_{mode}");
            let r = check_gradients(
                &name,
                |g, p| {
                    let xn = g.constant(x.clone());
                    let rn = g.constant(ranks.clone());
                    let tn = g.constant(targets.clone());
                    let target = (mode == Mode::Approximation).then_some(tn);
                    let o =
                        objective_node(g, &cfg, xn, p, rn, target, rows, 1.0).map_err(graph_err)?;
                    Ok(o.objective)
                },
                &w,
                EPS,
            );
            self.push(2, &name, r)?;
        }
        Ok(())
    }
}

/// Runs every suite with fixed seeded inputs. `corrupt_elu` swaps in
/// [`CorruptElu`] for the elu check.
pub fn run_gradcheck(corrupt_elu: bool) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut suite = Suite {
        report: SuiteReport::default(),
        corrupt_elu,
    };
    suite.primitives(&mut rng)?;
    suite.core_first_order(&mut rng)?;
    suite.second_order(&mut rng)?;
    Ok(suite.report)
}
