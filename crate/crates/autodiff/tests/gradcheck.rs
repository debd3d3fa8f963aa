use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surrogate_autodiff::{check_gradients, finite_diff_check, CheckedOp, Graph, NodeId, Tensor};

const FIRST_ORDER_TOL: f64 = 1e-4;
const SECOND_ORDER_TOL: f64 = 1e-3;
const EPS: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values with |v| in [0.1, 2], away from the elu kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let t = uniform(rng, shape, 0.1, 2.0);
    let signs: Vec<f64> = (0..t.numel())
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Tensor::new(
        t.shape().to_vec(),
        t.data().iter().zip(&signs).map(|(v, s)| v * s).collect(),
    )
    .unwrap()
}

fn sample_inputs(op: CheckedOp, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    match op {
        CheckedOp::Affine => vec![
            uniform(rng, vec![3, 4], -2.0, 2.0),
            uniform(rng, vec![5, 4], -1.0, 1.0),
            uniform(rng, vec![5], -1.0, 1.0),
        ],
        CheckedOp::MatMul => vec![
            uniform(rng, vec![3, 4], -2.0, 2.0),
            uniform(rng, vec![4, 2], -2.0, 2.0),
        ],
        CheckedOp::Elu => vec![away_from_zero(rng, vec![3, 4])],
        CheckedOp::Sqrt | CheckedOp::Log => vec![uniform(rng, vec![3, 4], 0.1, 3.0)],
        CheckedOp::Div => vec![
            uniform(rng, vec![3, 4], -2.0, 2.0),
            away_from_zero(rng, vec![3, 4]).map(|v| v + 0.4 * v.signum()),
        ],
        CheckedOp::Add | CheckedOp::Sub | CheckedOp::Mul => vec![
            uniform(rng, vec![3, 4], -2.0, 2.0),
            uniform(rng, vec![3, 4], -2.0, 2.0),
        ],
        CheckedOp::L2Norm => loop {
            let x = uniform(rng, vec![6], -1.0, 1.0);
            if x.data().iter().map(|v| v * v).sum::<f64>().sqrt() >= 0.1 {
                break vec![x];
            }
        },
        _ => vec![uniform(rng, vec![3, 4], -2.0, 2.0)],
    }
}

#[test]
fn every_primitive_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for op in CheckedOp::ALL {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let inputs = sample_inputs(op, &mut rng);
            let report = finite_diff_check(op, &inputs, EPS).unwrap();
            worst = worst.max(report.max_rel_error());
        }
        println!("{:<12} {worst:.3e}", op.name());
        assert!(
            worst <= FIRST_ORDER_TOL,
            "{} worst relative error {worst:e}",
            op.name()
        );
    }
}

#[test]
fn affine_check_at_spec_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = sample_inputs(CheckedOp::Affine, &mut rng);
    let report = finite_diff_check(CheckedOp::Affine, &inputs, 1e-4).unwrap();
    assert!(report.max_rel_error() <= 1e-4);
}

#[test]
fn wrong_arity_is_rejected() {
    let x = Tensor::<f64>::vector(vec![1.0]);
    assert!(finite_diff_check(CheckedOp::Affine, &[x], EPS).is_err());
}

/// Small elu MLP, mean pooled over rows, followed by the gradient-norm
/// penalty `(‖∇ₓ f‖₂ − 1)²`.
fn penalty_of_mlp(g: &mut Graph<f64>, x: &[NodeId]) -> surrogate_autodiff::Result<NodeId> {
    let input = x[0];
    let mut h = input;
    let layers = (x.len() - 1) / 2;
    for l in 0..layers {
        h = g.affine(h, x[1 + 2 * l], x[2 + 2 * l])?;
        if l + 1 < layers {
            h = g.elu(h)?;
        }
    }
    let f = g.mean(h)?;
    let grad = g.gradient(f, &[input])?[0];
    let norm = g.l2_norm(grad)?;
    let shifted = g.add_scalar(norm, -1.0)?;
    g.square(shifted)
}

#[test]
fn second_order_gradient_penalty_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let widths = [3usize, 6, 5, 1];
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut inputs = vec![uniform(&mut rng, vec![4, widths[0]], -1.0, 1.0)];
        for w in widths.windows(2) {
            inputs.push(uniform(&mut rng, vec![w[1], w[0]], -1.5, 1.5));
            inputs.push(uniform(&mut rng, vec![w[1]], -0.5, 0.5));
        }
        let report = check_gradients("gradient_penalty", penalty_of_mlp, &inputs, EPS).unwrap();
        worst = worst.max(report.max_rel_error());
    }
    println!("second order worst {worst:.3e}");
    assert!(worst <= SECOND_ORDER_TOL, "worst {worst:e}");
}

#[test]
fn nonpositive_eps_is_rejected() {
    let x = Tensor::<f64>::vector(vec![1.0]);
    assert!(finite_diff_check(CheckedOp::Exp, &[x], 0.0).is_err());
}
