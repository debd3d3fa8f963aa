//! Rank correlation coefficients.
//!
//! Spearman is the Pearson correlation of rank vectors computed with sample
//! covariance and standard deviations, each standard deviation guarded by
//! [`STD_EPS`]. Kendall is tau-a: tied pairs count as neither concordant nor
//! discordant but stay in the denominator.

use std::cmp::Ordering;
use std::fmt;

use surrogate_autodiff::{Graph, NodeId, Scalar};

use crate::error::{CoreError, Result};
use crate::softrank::{check_finite, hard_rank, soft_rank, soft_rank_node};

pub const STD_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationKind {
    SpearmanHard,
    SpearmanSoft,
    Kendall,
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationKind::SpearmanHard => "spearman-hard",
            CorrelationKind::SpearmanSoft => "spearman-soft",
            CorrelationKind::Kendall => "kendall",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationCoefficient {
    pub value: f64,
    pub kind: CorrelationKind,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(CoreError::invalid(format!(
            "correlation needs at least 2 points, got {}",
            a.len()
        )));
    }
    check_finite(a, "correlation input")?;
    check_finite(b, "correlation input")
}

/// Sample Pearson correlation with guarded standard deviations.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let dof = n - 1.0;
    (cov / dof) / (((va / dof).sqrt() + STD_EPS) * ((vb / dof).sqrt() + STD_EPS))
}

pub fn spearman_hard(a: &[f64], b: &[f64]) -> Result<CorrelationCoefficient> {
    check_pair(a, b)?;
    let ra = hard_rank(a)?.ranks;
    let rb = hard_rank(b)?.ranks;
    Ok(CorrelationCoefficient {
        value: pearson(&ra, &rb),
        kind: CorrelationKind::SpearmanHard,
    })
}

pub fn spearman_soft(a: &[f64], b: &[f64], steepness: f64) -> Result<CorrelationCoefficient> {
    check_pair(a, b)?;
    let ra = soft_rank(a, steepness)?.ranks;
    let rb = soft_rank(b, steepness)?.ranks;
    Ok(CorrelationCoefficient {
        value: pearson(&ra, &rb),
        kind: CorrelationKind::SpearmanSoft,
    })
}

/// Number of pairs inside runs of equal adjacent elements.
fn tied_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort counting strict inversions.
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-a in O(n log n) (Knight's algorithm).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<CorrelationCoefficient> {
    check_pair(a, b)?;
    let n = a.len();
    let cmp = |x: &f64, y: &f64| x.partial_cmp(y).unwrap_or(Ordering::Equal);

    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|p, q| cmp(&p.0, &q.0).then(cmp(&p.1, &q.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tied_pairs(&pairs, |p, q| p.0 == q.0);
    let n3 = tied_pairs(&pairs, |p, q| p.0 == q.0 && p.1 == q.1);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = sort_counting_swaps(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys, |x, y| x == y);

    // Pairs tied in neither coordinate are concordant or discordant, and the
    // discordant ones are exactly the inversions left after sorting by a.
    let net = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    Ok(CorrelationCoefficient {
        value: net as f64 / n0 as f64,
        kind: CorrelationKind::Kendall,
    })
}

/// Pearson correlation of two equal-length vector nodes, sample form with
/// guarded standard deviations.
///
/// A tiny constant under each square root keeps the gradient finite when
/// one side is exactly constant; it is far below the guard on the standard
/// deviation itself.
pub fn pearson_node<T: Scalar>(g: &mut Graph<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let shape = g.shape(a)?.to_vec();
    if shape.len() != 1 || g.shape(b)? != shape.as_slice() {
        return Err(CoreError::invalid(format!(
            "pearson_node expects two equal-length vectors, got {shape:?} and {:?}",
            g.shape(b)?
        )));
    }
    let n = shape[0];
    if n < 2 {
        return Err(CoreError::invalid("correlation needs at least 2 points"));
    }
    let dof = 1.0 / (n as f64 - 1.0);
    let centered = |g: &mut Graph<T>, x: NodeId| -> Result<NodeId> {
        let m = g.mean(x)?;
        let m = g.broadcast(m, vec![n])?;
        Ok(g.sub(x, m)?)
    };
    let std = |g: &mut Graph<T>, d: NodeId| -> Result<NodeId> {
        let sq = g.square(d)?;
        let var = g.sum(sq)?;
        let var = g.scale(var, dof)?;
        let var = g.add_scalar(var, 1e-20)?;
        let sd = g.sqrt(var)?;
        Ok(g.add_scalar(sd, STD_EPS)?)
    };
    let da = centered(g, a)?;
    let db = centered(g, b)?;
    let prod = g.mul(da, db)?;
    let cov = g.sum(prod)?;
    let cov = g.scale(cov, dof)?;
    let sa = std(g, da)?;
    let sb = std(g, db)?;
    let denom = g.mul(sa, sb)?;
    Ok(g.div(cov, denom)?)
}

/// Soft Spearman between a differentiable vector node and fixed target
/// ranks (a constant or input node).
pub fn soft_spearman_node<T: Scalar>(
    g: &mut Graph<T>,
    values: NodeId,
    target_ranks: NodeId,
    steepness: f64,
) -> Result<NodeId> {
    let r = soft_rank_node(g, values, steepness)?;
    pearson_node(g, r, target_ranks)
}

#[cfg(test)]
mod tests {
    use surrogate_autodiff::{Bindings, Tensor};

    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn spearman_examples() {
        // the std guard shifts perfect correlations by about 2e-8
        let v = spearman_hard(&[1.0, 5.0, 3.0], &[1.0, 5.0, 3.0])
            .unwrap()
            .value;
        assert!(close(v, 1.0, 1e-7));
        let v = spearman_hard(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0])
            .unwrap()
            .value;
        assert!(close(v, -1.0, 1e-7));
        let v = spearman_hard(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0])
            .unwrap()
            .value;
        assert!(close(v, -0.5, 1e-7));
    }

    #[test]
    fn spearman_errors() {
        assert!(spearman_hard(&[1.0, 2.0], &[1.0]).is_err());
        assert!(spearman_hard(&[1.0], &[1.0]).is_err());
        assert!(spearman_soft(&[1.0], &[1.0], 2.0).is_err());
        assert!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(kendall_tau(&[], &[]).is_err());
    }

    #[test]
    fn constant_side_gives_zero() {
        let v = spearman_hard(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0])
            .unwrap()
            .value;
        assert_eq!(v, 0.0);
        let v = spearman_soft(&[0.0, 0.0], &[1.0, 2.0], 2.0).unwrap().value;
        assert_eq!(v, 0.0);
    }

    #[test]
    fn soft_spearman_limits() {
        let a = [0.3, -1.0, 2.0, 0.8, 1.4];
        assert!(spearman_soft(&a, &a, 50.0).unwrap().value >= 0.999);
        let v = spearman_soft(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], 50.0)
            .unwrap()
            .value;
        assert!(v <= -0.999);
    }

    #[test]
    fn kendall_examples() {
        let k = |a: &[f64], b: &[f64]| kendall_tau(a, b).unwrap().value;
        assert_eq!(k(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(k(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]), -1.0);
        assert!(close(
            k(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]),
            -1.0 / 3.0,
            1e-15
        ));
    }

    #[test]
    fn kendall_ties_count_as_neither() {
        // pairs: (0,1) tied in a, (0,2) C, (1,2) C -> 2/3
        let t = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0])
            .unwrap()
            .value;
        assert!(close(t, 2.0 / 3.0, 1e-15));
        // everything tied
        assert_eq!(kendall_tau(&[1.0; 4], &[2.0; 4]).unwrap().value, 0.0);
    }

    #[test]
    fn merge_count_matches_quadratic() {
        let mut v = vec![3.0, 1.0, 2.0, 2.0, 5.0, 0.0, 2.0];
        let brute = (0..v.len())
            .flat_map(|i| (i + 1..v.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| v[i] > v[j])
            .count() as u64;
        let mut buf = vec![0.0; v.len()];
        assert_eq!(sort_counting_swaps(&mut v, &mut buf), brute);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pearson_node_matches_plain() {
        let a = vec![0.3, -1.0, 2.0, 0.8, 1.4];
        let b = vec![1.0, 2.0, 5.0, 3.0, 4.0];
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![5]);
        let y = g.input(vec![5]);
        let r = pearson_node(&mut g, x, y).unwrap();
        let bind = Bindings::new()
            .with(x, Tensor::vector(a.clone()))
            .with(y, Tensor::vector(b.clone()));
        let got = g.evaluate(r, &bind).unwrap().item();
        assert!(close(got, pearson(&a, &b), 1e-12));
    }

    #[test]
    fn pearson_node_gradient_is_finite_for_constant_input() {
        let mut g = Graph::<f32>::new();
        let x = g.input(vec![4]);
        let y = g.input(vec![4]);
        let r = pearson_node(&mut g, x, y).unwrap();
        let d = g.gradient(r, &[x]).unwrap()[0];
        let bind = Bindings::new()
            .with(x, Tensor::vector(vec![0.5; 4]))
            .with(y, Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let out = g.evaluate_many(&[r, d], &bind).unwrap();
        assert_eq!(out[0].item(), 0.0);
        assert!(out[1].is_finite());
    }

    #[test]
    fn pearson_node_rejects_bad_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vec![4]);
        let y = g.input(vec![3]);
        assert!(pearson_node(&mut g, x, y).is_err());
        let z = g.input(vec![1]);
        assert!(pearson_node(&mut g, z, z).is_err());
    }
}
