//! The surrogate loss network: an elu MLP applied per sample and mean
//! pooled over the sub-batch, plus its binary checkpoint format.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surrogate_autodiff::{Bindings, Graph, NodeId, Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::metrics::BatchSample;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RELOSS01";

/// Layer widths, input first. Hidden layers use elu; the last layer is
/// linear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LossNetSpec {
    widths: Vec<usize>,
}

impl Default for LossNetSpec {
    /// `1 → 128 → 128 → 128 → 1`, 33,409 parameters.
    fn default() -> Self {
        LossNetSpec {
            widths: vec![1, 128, 128, 128, 1],
        }
    }
}

impl LossNetSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(CoreError::invalid(format!(
                "a loss net needs at least 2 layers, got widths {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(CoreError::invalid(format!("zero width in {widths:?}")));
        }
        if widths.last() != Some(&1) {
            return Err(CoreError::invalid(format!(
                "output width must be 1, got {widths:?}"
            )));
        }
        Ok(LossNetSpec { widths })
    }

    /// `input → width (× hidden_layers) → 1`.
    pub fn mlp(input: usize, width: usize, hidden_layers: usize) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(width, hidden_layers));
        widths.push(1);
        Self::new(widths)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossNetWeights {
    layers: Vec<Layer>,
}

/// Uniform `±sqrt(1/fan_in)` initialization from a seeded stream.
pub fn build_lossnet(spec: &LossNetSpec, seed: u64) -> Result<LossNetWeights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .widths
        .windows(2)
        .map(|w| {
            let (fan_in, out) = (w[0], w[1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f32> {
                (0..n)
                    .map(|_| rng.gen_range(-bound..=bound) as f32)
                    .collect()
            };
            let weight = draw(out * fan_in);
            let bias = draw(out);
            Layer {
                in_dim: fan_in,
                out_dim: out,
                weight,
                bias,
            }
        })
        .collect();
    Ok(LossNetWeights { layers })
}

fn elu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl LossNetWeights {
    pub fn zeros(spec: &LossNetSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Layer {
                in_dim: w[0],
                out_dim: w[1],
                weight: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        LossNetWeights { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let mut widths = vec![layers.first().map_or(0, |l| l.in_dim)];
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim != *widths.last().unwrap() {
                return Err(CoreError::invalid(format!(
                    "layer {i} takes {} inputs but the previous layer emits {}",
                    l.in_dim,
                    widths.last().unwrap()
                )));
            }
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(CoreError::invalid(format!(
                    "layer {i} has inconsistent weight or bias length"
                )));
            }
            widths.push(l.out_dim);
        }
        LossNetSpec::new(widths)?;
        Ok(LossNetWeights { layers })
    }

    pub fn spec(&self) -> LossNetSpec {
        let mut widths = vec![self.layers[0].in_dim];
        widths.extend(self.layers.iter().map(|l| l.out_dim));
        LossNetSpec { widths }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Parameter buffers in graph order: `w0, b0, w1, b1, …`.
    pub fn buffers(&self) -> Vec<&[f32]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f32]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Flips the sign of the network output.
    pub fn negate_output(&mut self) {
        let last = self.layers.last_mut().expect("at least two layers");
        last.weight
            .iter_mut()
            .chain(last.bias.iter_mut())
            .for_each(|v| *v = -*v);
    }

    /// Network output for one input row.
    pub fn forward_row(&self, x: &[f32]) -> f32 {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut next = l.bias.clone();
            for (o, out) in next.iter_mut().enumerate() {
                let row = &l.weight[o * l.in_dim..(o + 1) * l.in_dim];
                *out += row.iter().zip(&h).map(|(w, v)| w * v).sum::<f32>();
            }
            if k < last {
                next.iter_mut().for_each(|v| *v = elu(*v));
            }
            h = next;
        }
        h[0]
    }

    /// Binds every parameter buffer to its graph leaf.
    pub fn bind<T: Scalar>(&self, bindings: &mut Bindings<T>, params: &[NodeId]) {
        for (l, ids) in self.layers.iter().zip(params.chunks(2)) {
            let w = Tensor::new(vec![l.out_dim, l.in_dim], l.weight.clone()).expect("layer shape");
            let b = Tensor::vector(l.bias.clone());
            bindings.bind(ids[0], w.cast());
            bindings.bind(ids[1], b.cast());
        }
    }
}

/// Mean of the per-sample network outputs over the sub-batch.
///
/// Per-sample outputs are sorted before the reduction, so the result does
/// not depend on sample order even in the last bit.
pub fn forward_loss(w: &LossNetWeights, batch: &BatchSample) -> Result<f32> {
    let (input, width) = batch.lossnet_input()?;
    if width != w.input_width() {
        return Err(CoreError::invalid(format!(
            "loss net takes width {}, batch provides {width}",
            w.input_width()
        )));
    }
    let mut outs: Vec<f32> = input.chunks(width).map(|row| w.forward_row(row)).collect();
    outs.sort_by(f32::total_cmp);
    let sum: f64 = outs.iter().map(|&v| v as f64).sum();
    Ok((sum / outs.len() as f64) as f32)
}

/// Declares one graph leaf per parameter buffer, in [`LossNetWeights::buffers`] order.
pub fn declare_params<T: Scalar>(
    g: &mut Graph<T>,
    spec: &LossNetSpec,
    trainable: bool,
) -> Vec<NodeId> {
    let mut ids = Vec::with_capacity(2 * spec.layers());
    for w in spec.widths.windows(2) {
        for shape in [vec![w[1], w[0]], vec![w[1]]] {
            ids.push(if trainable {
                g.param(shape)
            } else {
                g.input(shape)
            });
        }
    }
    ids
}

/// Applies the MLP row-wise: `[rows, in] → [rows, 1]`.
pub fn mlp_node<T: Scalar>(g: &mut Graph<T>, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
    let layers = params.len() / 2;
    let mut h = x;
    for (k, ids) in params.chunks(2).enumerate() {
        h = g.affine(h, ids[0], ids[1])?;
        if k + 1 < layers {
            h = g.elu(h)?;
        }
    }
    Ok(h)
}

/// Per-sub-batch loss values: `[groups·size, in] → [groups]`, each the mean
/// over `size` consecutive rows.
pub fn pooled_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    params: &[NodeId],
    groups: usize,
    size: usize,
) -> Result<NodeId> {
    let out = mlp_node(g, x, params)?;
    let grid = g.reshape(out, vec![groups, size])?;
    if size == 1 {
        return Ok(g.reshape(grid, vec![groups])?);
    }
    let sums = g.sum_cols(grid)?;
    Ok(g.scale(sums, 1.0 / size as f64)?)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl LossNetWeights {
    /// Checkpoint bytes: magic, `u32` layer count, then per layer `in_dim`,
    /// `out_dim` (`u32`), row-major weights and the bias (`f32`), then an
    /// FNV-1a checksum of everything between the magic and the checksum.
    /// All integers and floats little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(4 + 4 * self.param_count() + 8 * self.layers.len());
        payload.extend((self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            payload.extend((l.in_dim as u32).to_le_bytes());
            payload.extend((l.out_dim as u32).to_le_bytes());
            for v in l.weight.iter().chain(&l.bias) {
                payload.extend(v.to_le_bytes());
            }
        }
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend(&payload);
        out.extend(fnv1a(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CoreError::Format("bad magic".into()));
        }
        if bytes.len() < 8 + 4 + 8 {
            return Err(CoreError::Format(format!(
                "truncated: {} bytes",
                bytes.len()
            )));
        }
        let payload = &bytes[8..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());

        let mut cur = Reader {
            bytes: payload,
            pos: 0,
        };
        let count = cur.u32()? as usize;
        if count < 2 {
            return Err(CoreError::Format(format!("layer count {count} below 2")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let in_dim = cur.u32()? as usize;
            let out_dim = cur.u32()? as usize;
            let weight = cur.f32s(
                in_dim
                    .checked_mul(out_dim)
                    .ok_or_else(|| shape_err("layer size overflows"))?,
            )?;
            let bias = cur.f32s(out_dim)?;
            layers.push(Layer {
                in_dim,
                out_dim,
                weight,
                bias,
            });
        }
        if cur.pos != payload.len() {
            return Err(CoreError::Format(format!(
                "{} unexpected bytes after the last layer",
                payload.len() - cur.pos
            )));
        }
        if fnv1a(payload) != stored {
            return Err(CoreError::Format("checksum mismatch".into()));
        }
        LossNetWeights::from_layers(layers).map_err(|e| shape_err(&e.to_string()))
    }
}

fn shape_err(detail: &str) -> CoreError {
    CoreError::Format(format!("shape mismatch: {detail}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CoreError::Format(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos + 8,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| shape_err("layer size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn save_checkpoint(w: &LossNetWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, w.to_bytes()).map_err(|e| CoreError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LossNetWeights> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    LossNetWeights::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count() {
        let spec = LossNetSpec::default();
        assert_eq!(spec.param_count(), 33_409);
        assert_eq!(build_lossnet(&spec, 3).unwrap().param_count(), 33_409);
    }

    #[test]
    fn invalid_specs() {
        assert!(LossNetSpec::new(vec![1, 1]).is_err());
        assert!(LossNetSpec::new(vec![1, 0, 1]).is_err());
        assert!(LossNetSpec::new(vec![1, 8, 2]).is_err());
        assert!(LossNetSpec::mlp(16, 32, 2).is_ok());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let w = LossNetWeights::zeros(&LossNetSpec::default());
        let b = BatchSample::classification(vec![0.3, 0.7, 0.9, 0.1], vec![1, 0], 2).unwrap();
        assert_eq!(forward_loss(&w, &b).unwrap(), 0.0);
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let spec = LossNetSpec::default();
        assert_eq!(
            build_lossnet(&spec, 9).unwrap(),
            build_lossnet(&spec, 9).unwrap()
        );
        assert_ne!(
            build_lossnet(&spec, 9).unwrap(),
            build_lossnet(&spec, 10).unwrap()
        );
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let w = build_lossnet(&LossNetSpec::default(), 0).unwrap();
        for l in w.layers() {
            let bound = (1.0 / l.in_dim as f32).sqrt();
            assert!(l.weight.iter().chain(&l.bias).all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn graph_forward_matches_plain() {
        let w = build_lossnet(&LossNetSpec::default(), 0).unwrap();
        let mut g = Graph::<f32>::new();
        let x = g.input(vec![3, 1]);
        let params = declare_params(&mut g, &w.spec(), false);
        let out = mlp_node(&mut g, x, &params).unwrap();
        let mut b = Bindings::new();
        w.bind(&mut b, &params);
        b.bind(x, Tensor::new(vec![3, 1], vec![0.1, 0.5, 0.9]).unwrap());
        let got = g.evaluate(out, &b).unwrap();
        for (i, v) in [0.1f32, 0.5, 0.9].iter().enumerate() {
            assert!((got.data()[i] - w.forward_row(&[*v])).abs() < 1e-6);
        }
    }

    #[test]
    fn single_sample_equals_scalar_evaluation() {
        let w = build_lossnet(&LossNetSpec::default(), 0).unwrap();
        let b = BatchSample::classification(vec![0.3, 0.7], vec![1], 2).unwrap();
        assert_eq!(forward_loss(&w, &b).unwrap(), w.forward_row(&[0.7]));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let w = build_lossnet(&LossNetSpec::default(), 0).unwrap();
        let b = BatchSample::vectors(vec![1.0, 2.0], 2).unwrap();
        assert!(forward_loss(&w, &b).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let w = build_lossnet(&LossNetSpec::mlp(1, 4, 2).unwrap(), 5).unwrap();
        let bytes = w.to_bytes();
        assert_eq!(LossNetWeights::from_bytes(&bytes).unwrap(), w);

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(
            matches!(LossNetWeights::from_bytes(&bad), Err(CoreError::Format(m)) if m == "bad magic")
        );

        assert!(LossNetWeights::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(LossNetWeights::from_bytes(&bytes[..20]).is_err());

        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(matches!(
            LossNetWeights::from_bytes(&flipped),
            Err(CoreError::Format(m)) if m.contains("checksum")
        ));
    }

    #[test]
    fn header_shape_mismatch_is_rejected() {
        // two layers 1→2 and 3→1: dimensions do not chain
        let mut payload = Vec::new();
        payload.extend(2u32.to_le_bytes());
        for (i, o) in [(1u32, 2u32), (3, 1)] {
            payload.extend(i.to_le_bytes());
            payload.extend(o.to_le_bytes());
            for _ in 0..(i * o + o) {
                payload.extend(0f32.to_le_bytes());
            }
        }
        let mut bytes = CHECKPOINT_MAGIC.to_vec();
        bytes.extend(&payload);
        bytes.extend(fnv1a(&payload).to_le_bytes());
        assert!(matches!(
            LossNetWeights::from_bytes(&bytes),
            Err(CoreError::Format(m)) if m.contains("shape mismatch")
        ));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }
}
