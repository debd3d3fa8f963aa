//! Seeded Gaussian-blob classification data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobsConfig {
    pub dim: usize,
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    /// Standard deviation of the class centers; samples have unit noise.
    pub spread: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            dim: 16,
            classes: 8,
            train: 2000,
            val: 1000,
            spread: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// Row-major `len × dim`.
    pub x: Vec<f32>,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blobs {
    pub cfg: BlobsConfig,
    pub train: Split,
    pub val: Split,
}

impl Blobs {
    pub fn generate(cfg: BlobsConfig, seed: u64) -> Result<Self> {
        if cfg.dim == 0 || cfg.classes < 2 || cfg.train == 0 || cfg.val == 0 || !(cfg.spread > 0.0)
        {
            return Err(CoreError::Config(format!("invalid blobs config {cfg:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<f64> = (0..cfg.classes * cfg.dim)
            .map(|_| cfg.spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut split = |n: usize| {
            let mut x = Vec::with_capacity(n * cfg.dim);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let c = rng.gen_range(0..cfg.classes);
                y.push(c);
                for d in 0..cfg.dim {
                    let noise: f64 = rng.sample(StandardNormal);
                    x.push((centers[c * cfg.dim + d] + noise) as f32);
                }
            }
            Split { x, y }
        };
        let train = split(cfg.train);
        let val = split(cfg.val);
        Ok(Blobs { cfg, train, val })
    }
}
