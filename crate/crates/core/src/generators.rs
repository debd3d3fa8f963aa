//! Training-data generators for the surrogate loss.
//!
//! `G_R` draws uniformly random probability vectors and labels. `G_M` draws
//! stored (prediction, label) rows from prediction dumps written by a
//! classifier during ordinary training.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::metrics::BatchSample;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Probability of drawing from `G_R`.
    pub p: f64,
    pub sub_batch: usize,
    pub num_classes: usize,
    pub dump_paths: Vec<PathBuf>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            p: 0.5,
            sub_batch: 32,
            num_classes: 8,
            dump_paths: Vec::new(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(CoreError::Config(format!(
                "p must be in [0, 1], got {}",
                self.p
            )));
        }
        if self.sub_batch == 0 {
            return Err(CoreError::Config("sub_batch must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(CoreError::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Stored classifier outputs: one probability row and label per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionDump {
    num_classes: usize,
    probs: Vec<f32>,
    labels: Vec<usize>,
}

impl PredictionDump {
    pub fn new(probs: Vec<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        // reuse the batch invariants
        if !labels.is_empty() {
            BatchSample::classification(probs.clone(), labels.clone(), num_classes)
                .map_err(|e| CoreError::Dump(e.to_string()))?;
        } else if !probs.is_empty() {
            return Err(CoreError::Dump("probabilities without labels".into()));
        }
        Ok(PredictionDump {
            num_classes,
            probs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    /// The rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<BatchSample> {
        let k = self.num_classes;
        let probs = idx
            .iter()
            .flat_map(|&i| self.probs[i * k..(i + 1) * k].iter().copied())
            .collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        BatchSample::classification(probs, labels, k)
    }

    /// CSV with header `label,p0,…,p{k−1}`, probabilities to 9 significant
    /// digits.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend((0..self.num_classes).map(|c| format!("p{c}")));
        w.write_record(&header).map_err(csv_err)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.to_string()];
            rec.extend(
                self.probs[i * self.num_classes..(i + 1) * self.num_classes]
                    .iter()
                    .map(|p| format!("{p:.8e}")),
            );
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CoreError::Dump(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("ascii csv"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        let k = header.len().saturating_sub(1);
        let expected = std::iter::once("label".to_string()).chain((0..k).map(|c| format!("p{c}")));
        if k < 2 || !header.iter().eq(expected) {
            return Err(CoreError::Dump(format!(
                "unexpected header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let bad = |what: &str| CoreError::Dump(format!("row {}: bad {what}", line + 1));
            labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad("label"))?);
            for field in rec.iter().skip(1) {
                probs.push(
                    field
                        .trim()
                        .parse::<f32>()
                        .map_err(|_| bad("probability"))?,
                );
            }
        }
        PredictionDump::new(probs, labels, k)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| CoreError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_csv(&text).map_err(|e| CoreError::Dump(format!("{}: {e}", path.display())))
    }
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Dump(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Random,
    Model,
}

/// Seeded `G_R`/`G_M` sampler. The `*_with` methods draw from a caller
/// supplied stream instead of the internal one.
#[derive(Clone, Debug)]
pub struct BatchGenerator {
    cfg: GeneratorConfig,
    dumps: Vec<PredictionDump>,
    rng: ChaCha8Rng,
}

impl BatchGenerator {
    /// Loads every dump listed in the config.
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        let dumps = cfg
            .dump_paths
            .iter()
            .map(PredictionDump::read_csv)
            .collect::<Result<Vec<_>>>()?;
        Self::with_dumps(cfg, dumps)
    }

    pub fn with_dumps(cfg: GeneratorConfig, dumps: Vec<PredictionDump>) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut g = BatchGenerator {
            cfg,
            dumps: Vec::new(),
            rng,
        };
        g.set_dumps(dumps)?;
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn dumps(&self) -> &[PredictionDump] {
        &self.dumps
    }

    pub fn set_dumps(&mut self, dumps: Vec<PredictionDump>) -> Result<()> {
        for (i, d) in dumps.iter().enumerate() {
            if d.num_classes != self.cfg.num_classes {
                return Err(CoreError::Dump(format!(
                    "dump {i} has {} classes, expected {}",
                    d.num_classes, self.cfg.num_classes
                )));
            }
            if d.len() < self.cfg.sub_batch {
                return Err(CoreError::Dump(format!(
                    "dump {i} has {} rows, fewer than the sub-batch size {}",
                    d.len(),
                    self.cfg.sub_batch
                )));
            }
        }
        self.dumps = dumps;
        Ok(())
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn gen_random_batch(&mut self) -> BatchSample {
        let mut rng = self.rng.clone();
        let b = self.random_batch_with(&mut rng);
        self.rng = rng;
        b
    }

    pub fn gen_model_batch(&mut self) -> Result<BatchSample> {
        let mut rng = self.rng.clone();
        let b = self.model_batch_with(&mut rng);
        self.rng = rng;
        b
    }

    pub fn sample_batch(&mut self) -> Result<(BatchSample, Source)> {
        let mut rng = self.rng.clone();
        let b = self.sample_with(&mut rng);
        self.rng = rng;
        b
    }

    /// `G_R`: uniform labels, and independent uniform positive scores
    /// normalized to a probability vector.
    pub fn random_batch_with<R: Rng>(&self, rng: &mut R) -> BatchSample {
        let (b, k) = (self.cfg.sub_batch, self.cfg.num_classes);
        let mut probs = Vec::with_capacity(b * k);
        let mut labels = Vec::with_capacity(b);
        for _ in 0..b {
            labels.push(rng.gen_range(0..k));
            // 1 − U[0, 1) is strictly positive
            let raw: Vec<f64> = (0..k).map(|_| 1.0 - rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| (v / total) as f32));
        }
        BatchSample::classification(probs, labels, k).expect("normalized probabilities")
    }

    /// `G_M`: a uniformly chosen dump, then `sub_batch` distinct rows of it
    /// (kept in file order).
    pub fn model_batch_with<R: Rng>(&self, rng: &mut R) -> Result<BatchSample> {
        if self.dumps.is_empty() {
            return Err(CoreError::Dump("no prediction dumps loaded for G_M".into()));
        }
        let dump = &self.dumps[rng.gen_range(0..self.dumps.len())];
        let mut idx = index::sample(rng, dump.len(), self.cfg.sub_batch).into_vec();
        idx.sort_unstable();
        dump.select(&idx)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> Result<(BatchSample, Source)> {
        if rng.gen_bool(self.cfg.p) {
            Ok((self.random_batch_with(rng), Source::Random))
        } else {
            Ok((self.model_batch_with(rng)?, Source::Model))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::accuracy;

    fn cfg(p: f64, sub_batch: usize, k: usize) -> GeneratorConfig {
        GeneratorConfig {
            p,
            sub_batch,
            num_classes: k,
            dump_paths: vec![],
            seed: 3,
        }
    }

    fn dump(rows: usize, k: usize, label: usize) -> PredictionDump {
        let probs = (0..rows).flat_map(|_| vec![1.0 / k as f32; k]).collect();
        PredictionDump::new(probs, vec![label; rows], k).unwrap()
    }

    #[test]
    fn random_batches_are_normalized() {
        let mut g = BatchGenerator::with_dumps(cfg(1.0, 4, 2), vec![]).unwrap();
        let b = g.gen_random_batch();
        assert_eq!(b.size(), 4);
        for i in 0..4 {
            assert!((b.row(i).iter().sum::<f32>() - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn random_accuracy_is_chance() {
        let mut g = BatchGenerator::with_dumps(cfg(1.0, 32, 8), vec![]).unwrap();
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| accuracy(&g.gen_random_batch()).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.125).abs() <= 0.02, "{mean}");
    }

    #[test]
    fn same_seed_same_batch() {
        let mut a = BatchGenerator::with_dumps(cfg(0.5, 8, 3), vec![dump(20, 3, 0)]).unwrap();
        let mut b = BatchGenerator::with_dumps(cfg(0.5, 8, 3), vec![dump(20, 3, 0)]).unwrap();
        for _ in 0..20 {
            assert_eq!(a.sample_batch().unwrap(), b.sample_batch().unwrap());
        }
    }

    #[test]
    fn full_dump_returns_its_rows() {
        let probs: Vec<f32> = (0..10)
            .flat_map(|i| [i as f32 / 10.0, 1.0 - i as f32 / 10.0])
            .collect();
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let d = PredictionDump::new(probs.clone(), labels.clone(), 2).unwrap();
        let mut g = BatchGenerator::with_dumps(cfg(0.0, 10, 2), vec![d]).unwrap();
        let b = g.gen_model_batch().unwrap();
        assert_eq!(b.predictions(), probs.as_slice());
        assert_eq!(b.labels().unwrap(), labels.as_slice());
    }

    #[test]
    fn dump_choice_is_uniform() {
        let mut g =
            BatchGenerator::with_dumps(cfg(0.0, 4, 2), vec![dump(8, 2, 0), dump(8, 2, 1)]).unwrap();
        let n = 10_000;
        let first = (0..n)
            .filter(|_| g.gen_model_batch().unwrap().labels().unwrap()[0] == 0)
            .count();
        assert!((first as f64 / n as f64 - 0.5).abs() <= 0.05);
    }

    #[test]
    fn mixing_probability() {
        let mut g = BatchGenerator::with_dumps(cfg(1.0, 2, 2), vec![]).unwrap();
        assert!((0..100).all(|_| g.sample_batch().unwrap().1 == Source::Random));

        let mut g = BatchGenerator::with_dumps(cfg(0.0, 2, 2), vec![dump(4, 2, 0)]).unwrap();
        assert!((0..100).all(|_| g.sample_batch().unwrap().1 == Source::Model));

        let mut g = BatchGenerator::with_dumps(cfg(0.5, 2, 2), vec![dump(4, 2, 0)]).unwrap();
        let n = 10_000;
        let r = (0..n)
            .filter(|_| g.sample_batch().unwrap().1 == Source::Random)
            .count();
        assert!((r as f64 / n as f64 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn small_random_batches_span_accuracy_range() {
        let mut g = BatchGenerator::with_dumps(cfg(1.0, 8, 2), vec![]).unwrap();
        let accs: Vec<f64> = (0..10_000)
            .map(|_| accuracy(&g.gen_random_batch()).unwrap())
            .collect();
        let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min <= 0.1 && max >= 0.9, "{min} {max}");
    }

    #[test]
    fn missing_dumps_error() {
        let mut g = BatchGenerator::with_dumps(cfg(0.0, 2, 2), vec![]).unwrap();
        assert!(matches!(g.gen_model_batch(), Err(CoreError::Dump(_))));
        assert!(BatchGenerator::new(GeneratorConfig {
            dump_paths: vec!["/nonexistent/dump.csv".into()],
            ..cfg(0.0, 2, 2)
        })
        .is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(BatchGenerator::with_dumps(cfg(1.5, 2, 2), vec![]).is_err());
        assert!(BatchGenerator::with_dumps(cfg(0.5, 0, 2), vec![]).is_err());
        assert!(BatchGenerator::with_dumps(cfg(0.5, 2, 1), vec![]).is_err());
        assert!(BatchGenerator::with_dumps(cfg(0.5, 8, 2), vec![dump(4, 2, 0)]).is_err());
        assert!(BatchGenerator::with_dumps(cfg(0.5, 2, 3), vec![dump(4, 2, 0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = PredictionDump::new(vec![0.25, 0.75, 0.1234567, 0.8765433], vec![1, 0], 2).unwrap();
        let text = d.to_csv().unwrap();
        assert!(text.starts_with("label,p0,p1\n1,2.50000000e-1,7.50000000e-1\n"));
        assert_eq!(PredictionDump::from_csv(&text).unwrap(), d);
    }

    #[test]
    fn malformed_csv() {
        assert!(PredictionDump::from_csv("lbl,p0,p1\n0,0.5,0.5\n").is_err());
        assert!(PredictionDump::from_csv("label,p0,p1\n0,0.5\n").is_err());
        assert!(PredictionDump::from_csv("label,p0,p1\nx,0.5,0.5\n").is_err());
        assert!(PredictionDump::from_csv("label,p0,p1\n5,0.5,0.5\n").is_err());
        assert!(PredictionDump::from_csv("label,p0,p1\n0,0.9,0.5\n").is_err());
    }
}
