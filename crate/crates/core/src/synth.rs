//! Synthetic click logs scored by a hidden teacher model.
//!
//! Dense features are standard normal; each categorical field draws Zipf
//! distributed ranks that a fixed random bijection maps to token ids. A
//! random full-table DLRM (the teacher) scores every sample, the scores are
//! standardized and scaled, and labels are Bernoulli draws around an offset
//! chosen so the expected click rate hits the target.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::PssConfig;
use crate::error::{Error, Result};
use crate::metrics::sigmoid;
use crate::model::{Batch, DlrmModel, DlrmSpec};
use crate::rng::{stream_seed, SplitMix64};

/// Embedding width of the teacher.
pub const TEACHER_DIM: usize = 8;

const TEACHER_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const BIJECTION_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub num_samples: usize,
    pub dense_dim: usize,
    pub num_cat_fields: usize,
    pub vocab_sizes: Vec<usize>,
    pub target_ctr: f64,
    pub teacher_seed: u64,
    /// Standard deviation of Gaussian noise added to each logit.
    pub noise: f64,
    /// Token ranks follow `P(r) ~ 1 / (r + 1)^s`; 0 gives uniform tokens.
    pub zipf_exponent: f64,
    /// Teacher logits are standardized, then multiplied by this.
    pub logit_scale: f64,
}

impl DatasetSpec {
    /// Criteo-shaped defaults: 13 dense features and 26 fields of `vocab` tokens.
    pub fn criteo_like(num_samples: usize, vocab: usize, target_ctr: f64, teacher_seed: u64) -> Self {
        Self::with_vocab(num_samples, vec![vocab; 26], target_ctr, teacher_seed)
    }

    pub fn with_vocab(
        num_samples: usize,
        vocab_sizes: Vec<usize>,
        target_ctr: f64,
        teacher_seed: u64,
    ) -> Self {
        Self {
            num_samples,
            dense_dim: 13,
            num_cat_fields: vocab_sizes.len(),
            vocab_sizes,
            target_ctr,
            teacher_seed,
            noise: 0.5,
            zipf_exponent: 1.05,
            logit_scale: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_sizes.len() != self.num_cat_fields || self.num_cat_fields == 0 {
            return Err(Error::invalid("need one vocab size per categorical field"));
        }
        if self.vocab_sizes.contains(&0) {
            return Err(Error::invalid("vocab sizes must be at least 1"));
        }
        if self.dense_dim == 0 {
            return Err(Error::invalid("dense_dim must be at least 1"));
        }
        if !(self.target_ctr > 0.0 && self.target_ctr < 1.0) {
            return Err(Error::invalid("target_ctr must lie in (0, 1)"));
        }
        for (name, v) in [("noise", self.noise), ("zipf_exponent", self.zipf_exponent)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(alloc::format!("{name} must be finite and non-negative")));
            }
        }
        if !self.logit_scale.is_finite() || self.logit_scale <= 0.0 {
            return Err(Error::invalid("logit_scale must be finite and positive"));
        }
        Ok(())
    }
}

/// Click log held column-wise per sample: `N x dense_dim` features,
/// `N x F` tokens, `N` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dense_dim: usize,
    pub vocab_sizes: Vec<usize>,
    pub dense: Vec<f64>,
    pub tokens: Vec<u64>,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    /// Shapes agree and every token is inside its field's vocabulary.
    pub fn validate(&self) -> Result<()> {
        let (n, f) = (self.len(), self.num_fields());
        if self.dense.len() != n * self.dense_dim || self.tokens.len() != n * f {
            return Err(Error::invalid("dataset shapes are inconsistent"));
        }
        if f == 0 {
            return Err(Error::invalid("dataset needs at least one categorical field"));
        }
        for (position, (&t, &v)) in self.tokens.iter().zip(self.vocab_sizes.iter().cycle()).enumerate() {
            if t >= v as u64 {
                return Err(Error::TokenOutOfRange { position, token: t, n: v });
            }
        }
        Ok(())
    }

    /// Samples `start..end` as a training batch.
    pub fn batch(&self, start: usize, end: usize) -> Batch<'_> {
        let f = self.num_fields();
        Batch {
            dense: &self.dense[start * self.dense_dim..end * self.dense_dim],
            tokens: &self.tokens[start * f..end * f],
            labels: &self.labels[start..end],
        }
    }

    pub fn ctr(&self) -> f64 {
        self.labels.iter().filter(|&&l| l).count() as f64 / self.len().max(1) as f64
    }

    /// Splits off the last `tail` samples, e.g. as a held-out evaluation set.
    pub fn split_tail(mut self, tail: usize) -> (Dataset, Dataset) {
        let keep = self.len().saturating_sub(tail);
        let f = self.num_fields();
        let rest = Dataset {
            dense_dim: self.dense_dim,
            vocab_sizes: self.vocab_sizes.clone(),
            dense: self.dense.split_off(keep * self.dense_dim),
            tokens: self.tokens.split_off(keep * f),
            labels: self.labels.split_off(keep),
        };
        (self, rest)
    }
}

/// The hidden full-table model used to score synthetic samples. Its
/// embeddings are standard normal so categorical interactions carry most of
/// the signal.
pub fn teacher(spec: &DatasetSpec) -> Result<DlrmModel> {
    spec.validate()?;
    let seed = stream_seed(spec.teacher_seed, TEACHER_STREAM);
    let tables = spec
        .vocab_sizes
        .iter()
        .enumerate()
        .map(|(f, &v)| PssConfig::full_table(v, TEACHER_DIM, stream_seed(seed, f as u64 + 1)))
        .collect();
    let model_spec =
        DlrmSpec { dense_dim: spec.dense_dim, bottom_hidden: vec![16], top_hidden: vec![16], tables, seed };
    let mut model = DlrmModel::new(&model_spec)?;
    for (f, store) in model.fields_mut().iter_mut().enumerate() {
        let mut rng = SplitMix64::stream(seed, 0x100 + f as u64);
        for v in store.memory_mut() {
            *v = rng.normal();
        }
    }
    Ok(model)
}

struct FieldSampler {
    cdf: Vec<f64>,
    bijection: Vec<u64>,
}

impl FieldSampler {
    fn new(vocab: usize, exponent: f64, seed: u64) -> Self {
        let mut cdf = Vec::with_capacity(vocab);
        let mut total = 0.0;
        for r in 0..vocab {
            total += libm::pow(r as f64 + 1.0, -exponent);
            cdf.push(total);
        }
        for c in &mut cdf {
            *c /= total;
        }
        let mut bijection: Vec<u64> = (0..vocab as u64).collect();
        SplitMix64::new(seed).shuffle(&mut bijection);
        Self { cdf, bijection }
    }

    fn draw(&self, u: f64) -> u64 {
        let rank = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        self.bijection[rank]
    }
}

/// Generates a dataset and also returns each sample's final noiseless
/// logit (standardized, scaled and offset teacher score).
pub fn synth_generate_scored(spec: &DatasetSpec) -> Result<(Dataset, Vec<f64>)> {
    let model = teacher(spec)?;
    let n = spec.num_samples;
    let (din, f) = (spec.dense_dim, spec.num_cat_fields);
    let sample_seed = stream_seed(spec.teacher_seed, SAMPLE_STREAM);
    let samplers: Vec<FieldSampler> = spec
        .vocab_sizes
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let seed = stream_seed(stream_seed(spec.teacher_seed, BIJECTION_STREAM), i as u64);
            FieldSampler::new(v, spec.zipf_exponent, seed)
        })
        .collect();

    let mut dense = Vec::with_capacity(n * din);
    let mut tokens = Vec::with_capacity(n * f);
    let mut noise = Vec::with_capacity(n);
    let mut uniforms = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = SplitMix64::stream(sample_seed, i as u64);
        dense.extend((0..din).map(|_| rng.normal()));
        tokens.extend(samplers.iter().map(|s| s.draw(rng.next_f64())));
        noise.push(spec.noise * rng.normal());
        uniforms.push(rng.next_f64());
    }

    let mut logits = model.logits(&dense, &tokens)?;
    standardize(&mut logits, spec.logit_scale);

    let offset = bisect_offset(&logits, &noise, spec.target_ctr);
    for z in &mut logits {
        *z += offset;
    }
    let labels = logits.iter().zip(&noise).zip(&uniforms).map(|((&z, &e), &u)| u < sigmoid(z + e)).collect();
    let data = Dataset { dense_dim: din, vocab_sizes: spec.vocab_sizes.clone(), dense, tokens, labels };
    Ok((data, logits))
}

pub fn synth_generate(spec: &DatasetSpec) -> Result<Dataset> {
    synth_generate_scored(spec).map(|(data, _)| data)
}

fn standardize(values: &mut [f64], scale: f64) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = if var > 0.0 { scale / libm::sqrt(var) } else { 0.0 };
    for v in values {
        *v = (*v - mean) * inv;
    }
}

/// Offset `c` with `mean(sigmoid(z + e + c)) = target`; the mean is
/// increasing in `c`, so bisection converges.
fn bisect_offset(logits: &[f64], noise: &[f64], target: f64) -> f64 {
    if logits.is_empty() {
        return 0.0;
    }
    let expected = |c: f64| {
        logits.iter().zip(noise).map(|(&z, &e)| sigmoid(z + e + c)).sum::<f64>() / logits.len() as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;

    fn small(n: usize, seed: u64) -> DatasetSpec {
        DatasetSpec::with_vocab(n, vec![1000, 50, 7, 200], 0.25, seed)
    }

    #[test]
    fn same_spec_same_dataset() {
        let a = synth_generate(&small(2000, 3)).unwrap();
        assert_eq!(a, synth_generate(&small(2000, 3)).unwrap());
        assert_ne!(a, synth_generate(&small(2000, 4)).unwrap());
    }

    #[test]
    fn shapes_and_vocab_bounds() {
        let data = synth_generate(&small(3000, 1)).unwrap();
        data.validate().unwrap();
        assert_eq!(data.dense.len(), 3000 * 13);
        assert_eq!(data.tokens.len(), 3000 * 4);
        let mut bad = data.clone();
        bad.tokens[2] = 7;
        assert!(matches!(bad.validate(), Err(Error::TokenOutOfRange { position: 2, .. })));
    }

    #[test]
    fn prefix_is_stable_as_samples_grow() {
        // Per-sample streams: features and tokens do not depend on N.
        let a = synth_generate(&small(500, 9)).unwrap();
        let b = synth_generate(&small(1500, 9)).unwrap();
        assert_eq!(a.tokens[..], b.tokens[..a.tokens.len()]);
        assert_eq!(a.dense[..], b.dense[..a.dense.len()]);
    }

    #[test]
    fn click_rate_hits_target() {
        let data = synth_generate(&DatasetSpec::with_vocab(100_000, vec![500; 4], 0.25, 5)).unwrap();
        assert!((data.ctr() - 0.25).abs() <= 0.01, "{}", data.ctr());
    }

    #[test]
    fn click_rate_converges_with_n() {
        // Binomial standard error at p = 0.25, with a 4.5 sigma band.
        for n in [1_000, 10_000, 100_000] {
            let data = synth_generate(&DatasetSpec::with_vocab(n, vec![300; 3], 0.25, 11)).unwrap();
            let width = 4.5 * libm::sqrt(0.25 * 0.75 / n as f64);
            assert!((data.ctr() - 0.25).abs() <= width, "n={n}: {}", data.ctr());
        }
    }

    #[test]
    fn teacher_ranks_its_own_labels() {
        let (data, logits) = synth_generate_scored(&small(20_000, 2)).unwrap();
        let a = auc(&logits, &data.labels).unwrap();
        assert!(a > 0.85, "{a}");
    }

    #[test]
    fn zipf_head_dominates() {
        let data = synth_generate(&DatasetSpec::with_vocab(20_000, vec![1000], 0.5, 6)).unwrap();
        let mut counts = vec![0usize; 1000];
        for &t in &data.tokens {
            counts[t as usize] += 1;
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        // Top 10 of 1000 ranks carry roughly 40% of the mass at s = 1.05.
        let head: usize = counts[..10].iter().sum();
        assert!(head > 6_000, "{head}");
    }

    #[test]
    fn split_tail_partitions() {
        let data = synth_generate(&small(100, 1)).unwrap();
        let (train, eval) = data.clone().split_tail(30);
        assert_eq!((train.len(), eval.len()), (70, 30));
        assert_eq!(eval.labels[..], data.labels[70..]);
        assert_eq!(eval.tokens[..], data.tokens[280..]);
        train.validate().unwrap();
        eval.validate().unwrap();
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(10, 0);
        s.target_ctr = 1.0;
        assert!(synth_generate(&s).is_err());
        let mut s = small(10, 0);
        s.vocab_sizes[1] = 0;
        assert!(synth_generate(&s).is_err());
        let mut s = small(10, 0);
        s.num_cat_fields = 3;
        assert!(synth_generate(&s).is_err());
    }
}
