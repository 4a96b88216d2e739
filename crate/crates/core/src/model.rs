//! Two-hidden-layer ReLU network with a logistic output and exact per-sample gradients.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const CHECKPOINT_MAGIC: &[u8; 8] = b"PFLDCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Layer widths `inputs -> hidden1 -> hidden2 -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub inputs: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Architecture {
    pub fn new(inputs: usize, hidden1: usize, hidden2: usize) -> Self {
        Self {
            inputs,
            hidden1,
            hidden2,
        }
    }

    /// Default 16/16 hidden widths.
    pub fn for_inputs(inputs: usize) -> Self {
        Self::new(inputs, 16, 16)
    }

    /// Total number of trainable scalars (the gradient shape).
    pub fn size(&self) -> usize {
        let Self {
            inputs: d,
            hidden1: h1,
            hidden2: h2,
        } = *self;
        h1 * d + h1 + h2 * h1 + h2 + h2 + 1
    }

    // offsets of w1, b1, w2, b2, w3, b3 in the flat vector
    fn offsets(&self) -> [usize; 6] {
        let Self {
            inputs: d,
            hidden1: h1,
            hidden2: h2,
        } = *self;
        let w1 = 0;
        let b1 = w1 + h1 * d;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        [w1, b1, w2, b2, w3, b3]
    }
}

/// The per-sample statistic `h(z)` that enters a fairness constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatKind {
    /// Predicted probability of the positive class.
    OutputProbability,
    /// Per-sample binary cross-entropy.
    Loss,
}

impl FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output-probability" | "probability" | "prob" => Ok(StatKind::OutputProbability),
            "loss" => Ok(StatKind::Loss),
            other => Err(Error::Config(format!("unknown statistic kind {other:?}"))),
        }
    }
}

/// Network weights stored as one flat vector: `W1 (h1 x d), b1, W2 (h2 x h1), b2, w3 (h2), b3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    arch: Architecture,
    flat: Vec<T>,
}

/// Pre-activations of both hidden layers and the output logit for a batch of rows.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub rows: usize,
    pub z1: Vec<T>,
    pub z2: Vec<T>,
    pub logits: Vec<T>,
}

/// Per-sample values `h(z)` and their parameter gradients, gradients stored row-major.
#[derive(Debug, Clone)]
pub struct PerSample<T> {
    pub values: Vec<T>,
    pub grads: Vec<T>,
    pub size: usize,
}

impl<T: Scalar> PerSample<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grad(&self, k: usize) -> &[T] {
        &self.grads[k * self.size..(k + 1) * self.size]
    }

    /// Pairs of `(h(z), grad h(z))`.
    pub fn iter(&self) -> impl Iterator<Item = (T, &[T])> {
        self.values.iter().copied().zip(self.grads.chunks_exact(self.size.max(1)))
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Cross-entropy of a logit against a binary label, computed without forming `ln p`.
pub fn logit_cross_entropy<T: Scalar>(logit: T, label: u8) -> T {
    let softplus = logit.max(T::zero()) + (-logit.abs()).exp().ln_1p();
    if label == 1 {
        softplus - logit
    } else {
        softplus
    }
}

fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            flat: vec![T::zero(); arch.size()],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every weight and bias.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let [w1, _, w2, _, w3, b3] = arch.offsets();
        let ranges = [
            (w1, w2, arch.inputs),
            (w2, w3, arch.hidden1),
            (w3, b3 + 1, arch.hidden2),
        ];
        for (start, end, fan_in) in ranges {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for x in &mut p.flat[start..end] {
                *x = T::of(rng.random_range(-bound..=bound));
            }
        }
        p
    }

    pub fn init_seeded(arch: Architecture, seed: u64) -> Self {
        Self::init(arch, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_flat(arch: Architecture, flat: Vec<T>) -> Result<Self> {
        if flat.len() != arch.size() {
            return Err(Error::Dimension {
                expected: arch.size(),
                got: flat.len(),
            });
        }
        Ok(Self { arch, flat })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn size(&self) -> usize {
        self.flat.len()
    }

    pub fn flat(&self) -> &[T] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [T] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<T> {
        self.flat
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|x| x.is_finite())
    }

    /// `theta -= step * direction`
    pub fn descend(&mut self, step: T, direction: &[T]) {
        for (p, &g) in self.flat.iter_mut().zip(direction) {
            *p = *p - step * g;
        }
    }

    fn check_inputs(&self, d: usize) -> Result<()> {
        if d != self.arch.inputs {
            return Err(Error::Dimension {
                expected: self.arch.inputs,
                got: d,
            });
        }
        Ok(())
    }

    fn forward_row(&self, x: &[T], z1: &mut [T], z2: &mut [T]) -> T {
        let Architecture {
            inputs: d,
            hidden1: h1,
            hidden2: h2,
        } = self.arch;
        let [w1, b1, w2, b2, w3, b3] = self.arch.offsets();
        let f = &self.flat;
        for j in 0..h1 {
            let row = &f[w1 + j * d..w1 + (j + 1) * d];
            z1[j] = crate::scalar::dot(row, x) + f[b1 + j];
        }
        for j in 0..h2 {
            let row = &f[w2 + j * h1..w2 + (j + 1) * h1];
            z2[j] = row.iter().zip(z1.iter()).fold(f[b2 + j], |acc, (&w, &z)| acc + w * relu(z));
        }
        (0..h2).fold(f[b3], |acc, j| acc + f[w3 + j] * relu(z2[j]))
    }

    /// Forward pass over the given rows of `data`.
    pub fn forward(&self, data: &TabularDataset<T>, rows: &[usize]) -> Result<ForwardCache<T>> {
        self.check_inputs(data.n_features())?;
        let (h1, h2) = (self.arch.hidden1, self.arch.hidden2);
        let mut cache = ForwardCache {
            rows: rows.len(),
            z1: vec![T::zero(); rows.len() * h1],
            z2: vec![T::zero(); rows.len() * h2],
            logits: vec![T::zero(); rows.len()],
        };
        for (k, &i) in rows.iter().enumerate() {
            let (z1, z2) = (&mut cache.z1[k * h1..(k + 1) * h1], &mut cache.z2[k * h2..(k + 1) * h2]);
            cache.logits[k] = self.forward_row(data.row(i), z1, z2);
        }
        Ok(cache)
    }

    /// Gradient of the output logit for cached row `k`, scaled by `scale` and
    /// accumulated into `out`.
    fn accumulate_logit_grad(&self, x: &[T], cache: &ForwardCache<T>, k: usize, scale: T, out: &mut [T]) {
        let Architecture {
            inputs: d,
            hidden1: h1,
            hidden2: h2,
        } = self.arch;
        let [w1, b1, w2, b2, w3, b3] = self.arch.offsets();
        let f = &self.flat;
        let z1 = &cache.z1[k * h1..(k + 1) * h1];
        let z2 = &cache.z2[k * h2..(k + 1) * h2];
        out[b3] = out[b3] + scale;
        let mut delta1 = vec![T::zero(); h1];
        for j in 0..h2 {
            out[w3 + j] = out[w3 + j] + scale * relu(z2[j]);
            if z2[j] > T::zero() {
                let delta2 = scale * f[w3 + j];
                out[b2 + j] = out[b2 + j] + delta2;
                for (l, dl) in delta1.iter_mut().enumerate() {
                    out[w2 + j * h1 + l] = out[w2 + j * h1 + l] + delta2 * relu(z1[l]);
                    *dl = *dl + delta2 * f[w2 + j * h1 + l];
                }
            }
        }
        for (l, &dl) in delta1.iter().enumerate() {
            if z1[l] > T::zero() && dl != T::zero() {
                out[b1 + l] = out[b1 + l] + dl;
                crate::scalar::axpy(&mut out[w1 + l * d..w1 + (l + 1) * d], dl, x);
            }
        }
    }

    /// Positive-class probabilities for the given rows, each in the open interval (0, 1).
    pub fn predict_proba(&self, data: &TabularDataset<T>, rows: &[usize]) -> Result<Vec<T>> {
        let cache = self.forward(data, rows)?;
        let eps = T::epsilon();
        Ok(cache
            .logits
            .iter()
            .map(|&o| sigmoid(o).max(eps).min(T::one() - eps))
            .collect())
    }

    /// Probabilities for every row of `data`.
    pub fn predict_all(&self, data: &TabularDataset<T>) -> Result<Vec<T>> {
        let rows: Vec<usize> = (0..data.len()).collect();
        self.predict_proba(data, &rows)
    }

    /// Mean binary cross-entropy over the rows.
    pub fn loss(&self, data: &TabularDataset<T>, rows: &[usize]) -> Result<T> {
        if rows.is_empty() {
            return Err(Error::EmptySet);
        }
        let cache = self.forward(data, rows)?;
        let total: T = rows
            .iter()
            .zip(&cache.logits)
            .map(|(&i, &o)| logit_cross_entropy(o, data.label(i)))
            .sum();
        Ok(total / T::of_usize(rows.len()))
    }

    /// Gradient of [`ModelParams::loss`].
    pub fn grad_loss(&self, data: &TabularDataset<T>, rows: &[usize]) -> Result<Vec<T>> {
        if rows.is_empty() {
            return Err(Error::EmptySet);
        }
        let cache = self.forward(data, rows)?;
        Ok(self.grad_loss_cached(data, rows, &cache))
    }

    pub(crate) fn grad_loss_cached(&self, data: &TabularDataset<T>, rows: &[usize], cache: &ForwardCache<T>) -> Vec<T> {
        let mut g = vec![T::zero(); self.size()];
        let inv = T::one() / T::of_usize(rows.len());
        for (k, &i) in rows.iter().enumerate() {
            let residual = sigmoid(cache.logits[k]) - T::of(f64::from(data.label(i)));
            self.accumulate_logit_grad(data.row(i), cache, k, residual * inv, &mut g);
        }
        g
    }

    /// Value of the statistic for one cached row and the factor that turns the
    /// logit gradient into the statistic's gradient.
    fn stat_and_scale(logit: T, label: u8, stat: StatKind) -> (T, T) {
        match stat {
            StatKind::OutputProbability => {
                let p = sigmoid(logit);
                (p, p * (T::one() - p))
            }
            StatKind::Loss => (
                logit_cross_entropy(logit, label),
                sigmoid(logit) - T::of(f64::from(label)),
            ),
        }
    }

    /// Values of `h(z)` for the rows, no gradients.
    pub fn stat_values(&self, data: &TabularDataset<T>, rows: &[usize], stat: StatKind) -> Result<Vec<T>> {
        let cache = self.forward(data, rows)?;
        Ok(rows
            .iter()
            .zip(&cache.logits)
            .map(|(&i, &o)| Self::stat_and_scale(o, data.label(i), stat).0)
            .collect())
    }

    /// `(h(z), grad h(z))` for every row.
    pub fn per_sample_stat_grads(&self, data: &TabularDataset<T>, rows: &[usize], stat: StatKind) -> Result<PerSample<T>> {
        if rows.is_empty() {
            return Err(Error::EmptySet);
        }
        let cache = self.forward(data, rows)?;
        Ok(self.per_sample_cached(data, rows, &cache, stat))
    }

    pub(crate) fn per_sample_cached(
        &self,
        data: &TabularDataset<T>,
        rows: &[usize],
        cache: &ForwardCache<T>,
        stat: StatKind,
    ) -> PerSample<T> {
        let s = self.size();
        let mut out = PerSample {
            values: Vec::with_capacity(rows.len()),
            grads: vec![T::zero(); rows.len() * s],
            size: s,
        };
        for (k, &i) in rows.iter().enumerate() {
            let (value, scale) = Self::stat_and_scale(cache.logits[k], data.label(i), stat);
            out.values.push(value);
            self.accumulate_logit_grad(data.row(i), cache, k, scale, &mut out.grads[k * s..(k + 1) * s]);
        }
        out
    }

    /// Writes the versioned checkpoint: magic, version, three widths, parameter
    /// count, then little-endian f64 values.
    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(48 + 8 * self.size());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for w in [self.arch.inputs, self.arch.hidden1, self.arch.hidden2, self.size()] {
            buf.extend_from_slice(&(w as u64).to_le_bytes());
        }
        for x in &self.flat {
            buf.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_checkpoint(&bytes)
    }

    pub fn decode_checkpoint(bytes: &[u8]) -> Result<Self> {
        let header = 8 + 4 + 4 * 8;
        if bytes.len() < header || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("missing magic header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let word = |k: usize| u64::from_le_bytes(bytes[12 + 8 * k..20 + 8 * k].try_into().expect("8 bytes")) as usize;
        let arch = Architecture::new(word(0), word(1), word(2));
        let count = word(3);
        if count != arch.size() || bytes.len() != header + 8 * count {
            return Err(Error::Checkpoint("parameter count does not match widths".into()));
        }
        let flat = bytes[header..]
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        Self::from_flat(arch, flat)
    }
}
