//! Seeded two-axis Gaussian fixtures with a target attribute `Y` and a
//! sensitive attribute `S`.
//!
//! In latent coordinates an image is
//!
//! ```text
//! x = ±(signal_gap/2)·e₁ + ±(bias_gap/2)·e₂ + noise_sigma·ε
//! ```
//!
//! with signs from `Y` and `S`, then rotated into `d` dimensions by a
//! seeded orthonormal map. Class prompts sit at `±(signal_gap/2)·e₁`, tilted
//! towards `±e₂` by `prompt_leak` (how strongly the "text encoder" confuses
//! the class with the sensitive attribute); sensitive prompts sit at
//! `±(bias_gap/2)·e₂`.
//!
//! `seed` fixes the geometry (rotation and prompts); `split_seed` fixes the
//! samples, so splits with different `rho` share one embedding space.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::DatasetManifest;
use crate::io::npy;
use crate::labels::LabelVector;
use crate::linalg::thin_qr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// `Y` and `S` are drawn independently of the geometry but the sample is
    /// skewed: a fraction `rho` of rows has `S = Y`, split evenly over `Y`.
    Spurious,
    /// Each row draws `Y` uniformly and `S = Y` with probability `rho`.
    Intrinsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub mode: CorrelationMode,
    /// Fraction of rows whose sensitive value matches the target.
    pub rho: f64,
    pub signal_gap: f64,
    pub bias_gap: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub prompt_leak: f64,
    pub seed: u64,
    #[serde(default)]
    pub split_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            d: 16,
            mode: CorrelationMode::Spurious,
            rho: 0.95,
            signal_gap: 6.0,
            bias_gap: 18.0,
            noise_sigma: 1.0,
            prompt_leak: 0.11,
            seed: 0,
            split_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::Config(format!("n must be at least 4, got {}", self.n)));
        }
        if self.d < 2 {
            return Err(Error::Config(format!("d must be at least 2, got {}", self.d)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        for (name, v) in [("signal_gap", self.signal_gap), ("bias_gap", self.bias_gap)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !self.prompt_leak.is_finite() {
            return Err(Error::Config("prompt_leak must be finite".into()));
        }
        Ok(())
    }

    /// Same geometry, different sample.
    pub fn split(&self, n: usize, rho: f64, split_seed: u64) -> SynthSpec {
        SynthSpec {
            n,
            rho,
            split_seed,
            ..*self
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub images: Array2<f64>,
    pub class_prompts: Array2<f64>,
    pub sensitive_prompts: Array2<f64>,
    pub y: LabelVector,
    pub s: LabelVector,
}

fn sign(label: usize) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Seeded `d × d` orthonormal matrix.
fn rotation(d: usize, seed: u64) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Array2::from_shape_simple_fn((d, d), || rng.sample::<f64, _>(StandardNormal));
    let (q, _) = thin_qr(g.view());
    if q.ncols() != d {
        return Err(Error::Numerical("rotation draw is rank deficient".into()));
    }
    Ok(q)
}

fn labels(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    match spec.mode {
        CorrelationMode::Spurious => {
            let aligned = (spec.rho * spec.n as f64).round() as usize;
            let rest = spec.n - aligned;
            let mut rows = Vec::with_capacity(spec.n);
            // (y, s) cells: aligned split over y, then the misaligned rows.
            let cells = [
                ((1, 1), aligned / 2),
                ((0, 0), aligned - aligned / 2),
                ((1, 0), rest / 2),
                ((0, 1), rest - rest / 2),
            ];
            for ((y, s), count) in cells {
                rows.extend(std::iter::repeat_n((y, s), count));
            }
            rows.shuffle(rng);
            rows.into_iter().unzip()
        }
        CorrelationMode::Intrinsic => (0..spec.n)
            .map(|_| {
                let y = rng.random_range(0..2);
                let s = if rng.random::<f64>() < spec.rho { y } else { 1 - y };
                (y, s)
            })
            .unzip(),
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let d = spec.d;
    let q = rotation(d, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.split_seed ^ spec.seed.rotate_left(17));
    let (y, s) = labels(spec, &mut rng);

    let half_signal = spec.signal_gap / 2.0;
    let half_bias = spec.bias_gap / 2.0;
    let mut latent = Array2::zeros((spec.n, d));
    for (i, mut row) in latent.rows_mut().into_iter().enumerate() {
        for v in row.iter_mut() {
            *v = spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        row[0] += sign(y[i]) * half_signal;
        row[1] += sign(s[i]) * half_bias;
    }
    let prototype = |a: f64, b: f64| {
        let mut v = Array1::zeros(d);
        v[0] = a;
        v[1] = b;
        v
    };
    let mut class_prompts = Array2::zeros((2, d));
    let mut sensitive_prompts = Array2::zeros((2, d));
    for k in 0..2 {
        class_prompts
            .row_mut(k)
            .assign(&prototype(sign(k) * half_signal, sign(k) * spec.prompt_leak * half_bias));
        sensitive_prompts.row_mut(k).assign(&prototype(0.0, sign(k) * half_bias));
    }
    Ok(SynthDataset {
        images: latent.dot(&q.t()),
        class_prompts: class_prompts.dot(&q.t()),
        sensitive_prompts: sensitive_prompts.dot(&q.t()),
        y: LabelVector::new(y, 2)?,
        s: LabelVector::new(s, 2)?,
    })
}

/// Writes one split as NPY files, a label CSV and a manifest
/// `<split>.json` inside `dir`; returns the manifest path. Embeddings are
/// stored as `f64` and the manifest disables row normalization, so a
/// reload reproduces [`generate`] exactly.
pub fn write_split(data: &SynthDataset, dir: &Path, split: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images = format!("{split}_images.npy");
    let prompts = format!("{split}_class_prompts.npy");
    let sensitive = format!("{split}_sensitive_prompts.npy");
    let labels = format!("{split}_labels.csv");
    npy::write_f64(&dir.join(&images), &data.images)?;
    npy::write_f64(&dir.join(&prompts), &data.class_prompts)?;
    npy::write_f64(&dir.join(&sensitive), &data.sensitive_prompts)?;

    let mut csv_text = String::from("y,s\n");
    for (y, s) in data.y.values().iter().zip(data.s.values()) {
        csv_text.push_str(&format!("{y},{s}\n"));
    }
    let label_path = dir.join(&labels);
    fs::write(&label_path, csv_text).map_err(|e| Error::io(&label_path, e))?;

    let mut manifest =
        DatasetManifest::new(split, data.images.nrows(), data.images.ncols(), &images, &prompts);
    manifest.sensitive_prompts = Some(sensitive.into());
    manifest.labels = Some(labels.into());
    manifest.normalize = false;
    let path = dir.join(format!("{split}.json"));
    manifest.write(&path)?;
    Ok(path)
}
