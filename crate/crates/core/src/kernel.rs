//! Kernel feature maps and low-rank factors.
//!
//! Every Gram matrix in the pipeline is handled through a factor `L` with
//! `K ≈ L Lᵀ`: random Fourier features for the RBF kernel on embeddings, and
//! exact one-hot indicators for categorical labels. Centering is applied to
//! the factors directly so no `n × n` matrix is ever formed.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelVector;

/// Default row cap for the median-distance bandwidth heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 2000;

const MEDIAN_SEED_SALT: u64 = 0x6d65_6469_616e_5f62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    Explicit,
    MedianHeuristic,
}

/// RBF kernel recipe approximated by random Fourier features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// RBF length-scale σ. Ignored when `bandwidth_mode` is the median heuristic.
    pub bandwidth: f64,
    pub rff_dim: usize,
    pub seed: u64,
    pub bandwidth_mode: BandwidthMode,
}

impl KernelConfig {
    pub fn explicit(bandwidth: f64, rff_dim: usize, seed: u64) -> Self {
        Self {
            bandwidth,
            rff_dim,
            seed,
            bandwidth_mode: BandwidthMode::Explicit,
        }
    }

    pub fn median_heuristic(rff_dim: usize, seed: u64) -> Self {
        Self {
            bandwidth: 1.0,
            rff_dim,
            seed,
            bandwidth_mode: BandwidthMode::MedianHeuristic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rff_dim == 0 {
            return Err(Error::Config("rff_dim must be at least 1".into()));
        }
        if self.bandwidth_mode == BandwidthMode::Explicit
            && !(self.bandwidth.is_finite() && self.bandwidth > 0.0)
        {
            return Err(Error::Config(format!(
                "bandwidth must be positive and finite, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }

    /// Returns an explicit config, computing the bandwidth from `x` if needed.
    pub fn resolve(&self, x: ArrayView2<f64>) -> Result<KernelConfig> {
        self.validate()?;
        match self.bandwidth_mode {
            BandwidthMode::Explicit => Ok(*self),
            BandwidthMode::MedianHeuristic => {
                let sigma = median_bandwidth(x, MEDIAN_SUBSAMPLE, self.seed ^ MEDIAN_SEED_SALT)?;
                Ok(KernelConfig::explicit(sigma, self.rff_dim, self.seed))
            }
        }
    }
}

/// Median pairwise Euclidean distance over a seeded subsample of rows.
pub fn median_bandwidth(x: ArrayView2<f64>, subsample: usize, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "median bandwidth needs at least 2 rows, got {n}"
        )));
    }
    if subsample < 2 {
        return Err(Error::Config(format!(
            "median subsample must be at least 2, got {subsample}"
        )));
    }
    let rows: Vec<usize> = if subsample >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, subsample).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let d2: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    let median = median_of(&mut dists);
    if !(median > 0.0) {
        return Err(Error::Degenerate(
            "median pairwise distance is zero (rows are not distinct)".into(),
        ));
    }
    Ok(median)
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Random Fourier feature map `x ↦ √(2/D)·cos(W x + b)`.
#[derive(Debug, Clone)]
pub struct RffMap {
    weights: Array2<f64>,
    offsets: Array1<f64>,
    scale: f64,
}

impl RffMap {
    /// Draws the map for an explicit config. The same `(cfg, input_dim)`
    /// always yields the same draws.
    pub fn new(cfg: &KernelConfig, input_dim: usize) -> Result<Self> {
        cfg.validate()?;
        if cfg.bandwidth_mode != BandwidthMode::Explicit {
            return Err(Error::Config(
                "feature map needs a resolved (explicit) bandwidth".into(),
            ));
        }
        if input_dim == 0 {
            return Err(Error::Shape("input dimension must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let inv_sigma = 1.0 / cfg.bandwidth;
        let weights = Array2::from_shape_simple_fn((cfg.rff_dim, input_dim), || {
            let z: f64 = rng.sample(StandardNormal);
            z * inv_sigma
        });
        let offsets = Array1::from_shape_simple_fn(cfg.rff_dim, || rng.random::<f64>() * 2.0 * PI);
        Ok(Self {
            weights,
            offsets,
            scale: (2.0 / cfg.rff_dim as f64).sqrt(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Maps every row of `x`; row `i` of the result is `r(x_i)ᵀ`.
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "feature map expects {} columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        ensure_finite(x, "embedding")?;
        let mut out = x.dot(&self.weights.t());
        let scale = self.scale;
        for mut row in out.rows_mut() {
            row.zip_mut_with(&self.offsets, |v, b| *v = scale * (*v + b).cos());
        }
        Ok(out)
    }
}

pub(crate) fn ensure_finite(x: ArrayView2<f64>, what: &str) -> Result<()> {
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos / x.ncols().max(1), pos % x.ncols().max(1));
        return Err(Error::InvalidInput(format!(
            "{what} has a non-finite entry at row {r}, column {c}"
        )));
    }
    Ok(())
}

/// `n × D` RFF factor `L_X` of an RBF Gram matrix, plus the map that built it.
#[derive(Debug, Clone)]
pub struct RffFactor {
    pub matrix: Array2<f64>,
    /// Explicit (resolved) kernel config used to draw the features.
    pub config: KernelConfig,
    map: RffMap,
}

impl RffFactor {
    pub fn map(&self) -> &RffMap {
        &self.map
    }

    pub fn input_dim(&self) -> usize {
        self.map.input_dim()
    }

    /// Restricts the factor to the given rows, keeping the same feature map.
    pub fn select_rows(&self, rows: &[usize]) -> RffFactor {
        RffFactor {
            matrix: self.matrix.select(Axis(0), rows),
            config: self.config,
            map: self.map.clone(),
        }
    }
}

pub fn rff_factor(x: ArrayView2<f64>, cfg: &KernelConfig) -> Result<RffFactor> {
    ensure_finite(x, "embedding")?;
    let config = cfg.resolve(x)?;
    let map = RffMap::new(&config, x.ncols())?;
    let matrix = map.transform(x)?;
    Ok(RffFactor {
        matrix,
        config,
        map,
    })
}

/// One-hot factor of a categorical label kernel: `L Lᵀ` is the same-class
/// indicator matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFactor {
    pub matrix: Array2<f64>,
    pub num_classes: usize,
}

pub fn label_factor(labels: &LabelVector) -> Result<LabelFactor> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("label vector is empty".into()));
    }
    let c = labels.num_classes();
    let mut matrix = Array2::zeros((labels.len(), c));
    for (i, &k) in labels.values().iter().enumerate() {
        matrix[[i, k]] = 1.0;
    }
    Ok(LabelFactor {
        matrix,
        num_classes: c,
    })
}

/// `H M` with `H = I − 11ᵀ/n`, computed as a rank-one update.
pub fn center(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    if m.nrows() == 0 {
        return out;
    }
    let means = m.mean_axis(Axis(0)).expect("nonempty");
    out -= &means;
    out
}

/// A factor `L` (`n × D`) of a Gram matrix, exposing only the products the
/// solver and estimators need.
pub trait FeatureFactor {
    fn nrows(&self) -> usize;
    fn dim(&self) -> usize;
    /// `L Θᵀ` for `Θ` of shape `r × D`.
    fn project(&self, theta: ArrayView2<f64>) -> Array2<f64>;
    /// `Lᵀ H M` for `M` of shape `n × k`.
    fn centered_cross(&self, m: ArrayView2<f64>) -> Array2<f64>;
    /// `Lᵀ H L`.
    fn centered_gram(&self) -> Array2<f64>;
    /// `Lᵀ 1`.
    fn column_sums(&self) -> Array1<f64>;
}

impl FeatureFactor for ArrayView2<'_, f64> {
    fn nrows(&self) -> usize {
        self.shape()[0]
    }

    fn dim(&self) -> usize {
        self.shape()[1]
    }

    fn project(&self, theta: ArrayView2<f64>) -> Array2<f64> {
        self.dot(&theta.t())
    }

    fn centered_cross(&self, m: ArrayView2<f64>) -> Array2<f64> {
        self.t().dot(&center(m))
    }

    fn centered_gram(&self) -> Array2<f64> {
        let lc = center(self.view());
        lc.t().dot(&lc)
    }

    fn column_sums(&self) -> Array1<f64> {
        self.sum_axis(Axis(0))
    }
}

impl FeatureFactor for Array2<f64> {
    fn nrows(&self) -> usize {
        self.shape()[0]
    }

    fn dim(&self) -> usize {
        self.shape()[1]
    }

    fn project(&self, theta: ArrayView2<f64>) -> Array2<f64> {
        self.view().project(theta)
    }

    fn centered_cross(&self, m: ArrayView2<f64>) -> Array2<f64> {
        self.view().centered_cross(m)
    }

    fn centered_gram(&self) -> Array2<f64> {
        self.view().centered_gram()
    }

    fn column_sums(&self) -> Array1<f64> {
        self.view().column_sums()
    }
}

impl FeatureFactor for RffFactor {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn project(&self, theta: ArrayView2<f64>) -> Array2<f64> {
        self.matrix.view().project(theta)
    }

    fn centered_cross(&self, m: ArrayView2<f64>) -> Array2<f64> {
        self.matrix.view().centered_cross(m)
    }

    fn centered_gram(&self) -> Array2<f64> {
        self.matrix.view().centered_gram()
    }

    fn column_sums(&self) -> Array1<f64> {
        self.matrix.view().column_sums()
    }
}

/// Factor whose row `i` is row `index[i]` of a small base factor.
///
/// Used for the text side, where each sample carries the prompt embedding
/// of its (pseudo) class: the base holds one row per prompt and the products
/// are evaluated through per-prompt group sums, so the expanded `n × D`
/// matrix is never built.
#[derive(Debug, Clone)]
pub struct IndexedFactor<'a> {
    base: ArrayView2<'a, f64>,
    index: Vec<usize>,
    counts: Array1<f64>,
}

impl<'a> IndexedFactor<'a> {
    pub fn new(base: ArrayView2<'a, f64>, index: Vec<usize>) -> Result<Self> {
        let mut counts = Array1::zeros(base.nrows());
        for &k in &index {
            if k >= base.nrows() {
                return Err(Error::Shape(format!(
                    "row index {k} out of range for a base factor with {} rows",
                    base.nrows()
                )));
            }
            counts[k] += 1.0;
        }
        Ok(Self {
            base,
            index,
            counts,
        })
    }

    pub fn index(&self) -> &[usize] {
        &self.index
    }

    /// `Eᵀ M`: rows of `m` summed per base row.
    fn group_sums(&self, m: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.base.nrows(), m.ncols()));
        for (row, &k) in m.rows().into_iter().zip(&self.index) {
            let mut acc = out.row_mut(k);
            acc += &row;
        }
        out
    }
}

impl FeatureFactor for IndexedFactor<'_> {
    fn nrows(&self) -> usize {
        self.index.len()
    }

    fn dim(&self) -> usize {
        self.base.ncols()
    }

    fn project(&self, theta: ArrayView2<f64>) -> Array2<f64> {
        let per_row = self.base.dot(&theta.t());
        per_row.select(Axis(0), &self.index)
    }

    fn centered_cross(&self, m: ArrayView2<f64>) -> Array2<f64> {
        self.base.t().dot(&self.group_sums(center(m).view()))
    }

    fn centered_gram(&self) -> Array2<f64> {
        let n = self.index.len() as f64;
        let weighted = &self.base * &self.counts.view().insert_axis(Axis(1));
        let sums = self.column_sums();
        let mut gram = self.base.t().dot(&weighted);
        for ((i, j), v) in gram.indexed_iter_mut() {
            *v -= sums[i] * sums[j] / n;
        }
        gram
    }

    fn column_sums(&self) -> Array1<f64> {
        self.base.t().dot(&self.counts)
    }
}
