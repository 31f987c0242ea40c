//! Alternating training of the image and text encoders.
//!
//! Without labels, `Ŷ` and `Ŝ` start from zero-shot cosine predictions on
//! the raw embeddings. `Ŝ` is frozen from then on; `Ŷ` is re-predicted in
//! the learned space after every image/text round. Either label may be
//! replaced by ground truth.
//!
//! The text side is solved over `n` rows: row `i` carries the class-prompt
//! embedding of `ŷ_i` together with the image's `ŷ_i` and `ŝ_i`, so both
//! sides share the sample axis required by the cross term. The expanded
//! factor is never built (see [`IndexedFactor`]).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    center, ensure_finite, label_factor, rff_factor, FeatureFactor, IndexedFactor, KernelConfig,
};
use crate::labels::LabelVector;
use crate::linalg::procrustes;
use crate::solver::{
    apply_encoder, encoder_from_theta, objective_terms, Encoder, ObjectiveTerms,
    ObjectiveWeights, PreparedFactor, SolveSpec, DEFAULT_GAMMA,
};

const TEXT_SEED_SALT: u64 = 0x7465_7874;
const PRESAMPLE_SEED_SALT: u64 = 0x7072_6573;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau_i: f64,
    pub tau_t: f64,
    pub tau_z: f64,
    pub gamma: f64,
    /// Output dimension; `None` means one less than the number of classes.
    pub r: Option<usize>,
    pub rff_dim: usize,
    /// Explicit RBF bandwidth for both sides; `None` uses the median heuristic.
    pub bandwidth: Option<f64>,
    pub iters: usize,
    pub seed: u64,
    pub supervised_y: bool,
    pub supervised_s: bool,
    pub balance_presample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau_i: 0.7,
            tau_t: 0.7,
            tau_z: 0.7,
            gamma: DEFAULT_GAMMA,
            r: None,
            rff_dim: 1000,
            bandwidth: None,
            iters: 10,
            seed: 0,
            supervised_y: false,
            supervised_s: false,
            balance_presample: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_i", self.tau_i), ("tau_t", self.tau_t), ("tau_z", self.tau_z)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.rff_dim == 0 {
            return Err(Error::Config("rff_dim must be at least 1".into()));
        }
        if self.r == Some(0) {
            return Err(Error::Config("r must be at least 1".into()));
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("bandwidth must be positive, got {b}")));
            }
        }
        Ok(())
    }

    fn kernel(&self, seed: u64) -> KernelConfig {
        match self.bandwidth {
            Some(b) => KernelConfig::explicit(b, self.rff_dim, seed),
            None => KernelConfig::median_heuristic(self.rff_dim, seed),
        }
    }
}

/// Everything training consumes. Row order of `images`, `y` and `s` must agree.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    /// `n × d` image embeddings.
    pub images: ArrayView2<'a, f64>,
    /// `c × d` class-prompt embeddings, one row per target class.
    pub class_prompts: ArrayView2<'a, f64>,
    /// `c_S × d` sensitive-prompt embeddings.
    pub sensitive_prompts: Option<ArrayView2<'a, f64>>,
    pub y: Option<&'a LabelVector>,
    pub s: Option<&'a LabelVector>,
}

/// State recorded after initialization (`iteration = 0`) and after each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    /// Objective terms on the current `Ŷ`, `Ŝ`. The text terms are zero
    /// before the first text solve.
    pub terms: ObjectiveTerms,
    /// Agreement of `Ŷ` with ground-truth `Y`, when `Y` is known.
    pub yhat_agreement: Option<f64>,
    /// Fraction of `Ŷ` that changed in this round.
    pub yhat_changed: f64,
    /// Fingerprint of the sensitive labels used in this round.
    pub shat_digest: u64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub encoder_i: Encoder,
    /// Absent when no alternating round ran.
    pub encoder_t: Option<Encoder>,
    /// `c × r` centered class codes that images are scored against.
    pub class_codes: Array2<f64>,
    pub history: Vec<HistoryRecord>,
    /// Final pseudo (or given) target labels of the training rows.
    pub yhat: LabelVector,
    /// Sensitive labels used throughout training.
    pub shat: LabelVector,
    /// Training rows actually used (all rows unless pre-sampling is on).
    pub rows: Vec<usize>,
}

impl TrainedModel {
    pub fn num_classes(&self) -> usize {
        self.class_codes.nrows()
    }

    /// Centered representation of new images.
    pub fn represent(&self, images: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = apply_encoder(&self.encoder_i, images)?;
        Ok(z.matrix - &self.encoder_i.offset)
    }

    /// Cosine argmax of new images against the class codes.
    pub fn predict(&self, images: ArrayView2<f64>) -> Result<LabelVector> {
        zero_shot_predict(self.represent(images)?.view(), self.class_codes.view())
    }
}

/// Per row of `images`, the class whose text row has the highest cosine
/// similarity; ties go to the lowest index. Zero rows on either side never
/// win; an image row scores `−∞` against every class if it is zero itself.
pub fn zero_shot_predict(images: ArrayView2<f64>, texts: ArrayView2<f64>) -> Result<LabelVector> {
    if texts.nrows() == 0 {
        return Err(Error::InvalidInput("zero-shot prediction needs at least one class".into()));
    }
    if images.ncols() != texts.ncols() {
        return Err(Error::Shape(format!(
            "image width {} differs from text width {}",
            images.ncols(),
            texts.ncols()
        )));
    }
    ensure_finite(images, "image embedding")?;
    ensure_finite(texts, "text embedding")?;
    let text_norms: Vec<f64> = texts.rows().into_iter().map(|t| t.dot(&t).sqrt()).collect();
    if text_norms.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("every text embedding has zero norm".into()));
    }
    let image_norms: Vec<f64> = images.rows().into_iter().map(|t| t.dot(&t).sqrt()).collect();
    if !image_norms.is_empty() && image_norms.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("every image embedding has zero norm".into()));
    }
    let dots = images.dot(&texts.t());
    let values = dots
        .rows()
        .into_iter()
        .zip(&image_norms)
        .map(|(row, &inorm)| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (k, (&d, &tnorm)) in row.iter().zip(&text_norms).enumerate() {
                let score = if inorm == 0.0 || tnorm == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    d / (inorm * tnorm)
                };
                if score > best_score {
                    best = k;
                    best_score = score;
                }
            }
            best
        })
        .collect();
    LabelVector::new(values, texts.nrows())
}

/// Seeded subset of rows in which every class of `yhat` appears equally
/// often (the smallest class count). Returned indices are sorted.
pub fn balanced_presample(yhat: &LabelVector, seed: u64) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); yhat.num_classes()];
    for (i, &k) in yhat.values().iter().enumerate() {
        by_class[k].push(i);
    }
    if let Some(k) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Degenerate(format!(
            "predicted class {k} is empty; cannot balance"
        )));
    }
    let keep = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(keep * by_class.len());
    for mut members in by_class {
        members.shuffle(&mut rng);
        rows.extend_from_slice(&members[..keep]);
    }
    rows.sort_unstable();
    Ok(rows)
}

fn check_labels(what: &str, labels: &LabelVector, n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!("{what} has {} entries for {n} images", labels.len())));
    }
    Ok(())
}

/// Runs the alternating loop.
pub fn train(data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let n_all = data.images.nrows();
    let d = data.images.ncols();
    let c = data.class_prompts.nrows();
    if n_all < 2 {
        return Err(Error::InvalidInput(format!("training needs at least 2 images, got {n_all}")));
    }
    if c < 2 {
        return Err(Error::InvalidInput(format!("training needs at least 2 class prompts, got {c}")));
    }
    if data.class_prompts.ncols() != d {
        return Err(Error::Shape(format!(
            "class prompts have width {}, images {d}",
            data.class_prompts.ncols()
        )));
    }
    if let Some(y) = data.y {
        check_labels("target label vector", y, n_all)?;
        if y.num_classes() != c {
            return Err(Error::InvalidInput(format!(
                "target labels have {} classes but there are {c} class prompts",
                y.num_classes()
            )));
        }
    }
    if let Some(s) = data.s {
        check_labels("sensitive label vector", s, n_all)?;
    }

    // Initial pseudo labels.
    let yhat_all = if cfg.supervised_y {
        data.y
            .cloned()
            .ok_or_else(|| Error::Config("supervised_y needs ground-truth target labels".into()))?
    } else {
        zero_shot_predict(data.images, data.class_prompts)?
    };
    let shat_all = if cfg.supervised_s {
        data.s
            .cloned()
            .ok_or_else(|| Error::Config("supervised_s needs ground-truth sensitive labels".into()))?
    } else {
        let prompts = data.sensitive_prompts.ok_or_else(|| {
            Error::Config("no sensitive source: give sensitive prompts or ground-truth labels".into())
        })?;
        if prompts.ncols() != d {
            return Err(Error::Shape(format!(
                "sensitive prompts have width {}, images {d}",
                prompts.ncols()
            )));
        }
        zero_shot_predict(data.images, prompts)?
    };

    let rows: Vec<usize> = if cfg.balance_presample {
        balanced_presample(&yhat_all, cfg.seed ^ PRESAMPLE_SEED_SALT)?
    } else {
        (0..n_all).collect()
    };
    let images = data.images.select(Axis(0), &rows);
    let y_true = data.y.map(|y| y.select(&rows));
    let mut yhat = yhat_all.select(&rows);
    let shat = shat_all.select(&rows);
    let shat_digest = shat.digest();
    let n = rows.len();

    let r = cfg.r.unwrap_or(c - 1).max(1);
    let lx_i = rff_factor(images.view(), &cfg.kernel(cfg.seed))?;
    if r > lx_i.dim() {
        return Err(Error::Config(format!("r = {r} exceeds rff_dim = {}", lx_i.dim())));
    }
    let prompt_factor = rff_factor(data.class_prompts, &cfg.kernel(cfg.seed ^ TEXT_SEED_SALT))?;
    let ls = label_factor(&shat)?;
    let weights = ObjectiveWeights {
        tau_i: cfg.tau_i,
        tau_t: cfg.tau_t,
        tau_z: cfg.tau_z,
    };
    let agreement = |yhat: &LabelVector| -> Result<Option<f64>> {
        y_true.as_ref().map(|y| yhat.agreement(y)).transpose()
    };

    let image_side = PreparedFactor::new(&lx_i, cfg.gamma)?;
    let ly = label_factor(&yhat)?;
    let (mut theta_i, _) = image_side.solve(
        &ly,
        &ls,
        &SolveSpec {
            tau: cfg.tau_i,
            tau_z: 0.0,
            gamma: cfg.gamma,
            r,
            z_other: None,
        },
    )?;
    let mut z_i = lx_i.project(theta_i.view());
    let mut theta_t: Option<Array2<f64>> = None;
    let zeros = Array2::zeros((n, r));
    let mut history = vec![HistoryRecord {
        iteration: 0,
        terms: objective_terms(z_i.view(), zeros.view(), &ly, &ls, weights)?,
        yhat_agreement: agreement(&yhat)?,
        yhat_changed: 0.0,
        shat_digest,
    }];

    for iteration in 1..=cfg.iters {
        let ly = label_factor(&yhat)?;

        let text = IndexedFactor::new(prompt_factor.matrix.view(), yhat.values().to_vec())?;
        let text_side = PreparedFactor::new(&text, cfg.gamma)?;
        let (t, _) = text_side.solve(
            &ly,
            &ls,
            &SolveSpec {
                tau: cfg.tau_t,
                tau_z: cfg.tau_z,
                gamma: cfg.gamma,
                r,
                z_other: Some(z_i.view()),
            },
        )?;
        let z = text.project(t.view());
        let (t, z_t) = align(t, z, &z_i);

        let (ti, _) = image_side.solve(
            &ly,
            &ls,
            &SolveSpec {
                tau: cfg.tau_i,
                tau_z: cfg.tau_z,
                gamma: cfg.gamma,
                r,
                z_other: Some(z_t.view()),
            },
        )?;
        let z = lx_i.project(ti.view());
        (theta_i, z_i) = align(ti, z, &z_t);
        let terms = objective_terms(z_i.view(), z_t.view(), &ly, &ls, weights)?;
        theta_t = Some(t);

        let previous = yhat.clone();
        if !cfg.supervised_y {
            let codes = text_codes(theta_t.as_ref().expect("set above"), &prompt_factor.matrix, &text);
            yhat = zero_shot_predict(center_with(&z_i, n).view(), codes.view())?;
        }
        let changed = 1.0 - yhat.agreement(&previous)?;
        history.push(HistoryRecord {
            iteration,
            terms,
            yhat_agreement: agreement(&yhat)?,
            yhat_changed: changed,
            shat_digest,
        });
        log::debug!("round {iteration}: J = {:.6e}, changed = {changed:.4}", terms.total);
        if !cfg.supervised_y && changed == 0.0 {
            break;
        }
    }

    let encoder_i = encoder_from_theta(theta_i, &lx_i, lx_i.config, d);
    let (encoder_t, class_codes) = match theta_t {
        Some(t) => {
            let text = IndexedFactor::new(prompt_factor.matrix.view(), yhat.values().to_vec())?;
            let codes = text_codes(&t, &prompt_factor.matrix, &text);
            (Some(encoder_from_theta(t, &text, prompt_factor.config, d)), codes)
        }
        None => (None, class_centroids(&z_i, &yhat, c)),
    };

    Ok(TrainedModel {
        config: *cfg,
        encoder_i,
        encoder_t,
        class_codes,
        history,
        yhat,
        shat,
        rows,
    })
}

/// Rotates a fresh solution `Θ` (and its `Z`) so its coordinates line up
/// with the fixed side's: `Q` maximizes `tr(Qᵀ Zᵀ H Z_O)`. Every term of the
/// objective and the constraint are invariant under `Θ ↦ QᵀΘ`, so this only
/// picks, among equally good optima, the one cosine scoring can use.
fn align(theta: Array2<f64>, z: Array2<f64>, fixed: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let cross = z.t().dot(&center(fixed.view()));
    let q = procrustes(cross.view());
    (q.t().dot(&theta), z.dot(&q))
}

fn center_with(z: &Array2<f64>, n: usize) -> Array2<f64> {
    let mean = z.sum_axis(Axis(0)) / n as f64;
    z - &mean
}

/// Prompt representations minus the text-side mean over the `n` expanded rows.
fn text_codes(theta_t: &Array2<f64>, prompts: &Array2<f64>, text: &IndexedFactor<'_>) -> Array2<f64> {
    let per_prompt = prompts.dot(&theta_t.t());
    let mean = theta_t.dot(&text.column_sums()) / text.nrows() as f64;
    per_prompt - &mean
}

/// Per-class means of the centered representation; the fallback codes when
/// no text encoder was trained.
fn class_centroids(z: &Array2<f64>, yhat: &LabelVector, c: usize) -> Array2<f64> {
    let centered = center_with(z, z.nrows());
    let mut sums = Array2::zeros((c, z.ncols()));
    let mut counts = Array1::<f64>::zeros(c);
    for (row, &k) in centered.rows().into_iter().zip(yhat.values()) {
        let mut acc = sums.row_mut(k);
        acc += &row;
        counts[k] += 1.0;
    }
    for (mut row, &count) in sums.rows_mut().into_iter().zip(counts.iter()) {
        if count > 0.0 {
            row /= count;
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_shot_picks_the_matching_prompt() {
        let texts = array![[1.0, 0.0], [0.0, 1.0]];
        let images = array![[0.0, 3.0], [2.0, 0.1], [1.0, 1.0]];
        let got = zero_shot_predict(images.view(), texts.view()).unwrap();
        assert_eq!(got.values(), &[1, 0, 0]);
    }

    #[test]
    fn zero_shot_matches_brute_force_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let images = Array2::from_shape_simple_fn((50, 4), || StandardNormal.sample(&mut rng));
        let texts = Array2::from_shape_simple_fn((2, 4), || StandardNormal.sample(&mut rng));
        let got = zero_shot_predict(images.view(), texts.view()).unwrap();
        for (i, row) in images.rows().into_iter().enumerate() {
            let cos = |k: usize| {
                let t = texts.row(k);
                row.dot(&t) / (row.dot(&row).sqrt() * t.dot(&t).sqrt())
            };
            let want = if cos(1) > cos(0) { 1 } else { 0 };
            assert_eq!(got.values()[i], want, "row {i}");
        }
    }

    #[test]
    fn zero_shot_handles_zero_rows() {
        let texts = array![[1.0, 0.0], [0.0, 1.0]];
        let images = array![[0.0, 0.0], [0.0, 1.0]];
        assert_eq!(zero_shot_predict(images.view(), texts.view()).unwrap().values(), &[0, 1]);
        let zero = Array2::<f64>::zeros((2, 2));
        assert!(zero_shot_predict(zero.view(), texts.view()).is_err());
        assert!(zero_shot_predict(images.view(), zero.view()).is_err());
    }

    #[test]
    fn presample_balances_and_replays() {
        let balanced = LabelVector::new((0..20).map(|i| i % 2).collect(), 2).unwrap();
        assert_eq!(balanced_presample(&balanced, 1).unwrap(), (0..20).collect::<Vec<_>>());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut values = vec![0; 30];
        values.extend(vec![1; 10]);
        values.shuffle(&mut rng);
        let skewed = LabelVector::new(values, 2).unwrap();
        let rows = balanced_presample(&skewed, 7).unwrap();
        assert_eq!(rows.len(), 20);
        assert_eq!(skewed.select(&rows).counts(), vec![10, 10]);
        assert_eq!(rows, balanced_presample(&skewed, 7).unwrap());

        let missing = LabelVector::new(vec![0, 0, 2], 3).unwrap();
        let err = balanced_presample(&missing, 0).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    fn toy(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>, Array2<f64>, LabelVector, LabelVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 3));
        let mut y = Vec::new();
        let mut s = Vec::new();
        for i in 0..n {
            let yi = rng.random_range(0..2);
            let si = rng.random_range(0..2);
            x[[i, 0]] = if yi == 1 { 1.0 } else { -1.0 };
            x[[i, 1]] = if si == 1 { 1.0 } else { -1.0 };
            for j in 0..3 {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] += 0.3 * e;
            }
            y.push(yi);
            s.push(si);
        }
        let t = array![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let ts = array![[0.0, -1.0, 0.0], [0.0, 1.0, 0.0]];
        (
            x,
            t,
            ts,
            LabelVector::new(y, 2).unwrap(),
            LabelVector::new(s, 2).unwrap(),
        )
    }

    #[test]
    fn zero_iterations_keep_only_the_initial_solve() {
        let (x, t, ts, y, _) = toy(60, 1);
        let cfg = TrainConfig {
            iters: 0,
            rff_dim: 32,
            ..TrainConfig::default()
        };
        let data = TrainData {
            images: x.view(),
            class_prompts: t.view(),
            sensitive_prompts: Some(ts.view()),
            y: Some(&y),
            s: None,
        };
        let model = train(&data, &cfg).unwrap();
        assert_eq!(model.history.len(), 1);
        assert!(model.encoder_t.is_none());
        assert_eq!(model.class_codes.dim(), (2, 1));
        assert_eq!(model.predict(x.view()).unwrap().len(), 60);
    }

    #[test]
    fn supervised_target_stays_fixed_and_runs_all_rounds() {
        let (x, t, ts, y, s) = toy(80, 2);
        let cfg = TrainConfig {
            iters: 3,
            rff_dim: 32,
            supervised_y: true,
            supervised_s: true,
            ..TrainConfig::default()
        };
        let data = TrainData {
            images: x.view(),
            class_prompts: t.view(),
            sensitive_prompts: Some(ts.view()),
            y: Some(&y),
            s: Some(&s),
        };
        let model = train(&data, &cfg).unwrap();
        assert_eq!(model.history.len(), 4);
        assert!(model.history.iter().all(|h| h.yhat_agreement == Some(1.0)));
        assert!(model.history.iter().all(|h| h.shat_digest == s.digest()));
        assert_eq!(model.yhat, y);
    }

    #[test]
    fn missing_sources_are_config_errors() {
        let (x, t, _, y, _) = toy(20, 3);
        let data = TrainData {
            images: x.view(),
            class_prompts: t.view(),
            sensitive_prompts: None,
            y: Some(&y),
            s: None,
        };
        let err = train(&data, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let three = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let data = TrainData {
            class_prompts: three.view(),
            ..data
        };
        assert!(train(&data, &TrainConfig::default()).is_err());
    }
}
