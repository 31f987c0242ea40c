//! Empirical dependence estimators.
//!
//! `Dep(Z, S)` is the sum of squared empirical covariances between every
//! coordinate of `Z` and every basis function of the label space. With a
//! one-hot basis this is `(1/n²)‖Zᵀ H L‖²_F`; the cross-modal version uses
//! the coordinates of the second representation as its basis. Every
//! estimator works on `n × r` (or `n × D`) matrices only.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::kernel::{center, ensure_finite, rff_factor, FeatureFactor, KernelConfig, LabelFactor};

/// Encoded samples `Z`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub matrix: Array2<f64>,
}

impl Representation {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.ncols() == 0 {
            return Err(Error::Shape("representation needs at least one column".into()));
        }
        ensure_finite(matrix.view(), "representation")?;
        Ok(Self { matrix })
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }
}

fn check_rows(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} rows vs {b} rows")));
    }
    if a == 0 {
        return Err(Error::Shape(format!("{what}: no samples")));
    }
    Ok(())
}

/// `(1/n²)‖(HZ)ᵀ L‖²_F` for a representation and a label factor.
pub fn dep_z_labels(z: ArrayView2<f64>, labels: &LabelFactor) -> Result<f64> {
    check_rows(z.nrows(), labels.matrix.nrows(), "representation vs labels")?;
    let n = z.nrows() as f64;
    let cross = center(z).t().dot(&labels.matrix);
    Ok(cross.mapv(|v| v * v).sum() / (n * n))
}

/// `(1/n²)‖(HZ_I)ᵀ Z_T‖²_F` for two representations of the same samples.
pub fn dep_z_cross(z_i: ArrayView2<f64>, z_t: ArrayView2<f64>) -> Result<f64> {
    check_rows(z_i.nrows(), z_t.nrows(), "image vs text representation")?;
    let n = z_i.nrows() as f64;
    let cross = center(z_i).t().dot(&z_t);
    Ok(cross.mapv(|v| v * v).sum() / (n * n))
}

fn check_theta<F: FeatureFactor + ?Sized>(theta: ArrayView2<f64>, factor: &F) -> Result<()> {
    if theta.ncols() != factor.dim() {
        return Err(Error::Shape(format!(
            "encoder has {} columns but the feature factor has dimension {}",
            theta.ncols(),
            factor.dim()
        )));
    }
    Ok(())
}

/// `Dep(Z, labels)` with `Z = L_X Θᵀ`.
pub fn dep_vs_labels<F: FeatureFactor + ?Sized>(
    theta: ArrayView2<f64>,
    lx: &F,
    labels: &LabelFactor,
) -> Result<f64> {
    check_theta(theta, lx)?;
    check_rows(lx.nrows(), labels.matrix.nrows(), "features vs labels")?;
    dep_z_labels(lx.project(theta).view(), labels)
}

/// `Dep(Z_I, Z_T)` with `Z_I = L_I Θ_Iᵀ` and `Z_T = L_T Θ_Tᵀ`.
pub fn dep_cross<F: FeatureFactor + ?Sized, G: FeatureFactor + ?Sized>(
    theta_i: ArrayView2<f64>,
    lx_i: &F,
    theta_t: ArrayView2<f64>,
    lx_t: &G,
) -> Result<f64> {
    check_theta(theta_i, lx_i)?;
    check_theta(theta_t, lx_t)?;
    check_rows(lx_i.nrows(), lx_t.nrows(), "image vs text features")?;
    dep_z_cross(lx_i.project(theta_i).view(), lx_t.project(theta_t).view())
}

/// `Dep` of the raw feature map (the identity encoder, `Θ = I`) on labels:
/// the reference level a trained encoder's dependence is compared against.
pub fn probe_dependence<F: FeatureFactor + ?Sized>(lx: &F, labels: &LabelFactor) -> Result<f64> {
    check_rows(lx.nrows(), labels.matrix.nrows(), "features vs labels")?;
    let n = lx.nrows() as f64;
    let cross = lx.centered_cross(labels.matrix.view());
    Ok(cross.mapv(|v| v * v).sum() / (n * n))
}

/// Biased HSIC `(1/n²) Tr[K_A H K_B H]` from two Gram factors.
pub fn hsic_from_factors(la: ArrayView2<f64>, lb: ArrayView2<f64>) -> Result<f64> {
    check_rows(la.nrows(), lb.nrows(), "hsic")?;
    let n = la.nrows() as f64;
    let cross = center(la).t().dot(&lb);
    Ok(cross.mapv(|v| v * v).sum() / (n * n))
}

/// Biased HSIC between two sample sets, with both kernels approximated by RFF.
pub fn hsic(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    cfg_a: &KernelConfig,
    cfg_b: &KernelConfig,
) -> Result<f64> {
    check_rows(a.nrows(), b.nrows(), "hsic")?;
    if a.nrows() < 4 {
        return Err(Error::InvalidInput(format!(
            "hsic needs at least 4 samples, got {}",
            a.nrows()
        )));
    }
    let fa = rff_factor(a, cfg_a)?;
    let fb = rff_factor(b, cfg_b)?;
    hsic_from_factors(fa.matrix.view(), fb.matrix.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::label_factor;
    use crate::labels::LabelVector;
    use crate::linalg::cholesky_lower;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng))
    }

    /// Σ_j Σ_β Cov²(Z_j, β) with the plain two-sum covariance.
    fn covariance_sum(z: &Array2<f64>, basis: &Array2<f64>) -> f64 {
        let n = z.nrows() as f64;
        let mut total = 0.0;
        for j in 0..z.ncols() {
            for b in 0..basis.ncols() {
                let mut joint = 0.0;
                let (mut sz, mut sb) = (0.0, 0.0);
                for i in 0..z.nrows() {
                    joint += z[[i, j]] * basis[[i, b]];
                    sz += z[[i, j]];
                    sb += basis[[i, b]];
                }
                let cov = joint / n - sz * sb / (n * n);
                total += cov * cov;
            }
        }
        total
    }

    #[test]
    fn zero_encoder_and_constant_labels_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lx = gaussian(6, 4, &mut rng);
        let labels = label_factor(&LabelVector::new(vec![0, 1, 1, 0, 1, 0], 2).unwrap()).unwrap();
        let zero = Array2::zeros((2, 4));
        assert_eq!(dep_vs_labels(zero.view(), &lx, &labels).unwrap(), 0.0);

        let theta = gaussian(2, 4, &mut rng);
        let constant = label_factor(&LabelVector::new(vec![0; 6], 1).unwrap()).unwrap();
        assert!(dep_vs_labels(theta.view(), &lx, &constant).unwrap() < 1e-24);
    }

    #[test]
    fn label_dep_matches_covariance_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lx = gaussian(6, 5, &mut rng);
        let theta = gaussian(2, 5, &mut rng);
        let raw: Vec<usize> = (0..6).map(|_| rng.random_range(0..2)).collect();
        let labels = label_factor(&LabelVector::new(raw, 2).unwrap()).unwrap();
        let z = lx.dot(&theta.t());
        let oracle = covariance_sum(&z, &labels.matrix);
        let got = dep_vs_labels(theta.view(), &lx, &labels).unwrap();
        assert!((got - oracle).abs() <= 1e-10 * oracle.max(1e-300), "{got} vs {oracle}");
    }

    #[test]
    fn cross_dep_matches_lemma_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let li = gaussian(5, 4, &mut rng);
        let lt = gaussian(5, 3, &mut rng);
        let ti = gaussian(2, 4, &mut rng);
        let tt = gaussian(2, 3, &mut rng);
        let zi = li.dot(&ti.t());
        let zt = lt.dot(&tt.t());
        let oracle = covariance_sum(&zi, &zt);
        let got = dep_cross(ti.view(), &li, tt.view(), &lt).unwrap();
        assert!((got - oracle).abs() <= 1e-10 * oracle, "{got} vs {oracle}");

        let zero = Array2::zeros((2, 3));
        assert_eq!(dep_cross(ti.view(), &li, zero.view(), &lt).unwrap(), 0.0);
        let constant_rows = Array2::from_elem((5, 2), 0.7);
        assert!(dep_z_cross(constant_rows.view(), zt.view()).unwrap() < 1e-24);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let lx = Array2::<f64>::zeros((4, 3));
        let labels = label_factor(&LabelVector::new(vec![0, 1, 0], 2).unwrap()).unwrap();
        assert!(dep_vs_labels(Array2::zeros((1, 3)).view(), &lx, &labels).is_err());
        assert!(dep_vs_labels(Array2::zeros((1, 2)).view(), &lx, &labels).is_err());
        assert!(Representation::new(Array2::zeros((3, 0))).is_err());
    }

    #[test]
    fn hsic_separates_dependent_from_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian(2000, 2, &mut rng);
        let b = gaussian(2000, 2, &mut rng);
        let cfg = KernelConfig::median_heuristic(256, 9);
        let own = hsic(a.view(), a.view(), &cfg, &cfg).unwrap();
        let indep = hsic(a.view(), b.view(), &cfg, &cfg).unwrap();
        assert!(own >= 10.0 * indep, "self {own} vs independent {indep}");

        let constant = Array2::from_elem((2000, 2), 1.0);
        let explicit = KernelConfig::explicit(1.0, 256, 9);
        assert!(hsic(a.view(), constant.view(), &cfg, &explicit).unwrap() < 1e-10);
    }

    #[test]
    fn hsic_with_exact_factors_matches_dense_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = gaussian(8, 3, &mut rng);
        let b = &a.mapv(|v| v * v) + &gaussian(8, 3, &mut rng);
        let gram = |x: &Array2<f64>| {
            let n = x.nrows();
            Array2::from_shape_fn((n, n), |(i, j)| {
                let d2 = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum();
                (-d2 / 2.0).exp()
            })
        };
        let (ka, kb) = (gram(&a), gram(&b));
        let n = 8;
        let h = Array2::<f64>::eye(n) - Array2::<f64>::from_elem((n, n), 1.0 / n as f64);
        let dense = ka.dot(&h).dot(&kb).dot(&h).diag().sum() / (n * n) as f64;
        let la = cholesky_lower(ka.view()).unwrap();
        let lb = cholesky_lower(kb.view()).unwrap();
        let got = hsic_from_factors(la.view(), lb.view()).unwrap();
        assert!((got - dense).abs() < 1e-10, "{got} vs {dense}");
        let cfg = KernelConfig::explicit(1.0, 8, 0);
        let short = b.slice(ndarray::s![..3, ..]);
        assert!(hsic(short, short, &cfg, &cfg).is_err());
    }
}
