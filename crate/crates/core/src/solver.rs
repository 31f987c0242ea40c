//! Closed-form encoder solver.
//!
//! For one side with the other representation `Z_O` held fixed, the best
//! `r`-dimensional encoder in the feature span maximizes
//!
//! ```text
//! Dep(Z, Y) − τ·Dep(Z, S) + τ_z·Dep(Z, Z_O)
//! ```
//!
//! subject to `Cov(Z) + γ‖f‖² = I_r`. In factor form this is the generalized
//! symmetric-definite problem `B u = λ C u` with
//!
//! ```text
//! B = (1/n²) Lᵀ (H K_Y H − τ H K_S H + τ_z H Z_O Z_Oᵀ H) L
//! C = (1/n) Lᵀ H L + γ I
//! ```
//!
//! and the attained objective is the sum of the `r` largest eigenvalues.
//! `B` is never formed densely: it is `F W Fᵀ` with `F = [LᵀHL_Y, LᵀHL_S,
//! LᵀHZ_O]` (`D × k`, `k` small) and a diagonal sign/weight `W`. After
//! whitening by the Cholesky factor of `C` the problem lives in the
//! `k`-dimensional span of `R⁻¹F`, so each solve costs `O(D k²)` on top of
//! the one-off `O(n D²)` preparation.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dependence::{dep_z_cross, dep_z_labels, Representation};
use crate::error::{Error, Result};
use crate::kernel::{FeatureFactor, KernelConfig, LabelFactor, RffFactor, RffMap};
use crate::linalg::{
    cholesky_lower, solve_lower, solve_lower_transposed, symmetric_eigen, thin_qr,
};

/// Default ridge on the function norm inside the disentanglement constraint.
pub const DEFAULT_GAMMA: f64 = 1e-4;

/// Relative ridge used for the minimum-norm pseudoinverse of `L_X`.
const PINV_RIDGE: f64 = 1e-10;

/// Learned map `x ↦ Θ r_X(x)`, with the kernel recipe needed to rebuild `r_X`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    /// `r × D` parameters acting on RFF features.
    pub theta: Array2<f64>,
    /// Resolved kernel config of the feature map.
    pub kernel: KernelConfig,
    pub input_dim: usize,
    /// Mean of the training representation; subtracted before cosine scoring.
    pub offset: Array1<f64>,
}

impl Encoder {
    pub fn r(&self) -> usize {
        self.theta.nrows()
    }

    pub fn feature_map(&self) -> Result<RffMap> {
        RffMap::new(&self.kernel, self.input_dim)
    }
}

#[derive(Debug, Clone)]
pub struct EigenSolution {
    /// All `D` generalized eigenvalues, largest first.
    pub eigenvalues: Vec<f64>,
    /// `D × r` eigenvectors for the retained pairs, `C`-orthonormal.
    pub eigenvectors: Array2<f64>,
    /// Sum of the `r` largest eigenvalues.
    pub objective: f64,
}

/// Scalars of one fixed-side subproblem.
#[derive(Debug, Clone, Copy)]
pub struct SolveSpec<'a> {
    pub tau: f64,
    pub tau_z: f64,
    pub gamma: f64,
    pub r: usize,
    /// Representation of the other modality, aligned row-by-row with the factor.
    pub z_other: Option<ArrayView2<'a, f64>>,
}

impl SolveSpec<'_> {
    pub fn new(tau: f64, tau_z: f64, gamma: f64, r: usize) -> SolveSpec<'static> {
        SolveSpec {
            tau,
            tau_z,
            gamma,
            r,
            z_other: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) || !(self.tau_z >= 0.0 && self.tau_z.is_finite())
        {
            return Err(Error::Config(format!(
                "tau and tau_z must be non-negative, got {} and {}",
                self.tau, self.tau_z
            )));
        }
        if self.r == 0 || self.r > dim {
            return Err(Error::Config(format!(
                "output dimension r = {} must lie in 1..={dim}",
                self.r
            )));
        }
        Ok(())
    }
}

/// A feature factor with the `γ`-dependent pieces of the solve cached:
/// the centered Gram `LᵀHL`, the Cholesky factor of `C`, and the Cholesky
/// factor of the ridged `LᵀL` used by the pseudoinverse.
pub struct PreparedFactor<'f, F: FeatureFactor + ?Sized> {
    factor: &'f F,
    gamma: f64,
    chol_c: Array2<f64>,
    gram: Array2<f64>,
    chol_gram: Array2<f64>,
}

impl<'f, F: FeatureFactor + ?Sized> PreparedFactor<'f, F> {
    pub fn new(factor: &'f F, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        let n = factor.nrows();
        if n == 0 {
            return Err(Error::Shape("feature factor has no rows".into()));
        }
        let dim = factor.dim();
        let centered = factor.centered_gram();

        let mut c = &centered / n as f64;
        for i in 0..dim {
            c[[i, i]] += gamma;
        }
        let chol_c = cholesky_lower(c.view()).ok_or_else(|| {
            Error::Numerical(format!(
                "Cholesky of the constraint matrix failed; gamma = {gamma}, trace = {:.3e}, \
                 smallest diagonal = {:.3e}",
                c.diag().sum(),
                c.diag().iter().cloned().fold(f64::INFINITY, f64::min)
            ))
        })?;

        let sums = factor.column_sums();
        let mut gram = centered;
        for ((i, j), v) in gram.indexed_iter_mut() {
            *v += sums[i] * sums[j] / n as f64;
        }
        let ridge = PINV_RIDGE * (gram.diag().sum() / dim as f64).max(f64::MIN_POSITIVE);
        let mut ridged = gram.clone();
        for i in 0..dim {
            ridged[[i, i]] += ridge;
        }
        let chol_gram = cholesky_lower(ridged.view()).ok_or_else(|| {
            Error::Numerical(format!(
                "Cholesky of the ridged feature Gram failed; ridge = {ridge:.3e}"
            ))
        })?;

        Ok(Self {
            factor,
            gamma,
            chol_c,
            gram,
            chol_gram,
        })
    }

    pub fn factor(&self) -> &F {
        self.factor
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Solves the subproblem and returns `Θ` (`r × D`) with its eigen-solution.
    pub fn solve(
        &self,
        ly: &LabelFactor,
        ls: &LabelFactor,
        spec: &SolveSpec<'_>,
    ) -> Result<(Array2<f64>, EigenSolution)> {
        let dim = self.factor.dim();
        let n = self.factor.nrows();
        spec.validate(dim)?;
        if (spec.gamma - self.gamma).abs() > 0.0 {
            return Err(Error::Config(format!(
                "factor was prepared for gamma = {} but the solve asks for {}",
                self.gamma, spec.gamma
            )));
        }
        for (what, rows) in [("target labels", ly.matrix.nrows()), ("sensitive labels", ls.matrix.nrows())] {
            if rows != n {
                return Err(Error::Shape(format!("{what} have {rows} rows, features have {n}")));
            }
        }

        // Columns of F and their signed weights, so that B = F W Fᵀ.
        let mut blocks = vec![(self.factor.centered_cross(ly.matrix.view()), 1.0)];
        if spec.tau > 0.0 {
            blocks.push((self.factor.centered_cross(ls.matrix.view()), -spec.tau));
        }
        if let (Some(z), true) = (spec.z_other, spec.tau_z > 0.0) {
            if z.nrows() != n {
                return Err(Error::Shape(format!(
                    "fixed representation has {} rows, features have {n}",
                    z.nrows()
                )));
            }
            blocks.push((self.factor.centered_cross(z), spec.tau_z));
        }
        let k: usize = blocks.iter().map(|(b, _)| b.ncols()).sum();
        let mut f = Array2::zeros((dim, k));
        let mut weights = Array1::zeros(k);
        let mut col = 0;
        for (block, w) in &blocks {
            let width = block.ncols();
            f.slice_mut(s![.., col..col + width]).assign(block);
            weights.slice_mut(s![col..col + width]).fill(*w / (n as f64 * n as f64));
            col += width;
        }

        // Whitened problem A = G W Gᵀ with G = R⁻¹F and C = R Rᵀ.
        let g = solve_lower(&self.chol_c, f.view());
        let (values, span) = top_eigenpairs(&g, &weights);

        let order = descending_order(&values);
        let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        let top: Vec<usize> = order[..spec.r].to_vec();
        let w_top = if top.iter().all(|&i| i < span.ncols()) {
            span.select(Axis(1), &top)
        } else {
            // Some retained pairs have eigenvalue zero: complete the basis.
            let mut full = Array2::zeros((dim, dim));
            full.slice_mut(s![.., ..span.ncols()]).assign(&span);
            full.slice_mut(s![.., span.ncols()..])
                .assign(&orthogonal_complement(&span)?);
            full.select(Axis(1), &top)
        };
        let mut u = solve_lower_transposed(&self.chol_c, w_top.view());
        fix_signs(&mut u);

        let theta = self.min_norm_theta(&u)?;
        let objective = eigenvalues[..spec.r].iter().sum();
        Ok((
            theta,
            EigenSolution {
                eigenvalues,
                eigenvectors: u,
                objective,
            },
        ))
    }

    /// `Θ = Uᵀ L^† L` with the minimum-norm pseudoinverse, i.e. `U` projected
    /// onto the row space of `L`.
    fn min_norm_theta(&self, u: &Array2<f64>) -> Result<Array2<f64>> {
        let gram_u = self.gram.dot(u);
        let half = solve_lower(&self.chol_gram, gram_u.view());
        let projected = solve_lower_transposed(&self.chol_gram, half.view());
        Ok(projected.reversed_axes())
    }

    /// Constraint matrix `C = (1/n)LᵀHL + γI`, reassembled from its factor.
    pub fn constraint_matrix(&self) -> Array2<f64> {
        self.chol_c.dot(&self.chol_c.t())
    }
}

/// Eigenpairs of `G W Gᵀ` (`D × D`). Returns all `D` eigenvalues and
/// orthonormal eigenvectors for the first `m` of them, where the remaining
/// `D − m` eigenvalues are exactly zero (their eigenvectors span the
/// orthogonal complement of the returned ones). When `k < D` the nonzero
/// part is found in the `k`-dimensional column span of `G`.
fn top_eigenpairs(g: &Array2<f64>, weights: &Array1<f64>) -> (Vec<f64>, Array2<f64>) {
    let (dim, k) = g.dim();
    if k >= dim {
        let weighted = g * &weights.view().insert_axis(Axis(0));
        let mut a = weighted.dot(&g.t());
        symmetrize(&mut a);
        return symmetric_eigen(a.view());
    }

    let (q, t) = thin_qr(g.view());
    let weighted = &t * &weights.view().insert_axis(Axis(0));
    let mut small = weighted.dot(&t.t());
    symmetrize(&mut small);
    let (mut values, vecs) = symmetric_eigen(small.view());
    values.extend(std::iter::repeat_n(0.0, dim - k));
    (values, q.dot(&vecs))
}

/// Orthonormal basis of the complement of the columns of `q` (orthonormal).
fn orthogonal_complement(q: &Array2<f64>) -> Result<Array2<f64>> {
    let (dim, k) = q.dim();
    let mut full = Array2::zeros((dim, dim));
    full.slice_mut(s![.., ..k]).assign(q);
    // Gram–Schmidt against unit vectors, skipping directions already spanned.
    let mut filled = k;
    for e in 0..dim {
        if filled == dim {
            break;
        }
        let mut v = Array1::zeros(dim);
        v[e] = 1.0;
        for _ in 0..2 {
            for j in 0..filled {
                let col = full.column(j);
                let proj = col.dot(&v);
                v.scaled_add(-proj, &col);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            full.column_mut(filled).assign(&(v / norm));
            filled += 1;
        }
    }
    if filled != dim {
        return Err(Error::Numerical(
            "could not complete an orthonormal basis".into(),
        ));
    }
    Ok(full.slice(s![.., k..]).to_owned())
}

fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

/// Indices sorting `values` largest first; ties keep the solver's order.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Makes the first clearly nonzero entry of every column positive.
fn fix_signs(u: &mut Array2<f64>) {
    for mut col in u.columns_mut() {
        let scale = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if let Some(&first) = col.iter().find(|v| v.abs() > 1e-8 * scale) {
            if first < 0.0 {
                col.mapv_inplace(|v| -v);
            }
        }
    }
}

/// Solves one fixed-side subproblem on an RFF factor and packages the encoder.
pub fn solve_encoder(
    lx: &RffFactor,
    ly: &LabelFactor,
    ls: &LabelFactor,
    spec: &SolveSpec<'_>,
) -> Result<(Encoder, EigenSolution)> {
    spec.validate(lx.dim())?;
    let prepared = PreparedFactor::new(lx, spec.gamma)?;
    let (theta, solution) = prepared.solve(ly, ls, spec)?;
    let encoder = encoder_from_theta(theta, lx, lx.config, lx.input_dim());
    Ok((encoder, solution))
}

pub(crate) fn encoder_from_theta<F: FeatureFactor + ?Sized>(
    theta: Array2<f64>,
    factor: &F,
    kernel: KernelConfig,
    input_dim: usize,
) -> Encoder {
    let offset = theta.dot(&factor.column_sums()) / factor.nrows() as f64;
    Encoder {
        theta,
        kernel,
        input_dim,
        offset,
    }
}

/// Encodes new embeddings: row `i` of the result is `Θ r_X(x_i)`.
pub fn apply_encoder(encoder: &Encoder, x: ArrayView2<f64>) -> Result<Representation> {
    if x.ncols() != encoder.input_dim {
        return Err(Error::Shape(format!(
            "encoder expects {}-dimensional embeddings, got {}",
            encoder.input_dim,
            x.ncols()
        )));
    }
    let features = encoder.feature_map()?.transform(x)?;
    Representation::new(features.view().project(encoder.theta.view()))
}

/// Individual terms of the two-sided objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub dep_zi_y: f64,
    pub dep_zi_s: f64,
    pub dep_zt_y: f64,
    pub dep_zt_s: f64,
    pub dep_cross: f64,
    pub total: f64,
}

/// Weights of the two-sided objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub tau_i: f64,
    pub tau_t: f64,
    pub tau_z: f64,
}

/// Five-term objective evaluated on representations of the same `n` samples.
pub fn objective_terms(
    z_i: ArrayView2<f64>,
    z_t: ArrayView2<f64>,
    ly: &LabelFactor,
    ls: &LabelFactor,
    w: ObjectiveWeights,
) -> Result<ObjectiveTerms> {
    let dep_zi_y = dep_z_labels(z_i, ly)?;
    let dep_zi_s = dep_z_labels(z_i, ls)?;
    let dep_zt_y = dep_z_labels(z_t, ly)?;
    let dep_zt_s = dep_z_labels(z_t, ls)?;
    let dep_cross = dep_z_cross(z_i, z_t)?;
    let total = dep_zi_y - w.tau_i * dep_zi_s + dep_zt_y - w.tau_t * dep_zt_s + w.tau_z * dep_cross;
    Ok(ObjectiveTerms {
        dep_zi_y,
        dep_zi_s,
        dep_zt_y,
        dep_zt_s,
        dep_cross,
        total,
    })
}

/// Five-term objective for two encoders' parameters on their feature factors.
#[allow(clippy::too_many_arguments)]
pub fn objective_value<F: FeatureFactor + ?Sized, G: FeatureFactor + ?Sized>(
    theta_i: ArrayView2<f64>,
    theta_t: ArrayView2<f64>,
    lx_i: &F,
    lx_t: &G,
    ly: &LabelFactor,
    ls: &LabelFactor,
    w: ObjectiveWeights,
) -> Result<f64> {
    if theta_i.ncols() != lx_i.dim() || theta_t.ncols() != lx_t.dim() {
        return Err(Error::Shape("encoder width does not match its feature factor".into()));
    }
    if lx_i.nrows() != lx_t.nrows() {
        return Err(Error::Shape(format!(
            "image factor has {} rows, text factor {}",
            lx_i.nrows(),
            lx_t.nrows()
        )));
    }
    let z_i = lx_i.project(theta_i);
    let z_t = lx_t.project(theta_t);
    Ok(objective_terms(z_i.view(), z_t.view(), ly, ls, w)?.total)
}

/// One-sided objective `Dep(Z,Y) − τ Dep(Z,S) + τ_z Dep(Z,Z_O)` for `Z = LΘᵀ`.
pub fn one_sided_objective<F: FeatureFactor + ?Sized>(
    theta: ArrayView2<f64>,
    lx: &F,
    ly: &LabelFactor,
    ls: &LabelFactor,
    spec: &SolveSpec<'_>,
) -> Result<f64> {
    let z = lx.project(theta);
    let mut j = dep_z_labels(z.view(), ly)? - spec.tau * dep_z_labels(z.view(), ls)?;
    if let Some(other) = spec.z_other {
        j += spec.tau_z * dep_z_cross(z.view(), other)?;
    }
    Ok(j)
}

/// `Θ C Θᵀ − I` in Frobenius norm, the disentanglement residual.
pub fn constraint_residual<F: FeatureFactor + ?Sized>(
    theta: ArrayView2<f64>,
    lx: &F,
    gamma: f64,
) -> f64 {
    let n = lx.nrows() as f64;
    let z = lx.project(theta);
    let zc = crate::kernel::center(z.view());
    let mut m = zc.t().dot(&zc) / n + theta.dot(&theta.t()) * gamma;
    for i in 0..m.nrows() {
        m[[i, i]] -= 1.0;
    }
    m.mapv(|v| v * v).sum().sqrt()
}
