//! Closed-form rates, the Gaussian KL divergence of the lower-bound
//! construction, and randomized audits of the matrix inequalities the
//! estimation error analysis relies on.
//!
//! Rate formulas omit the unspecified universal constants; only ratios
//! between parameter settings are meaningful.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{gaussian_factor, sample_covariances, sample_with_factor};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{build_joint, random_orthonormal_frame, CanonicalSpec, JointCovariance};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub p1: usize,
    pub p2: usize,
    pub n: usize,
    pub k: usize,
    pub lambda_k: f64,
    pub lambda_k1: f64,
}

impl RateParams {
    pub fn new(p1: usize, p2: usize, n: usize, k: usize, lambda_k: f64, lambda_k1: f64) -> Result<Self> {
        let params = Self {
            p1,
            p2,
            n,
            k,
            lambda_k,
            lambda_k1,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParams("n must be >= 1".into()));
        }
        if self.k == 0 || self.k >= self.p1.min(self.p2) {
            return Err(Error::InvalidParams(format!(
                "k = {} must satisfy 1 <= k < min(p1, p2) = {}",
                self.k,
                self.p1.min(self.p2)
            )));
        }
        if !(0.0 <= self.lambda_k1 && self.lambda_k1 < self.lambda_k && self.lambda_k <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "need 0 <= λ_(k+1) < λ_k <= 1, got λ_k = {}, λ_(k+1) = {}",
                self.lambda_k, self.lambda_k1
            )));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.lambda_k - self.lambda_k1
    }

    /// `(1 − λ_k²)(1 − λ_{k+1}²) / Δ²`.
    pub fn correlation_factor(&self) -> f64 {
        (1.0 - self.lambda_k.powi(2)) * (1.0 - self.lambda_k1.powi(2)) / self.delta().powi(2)
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Operator,
    Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTerms {
    pub principal: f64,
    pub high_order: f64,
}

/// Principal and high-order terms of the upper bound. The Frobenius variant
/// is normalized per dimension of the target subspace.
pub fn upper_rate(params: &RateParams, norm: NormKind) -> Result<RateTerms> {
    params.validate()?;
    let n = params.n as f64;
    let dims = match norm {
        NormKind::Operator => params.p1 as f64,
        NormKind::Frobenius => (params.p1 - params.k) as f64,
    };
    let high = (params.p1 + params.p2) as f64 / (n * params.delta().powi(2));
    Ok(RateTerms {
        principal: params.correlation_factor() * dims / n,
        high_order: high * high,
    })
}

/// Minimax lower-bound rate `min(factor (p1−k)/n, 1, (p1−k)/k)`.
pub fn lower_rate(params: &RateParams) -> Result<f64> {
    params.validate()?;
    let residual = (params.p1 - params.k) as f64;
    let principal = params.correlation_factor() * residual / params.n as f64;
    Ok(principal.min(1.0).min(residual / params.k as f64))
}

/// `[(p1+p2)/(nΔ²)] / [(1−λ_k²)(1−λ_{k+1}²)/(1+p2/p1)]` with unit constant;
/// values at or below 1 are read as "principal term dominates".
pub fn sample_size_condition(params: &RateParams) -> Result<f64> {
    params.validate()?;
    let (p1, p2) = (params.p1 as f64, params.p2 as f64);
    let lhs = (p1 + p2) / (params.n as f64 * params.delta().powi(2));
    let rhs = (1.0 - params.lambda_k.powi(2)) * (1.0 - params.lambda_k1.powi(2)) / (1.0 + p2 / p1);
    Ok(lhs / rhs)
}

/// Two models sharing marginals and correlations whose extended frames have
/// the same product `[U, W][V, Z]^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundModel {
    pub first: CanonicalSpec,
    pub second: CanonicalSpec,
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
}

const MATCHED_PRODUCT_TOL: f64 = 1e-8;

impl LowerBoundModel {
    /// Random instance: Haar frames `[U, W]` (`p1 x p1`) and `[V, Z]`
    /// (`p2 x p1`), second model rotated by a Haar `Q`.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        p1: usize,
        p2: usize,
        k: usize,
        lambda1: f64,
        lambda2: f64,
        sigma_x: Matrix,
        sigma_y: Matrix,
        seed: u64,
    ) -> Result<Self> {
        let q = random_orthonormal_frame(p1, p1, seeds::derive(seed, &[2]))?;
        Self::with_rotation(p1, p2, k, lambda1, lambda2, sigma_x, sigma_y, &q, seed)
    }

    /// As [`LowerBoundModel::random`] with a caller-supplied rotation `Q`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_rotation(
        p1: usize,
        p2: usize,
        k: usize,
        lambda1: f64,
        lambda2: f64,
        sigma_x: Matrix,
        sigma_y: Matrix,
        rotation: &Matrix,
        seed: u64,
    ) -> Result<Self> {
        if !(k >= 1 && k <= p1 && p1 <= p2) {
            return Err(Error::InvalidParams(format!("need 1 <= k <= p1 <= p2, got {k}, {p1}, {p2}")));
        }
        if rotation.shape() != (p1, p1) || linalg::orthonormality_error(rotation) > 1e-10 {
            return Err(Error::InvalidParams("rotation must be a p1 x p1 orthogonal matrix".into()));
        }
        let mut lambdas = vec![lambda1; k];
        lambdas.extend(std::iter::repeat_n(lambda2, p1 - k));
        let uw = random_orthonormal_frame(p1, p1, seeds::derive(seed, &[0]))?;
        let vz = random_orthonormal_frame(p2, p1, seeds::derive(seed, &[1]))?;
        let first = CanonicalSpec::new(sigma_x.clone(), sigma_y.clone(), lambdas.clone(), uw.clone(), vz.clone(), None)?;
        let second = CanonicalSpec::new(sigma_x, sigma_y, lambdas, uw * rotation, vz * rotation, None)?;
        Ok(Self {
            first,
            second,
            k,
            lambda1,
            lambda2,
        })
    }

    pub fn matched_product_deviation(&self) -> f64 {
        let a = &self.first.frame_u * self.first.frame_v.transpose();
        let b = &self.second.frame_u * self.second.frame_v.transpose();
        (a - b).norm()
    }

    /// `‖U₁V₁^T − U₂V₂^T‖_F` over the leading `k` frame columns.
    pub fn leading_product_distance(&self) -> f64 {
        let k = self.k;
        let lead = |s: &CanonicalSpec| s.frame_u.columns(0, k) * s.frame_v.columns(0, k).transpose();
        (lead(&self.first) - lead(&self.second)).norm()
    }

    pub fn joints(&self) -> Result<(JointCovariance, JointCovariance)> {
        Ok((build_joint(&self.first)?, build_joint(&self.second)?))
    }
}

/// KL divergence between `n`-sample distributions of the two lower-bound models.
pub fn kl_closed_form(model: &LowerBoundModel, n: usize) -> Result<f64> {
    let dev = model.matched_product_deviation();
    if dev > MATCHED_PRODUCT_TOL {
        return Err(Error::MatchedProductViolated { deviation: dev });
    }
    let (l1, l2) = (model.lambda1, model.lambda2);
    if !(0.0 <= l2 && l2 <= l1 && l1 < 1.0) {
        return Err(Error::InvalidParams(format!("need 0 <= λ2 <= λ1 < 1, got {l1}, {l2}")));
    }
    let delta = l1 - l2;
    let coef = n as f64 * delta * delta * (1.0 + l1 * l2) / (2.0 * (1.0 - l1 * l1) * (1.0 - l2 * l2));
    Ok(coef * model.leading_product_distance().powi(2))
}

fn cholesky_logdet(l: &Matrix) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `n · KL(N(0, Σ₁) ‖ N(0, Σ₂))` via Cholesky factors.
pub fn gaussian_kl(sigma1: &JointCovariance, sigma2: &JointCovariance, n: usize) -> Result<f64> {
    gaussian_kl_full(&sigma1.full(), &sigma2.full(), n)
}

pub fn gaussian_kl_full(s1: &Matrix, s2: &Matrix, n: usize) -> Result<f64> {
    if s1.shape() != s2.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", s1.shape(), s2.shape())));
    }
    let singular = |_| Error::Singular("covariance is not positive definite".into());
    let l1 = linalg::cholesky(s1).map_err(singular)?;
    let l2 = linalg::cholesky(s2).map_err(singular)?;
    // tr(Σ₂⁻¹Σ₁) = ‖L₂⁻¹L₁‖_F²
    let m = l2
        .solve_lower_triangular(&l1)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let d = s1.nrows() as f64;
    let trace = m.norm_squared();
    let logdet = cholesky_logdet(&l1) - cholesky_logdet(&l2);
    Ok(0.5 * n as f64 * (trace - d - logdet))
}

/// Outcome of a randomized bound audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub name: String,
    pub trials: usize,
    pub max_ratio: f64,
    pub violations: usize,
    pub reference_values: BTreeMap<String, f64>,
}

impl AuditReport {
    fn new(name: &str, trials: usize) -> Self {
        Self {
            name: name.to_string(),
            trials,
            max_ratio: 0.0,
            violations: 0,
            reference_values: BTreeMap::new(),
        }
    }
}

const HADAMARD_SLACK: f64 = 1e-9;

/// Bounds on the Hadamard operator norms of the three structured matrices.
pub fn hadamard_bounds(delta: f64) -> [f64; 3] {
    [1.0 / (2.0 * delta), 0.5, 1.5]
}

/// `[1/(αᵢ+βⱼ)]`, `[min/(αᵢ+βⱼ)]`, `[max/(αᵢ+βⱼ)]`.
pub fn hadamard_matrices(alpha: &[f64], beta: &[f64]) -> [Matrix; 3] {
    let (m, n) = (alpha.len(), beta.len());
    [
        Matrix::from_fn(m, n, |i, j| 1.0 / (alpha[i] + beta[j])),
        Matrix::from_fn(m, n, |i, j| alpha[i].min(beta[j]) / (alpha[i] + beta[j])),
        Matrix::from_fn(m, n, |i, j| alpha[i].max(beta[j]) / (alpha[i] + beta[j])),
    ]
}

/// Checks `‖A_m ∘ B‖ <= bound_m` over `trials` random unit-norm Gaussian `B`.
///
/// `bound_scale` multiplies the three bounds before checking; it exists so the
/// failure path can be exercised and is `[1.0; 3]` in normal use.
pub fn hadamard_bound_check(
    alpha: &[f64],
    beta: &[f64],
    trials: usize,
    seed: u64,
    bound_scale: [f64; 3],
) -> Result<[AuditReport; 3]> {
    if alpha.is_empty() || beta.is_empty() {
        return Err(Error::InvalidShape("alpha and beta must be non-empty".into()));
    }
    if alpha.iter().chain(beta).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveEntries);
    }
    let delta = alpha.iter().chain(beta).cloned().fold(f64::INFINITY, f64::min);
    let mats = hadamard_matrices(alpha, beta);
    let bounds = hadamard_bounds(delta);
    let norms: Vec<[f64; 3]> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng_at(seed, &[t as u64]);
            let b = Matrix::from_fn(alpha.len(), beta.len(), |_, _| StandardNormal.sample(&mut rng));
            let b = &b / linalg::operator_norm(&b).expect("finite");
            let mut out = [0.0; 3];
            for (o, a) in out.iter_mut().zip(&mats) {
                *o = linalg::operator_norm(&a.component_mul(&b)).expect("finite");
            }
            out
        })
        .collect();
    let names = ["hadamard_a1", "hadamard_a2", "hadamard_a3"];
    Ok(std::array::from_fn(|m| {
        let bound = bounds[m] * bound_scale[m];
        let mut report = AuditReport::new(names[m], trials);
        for v in &norms {
            report.max_ratio = report.max_ratio.max(v[m] / bound);
            if v[m] > bound + HADAMARD_SLACK {
                report.violations += 1;
            }
        }
        report.reference_values.insert("bound".into(), bound);
        report.reference_values.insert("delta".into(), delta);
        report
    }))
}

/// Result of one Wedin-type comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedinReport {
    pub projector_distance: f64,
    pub bound: f64,
    pub gap: f64,
    pub perturbation_norm: f64,
    pub violated: bool,
    /// Within 5% of the bound without exceeding it.
    pub near_violation: bool,
}

/// Compares `‖P_{U₁:k}(A) − P_{U₁:k}(A+E)‖` with `2‖E‖/(σ_k − σ_{k+1})`.
pub fn wedin_check(a: &Matrix, e: &Matrix, k: usize, tol: f64) -> Result<WedinReport> {
    if a.shape() != e.shape() {
        return Err(Error::DimensionMismatch("A and E".into()));
    }
    let r = a.nrows().min(a.ncols());
    if k == 0 || k > r {
        return Err(Error::RankTooLarge { k, max: r });
    }
    let sa = linalg::svd(a)?;
    let sigma_k = sa.singulars[k - 1];
    let sigma_k1 = if k < r { sa.singulars[k] } else { 0.0 };
    let gap = sigma_k - sigma_k1;
    if gap <= 0.0 {
        return Err(Error::DegenerateGap { sigma_k, sigma_k1 });
    }
    let sp = linalg::svd(&(a + e))?;
    let u = sa.left.columns(0, k);
    let uh = sp.left.columns(0, k);
    let diff = u * u.transpose() - uh * uh.transpose();
    let lhs = linalg::operator_norm(&diff)?;
    let e_norm = linalg::operator_norm(e)?;
    let bound = 2.0 * e_norm / gap;
    let violated = lhs > bound + tol;
    Ok(WedinReport {
        projector_distance: lhs,
        bound,
        gap,
        perturbation_norm: e_norm,
        violated,
        near_violation: !violated && lhs > 0.95 * bound,
    })
}

/// Randomized Wedin audit: `A` with a singular gap of at least `min_gap`
/// at a random rank and `‖E‖ <= max_perturbation`.
pub fn wedin_audit(trials: usize, seed: u64, min_gap: f64, max_perturbation: f64) -> Result<AuditReport> {
    let results: Vec<WedinReport> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng_at(seed, &[t as u64]);
            let m = rng.random_range(2..=8);
            let n = rng.random_range(2..=8);
            let r = m.min(n);
            let k = rng.random_range(1..=r);
            let mut s: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..1.0)).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            for v in s.iter_mut().take(k) {
                *v += min_gap;
            }
            let left = random_orthonormal_frame(m, r, rng.random())?;
            let right = random_orthonormal_frame(n, r, rng.random())?;
            let a = left * Matrix::from_diagonal(&Vector::from_vec(s)) * right.transpose();
            let e = Matrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
            let scale = rng.random_range(0.0..=max_perturbation) / linalg::operator_norm(&e)?;
            wedin_check(&a, &(e * scale), k, 1e-12)
        })
        .collect::<Result<_>>()?;
    let mut report = AuditReport::new("wedin", trials);
    let mut near = 0usize;
    for w in &results {
        if w.bound > 0.0 {
            report.max_ratio = report.max_ratio.max(w.projector_distance / w.bound);
        }
        report.violations += usize::from(w.violated);
        near += usize::from(w.near_violation);
    }
    report.reference_values.insert("min_gap".into(), min_gap);
    report.reference_values.insert("max_perturbation".into(), max_perturbation);
    report.reference_values.insert("near_violations".into(), near as f64);
    Ok(report)
}

/// Mean and standard error of a Monte-Carlo quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub std_err: f64,
}

impl MeanSe {
    pub fn from_samples(values: &[f64]) -> Self {
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / m).sqrt(),
        }
    }

    /// `|mean − target| <= z · std_err`.
    pub fn agrees_with(&self, target: f64, z: f64) -> bool {
        (self.mean - target).abs() <= z * self.std_err
    }
}

/// Monte-Carlo moments of the linearized estimating-equation residuals in
/// standard form, with analytic references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BMatrixReport {
    pub n: usize,
    pub k: usize,
    pub replicates: usize,
    pub lambdas: Vec<f64>,
    pub b1_op_sq: MeanSe,
    pub b1_fro_sq: MeanSe,
    pub b2_op_sq: MeanSe,
    pub b2_fro_sq: MeanSe,
    pub b_op_sq: MeanSe,
    pub b_fro_sq: MeanSe,
    pub dinv_b_fro_sq: MeanSe,
    /// `(p1−k) Σ_{j≤k} (1−λⱼ²) / n`.
    pub b1_fro_sq_exact: f64,
    /// `(p2−k) Σ_{j≤k} (1−λⱼ²) / n`.
    pub b2_fro_sq_exact: f64,
    /// `Σ_{j≤k<i≤p1} (1−λⱼ²)(λᵢ²+λⱼ²−2λᵢ²λⱼ²) / n`.
    pub b_fro_sq_exact: f64,
    /// The same sum with each term divided by `(λ_k − λᵢ)²`.
    pub dinv_b_fro_sq_exact: f64,
    /// `2 (1−λ_k²)(1−λ_{k+1}²)(p1−k) k / (n Δ²)`.
    pub dinv_b_fro_sq_bound: f64,
    /// `(1−λ_k²) p1 / n`, the operator-norm scaling of `B₁`, `B₂`.
    pub b12_op_scaling: f64,
}

const STANDARD_FORM_TOL: f64 = 1e-10;

/// Extracts the canonical correlations of a standard-form model `(I, [Λ 0], I)`.
pub fn standard_form_lambdas(cov: &JointCovariance) -> Result<Vec<f64>> {
    let (p1, p2) = (cov.p1, cov.p2);
    if p1 > p2 {
        return Err(Error::InvalidModel("standard form requires p1 <= p2".into()));
    }
    let off = |m: &Matrix, target: &dyn Fn(usize, usize) -> f64| {
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                worst = worst.max((m[(i, j)] - target(i, j)).abs());
            }
        }
        worst
    };
    let eye = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let lambdas: Vec<f64> = (0..p1).map(|i| cov.sigma_xy[(i, i)]).collect();
    let diag = |i: usize, j: usize| if i == j { lambdas[i] } else { 0.0 };
    let worst = off(&cov.sigma_x, &eye).max(off(&cov.sigma_y, &eye)).max(off(&cov.sigma_xy, &diag));
    if worst > STANDARD_FORM_TOL {
        return Err(Error::InvalidModel(format!("not in standard form (deviation {worst:.3e})")));
    }
    for w in lambdas.windows(2) {
        if w[1] > w[0] {
            return Err(Error::InvalidModel("correlations not descending".into()));
        }
    }
    if lambdas.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
        return Err(Error::InvalidModel("correlations outside [0, 1]".into()));
    }
    Ok(lambdas)
}

pub fn b_matrix_diagnostics(
    cov: &JointCovariance,
    n: usize,
    k: usize,
    replicates: usize,
    seed: u64,
) -> Result<BMatrixReport> {
    let lambdas = standard_form_lambdas(cov)?;
    let (p1, p2) = (cov.p1, cov.p2);
    if k == 0 || k >= p1 {
        return Err(Error::InvalidParams(format!("k = {k} must satisfy 1 <= k < p1 = {p1}")));
    }
    if replicates < 2 || n == 0 {
        return Err(Error::InvalidParams("need n >= 1 and at least 2 replicates".into()));
    }
    let lk = lambdas[k - 1];
    let lk1 = lambdas[k];
    if lk <= lk1 {
        return Err(Error::InvalidModel("eigen-gap at k is zero".into()));
    }
    let factor = gaussian_factor(cov)?;
    let lam1 = Matrix::from_diagonal(&Vector::from_column_slice(&lambdas[..k]));
    let mut lam2 = Matrix::zeros(p1 - k, p2 - k);
    for i in 0..(p1 - k) {
        lam2[(i, i)] = lambdas[k + i];
    }
    let d_inv = Matrix::from_diagonal(&Vector::from_fn(p1 - k, |i, _| 1.0 / (lk - lambdas[k + i])));

    let samples: Vec<[f64; 7]> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<[f64; 7]> {
            let data = sample_with_factor(&factor, p1, n, seeds::derive(seed, &[r as u64]))?;
            let c = sample_covariances(&data, false)?;
            let sxy21 = c.sxy.view((k, 0), (p1 - k, k));
            let sx21 = c.sx.view((k, 0), (p1 - k, k));
            let syx21 = c.sxy.transpose().view((k, 0), (p2 - k, k)).into_owned();
            let sy21 = c.sy.view((k, 0), (p2 - k, k));
            let b1 = sxy21 - sx21 * &lam1;
            let b2 = &syx21 - sy21 * &lam1;
            let b = sxy21 * &lam1 + &lam2 * &syx21 - sx21 * &lam1 * &lam1 - &lam2 * sy21 * &lam1;
            let db = &d_inv * &b;
            Ok([
                linalg::operator_norm(&b1)?.powi(2),
                b1.norm_squared(),
                linalg::operator_norm(&b2)?.powi(2),
                b2.norm_squared(),
                linalg::operator_norm(&b)?.powi(2),
                b.norm_squared(),
                db.norm_squared(),
            ])
        })
        .collect::<Result<_>>()?;
    let column = |i: usize| MeanSe::from_samples(&samples.iter().map(|s| s[i]).collect::<Vec<_>>());

    let nf = n as f64;
    let head: f64 = lambdas[..k].iter().map(|l| 1.0 - l * l).sum();
    let mut b_exact = 0.0;
    let mut db_exact = 0.0;
    for &lj in &lambdas[..k] {
        for &li in &lambdas[k..] {
            let term = (1.0 - lj * lj) * (li * li + lj * lj - 2.0 * li * li * lj * lj) / nf;
            b_exact += term;
            db_exact += term / (lk - li).powi(2);
        }
    }
    let delta = lk - lk1;
    Ok(BMatrixReport {
        n,
        k,
        replicates,
        lambdas,
        b1_op_sq: column(0),
        b1_fro_sq: column(1),
        b2_op_sq: column(2),
        b2_fro_sq: column(3),
        b_op_sq: column(4),
        b_fro_sq: column(5),
        dinv_b_fro_sq: column(6),
        b1_fro_sq_exact: (p1 - k) as f64 * head / nf,
        b2_fro_sq_exact: (p2 - k) as f64 * head / nf,
        b_fro_sq_exact: b_exact,
        dinv_b_fro_sq_exact: db_exact,
        dinv_b_fro_sq_bound: 2.0 * (1.0 - lk * lk) * (1.0 - lk1 * lk1) * ((p1 - k) * k) as f64 / (nf * delta * delta),
        b12_op_scaling: (1.0 - lk * lk) * p1 as f64 / nf,
    })
}

/// `kl_closed_form` against `gaussian_kl` on random lower-bound models with
/// `p1 <= 6`, `p2 <= 8`; a discrepancy above `1e-8` is a violation.
pub fn kl_audit(trials: usize, seed: u64) -> Result<AuditReport> {
    let gaps: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng_at(seed, &[t as u64]);
            let p1 = rng.random_range(2..=6);
            let p2 = rng.random_range(p1..=8);
            let k = rng.random_range(1..p1);
            let lambda1 = rng.random_range(0.05..0.95);
            let lambda2 = rng.random_range(0.0..lambda1);
            let n = rng.random_range(1..=5);
            let model = LowerBoundModel::random(
                p1,
                p2,
                k,
                lambda1,
                lambda2,
                crate::model::random_pd(p1, rng.random()),
                crate::model::random_pd(p2, rng.random()),
                rng.random(),
            )?;
            let (a, b) = model.joints()?;
            Ok((kl_closed_form(&model, n)? - gaussian_kl(&a, &b, n)?).abs())
        })
        .collect::<Result<_>>()?;
    let mut report = AuditReport::new("kl", trials);
    report.max_ratio = gaps.iter().cloned().fold(0.0, f64::max) / KL_TOL;
    report.violations = gaps.iter().filter(|&&g| g > KL_TOL).count();
    report.reference_values.insert("tolerance".into(), KL_TOL);
    Ok(report)
}

pub const KL_TOL: f64 = 1e-8;

/// Hadamard audit over random positive vectors of length at most `max_dim`
/// with entries at least `delta`, one fresh `(α, β, B)` per trial.
pub fn hadamard_audit(trials: usize, seed: u64, max_dim: usize, delta: f64, bound_scale: [f64; 3]) -> Result<[AuditReport; 3]> {
    if max_dim == 0 || !(delta > 0.0) {
        return Err(Error::InvalidParams("need max_dim >= 1 and delta > 0".into()));
    }
    let per_trial: Vec<[AuditReport; 3]> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng_at(seed, &[t as u64]);
            let m = rng.random_range(1..=max_dim);
            let n = rng.random_range(1..=max_dim);
            // log-uniform entries over four decades above delta
            let mut draw = |len| -> Vec<f64> { (0..len).map(|_| delta * 10f64.powf(rng.random_range(0.0..4.0))).collect() };
            let mut alpha = draw(m);
            let beta = draw(n);
            // pin the minimum so the A₁ bound is exercised at its scale
            alpha[0] = delta;
            hadamard_bound_check(&alpha, &beta, 1, rng.random(), bound_scale)
        })
        .collect::<Result<_>>()?;
    Ok(std::array::from_fn(|i| {
        let mut report = AuditReport::new(&per_trial.first().map_or(String::new(), |r| r[i].name.clone()), trials);
        for r in &per_trial {
            report.max_ratio = report.max_ratio.max(r[i].max_ratio);
            report.violations += r[i].violations;
        }
        report.reference_values.insert("delta".into(), delta);
        report.reference_values.insert("max_dim".into(), max_dim as f64);
        report.reference_values.insert("bound_scale".into(), bound_scale[i]);
        report
    }))
}

pub const IDENTITY_TOL: f64 = 1e-10;

/// Checks `l1 = ‖ΔP‖²`, `l2 = ‖ΔP‖_F²/2` and `l1 <= l2 <= k l1` on random
/// reducers under random covariances.
pub fn metric_identity_audit(trials: usize, seed: u64) -> Result<AuditReport> {
    let gaps: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng_at(seed, &[t as u64]);
            let p = rng.random_range(2..=10);
            let k = rng.random_range(1..p);
            let mut gauss = |r, c| Matrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
            let u1 = gauss(p, k);
            let u2 = gauss(p, k);
            let sigma_x = crate::model::random_pd(p, rng.random());
            let d = crate::losses::principal_angles(&u1, &u2, &sigma_x)?;
            let order = (d.l1 - d.l2).max(d.l2 - k as f64 * d.l1).max(0.0);
            Ok((d.l1 - d.op_dist.powi(2))
                .abs()
                .max((d.l2 - d.fro_dist.powi(2) / 2.0).abs())
                .max(order))
        })
        .collect::<Result<_>>()?;
    let mut report = AuditReport::new("metric_identities", trials);
    report.max_ratio = gaps.iter().cloned().fold(0.0, f64::max) / IDENTITY_TOL;
    report.violations = gaps.iter().filter(|&&g| g > IDENTITY_TOL).count();
    report.reference_values.insert("tolerance".into(), IDENTITY_TOL);
    Ok(report)
}

/// B-matrix moment checks as an audit: `E‖D̃⁻¹B‖_F²` above its bound, or
/// `E‖B₁‖_F²`, `E‖B‖_F²` further than 3 SE from their exact values, count as
/// violations.
pub fn b_matrix_audit(cov: &JointCovariance, n: usize, k: usize, replicates: usize, seed: u64) -> Result<(AuditReport, BMatrixReport)> {
    let r = b_matrix_diagnostics(cov, n, k, replicates, seed)?;
    let mut report = AuditReport::new("bmatrix", replicates);
    report.max_ratio = r.dinv_b_fro_sq.mean / r.dinv_b_fro_sq_bound;
    report.violations = usize::from(r.dinv_b_fro_sq.mean > r.dinv_b_fro_sq_bound)
        + usize::from(!r.b1_fro_sq.agrees_with(r.b1_fro_sq_exact, 3.0))
        + usize::from(!r.b_fro_sq.agrees_with(r.b_fro_sq_exact, 3.0));
    for (name, v) in [
        ("dinv_b_fro_sq_bound", r.dinv_b_fro_sq_bound),
        ("dinv_b_fro_sq_mean", r.dinv_b_fro_sq.mean),
        ("b1_fro_sq_exact", r.b1_fro_sq_exact),
        ("b1_fro_sq_mean", r.b1_fro_sq.mean),
        ("b_fro_sq_exact", r.b_fro_sq_exact),
        ("b_fro_sq_mean", r.b_fro_sq.mean),
    ] {
        report.reference_values.insert(name.into(), v);
    }
    Ok((report, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_pd;

    fn params(p1: usize, n: usize, lk: f64, lk1: f64) -> RateParams {
        RateParams::new(p1, p1 + 2, n, 2, lk, lk1).unwrap()
    }

    #[test]
    fn upper_rate_arithmetic() {
        let r = upper_rate(&params(10, 1000, 0.9, 0.3), NormKind::Operator).unwrap();
        assert!((r.principal - 0.19 * 0.91 / 0.36 * 0.01).abs() < 1e-15);
        assert!((r.principal - 4.8028e-3).abs() < 1e-7);
        let zero = params(10, 1000, 0.7, 0.0);
        let r = upper_rate(&zero, NormKind::Operator).unwrap();
        assert!((r.principal - (1.0 - 0.49) / 0.49 * 0.01).abs() < 1e-15);
        let near = params(10, 500, 1.0 - 0.01, 0.985);
        let r = upper_rate(&near, NormKind::Operator).unwrap();
        let scaled = r.principal * near.delta().powi(2) / ((1.0 - near.lambda_k.powi(2)) * (1.0 - near.lambda_k1.powi(2)));
        assert!((scaled - 10.0 / 500.0).abs() < 1e-14);
        let hi = upper_rate(&params(10, 1000, 0.9, 0.3), NormKind::Frobenius).unwrap();
        assert!((hi.high_order - (22.0f64 / (1000.0 * 0.36)).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn lower_rate_saturation() {
        let tiny = params(10, 1, 0.5, 0.4);
        assert_eq!(lower_rate(&tiny).unwrap(), 1.0);
        let p = RateParams::new(6, 8, 1, 5, 0.5, 0.4).unwrap();
        assert!((lower_rate(&p).unwrap() - 0.2).abs() < 1e-15);
        let big = params(10, 1_000_000, 0.9, 0.3);
        let fro = upper_rate(&big, NormKind::Frobenius).unwrap().principal;
        assert!((lower_rate(&big).unwrap() - fro).abs() < 1e-18);
    }

    #[test]
    fn sample_size_condition_scaling() {
        let p = RateParams::new(4, 8, 1000, 1, 0.8, 0.2).unwrap();
        let base = sample_size_condition(&p).unwrap();
        let halved = sample_size_condition(&p.with_n(500)).unwrap();
        assert!((halved / base - 2.0).abs() < 1e-12);
        let big = |p2| sample_size_condition(&RateParams::new(4, p2, 1000, 1, 0.8, 0.2).unwrap()).unwrap();
        // (p1+p2)(1+p2/p1) is quadratic once p2 dominates
        let (a, b) = (big(4000), big(8000));
        assert!((b / a - 4.0).abs() < 5e-3);
        let at_equality = RateParams::new(2, 2, 1, 1, 0.5, 0.0).unwrap();
        let v = sample_size_condition(&at_equality).unwrap();
        let n_eq = (v.ceil()) as usize;
        assert!(sample_size_condition(&at_equality.with_n(n_eq)).unwrap() <= 1.0);
    }

    #[test]
    fn invalid_params() {
        assert!(RateParams::new(4, 4, 10, 0, 0.5, 0.1).is_err());
        assert!(RateParams::new(4, 4, 10, 4, 0.5, 0.1).is_err());
        assert!(RateParams::new(4, 4, 10, 1, 0.5, 0.5).is_err());
        assert!(RateParams::new(4, 4, 0, 1, 0.5, 0.1).is_err());
    }

    #[test]
    fn kl_trivial_cases() {
        let sx = random_pd(3, 1);
        let sy = random_pd(4, 2);
        let id = Matrix::identity(3, 3);
        let same = LowerBoundModel::with_rotation(3, 4, 1, 0.7, 0.2, sx.clone(), sy.clone(), &id, 5).unwrap();
        assert_eq!(kl_closed_form(&same, 10).unwrap(), 0.0);
        let flat = LowerBoundModel::random(3, 4, 1, 0.4, 0.4, sx, sy, 6).unwrap();
        assert_eq!(kl_closed_form(&flat, 10).unwrap(), 0.0);
        let (a, b) = flat.joints().unwrap();
        assert!(gaussian_kl(&a, &b, 10).unwrap().abs() < 1e-10);
    }

    #[test]
    fn kl_scalar_case() {
        let s1 = Matrix::from_element(1, 1, 2.0);
        let s2 = Matrix::from_element(1, 1, 1.0);
        let v = gaussian_kl_full(&s1, &s2, 2).unwrap();
        assert!((v - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.30685).abs() < 1e-5);
        assert!(gaussian_kl_full(&s1, &Matrix::identity(2, 2), 1).is_err());
        assert!(matches!(
            gaussian_kl_full(&s1, &Matrix::zeros(1, 1), 1),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn kl_closed_form_matches_gaussian() {
        let model = LowerBoundModel::random(4, 5, 2, 0.8, 0.2, random_pd(4, 3), random_pd(5, 4), 7).unwrap();
        let (a, b) = model.joints().unwrap();
        let generic = gaussian_kl(&a, &b, 3).unwrap();
        let closed = kl_closed_form(&model, 3).unwrap();
        assert!((generic - closed).abs() < 1e-8 * generic.max(1.0), "{generic} vs {closed}");
    }

    #[test]
    fn matched_product_violation_is_detected() {
        let mut model = LowerBoundModel::random(3, 3, 1, 0.6, 0.1, Matrix::identity(3, 3), Matrix::identity(3, 3), 8).unwrap();
        model.second.frame_v = random_orthonormal_frame(3, 3, 99).unwrap();
        assert!(matches!(kl_closed_form(&model, 1), Err(Error::MatchedProductViolated { .. })));
    }

    #[test]
    fn hadamard_constant_case() {
        let ones = vec![1.0; 4];
        let [a1, a2, a3] = hadamard_bound_check(&ones, &ones, 50, 1, [1.0; 3]).unwrap();
        assert!((a1.max_ratio - 1.0).abs() < 1e-12);
        assert!((a2.max_ratio - 1.0).abs() < 1e-12);
        assert!((a3.max_ratio - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a1.violations + a2.violations + a3.violations, 0);
        assert_eq!(hadamard_bound_check(&[1.0, 0.0], &ones, 1, 1, [1.0; 3]).unwrap_err(), Error::NonPositiveEntries);
    }

    #[test]
    fn hadamard_cauchy_vectors() {
        let alpha: Vec<f64> = (0..12).map(|i| 0.1 + 0.05 * i as f64).collect();
        let beta: Vec<f64> = (0..9).map(|i| 0.1 * (1.3f64).powi(i)).collect();
        let reports = hadamard_bound_check(&alpha, &beta, 2000, 2, [1.0; 3]).unwrap();
        for r in &reports {
            assert_eq!(r.violations, 0, "{r:?}");
            assert!(r.max_ratio <= 1.0);
        }
        let broken = hadamard_bound_check(&alpha, &beta, 200, 2, [1.0, 0.4, 1.0]).unwrap();
        assert!(broken[1].violations > 0);
    }

    #[test]
    fn wedin_cases() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 1.0]));
        let r = wedin_check(&a, &Matrix::zeros(2, 2), 1, 0.0).unwrap();
        assert!(r.projector_distance < 1e-15 && !r.violated);
        let e = Matrix::from_diagonal(&Vector::from_vec(vec![0.0, 0.1]));
        let r = wedin_check(&a, &e, 1, 0.0).unwrap();
        assert!(r.projector_distance < 1e-15 && !r.violated);
        assert!(matches!(
            wedin_check(&Matrix::identity(2, 2), &e, 1, 0.0),
            Err(Error::DegenerateGap { .. })
        ));
        let audit = wedin_audit(300, 3, 0.5, 0.1).unwrap();
        assert_eq!(audit.violations, 0);
    }

    #[test]
    fn b_matrices_vanish_at_unit_correlation() {
        let spec = CanonicalSpec::standard(4, 4, vec![1.0, 0.5, 0.2, 0.0], Some(1)).unwrap();
        let cov = build_joint(&spec).unwrap();
        let r = b_matrix_diagnostics(&cov, 200, 1, 10, 4).unwrap();
        assert!(r.b1_fro_sq.mean < 1e-24, "{}", r.b1_fro_sq.mean);
        assert_eq!(r.b1_fro_sq_exact, 0.0);
    }

    #[test]
    fn b_matrix_moments() {
        let spec = CanonicalSpec::standard(5, 6, vec![0.9, 0.7, 0.3, 0.1, 0.0], Some(2)).unwrap();
        let cov = build_joint(&spec).unwrap();
        let r = b_matrix_diagnostics(&cov, 500, 2, 400, 7).unwrap();
        assert!(r.b1_fro_sq.agrees_with(r.b1_fro_sq_exact, 4.0), "{:?} vs {}", r.b1_fro_sq, r.b1_fro_sq_exact);
        assert!(r.b2_fro_sq.agrees_with(r.b2_fro_sq_exact, 4.0));
        assert!(r.b_fro_sq.agrees_with(r.b_fro_sq_exact, 4.0));
        assert!(r.dinv_b_fro_sq.agrees_with(r.dinv_b_fro_sq_exact, 4.0));
        assert!(r.dinv_b_fro_sq_exact <= r.dinv_b_fro_sq_bound);
    }

    #[test]
    fn b_matrix_rejects_general_models() {
        let spec = crate::model::random_spec(3, 3, vec![0.5, 0.2, 0.1], Some(1), 1).unwrap();
        let cov = build_joint(&spec).unwrap();
        assert!(matches!(b_matrix_diagnostics(&cov, 10, 1, 2, 1), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn audits_are_clean() {
        let kl = kl_audit(20, 1).unwrap();
        assert_eq!(kl.violations, 0, "{kl:?}");
        for r in hadamard_audit(300, 2, 12, 0.1, [1.0; 3]).unwrap() {
            assert_eq!(r.violations, 0, "{r:?}");
        }
        let ids = metric_identity_audit(200, 3).unwrap();
        assert_eq!(ids.violations, 0, "{ids:?}");
    }
}
