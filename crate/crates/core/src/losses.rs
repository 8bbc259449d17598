//! Principal angles between variate subspaces and the prediction losses they control.
//!
//! For reducers `U1`, `U2` (both `p x k`) the variate spaces `span(x^T U)` are
//! compared in the covariance inner product, i.e. through the column spaces
//! of `Σx^{1/2} U`. The cosines of the principal angles are the singular
//! values of `B1^T B2`, where `B1`, `B2` are orthonormal bases of those spaces.

use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{population_cca, JointCovariance};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceDistance {
    /// Principal angles, descending, in `[0, π/2]`.
    pub angles: Vec<f64>,
    /// `sin²θ₁`.
    pub l1: f64,
    /// `Σ sin²θᵢ`.
    pub l2: f64,
    /// `‖P₁ − P₂‖`.
    pub op_dist: f64,
    /// `‖P₁ − P₂‖_F`.
    pub fro_dist: f64,
}

impl SubspaceDistance {
    pub fn k(&self) -> usize {
        self.angles.len()
    }

    /// Squared Frobenius projector distance, `2 · l2`.
    pub fn fro_sq(&self) -> f64 {
        2.0 * self.l2
    }
}

fn whitened_basis(u: &Matrix, sigma_half: &Matrix) -> Result<Matrix> {
    linalg::orthonormal_basis(&(sigma_half * u))
}

pub fn principal_angles(u1: &Matrix, u2: &Matrix, sigma_x: &Matrix) -> Result<SubspaceDistance> {
    let half = sigma_half(u1, u2, sigma_x)?;
    let b1 = whitened_basis(u1, &half)?;
    let b2 = whitened_basis(u2, &half)?;
    Ok(distance_from_bases(&b1, &b2))
}

fn sigma_half(u1: &Matrix, u2: &Matrix, sigma_x: &Matrix) -> Result<Matrix> {
    let p = sigma_x.nrows();
    if u1.shape() != u2.shape() || u1.nrows() != p || sigma_x.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "u1 {:?}, u2 {:?}, sigma_x {:?}",
            u1.shape(),
            u2.shape(),
            sigma_x.shape()
        )));
    }
    Ok(linalg::sqrt_and_inv_sqrt(sigma_x)?.0)
}

/// Distance between the spans of two orthonormal bases.
pub fn distance_from_bases(b1: &Matrix, b2: &Matrix) -> SubspaceDistance {
    let k = b1.ncols();
    let cosines = linalg::svd(&(b1.transpose() * b2)).expect("finite orthonormal bases").singulars;
    // sines from the complement stay accurate for nearly equal subspaces
    let residual = b2 - b1 * (b1.transpose() * b2);
    let sines = linalg::svd(&residual).expect("finite orthonormal bases").singulars;
    let mut angles = Vec::with_capacity(k);
    let mut sines_sq = Vec::with_capacity(k);
    // descending sines pair with ascending cosines
    for (i, &c) in cosines.iter().rev().enumerate() {
        let s = sines.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0);
        let c = c.clamp(0.0, 1.0);
        let s2 = if s < c { s * s } else { (1.0 - c) * (1.0 + c) };
        sines_sq.push(s2);
        angles.push(s.atan2(c));
    }
    let diff = b1 * b1.transpose() - b2 * b2.transpose();
    let op_dist = linalg::operator_norm(&diff).expect("finite projector difference");
    SubspaceDistance {
        l1: sines_sq.first().copied().unwrap_or(0.0),
        l2: sines_sq.iter().sum(),
        angles,
        op_dist,
        fro_dist: diff.norm(),
    }
}

/// Response model parametrized by its whitened correlation vector:
/// `Σxz = Σx^{1/2} r σz`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSetup {
    pub sigma_x: Matrix,
    pub r_xz: Vector,
    pub sigma_z: f64,
    pub big_r2: f64,
}

impl PredictionSetup {
    pub fn new(sigma_x: Matrix, r_xz: Vector, sigma_z: f64) -> Result<Self> {
        if sigma_x.nrows() != r_xz.len() {
            return Err(Error::DimensionMismatch("sigma_x and r_xz".into()));
        }
        if !(sigma_z > 0.0 && sigma_z.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma_z = {sigma_z} must be positive")));
        }
        let big_r2 = r_xz.norm_squared();
        if big_r2 > 1.0 + 1e-10 {
            return Err(Error::InvalidParams(format!("|r_xz|² = {big_r2} exceeds 1")));
        }
        linalg::cholesky(&sigma_x)?;
        Ok(Self {
            sigma_x,
            r_xz,
            sigma_z,
            big_r2,
        })
    }

    /// Builds the setup from covariances: `r = Σx^{-1/2} Σxz / σz`.
    pub fn from_covariances(sigma_x: Matrix, sigma_xz: &Vector, sigma_z2: f64) -> Result<Self> {
        let (_, inv_half) = linalg::sqrt_and_inv_sqrt(&sigma_x)?;
        let sigma_z = sigma_z2.sqrt();
        let r = inv_half * sigma_xz / sigma_z;
        Self::new(sigma_x, r, sigma_z)
    }

    pub fn sigma_xz(&self) -> Result<Vector> {
        Ok(linalg::psd_sqrt(&self.sigma_x)? * &self.r_xz * self.sigma_z)
    }

    /// Least-squares loss of predicting `z` from `span(x^T U)`.
    pub fn loss(&self, u: &Matrix) -> Result<f64> {
        let half = linalg::psd_sqrt(&self.sigma_x)?;
        let p = linalg::projector(&(half * u))?;
        Ok(self.sigma_z.powi(2) * (1.0 - (self.r_xz.transpose() * p * &self.r_xz)[(0, 0)]))
    }
}

/// `loss(z | span(x^T U)) − loss(z | span(x^T U⋆))`; negative when `U` explains more.
pub fn excess_prediction_loss(setup: &PredictionSetup, u: &Matrix, u_star: &Matrix) -> Result<f64> {
    // the two reducers may have different widths
    let p = setup.sigma_x.nrows();
    if u.nrows() != p || u_star.nrows() != p {
        return Err(Error::DimensionMismatch("reducers and sigma_x".into()));
    }
    let half = linalg::psd_sqrt(&setup.sigma_x)?;
    let p = linalg::projector(&(&half * u))?;
    let p_star = linalg::projector(&(&half * u_star))?;
    let r = &setup.r_xz;
    Ok(setup.sigma_z.powi(2) * (r.transpose() * (p_star - p) * r)[(0, 0)])
}

/// Worst-case excess loss over correlation vectors of squared norm `R²`.
///
/// With `oracle = true` the supremum is restricted to vectors fully explained
/// by `U⋆` and equals `σz² R² sin²θ₁`; otherwise it is `σz² R² ‖P − P⋆‖`.
pub fn worst_case_excess(
    big_r2: f64,
    sigma_z: f64,
    u: &Matrix,
    u_star: &Matrix,
    sigma_x: &Matrix,
    oracle: bool,
) -> Result<f64> {
    check_r2(big_r2, sigma_z)?;
    let d = principal_angles(u, u_star, sigma_x)?;
    let scale = sigma_z * sigma_z * big_r2;
    Ok(if oracle { scale * d.l1 } else { scale * d.op_dist })
}

fn check_r2(big_r2: f64, sigma_z: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&big_r2) {
        return Err(Error::InvalidParams(format!("R² = {big_r2} outside [0, 1]")));
    }
    if !(sigma_z > 0.0 && sigma_z.is_finite()) {
        return Err(Error::InvalidParams(format!("sigma_z = {sigma_z} must be positive")));
    }
    Ok(())
}

/// The correlation vector attaining the oracle worst case: `R` times the
/// direction in `col(Σx^{1/2} U⋆)` least explained by `U`.
pub fn worst_case_direction(big_r2: f64, u: &Matrix, u_star: &Matrix, sigma_x: &Matrix) -> Result<Vector> {
    let half = sigma_half(u, u_star, sigma_x)?;
    let q = whitened_basis(u_star, &half)?;
    let p = linalg::projector(&(&half * u))?;
    let m = q.transpose() * (Matrix::identity(p.nrows(), p.nrows()) - p) * &q;
    let eig = linalg::sym_eig(&linalg::symmetrize(&m))?;
    Ok(q * eig.vectors.column(0) * big_r2.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesExcess {
    /// `σz² R² ‖P − P⋆‖_F² / (2k)`.
    pub analytic: f64,
    pub monte_carlo: f64,
    pub std_err: f64,
    pub trials: usize,
}

const MC_CHUNK: usize = 4096;

/// Average excess loss with `r` uniform on the sphere of radius `R` inside
/// `col(Σx^{1/2} U⋆)`, analytically and by Monte Carlo.
pub fn bayes_excess(
    big_r2: f64,
    sigma_z: f64,
    u: &Matrix,
    u_star: &Matrix,
    sigma_x: &Matrix,
    mc_trials: usize,
    seed: u64,
) -> Result<BayesExcess> {
    check_r2(big_r2, sigma_z)?;
    if mc_trials == 0 {
        return Err(Error::InvalidParams("mc_trials must be >= 1".into()));
    }
    let half = sigma_half(u, u_star, sigma_x)?;
    let b = whitened_basis(u, &half)?;
    let q = whitened_basis(u_star, &half)?;
    let d = distance_from_bases(&b, &q);
    let k = u.ncols();
    let scale = sigma_z * sigma_z * big_r2;
    let analytic = scale * d.fro_dist.powi(2) / (2.0 * k as f64);

    // r^T (P⋆ − P) r = R² ĝ^T (I − Q^T P Q) ĝ for r = R Q ĝ
    let qb = q.transpose() * &b;
    let m = Matrix::identity(k, k) - &qb * qb.transpose();
    let chunks = mc_trials.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeds::rng_at(seed, &[c as u64]);
            let count = MC_CHUNK.min(mc_trials - c * MC_CHUNK);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                let g = Vector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
                let g = &g / g.norm();
                let v = scale * (g.transpose() * &m * &g)[(0, 0)];
                sum += v;
                sum_sq += v * v;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partial.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = mc_trials as f64;
    let mean = sum / n;
    let var = if mc_trials > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(BayesExcess {
        analytic,
        monte_carlo: mean,
        std_err: (var / n).sqrt(),
        trials: mc_trials,
    })
}

/// Noise levels of the two-view latent model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub view1: f64,
    pub view2: f64,
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSufficiency {
    /// `loss(z | x)`.
    pub full_loss: f64,
    /// `loss(z | span(x^T Φ_{1:k}))`.
    pub reduced_loss: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiviewReport {
    pub latent_dim: usize,
    pub p1: usize,
    pub p2: usize,
    pub sigma_z2: f64,
    pub canonical_correlations: Vec<f64>,
    pub view1: ViewSufficiency,
    pub view2: ViewSufficiency,
}

/// Population check that the top-`k` CCA variates of each view keep all the
/// linear predictive power of that view.
///
/// The model is `h ~ N(0, I_k)`, `x1 = A1 h + ε1`, `x2 = A2 h + ε2`,
/// `z = w^T h + εz` with independent isotropic Gaussian noises and loading
/// matrices `A1`, `A2` drawn from `seed`. The views are conditionally
/// independent given `h`, and `E[z | h]` depends on `h` only.
pub fn multiview_sufficiency_demo(
    latent_dim: usize,
    view_dims: (usize, usize),
    noise: NoiseScales,
    weight: &Vector,
    seed: u64,
) -> Result<MultiviewReport> {
    let k = latent_dim;
    let (p1, p2) = view_dims;
    if k == 0 || p1 < k || p2 < k || weight.len() != k {
        return Err(Error::InvalidShape(format!(
            "latent {k}, views ({p1}, {p2}), weight length {}",
            weight.len()
        )));
    }
    if [noise.view1, noise.view2, noise.response].iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidParams("noise scales must be finite and >= 0".into()));
    }
    let mut rng = seeds::rng(seed);
    let a1 = Matrix::from_fn(p1, k, |_, _| StandardNormal.sample(&mut rng));
    let a2 = Matrix::from_fn(p2, k, |_, _| StandardNormal.sample(&mut rng));
    let s11 = linalg::symmetrize(&(&a1 * a1.transpose() + Matrix::identity(p1, p1) * noise.view1.powi(2)));
    let s22 = linalg::symmetrize(&(&a2 * a2.transpose() + Matrix::identity(p2, p2) * noise.view2.powi(2)));
    let s12 = &a1 * a2.transpose();
    let sigma_z2 = weight.norm_squared() + noise.response.powi(2);
    if sigma_z2 <= 0.0 {
        return Err(Error::InvalidParams("response variance is zero".into()));
    }
    let cov = JointCovariance {
        p1,
        p2,
        sigma_x: s11,
        sigma_y: s22,
        sigma_xy: s12,
    };
    let cca = population_cca(&cov)?;
    let view1 = view_report(&cov.sigma_x, &(&a1 * weight), sigma_z2, &cca.phi_top(k))?;
    let view2 = view_report(&cov.sigma_y, &(&a2 * weight), sigma_z2, &cca.psi_top(k))?;
    Ok(MultiviewReport {
        latent_dim: k,
        p1,
        p2,
        sigma_z2,
        canonical_correlations: cca.lambdas,
        view1,
        view2,
    })
}

fn view_report(sigma: &Matrix, sigma_xz: &Vector, sigma_z2: f64, loadings: &Matrix) -> Result<ViewSufficiency> {
    let p = sigma.nrows();
    let setup = PredictionSetup::from_covariances(sigma.clone(), sigma_xz, sigma_z2)?;
    let full = Matrix::identity(p, p);
    let full_loss = setup.loss(&full)?;
    let reduced_loss = setup.loss(loadings)?;
    Ok(ViewSufficiency {
        full_loss,
        reduced_loss,
        gap: excess_prediction_loss(&setup, loadings, &full)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_orthonormal_frame, random_pd};
    use std::f64::consts::PI;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeds::rng(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identical_subspaces() {
        let u = random(5, 2, 1);
        let d = principal_angles(&u, &u, &random_pd(5, 2)).unwrap();
        assert!(d.angles.iter().all(|&a| a < 1e-7));
        assert!(d.l1 < 1e-14 && d.l2 < 1e-14);
    }

    #[test]
    fn planar_rotation() {
        let u1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let u2 = Matrix::from_column_slice(2, 1, &[(PI / 6.0).cos(), (PI / 6.0).sin()]);
        let d = principal_angles(&u1, &u2, &Matrix::identity(2, 2)).unwrap();
        assert!((d.angles[0] - PI / 6.0).abs() < 1e-14);
        assert!((d.l1 - 0.25).abs() < 1e-14);
    }

    #[test]
    fn l2_matches_projector_identity() {
        let sigma = random_pd(6, 3);
        let (u1, u2) = (random(6, 2, 4), random(6, 2, 5));
        let d = principal_angles(&u1, &u2, &sigma).unwrap();
        let half = linalg::psd_sqrt(&sigma).unwrap();
        let p1 = linalg::projector(&(&half * &u1)).unwrap();
        let p2 = linalg::projector(&(&half * &u2)).unwrap();
        assert!((d.l2 - 0.5 * (p1 - p2).norm_squared()).abs() < 1e-10);
        assert!(d.l1 <= d.l2 && d.l2 <= 2.0 * d.l1 + 1e-15);
        assert!(d.angles[0] >= d.angles[1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let u = random(4, 2, 1);
        assert!(matches!(
            principal_angles(&u, &random(4, 3, 2), &Matrix::identity(4, 4)),
            Err(Error::DimensionMismatch(_))
        ));
        let deficient = Matrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            principal_angles(&deficient, &u, &Matrix::identity(4, 4)),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn excess_loss_cases() {
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let setup = PredictionSetup::new(Matrix::identity(2, 2), Vector::from_vec(vec![0.6, 0.0]), 1.0).unwrap();
        assert!(excess_prediction_loss(&setup, &e1, &e1).unwrap().abs() < 1e-15);
        assert!((excess_prediction_loss(&setup, &e2, &e1).unwrap() - 0.36).abs() < 1e-14);
        assert!((excess_prediction_loss(&setup, &e1, &e2).unwrap() + 0.36).abs() < 1e-14);
    }

    #[test]
    fn excess_loss_matches_regression_formula() {
        let p = 5;
        let sigma = random_pd(p, 7);
        let r = Vector::from_vec(vec![0.3, -0.2, 0.1, 0.4, 0.05]);
        let setup = PredictionSetup::new(sigma.clone(), r, 1.7).unwrap();
        let sxz = setup.sigma_xz().unwrap();
        let regression = |u: &Matrix| -> f64 {
            let g = (u.transpose() * &sigma * u).try_inverse().unwrap();
            setup.sigma_z.powi(2) - (sxz.transpose() * u * g * u.transpose() * &sxz)[(0, 0)]
        };
        let (u, us) = (random(p, 2, 8), random(p, 3, 9));
        let expected = regression(&u) - regression(&us);
        assert!((excess_prediction_loss(&setup, &u, &us).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn worst_case_cases() {
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let id = Matrix::identity(2, 2);
        for oracle in [false, true] {
            assert!(worst_case_excess(1.0, 1.0, &e1, &e1, &id, oracle).unwrap().abs() < 1e-14);
            assert!((worst_case_excess(1.0, 1.0, &e2, &e1, &id, oracle).unwrap() - 1.0).abs() < 1e-14);
        }
        assert!(worst_case_excess(1.5, 1.0, &e2, &e1, &id, true).is_err());
    }

    #[test]
    fn oracle_worst_case_is_a_constrained_maximum() {
        let p = 5;
        let sigma = random_pd(p, 11);
        let (u, us) = (random(p, 2, 12), random(p, 2, 13));
        let (r2, sz) = (0.7, 1.3);
        let bound = worst_case_excess(r2, sz, &u, &us, &sigma, true).unwrap();
        let r_star = worst_case_direction(r2, &u, &us, &sigma).unwrap();
        let at_star = excess_prediction_loss(&PredictionSetup::new(sigma.clone(), r_star, sz).unwrap(), &u, &us).unwrap();
        assert!((at_star - bound).abs() < 1e-10 * bound.max(1.0));

        let half = linalg::psd_sqrt(&sigma).unwrap();
        let q = linalg::orthonormal_basis(&(&half * &us)).unwrap();
        let mut rng = seeds::rng(14);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..100_000 {
            let g = Vector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let r = &q * (&g / g.norm()) * r2.sqrt();
            let setup = PredictionSetup::new(sigma.clone(), r, sz).unwrap();
            best = best.max(excess_prediction_loss(&setup, &u, &us).unwrap());
        }
        assert!(best <= bound * (1.0 + 1e-10));
        assert!(best >= 0.99 * bound, "search max {best} vs bound {bound}");
    }

    #[test]
    fn bayes_cases() {
        let u = random(4, 2, 20);
        let b = bayes_excess(0.5, 1.0, &u, &u, &Matrix::identity(4, 4), 100, 1).unwrap();
        assert!(b.analytic.abs() < 1e-14 && b.monte_carlo.abs() < 1e-14);

        let sigma = random_pd(4, 21);
        let (v, vs) = (random(4, 1, 22), random(4, 1, 23));
        let b = bayes_excess(0.8, 1.2, &v, &vs, &sigma, 10, 2).unwrap();
        let w = worst_case_excess(0.8, 1.2, &v, &vs, &sigma, true).unwrap();
        assert!((b.analytic - w).abs() < 1e-12);
    }

    #[test]
    fn bayes_monte_carlo_agrees() {
        let sigma = random_pd(5, 31);
        let (u, us) = (random(5, 2, 32), random(5, 2, 33));
        let b = bayes_excess(0.9, 1.1, &u, &us, &sigma, 200_000, 34).unwrap();
        assert!((b.monte_carlo - b.analytic).abs() <= 4.0 * b.std_err, "{b:?}");
        let again = bayes_excess(0.9, 1.1, &u, &us, &sigma, 200_000, 34).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn multiview_noise_free_views() {
        let noise = NoiseScales {
            view1: 0.0,
            view2: 0.0,
            response: 0.5,
        };
        let w = Vector::from_vec(vec![1.0, -0.5]);
        let r = multiview_sufficiency_demo(2, (2, 2), noise, &w, 3).unwrap();
        assert!(r.view1.gap.abs() < 1e-8 && r.view2.gap.abs() < 1e-8);
    }

    #[test]
    fn multiview_symmetric_rank_one() {
        let noise = NoiseScales {
            view1: 0.7,
            view2: 0.7,
            response: 0.3,
        };
        let r = multiview_sufficiency_demo(1, (4, 4), noise, &Vector::from_vec(vec![1.3]), 5).unwrap();
        assert!(r.view1.gap.abs() <= 1e-8 && r.view2.gap.abs() <= 1e-8, "{r:?}");
        assert!(r.view1.full_loss < r.sigma_z2);
    }

    #[test]
    fn multiview_zero_weight() {
        let noise = NoiseScales {
            view1: 0.5,
            view2: 0.8,
            response: 0.6,
        };
        let r = multiview_sufficiency_demo(2, (4, 5), noise, &Vector::zeros(2), 9).unwrap();
        for v in [&r.view1, &r.view2] {
            assert!((v.full_loss - r.sigma_z2).abs() < 1e-12);
            assert!((v.reduced_loss - r.sigma_z2).abs() < 1e-12);
            assert!(v.gap.abs() < 1e-12);
        }
        assert!(matches!(
            multiview_sufficiency_demo(3, (2, 5), noise, &Vector::zeros(3), 1),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn haar_frames_feed_principal_angles() {
        let q = random_orthonormal_frame(6, 6, 40).unwrap();
        let d = principal_angles(&q.columns(0, 3).into_owned(), &q.columns(3, 3).into_owned(), &Matrix::identity(6, 6)).unwrap();
        assert!(d.angles.iter().all(|&a| (a - PI / 2.0).abs() < 1e-7));
        assert!((d.l2 - 3.0).abs() < 1e-12);
    }
}
