//! Joint Gaussian covariance models with prescribed canonical structure.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector, EPS_PD, TOL_PSD};
use crate::seeds;

/// Canonical correlations within this distance of 1 are flagged as perfect.
pub const UNIT_CORRELATION_TOL: f64 = 1e-10;
const FRAME_TOL: f64 = 1e-10;

/// Block covariance `[[Σx, Σxy], [Σxy^T, Σy]]` of a pair `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointCovariance {
    pub p1: usize,
    pub p2: usize,
    #[serde(with = "linalg::serde_rows")]
    pub sigma_x: Matrix,
    #[serde(with = "linalg::serde_rows")]
    pub sigma_y: Matrix,
    #[serde(with = "linalg::serde_rows")]
    pub sigma_xy: Matrix,
}

impl JointCovariance {
    /// Checks shapes, symmetry and positive semidefiniteness of the joint matrix.
    pub fn new(sigma_x: Matrix, sigma_y: Matrix, sigma_xy: Matrix) -> Result<Self> {
        let cov = Self {
            p1: sigma_x.nrows(),
            p2: sigma_y.nrows(),
            sigma_x,
            sigma_y,
            sigma_xy,
        };
        cov.validate()?;
        Ok(cov)
    }

    pub fn validate(&self) -> Result<()> {
        let (p1, p2) = (self.p1, self.p2);
        if self.sigma_x.shape() != (p1, p1)
            || self.sigma_y.shape() != (p2, p2)
            || self.sigma_xy.shape() != (p1, p2)
        {
            return Err(Error::DimensionMismatch(format!(
                "p1={p1}, p2={p2} but blocks are {:?}, {:?}, {:?}",
                self.sigma_x.shape(),
                self.sigma_y.shape(),
                self.sigma_xy.shape()
            )));
        }
        let eig = linalg::sym_eig(&self.full())?;
        let norm = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let smallest = eig.values[eig.values.len() - 1];
        if smallest < -TOL_PSD * norm {
            return Err(Error::NotPsd {
                eigenvalue: smallest,
            });
        }
        Ok(())
    }

    /// The assembled `(p1+p2) x (p1+p2)` matrix.
    pub fn full(&self) -> Matrix {
        let (p1, p2) = (self.p1, self.p2);
        let mut m = Matrix::zeros(p1 + p2, p1 + p2);
        m.view_mut((0, 0), (p1, p1)).copy_from(&self.sigma_x);
        m.view_mut((p1, p1), (p2, p2)).copy_from(&self.sigma_y);
        m.view_mut((0, p1), (p1, p2)).copy_from(&self.sigma_xy);
        m.view_mut((p1, 0), (p2, p1)).copy_from(&self.sigma_xy.transpose());
        m
    }

    pub fn kappa_x(&self) -> Result<f64> {
        linalg::condition_number(&self.sigma_x)
    }

    pub fn kappa_y(&self) -> Result<f64> {
        linalg::condition_number(&self.sigma_y)
    }
}

/// Loadings and canonical correlations, `p = min(p1, p2)` columns (or the
/// requested rank for sample estimates).
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalDecomposition {
    pub phi: Matrix,
    pub psi: Matrix,
    pub lambdas: Vec<f64>,
    /// Number of correlations within [`UNIT_CORRELATION_TOL`] of 1.
    pub unit_correlations: usize,
}

impl CanonicalDecomposition {
    pub fn phi_top(&self, k: usize) -> Matrix {
        self.phi.columns(0, k).into_owned()
    }

    pub fn psi_top(&self, k: usize) -> Matrix {
        self.psi.columns(0, k).into_owned()
    }
}

/// Model description: marginal covariances, canonical correlations and the
/// whitened canonical frames. Columns of the frames beyond `k` play the role
/// of the complementary blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalSpec {
    pub p1: usize,
    pub p2: usize,
    #[serde(with = "linalg::serde_rows")]
    pub sigma_x: Matrix,
    #[serde(with = "linalg::serde_rows")]
    pub sigma_y: Matrix,
    pub lambdas: Vec<f64>,
    #[serde(with = "linalg::serde_rows")]
    pub frame_u: Matrix,
    #[serde(with = "linalg::serde_rows")]
    pub frame_v: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl CanonicalSpec {
    pub fn new(
        sigma_x: Matrix,
        sigma_y: Matrix,
        lambdas: Vec<f64>,
        frame_u: Matrix,
        frame_v: Matrix,
        k: Option<usize>,
    ) -> Result<Self> {
        let spec = Self {
            p1: sigma_x.nrows(),
            p2: sigma_y.nrows(),
            sigma_x,
            sigma_y,
            lambdas,
            frame_u,
            frame_v,
            k,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Standard form: identity marginals and coordinate frames.
    pub fn standard(p1: usize, p2: usize, lambdas: Vec<f64>, k: Option<usize>) -> Result<Self> {
        let p = lambdas.len();
        Self::new(
            Matrix::identity(p1, p1),
            Matrix::identity(p2, p2),
            lambdas,
            Matrix::identity(p1, p),
            Matrix::identity(p2, p),
            k,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.lambdas.len();
        if self.sigma_x.shape() != (self.p1, self.p1) || self.sigma_y.shape() != (self.p2, self.p2) {
            return Err(Error::DimensionMismatch("marginal covariance shapes".into()));
        }
        if p == 0 || p > self.p1.min(self.p2) {
            return Err(Error::InvalidLambdas(format!(
                "need 1..={} correlations, got {p}",
                self.p1.min(self.p2)
            )));
        }
        validate_lambdas(&self.lambdas)?;
        if self.frame_u.shape() != (self.p1, p) || self.frame_v.shape() != (self.p2, p) {
            return Err(Error::DimensionMismatch(format!(
                "frames must be {}x{p} and {}x{p}",
                self.p1, self.p2
            )));
        }
        for frame in [&self.frame_u, &self.frame_v] {
            linalg::ensure_finite(frame)?;
            let dev = linalg::orthonormality_error(frame);
            if dev > FRAME_TOL {
                return Err(Error::FrameNotOrthonormal { deviation: dev });
            }
        }
        for s in [&self.sigma_x, &self.sigma_y] {
            linalg::cholesky(s).map_err(|e| match e {
                Error::NotFinite | Error::NotSymmetric { .. } => e,
                _ => Error::NotPd,
            })?;
        }
        if let Some(k) = self.k {
            if k == 0 || k >= p {
                return Err(Error::InvalidParams(format!("k = {k} must satisfy 1 <= k < {p}")));
            }
            if self.lambdas[k - 1] <= self.lambdas[k] {
                return Err(Error::InvalidLambdas(format!(
                    "eigen-gap Δ = λ_k − λ_(k+1) = 0 at k = {k}"
                )));
            }
        }
        Ok(())
    }

    /// `λ_k − λ_{k+1}` when `k` is set.
    pub fn delta(&self) -> Option<f64> {
        self.k.map(|k| self.lambdas[k - 1] - self.lambdas[k])
    }

    pub fn lambda_k(&self) -> Option<f64> {
        self.k.map(|k| self.lambdas[k - 1])
    }

    pub fn lambda_k1(&self) -> Option<f64> {
        self.k.map(|k| self.lambdas[k])
    }
}

fn validate_lambdas(lambdas: &[f64]) -> Result<()> {
    for (i, &l) in lambdas.iter().enumerate() {
        if !l.is_finite() || !(0.0..=1.0).contains(&l) {
            return Err(Error::InvalidLambdas(format!("λ_{} = {l} outside [0, 1]", i + 1)));
        }
        if i > 0 && l > lambdas[i - 1] {
            return Err(Error::InvalidLambdas("not in descending order".into()));
        }
    }
    Ok(())
}

/// Assembles `Σxy = Σx^{1/2} U diag(λ) V^T Σy^{1/2}`.
pub fn build_joint(spec: &CanonicalSpec) -> Result<JointCovariance> {
    spec.validate()?;
    let sx_half = linalg::psd_sqrt(&spec.sigma_x)?;
    let sy_half = linalg::psd_sqrt(&spec.sigma_y)?;
    let lambda = Matrix::from_diagonal(&Vector::from_column_slice(&spec.lambdas));
    let core = &spec.frame_u * lambda * spec.frame_v.transpose();
    let sigma_xy = &sx_half * core * &sy_half;
    JointCovariance::new(spec.sigma_x.clone(), spec.sigma_y.clone(), sigma_xy)
}

/// Canonical decomposition from the SVD of `Σx^{-1/2} Σxy Σy^{-1/2}`.
pub fn population_cca(cov: &JointCovariance) -> Result<CanonicalDecomposition> {
    cca_from_blocks(&cov.sigma_x, &cov.sigma_y, &cov.sigma_xy, None)
}

pub(crate) fn cca_from_blocks(
    sx: &Matrix,
    sy: &Matrix,
    sxy: &Matrix,
    rank: Option<usize>,
) -> Result<CanonicalDecomposition> {
    let (_, sx_inv_half) = linalg::sqrt_and_inv_sqrt(sx)?;
    let (_, sy_inv_half) = linalg::sqrt_and_inv_sqrt(sy)?;
    let whitened = &sx_inv_half * sxy * &sy_inv_half;
    let dec = linalg::svd(&whitened)?;
    let p = rank.unwrap_or(dec.singulars.len());
    let mut lambdas = Vec::with_capacity(p);
    for &s in dec.singulars.iter().take(p) {
        if s > 1.0 + UNIT_CORRELATION_TOL {
            return Err(Error::CorrelationOutOfRange { value: s });
        }
        lambdas.push(s.clamp(0.0, 1.0));
    }
    let unit_correlations = lambdas
        .iter()
        .filter(|&&l| l >= 1.0 - UNIT_CORRELATION_TOL)
        .count();
    Ok(CanonicalDecomposition {
        phi: sx_inv_half * dec.left.columns(0, p),
        psi: sy_inv_half * dec.right.columns(0, p),
        lambdas,
        unit_correlations,
    })
}

fn ensure_invertible(t: &Matrix, name: &str) -> Result<()> {
    if t.nrows() != t.ncols() {
        return Err(Error::InvalidShape(format!("{name} must be square")));
    }
    let s = linalg::svd(t)?;
    let largest = s.singulars[0];
    let smallest = s.singulars[s.singulars.len() - 1];
    if largest <= 0.0 || smallest < EPS_PD * largest {
        return Err(Error::Singular(format!("{name} is not invertible")));
    }
    Ok(())
}

/// Covariance of `(T1^T x, T2^T y)`.
pub fn apply_transform(cov: &JointCovariance, t1: &Matrix, t2: &Matrix) -> Result<JointCovariance> {
    if t1.nrows() != cov.p1 || t2.nrows() != cov.p2 {
        return Err(Error::DimensionMismatch("transform sizes".into()));
    }
    ensure_invertible(t1, "t1")?;
    ensure_invertible(t2, "t2")?;
    let sigma_x = linalg::symmetrize(&(t1.transpose() * &cov.sigma_x * t1));
    let sigma_y = linalg::symmetrize(&(t2.transpose() * &cov.sigma_y * t2));
    let sigma_xy = t1.transpose() * &cov.sigma_xy * t2;
    Ok(JointCovariance {
        p1: cov.p1,
        p2: cov.p2,
        sigma_x,
        sigma_y,
        sigma_xy,
    })
}

/// Haar-distributed `p x k` frame: QR of a standard Gaussian matrix with the
/// triangular factor's diagonal made positive.
pub fn random_orthonormal_frame(p: usize, k: usize, seed: u64) -> Result<Matrix> {
    if k == 0 || k > p {
        return Err(Error::InvalidShape(format!("need 1 <= k <= p, got k={k}, p={p}")));
    }
    let mut rng = seeds::rng(seed);
    let g = Matrix::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `Q diag(d) Q^T` with Haar `Q` and eigenvalues log-spaced on `[1, kappa]`,
/// so the condition number is exactly `kappa`.
pub fn conditioned_covariance(p: usize, kappa: f64, seed: u64) -> Result<Matrix> {
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::InvalidParams(format!("condition number {kappa} must be >= 1")));
    }
    if p == 1 {
        return Ok(Matrix::identity(1, 1));
    }
    let q = random_orthonormal_frame(p, p, seed)?;
    let d = Vector::from_fn(p, |i, _| kappa.powf(i as f64 / (p - 1) as f64));
    Ok(linalg::symmetrize(&(&q * Matrix::from_diagonal(&d) * q.transpose())))
}

/// A random well-conditioned symmetric PD matrix `A A^T / p + I`.
pub fn random_pd(p: usize, seed: u64) -> Matrix {
    let mut rng = seeds::rng(seed);
    let a = Matrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
    linalg::symmetrize(&(&a * a.transpose() / p as f64 + Matrix::identity(p, p)))
}

/// Random model with the given correlations: random PD marginals and Haar frames.
pub fn random_spec(p1: usize, p2: usize, lambdas: Vec<f64>, k: Option<usize>, seed: u64) -> Result<CanonicalSpec> {
    let p = lambdas.len();
    CanonicalSpec::new(
        random_pd(p1, seeds::derive(seed, &[0])),
        random_pd(p2, seeds::derive(seed, &[1])),
        lambdas,
        random_orthonormal_frame(p1, p, seeds::derive(seed, &[2]))?,
        random_orthonormal_frame(p2, p, seeds::derive(seed, &[3]))?,
        k,
    )
}

/// Random model whose marginals have the exact condition numbers requested.
pub fn conditioned_spec(
    p1: usize,
    p2: usize,
    lambdas: Vec<f64>,
    k: Option<usize>,
    kappa: (f64, f64),
    seed: u64,
) -> Result<CanonicalSpec> {
    let p = lambdas.len();
    if p == 0 || p > p1.min(p2) {
        return Err(Error::InvalidLambdas(format!("need 1..={} correlations, got {p}", p1.min(p2))));
    }
    CanonicalSpec::new(
        conditioned_covariance(p1, kappa.0, seeds::derive(seed, &[0]))?,
        conditioned_covariance(p2, kappa.1, seeds::derive(seed, &[1]))?,
        lambdas,
        random_orthonormal_frame(p1, p, seeds::derive(seed, &[2]))?,
        random_orthonormal_frame(p2, p, seeds::derive(seed, &[3]))?,
        k,
    )
}
