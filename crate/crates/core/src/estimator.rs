//! Gaussian sampling, sample covariances, sample CCA and the standard-form reduction.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{cca_from_blocks, CanonicalDecomposition, JointCovariance};
use crate::seeds;

/// Paired observations, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPair {
    pub x: Matrix,
    pub y: Matrix,
}

impl DataPair {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "x has {} rows, y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        linalg::ensure_finite(&x)?;
        linalg::ensure_finite(&y)?;
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Data of `(T1^T x, T2^T y)`, i.e. `(X T1, Y T2)`.
    pub fn transform(&self, t1: &Matrix, t2: &Matrix) -> DataPair {
        DataPair {
            x: &self.x * t1,
            y: &self.y * t2,
        }
    }

    pub fn write_csv(&self, x_path: &Path, y_path: &Path, header: bool) -> Result<()> {
        write_matrix_csv(&self.x, x_path, header.then_some("x"))?;
        write_matrix_csv(&self.y, y_path, header.then_some("y"))
    }

    pub fn read_csv(x_path: &Path, y_path: &Path, header: bool) -> Result<Self> {
        Self::new(read_matrix_csv(x_path, header)?, read_matrix_csv(y_path, header)?)
    }
}

/// Writes a matrix as CSV with shortest round-trip decimal formatting.
pub fn write_matrix_csv(m: &Matrix, path: &Path, header_prefix: Option<&str>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    if let Some(prefix) = header_prefix {
        w.write_record((1..=m.ncols()).map(|j| format!("{prefix}{j}")))?;
    }
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path, header: bool) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: `{f}`: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    linalg::from_rows(&rows)
}

/// `n` i.i.d. rows from `N(0, Σ)`, generated as `L g` with `L L^T = Σ`.
///
/// Singular (PSD) covariances use a semidefinite factor, so exact linear
/// relations in the model hold exactly in the sample.
pub fn sample_gaussian(cov: &JointCovariance, n: usize, seed: u64) -> Result<DataPair> {
    if n == 0 {
        return Err(Error::TooFewSamples("n must be at least 1".into()));
    }
    let factor = gaussian_factor(cov)?;
    sample_with_factor(&factor, cov.p1, n, seed)
}

pub(crate) fn gaussian_factor(cov: &JointCovariance) -> Result<Matrix> {
    let full = cov.full();
    match linalg::cholesky(&full) {
        Ok(l) => Ok(l),
        Err(Error::NotPd) => {
            cov.validate()?;
            linalg::cholesky_semidefinite(&full)
        }
        Err(e) => Err(e),
    }
}

pub(crate) fn sample_with_factor(factor: &Matrix, p1: usize, n: usize, seed: u64) -> Result<DataPair> {
    let d = factor.nrows();
    let mut rng = seeds::rng(seed);
    // row-major fill order so the stream layout is independent of the matrix storage
    let mut g = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            g[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let z = g * factor.transpose();
    Ok(DataPair {
        x: z.columns(0, p1).into_owned(),
        y: z.columns(p1, d - p1).into_owned(),
    })
}

/// Sample covariance blocks with divisor `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariances {
    pub sx: Matrix,
    pub sy: Matrix,
    pub sxy: Matrix,
    pub n: usize,
}

pub fn sample_covariances(data: &DataPair, center: bool) -> Result<SampleCovariances> {
    let n = data.n();
    if n == 0 || (center && n < 2) {
        return Err(Error::TooFewSamples(format!(
            "n = {n} (centering {})",
            if center { "on" } else { "off" }
        )));
    }
    let (x, y) = if center {
        (center_columns(&data.x), center_columns(&data.y))
    } else {
        (data.x.clone(), data.y.clone())
    };
    let scale = 1.0 / n as f64;
    Ok(SampleCovariances {
        sx: linalg::symmetrize(&(x.tr_mul(&x) * scale)),
        sy: linalg::symmetrize(&(y.tr_mul(&y) * scale)),
        sxy: x.tr_mul(&y) * scale,
        n,
    })
}

fn center_columns(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Top-`k` sample CCA: whitened SVD of `Σ̂x^{-1/2} Σ̂xy Σ̂y^{-1/2}`.
pub fn sample_cca(covs: &SampleCovariances, k: usize) -> Result<CanonicalDecomposition> {
    sample_cca_ridge(covs, k, 0.0)
}

/// [`sample_cca`] with `ridge * I` added to both marginal covariances.
pub fn sample_cca_ridge(covs: &SampleCovariances, k: usize, ridge: f64) -> Result<CanonicalDecomposition> {
    let max = covs.sx.nrows().min(covs.sy.nrows());
    if k == 0 || k > max {
        return Err(Error::RankTooLarge { k, max });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParams(format!("ridge {ridge} must be >= 0")));
    }
    let (sx, sy) = if ridge > 0.0 {
        (
            &covs.sx + Matrix::identity(covs.sx.nrows(), covs.sx.nrows()) * ridge,
            &covs.sy + Matrix::identity(covs.sy.nrows(), covs.sy.nrows()) * ridge,
        )
    } else {
        (covs.sx.clone(), covs.sy.clone())
    };
    cca_from_blocks(&sx, &sy, &covs.sxy, Some(k)).map_err(|e| match e {
        Error::NotPsd { .. } => Error::Singular("sample covariance is not positive definite".into()),
        other => other,
    })
}

/// Square loadings that map `(x, y)` to standard form `(I, [Λ 0], I)`.
#[derive(Debug, Clone)]
pub struct StandardForm {
    /// `p1 x p1`; the first `min(p1, p2)` columns are the canonical loadings.
    pub phi: Matrix,
    /// `p2 x p2`, arranged like `phi`.
    pub psi: Matrix,
    pub lambdas: Vec<f64>,
}

impl StandardForm {
    pub fn from_covariance(cov: &JointCovariance) -> Result<Self> {
        let pop = crate::model::population_cca(cov)?;
        let (sx_half, sx_inv_half) = linalg::sqrt_and_inv_sqrt(&cov.sigma_x)?;
        let (sy_half, sy_inv_half) = linalg::sqrt_and_inv_sqrt(&cov.sigma_y)?;
        let u = complete_frame(&(&sx_half * &pop.phi))?;
        let v = complete_frame(&(&sy_half * &pop.psi))?;
        Ok(Self {
            phi: sx_inv_half * u,
            psi: sy_inv_half * v,
            lambdas: pop.lambdas,
        })
    }

    /// Reduced pair `(a_i, b_i) = (Φ^T x_i, Ψ^T y_i)`.
    pub fn reduce(&self, data: &DataPair) -> Result<DataPair> {
        if data.x.ncols() != self.phi.nrows() || data.y.ncols() != self.psi.nrows() {
            return Err(Error::DimensionMismatch("data and loadings".into()));
        }
        Ok(data.transform(&self.phi, &self.psi))
    }

    /// Population covariance of the reduced variables.
    pub fn reduced_covariance(&self, cov: &JointCovariance) -> JointCovariance {
        JointCovariance {
            p1: cov.p1,
            p2: cov.p2,
            sigma_x: linalg::symmetrize(&(self.phi.transpose() * &cov.sigma_x * &self.phi)),
            sigma_y: linalg::symmetrize(&(self.psi.transpose() * &cov.sigma_y * &self.psi)),
            sigma_xy: self.phi.transpose() * &cov.sigma_xy * &self.psi,
        }
    }
}

/// Convenience wrapper over [`StandardForm`].
pub fn standard_form_reduce(data: &DataPair, cov: &JointCovariance) -> Result<DataPair> {
    StandardForm::from_covariance(cov)?.reduce(data)
}

/// Extends orthonormal columns to a full orthonormal basis.
fn complete_frame(u: &Matrix) -> Result<Matrix> {
    let p = u.nrows();
    let q = linalg::orthonormal_basis(u).map_err(|_| Error::Singular("loadings are not full rank".into()))?;
    let r = u.ncols();
    if r == p {
        return Ok(u.clone());
    }
    let complement = Matrix::identity(p, p) - &q * q.transpose();
    let eig = linalg::sym_eig(&linalg::symmetrize(&complement))?;
    let mut full = Matrix::zeros(p, p);
    full.columns_mut(0, r).copy_from(u);
    full.columns_mut(r, p - r).copy_from(&eig.vectors.columns(0, p - r));
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::principal_angles;
    use crate::model::{build_joint, population_cca, random_spec, CanonicalSpec};

    fn max_abs(m: &Matrix) -> f64 {
        m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn identity_law_of_large_numbers() {
        let spec = CanonicalSpec::standard(2, 2, vec![0.0, 0.0], None).unwrap();
        let cov = build_joint(&spec).unwrap();
        let data = sample_gaussian(&cov, 100_000, 3).unwrap();
        let covs = sample_covariances(&data, false).unwrap();
        let mut full = Matrix::zeros(4, 4);
        full.view_mut((0, 0), (2, 2)).copy_from(&covs.sx);
        full.view_mut((2, 2), (2, 2)).copy_from(&covs.sy);
        full.view_mut((0, 2), (2, 2)).copy_from(&covs.sxy);
        full.view_mut((2, 0), (2, 2)).copy_from(&covs.sxy.transpose());
        let err = linalg::operator_norm(&(full - Matrix::identity(4, 4))).unwrap();
        assert!(err < 0.03, "operator error {err}");
    }

    #[test]
    fn perfect_correlation_copies_columns() {
        let cov = JointCovariance::new(
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
        )
        .unwrap();
        let data = sample_gaussian(&cov, 500, 1).unwrap();
        for i in 0..500 {
            assert!((data.x[(i, 0)] - data.y[(i, 0)]).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = random_spec(3, 4, vec![0.6, 0.3, 0.1], Some(1), 2).unwrap();
        let cov = build_joint(&spec).unwrap();
        assert_eq!(sample_gaussian(&cov, 50, 9).unwrap(), sample_gaussian(&cov, 50, 9).unwrap());
        assert_ne!(sample_gaussian(&cov, 50, 9).unwrap(), sample_gaussian(&cov, 50, 10).unwrap());
        assert!(sample_gaussian(&cov, 0, 9).is_err());
    }

    #[test]
    fn single_row_arithmetic() {
        let data = DataPair::new(Matrix::from_row_slice(1, 2, &[1.0, 2.0]), Matrix::from_element(1, 1, 3.0)).unwrap();
        let c = sample_covariances(&data, false).unwrap();
        assert_eq!(c.sx, Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert_eq!(c.sxy, Matrix::from_row_slice(2, 1, &[3.0, 6.0]));
        assert_eq!(c.sy, Matrix::from_element(1, 1, 9.0));
        assert!(matches!(sample_covariances(&data, true), Err(Error::TooFewSamples(_))));
    }

    #[test]
    fn identical_views_give_equal_blocks() {
        let x = Matrix::from_row_slice(3, 2, &[1.0, 0.5, -2.0, 1.0, 0.3, 0.3]);
        let c = sample_covariances(&DataPair::new(x.clone(), x).unwrap(), true).unwrap();
        assert!(max_abs(&(&c.sxy - &c.sx)) < 1e-15);
    }

    #[test]
    fn constructed_data_recovers_covariance() {
        // X = sqrt(n) * (rows of L^T padded with sign-flipped copies) gives X^T X / n = L L^T
        let sigma = crate::model::random_pd(3, 4);
        let l = linalg::cholesky(&sigma).unwrap();
        let lt = l.transpose();
        let n = 6;
        let mut x = Matrix::zeros(n, 3);
        for i in 0..3 {
            let row = lt.row(i) * (n as f64 / 2.0).sqrt();
            x.set_row(2 * i, &row);
            x.set_row(2 * i + 1, &(-row));
        }
        let data = DataPair::new(x.clone(), x).unwrap();
        let c = sample_covariances(&data, false).unwrap();
        assert!(max_abs(&(&c.sx - &sigma)) < 1e-14 * sigma.norm().max(1.0) * 10.0);
    }

    #[test]
    fn population_covariances_reproduce_population_subspace() {
        let spec = random_spec(6, 5, vec![0.9, 0.7, 0.4, 0.2, 0.05], Some(2), 12).unwrap();
        let cov = build_joint(&spec).unwrap();
        let pop = population_cca(&cov).unwrap();
        let covs = SampleCovariances {
            sx: cov.sigma_x.clone(),
            sy: cov.sigma_y.clone(),
            sxy: cov.sigma_xy.clone(),
            n: 1,
        };
        let est = sample_cca(&covs, 2).unwrap();
        let d = principal_angles(&est.phi, &pop.phi_top(2), &cov.sigma_x).unwrap();
        assert!(d.l2 <= 1e-10);
        let constraint = est.phi.transpose() * &cov.sigma_x * &est.phi;
        assert!(max_abs(&(constraint - Matrix::identity(2, 2))) < 1e-8);
    }

    #[test]
    fn standard_form_model_gives_coordinate_loadings() {
        let spec = CanonicalSpec::standard(3, 3, vec![0.8, 0.5, 0.2], Some(2)).unwrap();
        let cov = build_joint(&spec).unwrap();
        let covs = SampleCovariances {
            sx: cov.sigma_x.clone(),
            sy: cov.sigma_y.clone(),
            sxy: cov.sigma_xy.clone(),
            n: 1,
        };
        let est = sample_cca(&covs, 2).unwrap();
        assert!(max_abs(&(est.phi.abs() - Matrix::identity(3, 2))) < 1e-14);
    }

    #[test]
    fn rank_and_singularity_errors() {
        let covs = SampleCovariances {
            sx: Matrix::identity(2, 2),
            sy: Matrix::identity(3, 3),
            sxy: Matrix::zeros(2, 3),
            n: 10,
        };
        assert_eq!(sample_cca(&covs, 3).unwrap_err(), Error::RankTooLarge { k: 3, max: 2 });
        let data = sample_gaussian(
            &build_joint(&CanonicalSpec::standard(4, 4, vec![0.5], None).unwrap()).unwrap(),
            2,
            1,
        )
        .unwrap();
        let covs = sample_covariances(&data, false).unwrap();
        assert!(matches!(sample_cca(&covs, 1), Err(Error::Singular(_))));
        assert!(sample_cca_ridge(&covs, 1, 0.1).is_ok());
    }

    #[test]
    fn standard_form_reduction() {
        let spec = random_spec(4, 6, vec![0.9, 0.6, 0.3, 0.1], Some(2), 30).unwrap();
        let cov = build_joint(&spec).unwrap();
        let sf = StandardForm::from_covariance(&cov).unwrap();
        let reduced = sf.reduced_covariance(&cov);
        assert!(max_abs(&(&reduced.sigma_x - Matrix::identity(4, 4))) < 1e-8);
        assert!(max_abs(&(&reduced.sigma_y - Matrix::identity(6, 6))) < 1e-8);
        let mut block = Matrix::zeros(4, 6);
        for (i, &l) in spec.lambdas.iter().enumerate() {
            block[(i, i)] = l;
        }
        assert!(max_abs(&(reduced.sigma_xy.abs() - block)) < 1e-8);

        let data = sample_gaussian(&cov, 400, 5).unwrap();
        let red = sf.reduce(&data).unwrap();
        let pop = population_cca(&cov).unwrap();
        let est = sample_cca(&sample_covariances(&data, false).unwrap(), 2).unwrap();
        let est_red = sample_cca(&sample_covariances(&red, false).unwrap(), 2).unwrap();
        let original = principal_angles(&est.phi, &pop.phi_top(2), &cov.sigma_x).unwrap();
        let reduced_loss = principal_angles(&est_red.phi, &Matrix::identity(4, 2), &Matrix::identity(4, 4)).unwrap();
        assert!((original.op_dist - reduced_loss.op_dist).abs() < 1e-8);
        assert!((original.l2 - reduced_loss.l2).abs() < 1e-8);
    }

    #[test]
    fn standard_model_reduces_to_itself() {
        let spec = CanonicalSpec::standard(3, 3, vec![0.7, 0.4, 0.1], None).unwrap();
        let cov = build_joint(&spec).unwrap();
        let data = sample_gaussian(&cov, 20, 1).unwrap();
        let red = standard_form_reduce(&data, &cov).unwrap();
        assert!(max_abs(&(red.x - &data.x)) < 1e-14);
        assert!(max_abs(&(red.y - &data.y)) < 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = random_spec(2, 3, vec![0.5, 0.1], None, 1).unwrap();
        let data = sample_gaussian(&build_joint(&spec).unwrap(), 7, 2).unwrap();
        for header in [false, true] {
            let (xp, yp) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
            data.write_csv(&xp, &yp, header).unwrap();
            assert_eq!(DataPair::read_csv(&xp, &yp, header).unwrap(), data);
        }
    }
}
