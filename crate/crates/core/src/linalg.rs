//! Dense linear-algebra kernels with fixed conventions.
//!
//! Eigen and singular values are returned in descending order. Every
//! eigenvector and left singular vector is flipped so that its
//! largest-magnitude entry is non-negative; right singular vectors follow
//! their left partner. Tolerances are relative to the norm of the input.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative asymmetry accepted by [`sym_eig`].
pub const TOL_SYM: f64 = 1e-10;
/// Relative reconstruction tolerance for decompositions.
pub const TOL_RECON: f64 = 1e-10;
/// Negative eigenvalues down to `-TOL_PSD * norm` are treated as zero.
pub const TOL_PSD: f64 = 1e-10;
/// Smallest eigenvalue (relative) accepted where an inverse is needed.
pub const EPS_PD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vector,
    pub vectors: Matrix,
}

#[derive(Debug, Clone)]
pub struct Svd {
    pub left: Matrix,
    pub singulars: Vector,
    pub right: Matrix,
}

pub fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidShape(format!(
            "empty matrix {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NotFinite)
    }
}

fn ensure_square(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidShape(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Relative asymmetry `max|S - S^T| / max(|S|_F, tiny)`.
pub fn asymmetry(s: &Matrix) -> f64 {
    let n = s.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    let scale = s.norm().max(f64::MIN_POSITIVE);
    worst / scale
}

pub fn symmetrize(s: &Matrix) -> Matrix {
    (s + s.transpose()) * 0.5
}

fn flip_column_sign(m: &mut Matrix, col: usize) -> bool {
    let column = m.column(col);
    let mut best = 0.0_f64;
    let mut best_val = 0.0_f64;
    for &v in column.iter() {
        if v.abs() > best {
            best = v.abs();
            best_val = v;
        }
    }
    if best_val < 0.0 {
        m.column_mut(col).neg_mut();
        true
    } else {
        false
    }
}

/// Symmetric eigendecomposition with descending eigenvalues.
pub fn sym_eig(s: &Matrix) -> Result<SymEig> {
    ensure_finite(s)?;
    ensure_square(s)?;
    let asym = asymmetry(s);
    if asym > TOL_SYM {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    let n = s.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        flip_column_sign(&mut vectors, dst);
    }
    Ok(SymEig { values, vectors })
}

/// Thin SVD with descending singular values.
pub fn svd(m: &Matrix) -> Result<Svd> {
    ensure_finite(m)?;
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    // one-sided Jacobi works on the tall orientation
    let (u, sv, v) = if rows >= cols {
        jacobi_svd(m)
    } else {
        let (u, sv, v) = jacobi_svd(&m.transpose());
        (v, sv, u)
    };
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let singulars = Vector::from_iterator(r, order.iter().map(|&i| sv[i]));
    let mut left = Matrix::zeros(rows, r);
    let mut right = Matrix::zeros(cols, r);
    for (dst, &src) in order.iter().enumerate() {
        left.set_column(dst, &u.column(src));
        right.set_column(dst, &v.column(src));
        if flip_column_sign(&mut left, dst) {
            right.column_mut(dst).neg_mut();
        }
    }
    Ok(Svd {
        left,
        singulars,
        right,
    })
}

const JACOBI_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD of a tall matrix: `A = U diag(s) V^T` with
/// `U` `m x n`, unsorted.
///
/// nalgebra's bidiagonal SVD loses accuracy on clustered singular values when
/// vectors are requested, so the kernel is implemented here.
fn jacobi_svd(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (m, n) = a.shape();
    let mut u = a.clone();
    let mut v = Matrix::identity(n, n);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut u, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sv: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let mut null = Vec::new();
    for (j, &s) in sv.iter().enumerate() {
        if s > top * f64::EPSILON * 1e-3 && s > f64::MIN_POSITIVE {
            u.column_mut(j).scale_mut(1.0 / s);
        } else {
            null.push(j);
        }
    }
    complete_columns(&mut u, &null, m);
    (u, sv, v)
}

fn rotate_columns(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// Replaces the listed columns with unit vectors orthogonal to the others.
fn complete_columns(u: &mut Matrix, null: &[usize], m: usize) {
    let mut filled: Vec<usize> = (0..u.ncols()).filter(|j| !null.contains(j)).collect();
    for &j in null {
        let mut best = Vector::zeros(m);
        let mut best_norm = -1.0;
        for e in 0..m {
            let mut cand = Vector::zeros(m);
            cand[e] = 1.0;
            for _ in 0..2 {
                for &f in &filled {
                    let proj = u.column(f).dot(&cand);
                    cand -= u.column(f) * proj;
                }
            }
            let norm = cand.norm();
            if norm > best_norm {
                best_norm = norm;
                best = cand;
            }
        }
        u.set_column(j, &(best / best_norm));
        filled.push(j);
    }
}

/// Returns `(S^{1/2}, S^{-1/2})` for a symmetric positive semidefinite matrix.
///
/// The inverse square root requires the smallest eigenvalue to be at least
/// `EPS_PD * |S|`; use [`psd_sqrt`] when only the square root is needed.
pub fn sqrt_and_inv_sqrt(s: &Matrix) -> Result<(Matrix, Matrix)> {
    let eig = sym_eig(s)?;
    let norm = spectral_scale(&eig.values);
    check_psd(&eig.values, norm)?;
    let smallest = eig.values[eig.values.len() - 1];
    if smallest < EPS_PD * norm || smallest <= 0.0 {
        return Err(Error::Singular(format!(
            "smallest eigenvalue {smallest:.3e} below {:.1e} x norm {norm:.3e}",
            EPS_PD
        )));
    }
    let sqrt = spectral_function(&eig, |v| v.sqrt());
    let inv_sqrt = spectral_function(&eig, |v| 1.0 / v.sqrt());
    Ok((sqrt, inv_sqrt))
}

/// Square root of a PSD matrix; eigenvalues in `[-TOL_PSD*|S|, 0)` are clipped to zero.
pub fn psd_sqrt(s: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(s)?;
    let norm = spectral_scale(&eig.values);
    check_psd(&eig.values, norm)?;
    Ok(spectral_function(&eig, |v| v.max(0.0).sqrt()))
}

/// Inverse of a symmetric PD matrix via its eigendecomposition.
pub fn sym_inverse(s: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(s)?;
    let norm = spectral_scale(&eig.values);
    let smallest = eig.values[eig.values.len() - 1];
    if smallest < EPS_PD * norm || smallest <= 0.0 {
        return Err(Error::Singular(format!(
            "smallest eigenvalue {smallest:.3e} of a {}x{} matrix",
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(spectral_function(&eig, |v| 1.0 / v))
}

fn spectral_scale(values: &Vector) -> f64 {
    values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn check_psd(values: &Vector, norm: f64) -> Result<()> {
    let smallest = values[values.len() - 1];
    if smallest < -TOL_PSD * norm {
        return Err(Error::NotPsd {
            eigenvalue: smallest,
        });
    }
    Ok(())
}

fn spectral_function(eig: &SymEig, f: impl Fn(f64) -> f64) -> Matrix {
    let v = &eig.vectors;
    let mut scaled = v.clone();
    for (j, &lambda) in eig.values.iter().enumerate() {
        let fj = f(lambda);
        scaled.column_mut(j).scale_mut(fj);
    }
    symmetrize(&(scaled * v.transpose()))
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    ensure_finite(s)?;
    ensure_square(s)?;
    let asym = asymmetry(s);
    if asym > TOL_SYM {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let scale = max_abs_diag(s);
    factor(s, |pivot, _| {
        if pivot.is_finite() && pivot >= EPS_PD * scale && pivot > 0.0 {
            Some(pivot.sqrt())
        } else {
            None
        }
    })
    .ok_or(Error::NotPd)
}

/// Cholesky-type factor `L` with `L L^T = S` for a positive semidefinite matrix.
///
/// Pivots at or below `TOL_PSD * |S|` are treated as exact zeros and their
/// column is dropped, so rank-deficient covariances keep their exact linear
/// relations (perfectly correlated coordinates stay identical).
pub fn cholesky_semidefinite(s: &Matrix) -> Result<Matrix> {
    ensure_finite(s)?;
    ensure_square(s)?;
    let asym = asymmetry(s);
    if asym > TOL_SYM {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let scale = max_abs_diag(s);
    let tol = TOL_PSD * scale.max(f64::MIN_POSITIVE);
    factor(s, |pivot, _| {
        if pivot > tol {
            Some(pivot.sqrt())
        } else if pivot >= -tol {
            Some(0.0)
        } else {
            None
        }
    })
    .ok_or(Error::NotPsd { eigenvalue: f64::NAN })
}

fn max_abs_diag(s: &Matrix) -> f64 {
    s.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn factor(s: &Matrix, pivot_root: impl Fn(f64, usize) -> Option<f64>) -> Option<Matrix> {
    let n = s.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        let root = pivot_root(d, j)?;
        l[(j, j)] = root;
        if root == 0.0 {
            continue;
        }
        for i in (j + 1)..n {
            let mut acc = s[(i, j)];
            for p in 0..j {
                acc -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = acc / root;
        }
    }
    Some(l)
}

/// Orthonormal basis of the column space of a full-column-rank matrix.
pub fn orthonormal_basis(u: &Matrix) -> Result<Matrix> {
    let dec = svd(u)?;
    let largest = dec.singulars[0];
    let smallest = dec.singulars[dec.singulars.len() - 1];
    if u.ncols() > u.nrows() || largest <= 0.0 || smallest < EPS_PD * largest {
        let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
        return Err(Error::RankDeficient { ratio });
    }
    Ok(dec.left)
}

/// Orthogonal projector onto the column space of `u`.
pub fn projector(u: &Matrix) -> Result<Matrix> {
    let q = orthonormal_basis(u)?;
    Ok(symmetrize(&(&q * q.transpose())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub operator: f64,
    pub frobenius: f64,
}

pub fn norms(m: &Matrix) -> Result<Norms> {
    let dec = svd(m)?;
    Ok(Norms {
        operator: dec.singulars[0],
        frobenius: m.norm(),
    })
}

pub fn operator_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.singulars[0])
}

/// Ratio of extreme eigenvalues of a symmetric PD matrix.
pub fn condition_number(s: &Matrix) -> Result<f64> {
    let eig = sym_eig(s)?;
    let smallest = eig.values[eig.values.len() - 1];
    if smallest <= 0.0 {
        return Err(Error::Singular("non-positive eigenvalue".into()));
    }
    Ok(eig.values[0] / smallest)
}

/// Largest entrywise deviation of `Q^T Q` from the identity.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    let g = q.transpose() * q;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map(|row| row.len()).unwrap_or(0);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidShape("ragged or empty rows".into()));
    }
    let m = Matrix::from_fn(r, c, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Serde adapter for matrices stored as row-major arrays of arrays.
pub mod serde_rows {
    use super::{from_rows, to_rows, Matrix};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}
