//! Dense linear-algebra helpers on top of `nalgebra`.
//!
//! [`ThinSvd`] is the single factorisation used for pseudo-inverses and
//! row-space projectors. It is computed from the eigendecomposition of the
//! smaller Gram matrix (`X X^T` when `n <= m`, `X^T X` otherwise), which is far
//! cheaper than a bidiagonal SVD for the very wide designs of the
//! overparameterized regime. When the retained spectrum is too spread out for
//! the Gram route to resolve it accurately, it falls back to `nalgebra`'s SVD.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Retained singular values below this fraction of the largest one are not
/// resolved accurately by the Gram route.
const GRAM_RELIABLE_RATIO: f64 = 1e-3;

/// Thin singular value decomposition `X = U diag(s) V^T`, truncated to the
/// numerical rank.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// `n x r` left singular vectors.
    pub u: DMatrix<f64>,
    /// `r` singular values, descending.
    pub singular_values: DVector<f64>,
    /// `m x r` right singular vectors.
    pub v: DMatrix<f64>,
    /// Cut-off below which singular values were discarded.
    pub tolerance: f64,
    /// Largest singular value before truncation (0 for a zero matrix).
    pub max_singular_value: f64,
}

impl ThinSvd {
    pub fn new(x: &DMatrix<f64>) -> ThinSvd {
        let (n, m) = x.shape();
        let eps = f64::EPSILON;
        let gram_route = Self::via_gram(x);
        if let Some(svd) = gram_route {
            return svd;
        }
        // Full SVD fallback.
        let svd = x.clone().svd(true, true);
        let u_full = svd.u.expect("left singular vectors requested");
        let vt_full = svd.v_t.expect("right singular vectors requested");
        let s_full = svd.singular_values;
        let s_max = s_full.iter().cloned().fold(0.0, f64::max);
        let tol = n.max(m) as f64 * eps * s_max;
        let mut idx: Vec<usize> = (0..s_full.len()).filter(|&i| s_full[i] > tol).collect();
        idx.sort_by(|&a, &b| s_full[b].total_cmp(&s_full[a]));
        let r = idx.len();
        let mut u = DMatrix::zeros(n, r);
        let mut v = DMatrix::zeros(m, r);
        let mut s = DVector::zeros(r);
        for (k, &i) in idx.iter().enumerate() {
            u.set_column(k, &u_full.column(i));
            v.set_column(k, &vt_full.row(i).transpose());
            s[k] = s_full[i];
        }
        ThinSvd {
            u,
            singular_values: s,
            v,
            tolerance: tol,
            max_singular_value: s_max,
        }
    }

    fn via_gram(x: &DMatrix<f64>) -> Option<ThinSvd> {
        let (n, m) = x.shape();
        let wide = n <= m;
        let gram = if wide { x * x.transpose() } else { x.transpose() * x };
        let (values, vectors) = sorted_symmetric_eigen(gram);
        let s_max = values.first().map(|&l| l.max(0.0).sqrt()).unwrap_or(0.0);
        let tol = n.max(m) as f64 * f64::EPSILON * s_max;
        let kept: Vec<usize> = (0..values.len())
            .filter(|&i| values[i] > 0.0 && values[i].sqrt() > tol)
            .collect();
        if kept
            .iter()
            .any(|&i| values[i].sqrt() < GRAM_RELIABLE_RATIO * s_max)
        {
            return None;
        }
        let r = kept.len();
        let k = vectors.nrows();
        let mut basis = DMatrix::zeros(k, r);
        let mut s = DVector::zeros(r);
        for (c, &i) in kept.iter().enumerate() {
            basis.set_column(c, &vectors.column(i));
            s[c] = values[i].sqrt();
        }
        // Other side: X^T U S^-1 (wide) or X V S^-1 (tall).
        let mut other = if wide { x.transpose() * &basis } else { x * &basis };
        for c in 0..r {
            let inv = 1.0 / s[c];
            other.column_mut(c).scale_mut(inv);
        }
        let (u, v) = if wide { (basis, other) } else { (other, basis) };
        Some(ThinSvd {
            u,
            singular_values: s,
            v,
            tolerance: tol,
            max_singular_value: s_max,
        })
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Minimum-norm least-squares solution `X^+ y`.
    pub fn pinv_solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut coeffs = self.u.tr_mul(y);
        for (c, s) in coeffs.iter_mut().zip(self.singular_values.iter()) {
            *c /= s;
        }
        &self.v * coeffs
    }

    /// Orthogonal projection of `b` onto the row space of `X`.
    pub fn project_row_space(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.v * self.v.tr_mul(b)
    }

    /// Dense `m x m` projector onto the row space of `X`.
    pub fn row_space_projector(&self) -> DMatrix<f64> {
        &self.v * self.v.transpose()
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (eigenvectors as matching columns).
pub fn sorted_symmetric_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let k = a.nrows();
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(k, k);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn symmetric_eigenvalues(a: DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = a.symmetric_eigenvalues().iter().cloned().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Checks symmetry and positive semidefiniteness up to a relative tolerance.
pub fn check_psd(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::dims(format!(
            "covariance must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::param(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let min = symmetric_eigenvalues(a.clone())
        .last()
        .cloned()
        .unwrap_or(0.0);
    if min < -1e-10 * scale {
        return Err(Error::NotPsd(min));
    }
    Ok(())
}

/// Cholesky solve of a symmetric positive definite system.
pub fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Filled row by row so that the draw order matches the row-sampling order
    // of the dataset generators.
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = rng.sample(StandardNormal);
        }
    }
    out
}

pub fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use approx::assert_relative_eq;

    fn check_reconstruction(x: &DMatrix<f64>) {
        let svd = ThinSvd::new(x);
        let mut us = svd.u.clone();
        for c in 0..svd.rank() {
            us.column_mut(c).scale_mut(svd.singular_values[c]);
        }
        let rebuilt = us * svd.v.transpose();
        assert!((rebuilt - x).amax() < 1e-10 * x.amax());
        let vtv = svd.v.tr_mul(&svd.v);
        assert!((vtv - DMatrix::identity(svd.rank(), svd.rank())).amax() < 1e-10);
    }

    #[test]
    fn thin_svd_wide_and_tall() {
        let mut rng = rng_from(3);
        check_reconstruction(&gaussian_matrix(7, 19, &mut rng));
        check_reconstruction(&gaussian_matrix(19, 7, &mut rng));
        check_reconstruction(&gaussian_matrix(9, 9, &mut rng));
    }

    #[test]
    fn rank_deficient_falls_back_and_truncates() {
        let mut rng = rng_from(4);
        let a = gaussian_matrix(6, 2, &mut rng);
        let b = gaussian_matrix(2, 10, &mut rng);
        let x = &a * &b;
        let svd = ThinSvd::new(&x);
        assert_eq!(svd.rank(), 2);
        check_reconstruction(&x);
    }

    #[test]
    fn pinv_of_row_vector() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let beta = ThinSvd::new(&x).pinv_solve(&DVector::from_vec(vec![2.0]));
        assert_relative_eq!(beta[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(beta[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let svd = ThinSvd::new(&DMatrix::zeros(3, 4));
        assert_eq!(svd.rank(), 0);
        assert_eq!(svd.pinv_solve(&DVector::from_element(3, 1.0)).norm(), 0.0);
    }

    #[test]
    fn psd_check() {
        assert!(check_psd(&DMatrix::identity(3, 3)).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(check_psd(&bad), Err(Error::NotPsd(_))));
    }
}
