use nalgebra::DMatrix;

use super::{ensure_symmetric, max_abs, DenseMatrix};
use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`sym_eig`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// `S = W diag(values) Wᵀ` with orthonormal `W` and values sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

impl EigenDecomposition {
    /// Reassembles a decomposition from stored parts (e.g. a model file).
    ///
    /// Checks shape, ordering and orthonormality (`‖WᵀW − I‖_max ≤ 1e-10`).
    pub fn from_parts(vectors: DMatrix<f64>, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::EmptyMatrix);
        }
        if vectors.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                context: "eigendecomposition",
                expected: format!("{n}x{n} eigenvectors"),
                found: format!("{}x{}", vectors.nrows(), vectors.ncols()),
            });
        }
        if values.iter().chain(vectors.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Eigen("non-finite entry".into()));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Eigen("eigenvalues must be sorted in descending order".into()));
        }
        let decomposition = Self { vectors, values };
        let err = decomposition.orthonormality_error();
        if err > 1e-10 {
            return Err(Error::Eigen(format!("eigenvectors not orthonormal (error {err:e})")));
        }
        Ok(decomposition)
    }

    /// Decomposition of the `n x n` identity.
    pub fn identity(n: usize) -> Self {
        Self {
            vectors: DMatrix::identity(n, n),
            values: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `W diag(values) Wᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        scaled * self.vectors.transpose()
    }

    /// `‖WᵀW − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.dim();
        let gram = self.vectors.transpose() * &self.vectors;
        max_abs(&(gram - DMatrix::<f64>::identity(n, n)))
    }
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
///
/// Inputs must be square and symmetric within `1e-10 * max|S|`; asymmetric
/// matrices are rejected rather than symmetrized.
pub fn sym_eig(s: &DenseMatrix) -> Result<EigenDecomposition> {
    sym_eig_raw(s.as_matrix())
}

pub(crate) fn sym_eig_raw(s: &DMatrix<f64>) -> Result<EigenDecomposition> {
    ensure_symmetric(s, SYMMETRY_TOLERANCE)?;
    let (vectors, values) = backend::eigh_ascending(s)?;
    let n = values.len();
    // Backends return ascending order; flip columns to descending.
    let vectors = DMatrix::from_fn(n, n, |i, j| vectors[(i, n - 1 - j)]);
    let values = values.into_iter().rev().collect();
    Ok(EigenDecomposition { vectors, values })
}

#[cfg(feature = "system-lapack")]
mod backend {
    use nalgebra::DMatrix;

    use crate::error::{Error, Result};

    #[link(name = "lapack")]
    extern "C" {
        fn dsyevd_(
            jobz: *const u8,
            uplo: *const u8,
            n: *const i32,
            a: *mut f64,
            lda: *const i32,
            w: *mut f64,
            work: *mut f64,
            lwork: *const i32,
            iwork: *mut i32,
            liwork: *const i32,
            info: *mut i32,
        );
    }

    pub(super) fn eigh_ascending(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let n = s.nrows();
        let n_i32 = i32::try_from(n).map_err(|_| Error::Eigen(format!("matrix too large: {n}")))?;
        // dsyevd with JOBZ='V' needs lwork ≥ 1 + 6n + 2n², liwork ≥ 3 + 5n.
        let lwork = 1 + 6 * n_i32 + 2 * n_i32 * n_i32;
        let liwork = 3 + 5 * n_i32;
        let mut a = s.clone();
        let mut w = vec![0.0; n];
        let mut work = vec![0.0; lwork as usize];
        let mut iwork = vec![0_i32; liwork as usize];
        let mut info = 0_i32;
        // SAFETY: `a` is an n x n column-major buffer with leading dimension n and
        // every workspace has the documented minimum length for JOBZ='V'.
        unsafe {
            dsyevd_(
                b"V".as_ptr(),
                b"L".as_ptr(),
                &n_i32,
                a.as_mut_ptr(),
                &n_i32,
                w.as_mut_ptr(),
                work.as_mut_ptr(),
                &lwork,
                iwork.as_mut_ptr(),
                &liwork,
                &mut info,
            );
        }
        if info != 0 {
            return Err(Error::Eigen(format!("dsyevd returned info = {info}")));
        }
        Ok((a, w))
    }
}

#[cfg(not(feature = "system-lapack"))]
mod backend {
    use nalgebra::{DMatrix, SymmetricEigen};

    use crate::error::{Error, Result};

    pub(super) fn eigh_ascending(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let eig = SymmetricEigen::try_new(s.clone(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigen("symmetric QR iteration did not converge".into()))?;
        let n = s.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        Ok((vectors, values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::max_abs_diff;

    #[test]
    fn identity_has_unit_eigenvalues() {
        let eig = sym_eig(&DenseMatrix::identity(3).unwrap()).unwrap();
        assert_eq!(eig.values(), &[1.0, 1.0, 1.0]);
        assert!(eig.orthonormality_error() <= 1e-12);
    }

    #[test]
    fn diagonal_sorted_descending() {
        let d = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let eig = sym_eig(&d).unwrap();
        assert!((eig.values()[0] - 3.0).abs() < 1e-14);
        assert!((eig.values()[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_symmetric_reconstructs() {
        let x = DenseMatrix::from_fn(8, 8, |i, j| ((i * 31 + j * 17) % 13) as f64 / 6.0 - 1.0).unwrap();
        let s = DenseMatrix::new(x.as_matrix() + x.transpose().as_matrix()).unwrap();
        let eig = sym_eig(&s).unwrap();
        assert!(eig.orthonormality_error() <= 1e-10);
        assert!(max_abs_diff(&eig.reconstruct(), &s) <= 1e-8 * s.max_abs());
        assert!(eig.values().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        let r = DenseMatrix::zeros(2, 3).unwrap();
        assert!(matches!(sym_eig(&r), Err(Error::NotSquare { .. })));
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.1, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn from_parts_validates() {
        let eig = EigenDecomposition::identity(2);
        assert!(EigenDecomposition::from_parts(eig.vectors().clone(), vec![2.0, 1.0]).is_ok());
        assert!(EigenDecomposition::from_parts(eig.vectors().clone(), vec![1.0, 2.0]).is_err());
        assert!(EigenDecomposition::from_parts(eig.vectors() * 2.0, vec![2.0, 1.0]).is_err());
    }
}
