//! Dense matrix primitives and the vectorization / Kronecker algebra.
//!
//! `vec` stacks columns: entry `(i, j)` of an `r x c` matrix lands at index
//! `j * r + i`. With that ordering `vec(M X N) = (Nᵀ ⊗ M) vec(X)`, which is what
//! lets every pairwise model avoid forming the `(mq) x (mq)` Kronecker Gram.

mod eigen;
mod smoother;

pub use eigen::{sym_eig, EigenDecomposition};
pub use smoother::SmootherMatrix;

use std::fmt;
use std::ops::Deref;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default upper bound on `m * q` for operations that materialize `(mq) x (mq)` matrices.
pub const DEFAULT_DENSIFICATION_CAP: usize = 4096;

/// Environment variable overriding [`DEFAULT_DENSIFICATION_CAP`].
pub const DENSIFICATION_CAP_ENV: &str = "PAIRKRR_DENSIFICATION_CAP";

/// Current densification cap, honouring `PAIRKRR_DENSIFICATION_CAP`.
pub fn densification_cap() -> usize {
    std::env::var(DENSIFICATION_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&cap| cap > 0)
        .unwrap_or(DEFAULT_DENSIFICATION_CAP)
}

pub(crate) fn check_cap(size: usize) -> Result<()> {
    let cap = densification_cap();
    if size > cap {
        return Err(Error::CapExceeded { size, cap });
    }
    Ok(())
}

/// A finite, non-empty real matrix.
///
/// Read access goes through `Deref` to the underlying [`DMatrix`]; the only way
/// to build one is through a validating constructor.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::EmptyMatrix);
        }
        for j in 0..inner.ncols() {
            for i in 0..inner.nrows() {
                if !inner[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self(inner))
    }

    /// Builds a matrix from entries listed row by row.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "from_row_slice",
                expected: format!("{} entries", rows * cols),
                found: format!("{} entries", data.len()),
            });
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
            return Err(Error::DimensionMismatch {
                context: "from_rows",
                expected: format!("{ncols} columns"),
                found: format!("{} columns", bad.len()),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_slice(rows.len(), ncols, &flat)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(rows, cols, f))
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(rows, cols))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix(self.0.transpose())
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }

    /// Rows of the matrix as vectors, top to bottom.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }
}

impl Deref for DenseMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix({}x{}) {:?}", self.rows(), self.cols(), self.to_rows())
    }
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Largest `|S[i,j] - S[j,i]|`.
pub(crate) fn asymmetry(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn ensure_square(s: &DMatrix<f64>) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(Error::NotSquare {
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    Ok(())
}

/// Rejects matrices whose asymmetry exceeds `rel_tol * max|S|`.
pub(crate) fn ensure_symmetric(s: &DMatrix<f64>, rel_tol: f64) -> Result<()> {
    ensure_square(s)?;
    let asym = asymmetry(s);
    let tolerance = rel_tol * max_abs(s);
    if asym > tolerance {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance,
        });
    }
    Ok(())
}

/// Column-stacking vectorization.
pub fn vec(m: &DenseMatrix) -> Vec<f64> {
    // nalgebra storage is column-major, so iteration order is column stacking.
    m.iter().copied().collect()
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            context: "unvec",
            expected: format!("{} entries for {rows}x{cols}", rows * cols),
            found: format!("{} entries", v.len()),
        });
    }
    DenseMatrix::new(DMatrix::from_column_slice(rows, cols, v))
}

/// Kronecker product `A ⊗ B`: block `(i, j)` is `A[i,j] * B`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix(kron_raw(a, b))
}

pub(crate) fn kron_raw(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for aj in 0..ac {
        for ai in 0..ar {
            let scale = a[(ai, aj)];
            let mut block = out.view_mut((ai * br, aj * bc), (br, bc));
            block.zip_apply(b, |o, bv| *o = scale * bv);
        }
    }
    out
}

/// Returns `M X N`, i.e. `unvec((Nᵀ ⊗ M) vec(X))`, without forming the Kronecker product.
pub fn apply_kron_vec(n: &DenseMatrix, m: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if m.cols() != x.rows() || x.cols() != n.rows() {
        return Err(Error::DimensionMismatch {
            context: "apply_kron_vec",
            expected: format!("M: _x{}, X: {}x{}, N: {}x_", x.rows(), m.cols(), n.rows(), x.cols()),
            found: format!(
                "M: {}x{}, X: {}x{}, N: {}x{}",
                m.rows(),
                m.cols(),
                x.rows(),
                x.cols(),
                n.rows(),
                n.cols()
            ),
        });
    }
    DenseMatrix::new(m.as_matrix() * x.as_matrix() * n.as_matrix())
}

/// Solves a dense square system by LU; used only by verification paths.
pub(crate) fn dense_solve(a: DMatrix<f64>, b: &nalgebra::DVector<f64>, what: &str) -> Result<nalgebra::DVector<f64>> {
    let lu = a.lu();
    lu.solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(format!("{what} is not invertible")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn vec_stacks_columns() {
        assert_eq!(vec(&m(&[&[1.0, 0.0], &[0.0, 1.0]])), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(vec(&m(&[&[1.0, 2.0], &[3.0, 4.0]])), vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn unvec_examples() {
        assert_eq!(unvec(&[1.0, 3.0, 2.0, 4.0], 2, 2).unwrap(), m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        assert_eq!(unvec(&[5.0], 1, 1).unwrap(), m(&[&[5.0]]));
        assert!(matches!(unvec(&[1.0, 2.0, 3.0], 2, 2), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(DenseMatrix::new(DMatrix::zeros(0, 3)), Err(Error::EmptyMatrix)));
        assert!(matches!(
            DenseMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn kron_examples() {
        let b = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let i2 = DenseMatrix::identity(2).unwrap();
        let expected = m(&[
            &[1.0, 2.0, 0.0, 0.0],
            &[3.0, 4.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 2.0],
            &[0.0, 0.0, 3.0, 4.0],
        ]);
        assert_eq!(kron(&i2, &b), expected);
        let two = m(&[&[2.0]]);
        assert_eq!(kron(&two, &b).into_inner(), b.as_matrix() * 2.0);
    }

    #[test]
    fn kron_matches_index_formula() {
        let a = m(&[&[0.3, -1.2], &[2.5, 0.7]]);
        let b = m(&[&[1.1, -0.4], &[0.0, 3.3], &[-2.0, 0.5]]);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (6, 4));
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..3 {
                    for r in 0..2 {
                        assert_eq!(k[(i * 3 + p, j * 2 + r)], a[(i, j)] * b[(p, r)]);
                    }
                }
            }
        }
    }

    #[test]
    fn apply_kron_vec_examples() {
        let x = m(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let i2 = DenseMatrix::identity(2).unwrap();
        assert_eq!(apply_kron_vec(&i2, &i2, &x).unwrap(), x);
        let zero = DenseMatrix::zeros(2, 2).unwrap();
        assert_eq!(apply_kron_vec(&i2, &zero, &x).unwrap(), zero);
        let bad = DenseMatrix::zeros(3, 3).unwrap();
        assert!(apply_kron_vec(&i2, &bad, &x).is_err());
    }

    #[test]
    fn apply_kron_vec_matches_explicit_kron() {
        let n = m(&[&[0.2, -1.0], &[1.5, 0.4]]);
        let mm = m(&[&[1.0, 2.0], &[-0.3, 0.8]]);
        let x = m(&[&[0.1, 0.9], &[-1.4, 2.2]]);
        let lhs = vec(&apply_kron_vec(&n, &mm, &x).unwrap());
        let big = kron(&n.transpose(), &mm);
        let rhs = big.as_matrix() * nalgebra::DVector::from_vec(vec(&x));
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert!((l - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn cap_reads_environment_default() {
        // Other tests may set the variable; only check the parser fallback.
        assert!(densification_cap() >= 1);
        assert_eq!(DEFAULT_DENSIFICATION_CAP, 4096);
    }

    fn matrix_strategy(max: usize) -> impl Strategy<Value = DenseMatrix> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-10.0..10.0f64, r * c)
                .prop_map(move |v| DenseMatrix::from_row_slice(r, c, &v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn vec_unvec_round_trip(x in matrix_strategy(10)) {
            let v = vec(&x);
            prop_assert_eq!(unvec(&v, x.rows(), x.cols()).unwrap(), x);
        }

        #[test]
        fn vec_kron_identity(
            (r, p, s, t) in (1..=6usize, 1..=6usize, 1..=6usize, 1..=6usize),
            seed in proptest::collection::vec(-2.0..2.0f64, 3 * 36),
        ) {
            let mm = DenseMatrix::from_fn(r, p, |i, j| seed[i * 6 + j]).unwrap();
            let x = DenseMatrix::from_fn(p, s, |i, j| seed[36 + i * 6 + j]).unwrap();
            let n = DenseMatrix::from_fn(s, t, |i, j| seed[72 + i * 6 + j]).unwrap();
            let lhs = vec(&apply_kron_vec(&n, &mm, &x).unwrap());
            let rhs = kron(&n.transpose(), &mm).as_matrix() * nalgebra::DVector::from_vec(vec(&x));
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() <= 1e-10);
            }
        }

        #[test]
        fn kron_mixed_product(seed in proptest::collection::vec(-2.0..2.0f64, 2 * 4 + 2 * 9)) {
            let a = DenseMatrix::from_fn(2, 2, |i, j| seed[i * 2 + j]).unwrap();
            let c = DenseMatrix::from_fn(2, 2, |i, j| seed[4 + i * 2 + j]).unwrap();
            let b = DenseMatrix::from_fn(3, 3, |i, j| seed[8 + i * 3 + j]).unwrap();
            let d = DenseMatrix::from_fn(3, 3, |i, j| seed[17 + i * 3 + j]).unwrap();
            let lhs = kron(&a, &b).as_matrix() * kron(&c, &d).as_matrix();
            let ac = DenseMatrix::new(a.as_matrix() * c.as_matrix()).unwrap();
            let bd = DenseMatrix::new(b.as_matrix() * d.as_matrix()).unwrap();
            prop_assert!(max_abs_diff(&lhs, &kron(&ac, &bd)) <= 1e-10);
        }
    }
}
