//! Matrices of the form `a1 I⊗I + a2 J_q⊗I_m + a3 I_q⊗J_m + a4 J_q⊗J_m`.
//!
//! The set is closed under products and inverses, which is how Kronecker KRR
//! with smoother kernels collapses to a weighted average of averages. Acting on
//! `vec(Y)` for an `m x q` label matrix, the `a2` term sums each row over
//! tasks and the `a3` term sums each column over instances.

use nalgebra::DMatrix;

use super::{check_cap, kron_raw, DenseMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherMatrix {
    pub coeffs: [f64; 4],
    m: usize,
    q: usize,
}

impl SmootherMatrix {
    pub fn new(coeffs: [f64; 4], m: usize, q: usize) -> Result<Self> {
        if m == 0 || q == 0 {
            return Err(Error::EmptyMatrix);
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("smoother coefficients must be finite".into()));
        }
        Ok(Self { coeffs, m, q })
    }

    pub fn identity(m: usize, q: usize) -> Result<Self> {
        Self::new([1.0, 0.0, 0.0, 0.0], m, q)
    }

    /// Smoother form of `G ⊗ K` for `K = J_m + θ_u I`, `G = J_q + θ_v I`.
    pub fn from_smoother_kernels(m: usize, q: usize, theta_u: f64, theta_v: f64) -> Result<Self> {
        Self::new([theta_u * theta_v, theta_u, theta_v, 1.0], m, q)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if (self.m, self.q) != (other.m, other.q) {
            return Err(Error::DimensionMismatch {
                context: "smoother algebra",
                expected: format!("m={}, q={}", self.m, self.q),
                found: format!("m={}, q={}", other.m, other.q),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let mut c = self.coeffs;
        for (ci, oi) in c.iter_mut().zip(other.coeffs) {
            *ci += oi;
        }
        Self::new(c, self.m, self.q)
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        let mut c = self.coeffs;
        c[0] += shift;
        Self::new(c, self.m, self.q)
    }

    /// Product `self * other`, computed on the coefficients.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let [a1, a2, a3, a4] = self.coeffs;
        let [b1, b2, b3, b4] = other.coeffs;
        let (m, q) = (self.m as f64, self.q as f64);
        // J_q² = q J_q and J_m² = m J_m.
        let c1 = a1 * b1;
        let c2 = a1 * b2 + a2 * b1 + a2 * b2 * q;
        let c3 = a1 * b3 + a3 * b1 + a3 * b3 * m;
        let c4 = a1 * b4
            + a2 * b3
            + a2 * b4 * q
            + a3 * b2
            + a3 * b4 * m
            + a4 * b1
            + a4 * b2 * q
            + a4 * b3 * m
            + a4 * b4 * m * q;
        Self::new([c1, c2, c3, c4], self.m, self.q)
    }

    /// The four (possibly repeated) eigenvalues of the structured matrix.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let [a1, a2, a3, a4] = self.coeffs;
        let (m, q) = (self.m as f64, self.q as f64);
        [a1, a1 + a2 * q, a1 + a3 * m, a1 + a2 * q + a3 * m + a4 * m * q]
    }

    /// Inverse in closed form.
    ///
    /// Fails when any of the four eigenvalues is within `1e-12 * max|a_i|` of zero.
    pub fn inverse(&self) -> Result<Self> {
        let [a1, a2, a3, _] = self.coeffs;
        let [e1, e2, e3, e4] = self.eigenvalues();
        let scale = self.coeffs.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
        let eps = 1e-12 * scale;
        if scale == 0.0 || [e1, e2, e3, e4].iter().any(|e| e.abs() <= eps) {
            return Err(Error::Singular(format!(
                "structured matrix with coefficients {:?} has eigenvalues {:?}",
                self.coeffs,
                [e1, e2, e3, e4]
            )));
        }
        let (m, q) = (self.m as f64, self.q as f64);
        let d1 = 1.0 / a1;
        let d2 = -a2 / (a1 * e2);
        let d3 = -a3 / (a1 * e3);
        let d4 = (1.0 / e4 - 1.0 / e2 - 1.0 / e3 + 1.0 / e1) / (m * q);
        Self::new([d1, d2, d3, d4], self.m, self.q)
    }

    /// Applies the operator to an `m x q` matrix `Y`, returning `unvec(S vec(Y))`.
    pub fn apply(&self, y: &DenseMatrix) -> Result<DenseMatrix> {
        if (y.rows(), y.cols()) != (self.m, self.q) {
            return Err(Error::DimensionMismatch {
                context: "smoother apply",
                expected: format!("{}x{}", self.m, self.q),
                found: format!("{}x{}", y.rows(), y.cols()),
            });
        }
        let [a1, a2, a3, a4] = self.coeffs;
        let row_sums: Vec<f64> = (0..self.m).map(|i| y.row(i).sum()).collect();
        let col_sums: Vec<f64> = (0..self.q).map(|j| y.column(j).sum()).collect();
        let total: f64 = y.sum();
        DenseMatrix::from_fn(self.m, self.q, |i, j| {
            a1 * y[(i, j)] + a2 * row_sums[i] + a3 * col_sums[j] + a4 * total
        })
    }

    /// Explicit `(mq) x (mq)` matrix, subject to the densification cap.
    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let n = self.m * self.q;
        check_cap(n)?;
        let (im, iq) = (DMatrix::identity(self.m, self.m), DMatrix::identity(self.q, self.q));
        let (jm, jq) = (
            DMatrix::from_element(self.m, self.m, 1.0),
            DMatrix::from_element(self.q, self.q, 1.0),
        );
        let [a1, a2, a3, a4] = self.coeffs;
        let dense = kron_raw(&iq, &im) * a1
            + kron_raw(&jq, &im) * a2
            + kron_raw(&iq, &jm) * a3
            + kron_raw(&jq, &jm) * a4;
        DenseMatrix::new(dense)
    }
}
