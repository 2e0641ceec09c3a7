//! Gram matrices for instances (`K`) and tasks (`G`), and the pairwise kernels
//! built from them.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{check_cap, ensure_symmetric, kron_raw, sym_eig, DenseMatrix};
use crate::models::LabelMatrix;

/// Default relative PSD tolerance: `λ_min ≥ −1e-8 · λ_max`.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// How a Gram matrix was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Precomputed,
    Linear,
    Rbf,
    Gip,
    Smoother,
    Delta,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Precomputed => "precomputed",
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
            KernelKind::Gip => "gip",
            KernelKind::Smoother => "smoother",
            KernelKind::Delta => "delta",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "precomputed" => KernelKind::Precomputed,
            "linear" => KernelKind::Linear,
            "rbf" => KernelKind::Rbf,
            "gip" => KernelKind::Gip,
            "smoother" => KernelKind::Smoother,
            "delta" => KernelKind::Delta,
            other => return Err(Error::InvalidParameter(format!("unknown kernel kind {other:?}"))),
        })
    }
}

/// Kernel kind plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// RBF / GIP bandwidth γ.
    pub bandwidth: Option<f64>,
    /// Smoother weight θ.
    pub theta: Option<f64>,
}

impl KernelConfig {
    pub fn precomputed() -> Self {
        Self::plain(KernelKind::Precomputed)
    }

    pub fn plain(kind: KernelKind) -> Self {
        Self {
            kind,
            bandwidth: None,
            theta: None,
        }
    }

    pub fn rbf(bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Self {
            kind: KernelKind::Rbf,
            bandwidth: Some(bandwidth),
            theta: None,
        })
    }

    pub fn gip(bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Self {
            kind: KernelKind::Gip,
            bandwidth: Some(bandwidth),
            theta: None,
        })
    }

    pub fn smoother(theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("smoother theta must be >= 0, got {theta}")));
        }
        Ok(Self {
            kind: KernelKind::Smoother,
            bandwidth: None,
            theta: Some(theta),
        })
    }
}

fn check_bandwidth(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth must be > 0, got {gamma}")));
    }
    Ok(())
}

/// A symmetric positive semidefinite similarity matrix over one object type.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    matrix: DenseMatrix,
    config: KernelConfig,
}

impl GramMatrix {
    pub(crate) fn from_trusted(matrix: DenseMatrix, config: KernelConfig) -> Self {
        debug_assert!(matrix.is_square());
        Self { matrix, config }
    }

    /// The `n x n` identity, i.e. the kernel that treats every object as unique.
    pub fn delta(size: usize) -> Result<Self> {
        Ok(Self::from_trusted(
            DenseMatrix::identity(size)?,
            KernelConfig::plain(KernelKind::Delta),
        ))
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn config(&self) -> KernelConfig {
        self.config
    }

    pub fn source(&self) -> KernelKind {
        self.config.kind
    }

    /// Largest diagonal entry, i.e. `sup k(x, x)` over the observed objects.
    pub fn max_diagonal(&self) -> f64 {
        self.matrix.diagonal().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }
}

/// Linear kernel `X Xᵀ` over feature rows.
pub fn gram_linear(features: &DenseMatrix) -> GramMatrix {
    let x = features.as_matrix();
    let mut k = x * x.transpose();
    symmetrize_in_place(&mut k);
    GramMatrix::from_trusted(
        DenseMatrix::new(k).expect("product of finite matrices is finite"),
        KernelConfig::plain(KernelKind::Linear),
    )
}

fn rbf_rows(x: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let mut k = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = (x.row(i) - x.row(j)).norm_squared();
            let v = (-gamma * d2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Gaussian kernel `exp(−γ ‖x_i − x_j‖²)` over feature rows.
pub fn gram_rbf(features: &DenseMatrix, gamma: f64) -> Result<GramMatrix> {
    let config = KernelConfig::rbf(gamma)?;
    Ok(GramMatrix::from_trusted(DenseMatrix::new(rbf_rows(features, gamma))?, config))
}

/// Which side of the label matrix provides the interaction profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileAxis {
    /// Rows of `Y`: one profile per instance.
    Rows,
    /// Columns of `Y`: one profile per task.
    Cols,
}

/// Default GIP bandwidth `1/d`, `d` the profile length.
pub fn gip_default_bandwidth(labels: &LabelMatrix, axis: ProfileAxis) -> f64 {
    let d = match axis {
        ProfileAxis::Rows => labels.q(),
        ProfileAxis::Cols => labels.m(),
    };
    1.0 / d as f64
}

/// Gaussian interaction profile kernel: the RBF kernel over rows or columns of `Y`.
pub fn gram_gip(labels: &LabelMatrix, axis: ProfileAxis, gamma: f64) -> Result<GramMatrix> {
    let config = KernelConfig::gip(gamma)?;
    let y = labels.matrix().as_matrix();
    let k = match axis {
        ProfileAxis::Rows => rbf_rows(y, gamma),
        ProfileAxis::Cols => rbf_rows(&y.transpose(), gamma),
    };
    Ok(GramMatrix::from_trusted(DenseMatrix::new(k)?, config))
}

/// Feature-agnostic smoother kernel `J + θ I`.
pub fn gram_smoother(size: usize, theta: f64) -> Result<GramMatrix> {
    let config = KernelConfig::smoother(theta)?;
    let k = DMatrix::from_element(size, size, 1.0) + DMatrix::identity(size, size) * theta;
    Ok(GramMatrix::from_trusted(DenseMatrix::new(k)?, config))
}

/// Kronecker pairwise kernel value `k(u, ū) g(v, v̄)`.
pub fn kron_pairwise_eval(k_val: f64, g_val: f64) -> f64 {
    k_val * g_val
}

fn check_pair(k: &GramMatrix, g: &GramMatrix) -> Result<()> {
    check_cap(k.size() * g.size())
}

/// Gram matrix `(G + λ_v I) ⊗ (K + λ_u I)` of the two-step pairwise kernel on the training dyads.
pub fn two_step_pairwise_gram(k: &GramMatrix, g: &GramMatrix, lambda_u: f64, lambda_v: f64) -> Result<DenseMatrix> {
    check_pair(k, g)?;
    for (name, l) in [("lambda_u", lambda_u), ("lambda_v", lambda_v)] {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be > 0, got {l}")));
        }
    }
    let ks = k.matrix().as_matrix() + DMatrix::identity(k.size(), k.size()) * lambda_u;
    let gs = g.matrix().as_matrix() + DMatrix::identity(g.size(), g.size()) * lambda_v;
    DenseMatrix::new(kron_raw(&gs, &ks))
}

/// `Ξ = (G⊗K)(λ_uλ_v I⊗I + λ_v I⊗K + λ_u G⊗I)^{-1}`, the kernel whose Setting-A
/// KRR solution with `λ = 1` coincides with two-step KRR. Verification sizes only.
pub fn xi_pairwise_gram(k: &GramMatrix, g: &GramMatrix, lambda_u: f64, lambda_v: f64) -> Result<DenseMatrix> {
    check_pair(k, g)?;
    let (m, q) = (k.size(), g.size());
    let km = k.matrix().as_matrix();
    let gm = g.matrix().as_matrix();
    let im = DMatrix::<f64>::identity(m, m);
    let iq = DMatrix::<f64>::identity(q, q);
    let inner = DMatrix::<f64>::identity(m * q, m * q) * (lambda_u * lambda_v)
        + kron_raw(&iq, km) * lambda_v
        + kron_raw(gm, &im) * lambda_u;
    let inner_inv = inner
        .try_inverse()
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("inner matrix of the Xi kernel is not invertible".into()))?;
    let mut xi = kron_raw(gm, km) * inner_inv;
    symmetrize_in_place(&mut xi);
    DenseMatrix::new(xi)
}

/// Symmetry and PSD check; wraps the matrix as a precomputed Gram matrix.
///
/// Rejects matrices with `λ_min < −tol · max(λ_max, 0)`.
pub fn validate_psd(matrix: &DenseMatrix, tol: f64) -> Result<GramMatrix> {
    ensure_symmetric(matrix, 1e-10)?;
    let eig = sym_eig(matrix)?;
    let (max, min) = (eig.max_value(), eig.min_value());
    if min < -tol * max.max(0.0) {
        return Err(Error::NotPositiveSemidefinite { min, max, tolerance: tol });
    }
    Ok(GramMatrix::from_trusted(matrix.clone(), KernelConfig::precomputed()))
}

fn symmetrize_in_place(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
}
