//! Spectral filters: every KRR variant here scales the eigen-coordinates of `Y`
//! by a function of the eigenvalue pair `(σ_i, s_j)`.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::matrix::{check_cap, kron_raw, sym_eig, DenseMatrix, EigenDecomposition};
use crate::models::{project, rotate_back, DualCoefficients, LabelMatrix, INVERTIBILITY_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralFilter {
    /// `1 / (σ + λ)`; the task eigenvalue is ignored.
    Tikhonov { lambda: f64 },
    /// `1 / (σ s + λ)`.
    KronTikhonov { lambda: f64 },
    /// `1 / ((σ + λ_u)(s + λ_v))`.
    TwoStep { lambda_u: f64, lambda_v: f64 },
    /// `1 / ((σ + λ_u) s)`.
    IndependentTask { lambda_u: f64 },
}

impl SpectralFilter {
    /// Checks that every regularization parameter is finite and positive.
    pub fn validate(&self) -> Result<()> {
        let params: &[(&str, f64)] = match self {
            SpectralFilter::Tikhonov { lambda } | SpectralFilter::KronTikhonov { lambda } => &[("lambda", *lambda)],
            SpectralFilter::TwoStep { lambda_u, lambda_v } => &[("lambda_u", *lambda_u), ("lambda_v", *lambda_v)],
            SpectralFilter::IndependentTask { lambda_u } => &[("lambda_u", *lambda_u)],
        };
        for (name, v) in params {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SpectralFilter::Tikhonov { .. } => "tikhonov",
            SpectralFilter::KronTikhonov { .. } => "kron_tikhonov",
            SpectralFilter::TwoStep { .. } => "two_step",
            SpectralFilter::IndependentTask { .. } => "independent_task",
        }
    }

    fn denominator(&self, sigma: f64, s: f64) -> f64 {
        match *self {
            SpectralFilter::Tikhonov { lambda } => sigma + lambda,
            SpectralFilter::KronTikhonov { lambda } => sigma * s + lambda,
            SpectralFilter::TwoStep { lambda_u, lambda_v } => (sigma + lambda_u) * (s + lambda_v),
            SpectralFilter::IndependentTask { lambda_u } => (sigma + lambda_u) * s,
        }
    }

    /// Filter value at the eigenvalue pair `(σ, s)`.
    pub fn eval(&self, sigma: f64, s: f64) -> Result<f64> {
        let d = self.denominator(sigma, s);
        if d == 0.0 {
            return Err(Error::Singular(format!(
                "{} filter undefined at sigma={sigma}, s={s}",
                self.kind_name()
            )));
        }
        Ok(1.0 / d)
    }
}

impl fmt::Display for SpectralFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectralFilter::Tikhonov { lambda } | SpectralFilter::KronTikhonov { lambda } => {
                write!(f, "{}(lambda={lambda})", self.kind_name())
            }
            SpectralFilter::TwoStep { lambda_u, lambda_v } => {
                write!(f, "two_step(lambda_u={lambda_u}, lambda_v={lambda_v})")
            }
            SpectralFilter::IndependentTask { lambda_u } => write!(f, "independent_task(lambda_u={lambda_u})"),
        }
    }
}

/// `Θ_ij = ϑ(σ_i, s_j)`, rejecting pairs whose denominator is negligible
/// relative to its value at the largest eigenvalues.
fn filter_grid(f: &SpectralFilter, eig_k: &EigenDecomposition, eig_g: &EigenDecomposition) -> Result<DMatrix<f64>> {
    let reference = f.denominator(eig_k.max_value(), eig_g.max_value()).abs();
    let eps = INVERTIBILITY_EPS * reference;
    let (sig, s) = (eig_k.values(), eig_g.values());
    let mut theta = DMatrix::zeros(sig.len(), s.len());
    for (j, &sj) in s.iter().enumerate() {
        for (i, &si) in sig.iter().enumerate() {
            let d = f.denominator(si, sj);
            if reference == 0.0 || d.abs() <= eps {
                return Err(Error::Singular(format!(
                    "{f} is undefined at eigenvalues sigma={si:e}, s={sj:e}"
                )));
            }
            theta[(i, j)] = 1.0 / d;
        }
    }
    Ok(theta)
}

fn decompose(k: &GramMatrix, g: &GramMatrix, y: Option<&LabelMatrix>) -> Result<(EigenDecomposition, EigenDecomposition)> {
    if let Some(y) = y {
        if (k.size(), g.size()) != (y.m(), y.q()) {
            return Err(Error::DimensionMismatch {
                context: "filtered fit",
                expected: format!("{}x{} kernels", y.m(), y.q()),
                found: format!("{}x{}", k.size(), g.size()),
            });
        }
    }
    Ok((sym_eig(k.matrix())?, sym_eig(g.matrix())?))
}

/// `A = U ((Uᵀ Y V) ⊙ Θ) Vᵀ`.
pub fn filtered_fit(k: &GramMatrix, g: &GramMatrix, y: &LabelMatrix, f: &SpectralFilter) -> Result<DualCoefficients> {
    f.validate()?;
    let (eig_k, eig_g) = decompose(k, g, Some(y))?;
    let theta = filter_grid(f, &eig_k, &eig_g)?;
    let e = project(&eig_k, &eig_g, y.matrix().as_matrix());
    let a = rotate_back(&eig_k, &eig_g, &e.component_mul(&theta));
    Ok(DualCoefficients::new(DenseMatrix::new(a)?))
}

/// Hat matrix `H = (V⊗U) diag(σ_i s_j ϑ(σ_i, s_j)) (V⊗U)ᵀ`, so that
/// `H vec(Y) = vec(K A G)`. Subject to the densification cap.
pub fn hat_matrix(k: &GramMatrix, g: &GramMatrix, f: &SpectralFilter) -> Result<DenseMatrix> {
    f.validate()?;
    check_cap(k.size() * g.size())?;
    let (eig_k, eig_g) = decompose(k, g, None)?;
    let theta = filter_grid(f, &eig_k, &eig_g)?;
    let m = eig_k.dim();
    let w = kron_raw(eig_g.vectors(), eig_k.vectors());
    let mut scaled = w.clone();
    for (j, &sj) in eig_g.values().iter().enumerate() {
        for (i, &si) in eig_k.values().iter().enumerate() {
            scaled.column_mut(j * m + i).scale_mut(si * sj * theta[(i, j)]);
        }
    }
    let mut h = scaled * w.transpose();
    let n = h.nrows();
    for c in 0..n {
        for r in (c + 1)..n {
            let v = 0.5 * (h[(r, c)] + h[(c, r)]);
            h[(r, c)] = v;
            h[(c, r)] = v;
        }
    }
    DenseMatrix::new(h)
}

/// Relative slack allowed on the theoretical constants.
pub const ADMISSIBILITY_SLACK: f64 = 0.05;

pub const DEFAULT_NUS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityOptions {
    /// Kernel bound; eigenvalues `ς` of the pairwise kernel lie in `(0, κ²]`.
    pub kappa: f64,
    /// Instance/task eigenvalue factorization constant (`σ, s ≤ a √ς`).
    pub a: f64,
    /// Regularization factorization constant (`λ_u, λ_v ≤ b √λ`). When absent it
    /// is taken from the filter's own pair as `max(λ_u, λ_v) / √(λ_u λ_v)`.
    pub b: Option<f64>,
    pub nus: Vec<f64>,
    /// Number of log-spaced points on each of the `ς` and `λ` axes (≥ 100).
    pub grid_size: usize,
    /// Smallest `λ` probed; defaults to `1e-8 κ²`.
    pub lambda_min: Option<f64>,
}

impl Default for AdmissibilityOptions {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            a: 1.0,
            b: None,
            nus: DEFAULT_NUS.to_vec(),
            grid_size: 200,
            lambda_min: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuEntry {
    pub nu: f64,
    /// Observed `sup (ς/λ)^ν |1 − ς φ_λ(ς)|`.
    pub gamma_nu_hat: f64,
    pub bound: f64,
    pub within: bool,
    /// Set when the per-`λ` supremum keeps increasing as `λ` decreases and ends
    /// above the bound: the qualification is exceeded.
    pub growing: bool,
}

/// Observed suprema of the admissibility conditions on a finite grid. The
/// grid approximates the suprema from below; a pass is evidence, not proof.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub filter: &'static str,
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    /// `sup |ς φ_λ(ς)|`, bound `D = 1`.
    pub d_hat: f64,
    /// `sup λ |φ_λ(ς)|`, bound `B = 1`.
    pub b_hat: f64,
    /// `sup |1 − ς φ_λ(ς)|`, bound `γ = 1`.
    pub gamma_hat: f64,
    /// Largest `ν` for which the last condition is claimed; `None` if no claim.
    pub qualification: Option<f64>,
    pub nus: Vec<NuEntry>,
    pub slack: f64,
    pub pass: bool,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                (llo + (lhi - llo) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Values of `ς φ_λ(ς)` and `φ_λ(ς)` over all probed factorizations of `ς` and `λ`.
fn factorized_values(kind: &SpectralFilter, a: f64, b: f64, varsigma: f64, lambda: f64, out: &mut Vec<(f64, f64)>) {
    out.clear();
    let root = varsigma.sqrt();
    let lroot = lambda.sqrt();
    match kind {
        SpectralFilter::Tikhonov { .. } => {
            let phi = 1.0 / (varsigma + lambda);
            out.push((varsigma * phi, phi));
        }
        SpectralFilter::KronTikhonov { .. } | SpectralFilter::IndependentTask { .. } => {
            for sigma in [root / a, root, root * a] {
                let s = varsigma / sigma;
                let f = match kind {
                    SpectralFilter::KronTikhonov { .. } => SpectralFilter::KronTikhonov { lambda },
                    _ => SpectralFilter::IndependentTask { lambda_u: lambda },
                };
                let phi = 1.0 / f.denominator(sigma, s);
                out.push((varsigma * phi, phi));
            }
        }
        SpectralFilter::TwoStep { .. } => {
            for sigma in [root / a, root, root * a] {
                let s = varsigma / sigma;
                for lambda_u in [lroot / b, lroot, lroot * b] {
                    let lambda_v = lambda / lambda_u;
                    let phi = 1.0 / ((sigma + lambda_u) * (s + lambda_v));
                    out.push((varsigma * phi, phi));
                }
            }
        }
    }
}

fn resolve_b(f: &SpectralFilter, opts: &AdmissibilityOptions) -> f64 {
    match (opts.b, f) {
        (Some(b), _) => b,
        (None, SpectralFilter::TwoStep { lambda_u, lambda_v }) => {
            (lambda_u.max(*lambda_v) / (lambda_u * lambda_v).sqrt()).max(1.0)
        }
        (None, _) => 1.0,
    }
}

fn check_options(opts: &AdmissibilityOptions) -> Result<()> {
    if !(opts.kappa > 0.0 && opts.kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa must be > 0, got {}", opts.kappa)));
    }
    if opts.a.is_nan() || opts.a < 1.0 || opts.b.is_some_and(|b| b.is_nan() || b < 1.0) {
        return Err(Error::InvalidParameter("factorization constants a, b must be >= 1".into()));
    }
    if opts.grid_size < 100 {
        return Err(Error::InvalidParameter(format!("grid size must be >= 100, got {}", opts.grid_size)));
    }
    if let Some(nu) = opts.nus.iter().find(|nu| !(**nu > 0.0 && **nu <= 1.0)) {
        return Err(Error::InvalidParameter(format!("nu must lie in (0, 1], got {nu}")));
    }
    let k2 = opts.kappa * opts.kappa;
    if let Some(l) = opts.lambda_min {
        if !(l > 0.0 && l < k2) {
            return Err(Error::InvalidParameter(format!("lambda_min must lie in (0, kappa^2), got {l}")));
        }
    }
    Ok(())
}

/// Theoretical constants `(γ_ν, ν̄)` of each filter family.
fn constants(f: &SpectralFilter, a: f64, b: f64) -> (f64, Option<f64>) {
    match f {
        SpectralFilter::Tikhonov { .. } | SpectralFilter::KronTikhonov { .. } => (1.0, Some(1.0)),
        SpectralFilter::TwoStep { .. } => (2.0 * a * b, Some(0.5)),
        SpectralFilter::IndependentTask { .. } => (1.0, None),
    }
}

/// Per-`λ` supremum over `ς` (and factorizations) of `(ς/λ)^ν |1 − ς φ_λ(ς)|`,
/// in the order of `lambdas`.
pub fn qualification_profile(
    f: &SpectralFilter,
    opts: &AdmissibilityOptions,
    nu: f64,
    lambdas: &[f64],
) -> Result<Vec<f64>> {
    check_options(opts)?;
    let b = resolve_b(f, opts);
    let k2 = opts.kappa * opts.kappa;
    let varsigmas = log_grid(k2 * 1e-12, k2, opts.grid_size);
    let mut vals = Vec::new();
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let mut sup = 0.0_f64;
            for &vs in &varsigmas {
                factorized_values(f, opts.a, b, vs, lambda, &mut vals);
                for &(sphi, _) in &vals {
                    sup = sup.max((vs / lambda).powf(nu) * (1.0 - sphi).abs());
                }
            }
            sup
        })
        .collect())
}

/// Numerical check of the admissibility conditions on log-spaced grids over
/// `ς ∈ (0, κ²]` and `λ ∈ [λ_min, κ²]`, including the extreme factorizations
/// `σ ∈ {√ς/a, √ς, a√ς}` and `λ_u ∈ {√λ/b, √λ, b√λ}`.
///
/// Only the filter family of `f` matters; its own parameters are replaced by
/// the grid (and used to derive `b` when not given).
pub fn admissibility_check(f: &SpectralFilter, opts: &AdmissibilityOptions) -> Result<AdmissibilityReport> {
    check_options(opts)?;
    let b = resolve_b(f, opts);
    let k2 = opts.kappa * opts.kappa;
    let lambda_min = opts.lambda_min.unwrap_or(1e-8 * k2);
    let varsigmas = log_grid(k2 * 1e-12, k2, opts.grid_size);
    // Descending so that the growth test walks towards λ → 0.
    let mut lambdas = log_grid(lambda_min, k2, opts.grid_size);
    lambdas.reverse();

    let (gamma_nu_bound, qualification) = constants(f, opts.a, b);
    let mut d_hat = 0.0_f64;
    let mut b_hat = 0.0_f64;
    let mut gamma_hat = 0.0_f64;
    let mut per_lambda = vec![vec![0.0_f64; lambdas.len()]; opts.nus.len()];
    let mut vals = Vec::new();
    for (li, &lambda) in lambdas.iter().enumerate() {
        for &vs in &varsigmas {
            factorized_values(f, opts.a, b, vs, lambda, &mut vals);
            for &(sphi, phi) in &vals {
                d_hat = d_hat.max(sphi.abs());
                b_hat = b_hat.max(lambda * phi.abs());
                let resid = (1.0 - sphi).abs();
                gamma_hat = gamma_hat.max(resid);
                for (ni, &nu) in opts.nus.iter().enumerate() {
                    let v = (vs / lambda).powf(nu) * resid;
                    if v > per_lambda[ni][li] {
                        per_lambda[ni][li] = v;
                    }
                }
            }
        }
    }

    let limit = |bound: f64| bound * (1.0 + ADMISSIBILITY_SLACK);
    let nus: Vec<NuEntry> = opts
        .nus
        .iter()
        .zip(&per_lambda)
        .map(|(&nu, sups)| {
            let gamma_nu_hat = sups.iter().copied().fold(0.0, f64::max);
            let monotone = sups.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
            let last = *sups.last().expect("grid is non-empty");
            NuEntry {
                nu,
                gamma_nu_hat,
                bound: gamma_nu_bound,
                within: gamma_nu_hat <= limit(gamma_nu_bound),
                growing: monotone && last > limit(gamma_nu_bound),
            }
        })
        .collect();

    let basic = d_hat <= limit(1.0) && b_hat <= limit(1.0) && gamma_hat <= limit(1.0);
    let qualified = nus
        .iter()
        .filter(|e| qualification.is_some_and(|q| e.nu <= q))
        .all(|e| e.within);
    Ok(AdmissibilityReport {
        filter: f.kind_name(),
        kappa: opts.kappa,
        a: opts.a,
        b,
        d_hat,
        b_hat,
        gamma_hat,
        qualification,
        nus,
        slack: ADMISSIBILITY_SLACK,
        pass: basic && qualified && qualification.is_some(),
    })
}

/// Empirical kernel bound `κ = √(max k(u,u) · max g(v,v))`.
pub fn empirical_kappa(k: &GramMatrix, g: &GramMatrix) -> f64 {
    (k.max_diagonal().max(0.0) * g.max_diagonal().max(0.0)).sqrt()
}
