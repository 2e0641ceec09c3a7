//! Executable checks of the equivalences between the pairwise models, run on
//! fixed or seeded random instances.
//!
//! Random instances follow a fixed recipe so they can be reproduced from the
//! seed alone (see [`crate::rng`] for the number stream). For seed `s`:
//!
//! 1. if no size is given, `m` then `q` are drawn uniformly from `2..=8`;
//! 2. `X_u` (`m x m`) and `X_v` (`q x q`) are filled row by row with standard
//!    normals, and `K = X_u X_uᵀ + 0.1 I`, `G = X_v X_vᵀ + 0.1 I`;
//! 3. `Y` (`m x q`) is filled row by row with standard normals;
//! 4. `λ_u`, `λ_v`, `λ` are drawn log-uniformly from `[1e-2, 10]`;
//! 5. held-out instance features (3 rows) and task features (2 rows) are drawn
//!    like `X_u` and `X_v`; their test kernels are `X_test X_trainᵀ`.
//!
//! Every dense `(mq) x (mq)` computation in the crate lives here.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{gram_smoother, two_step_pairwise_gram, xi_pairwise_gram, GramMatrix, KernelConfig};
use crate::matrix::{
    apply_kron_vec, check_cap, dense_solve, kron_raw, max_abs, max_abs_diff, sym_eig, unvec, vec, DenseMatrix,
    SmootherMatrix,
};
use crate::models::{
    fit_it, fit_kron, fit_two_step, linear_filter_apply, predict_setting, training_predictions, LabelMatrix, Setting,
};
use crate::rng::SplitMix64;
use crate::spectral::{admissibility_check, hat_matrix, AdmissibilityOptions, SpectralFilter};

pub const THEOREM1_TOLERANCE: f64 = 1e-8;
pub const THEOREM2_TOLERANCE: f64 = 1e-7;
pub const THEOREM3_TOLERANCE: f64 = 1e-8;
pub const SMOOTHER_TOLERANCE: f64 = 1e-8;
pub const VEC_KRON_TOLERANCE: f64 = 1e-10;
pub const SOLVER_TOLERANCE: f64 = 1e-8;

/// Minimum eigenvalue ratio for a kernel to count as positive definite.
const PD_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckKind {
    Theorem1,
    Theorem2,
    Theorem3,
    Smoother,
    VecKron,
    Solver,
    Admissibility,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::Theorem1,
        CheckKind::Theorem2,
        CheckKind::Theorem3,
        CheckKind::Smoother,
        CheckKind::VecKron,
        CheckKind::Solver,
        CheckKind::Admissibility,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckKind::Theorem1 => "thm1",
            CheckKind::Theorem2 => "thm2",
            CheckKind::Theorem3 => "thm3",
            CheckKind::Smoother => "smoother",
            CheckKind::VecKron => "veckron",
            CheckKind::Solver => "solver",
            CheckKind::Admissibility => "admissibility",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown check {s:?}")))
    }
}

/// Whether a result is expected to agree (a check) or to disagree (a negative
/// control that breaks one hypothesis).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Check,
    NegativeControl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceDescriptor {
    pub m: usize,
    pub q: usize,
    pub seed: Option<u64>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremCheckResult {
    pub check: CheckKind,
    pub role: Role,
    /// Short free-form label, e.g. `"singular G"` for a control.
    pub variant: &'static str,
    pub instance: InstanceDescriptor,
    /// `max|lhs − rhs| / max|rhs|` (absolute when `rhs` is zero).
    pub discrepancy: f64,
    pub max_abs_discrepancy: f64,
    pub tolerance: f64,
    /// `discrepancy ≤ tolerance`.
    pub pass: bool,
}

impl TheoremCheckResult {
    fn new(
        check: CheckKind,
        role: Role,
        variant: &'static str,
        instance: InstanceDescriptor,
        (discrepancy, max_abs_discrepancy): (f64, f64),
        tolerance: f64,
    ) -> Self {
        Self {
            check,
            role,
            variant,
            instance,
            discrepancy,
            max_abs_discrepancy,
            tolerance,
            pass: discrepancy <= tolerance,
        }
    }

    /// A check is fine when it passes; a negative control when it fails.
    pub fn as_expected(&self) -> bool {
        match self.role {
            Role::Check => self.pass,
            Role::NegativeControl => !self.pass,
        }
    }
}

/// `(relative, absolute)` max-norm discrepancy of `lhs` against `rhs`.
fn compare(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> (f64, f64) {
    let abs = max_abs_diff(lhs, rhs);
    let scale = max_abs(rhs);
    (if scale > 0.0 { abs / scale } else { abs }, abs)
}

fn worst(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.max(b.0), a.1.max(b.1))
}

fn descriptor(k: &GramMatrix, g: &GramMatrix, lambdas: &[f64]) -> InstanceDescriptor {
    InstanceDescriptor {
        m: k.size(),
        q: g.size(),
        seed: None,
        lambdas: lambdas.to_vec(),
    }
}

fn require_pd(g: &GramMatrix, what: &str) -> Result<()> {
    let eig = sym_eig(g.matrix())?;
    if eig.min_value().is_nan() || eig.min_value() <= PD_RATIO * eig.max_value() {
        return Err(Error::HypothesisViolation(format!(
            "{what} must be positive definite (min eigenvalue {:e}, max {:e})",
            eig.min_value(),
            eig.max_value()
        )));
    }
    Ok(())
}

/// Independent-task KRR and two-step KRR with `λ_v = 0` predict the same values
/// for new instances on the training tasks, provided `G` is invertible.
pub fn check_theorem1(
    k: &GramMatrix,
    g: &GramMatrix,
    y: &LabelMatrix,
    lambda_u: f64,
    test_rows: &DenseMatrix,
) -> Result<TheoremCheckResult> {
    require_pd(g, "G")?;
    let it = fit_it(k, y, lambda_u)?;
    let ts = fit_two_step(k, g, y, lambda_u, 0.0)?;
    let f_it = predict_setting(&it, Setting::B, Some(test_rows), None)?;
    let f_ts = predict_setting(&ts, Setting::B, Some(test_rows), None)?;
    Ok(TheoremCheckResult::new(
        CheckKind::Theorem1,
        Role::Check,
        "",
        descriptor(k, g, &[lambda_u]),
        compare(&f_ts, &f_it),
        THEOREM1_TOLERANCE,
    ))
}

/// Negative control: with a singular `G` the `λ_v → 0` limit of two-step KRR
/// projects `Y` onto the range of `G`, so it no longer matches independent-task KRR.
pub fn theorem1_singular_control(
    k: &GramMatrix,
    g: &GramMatrix,
    y: &LabelMatrix,
    lambda_u: f64,
    test_rows: &DenseMatrix,
) -> Result<TheoremCheckResult> {
    let it = fit_it(k, y, lambda_u)?;
    let f_it = predict_setting(&it, Setting::B, Some(test_rows), None)?;
    let eig = sym_eig(g.matrix())?;
    let cutoff = PD_RATIO * eig.max_value();
    let v = eig.vectors();
    let mut kept = v.clone();
    for (j, &s) in eig.values().iter().enumerate() {
        if s <= cutoff {
            kept.column_mut(j).fill(0.0);
        }
    }
    // lim_{λ_v→0} (G + λ_v I)^{-1} G = projector onto range(G).
    let projector = &kept * v.transpose();
    let f_ts = f_it.as_matrix() * projector;
    Ok(TheoremCheckResult::new(
        CheckKind::Theorem1,
        Role::NegativeControl,
        "singular G",
        descriptor(k, g, &[lambda_u]),
        compare(&f_ts, &f_it),
        THEOREM1_TOLERANCE,
    ))
}

fn dense_krr_fitted(gram: &DMatrix<f64>, y: &LabelMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    let rhs = DVector::from_vec(vec(y.matrix()));
    let alpha = dense_solve(gram + DMatrix::identity(n, n) * lambda, &rhs, "pairwise KRR system")?;
    let fitted = gram * alpha;
    Ok(DMatrix::from_column_slice(y.m(), y.q(), fitted.as_slice()))
}

/// Setting-A KRR with the pairwise Gram `Ξ` and `λ = 1` reproduces the fitted
/// values of two-step KRR.
pub fn check_theorem2(
    k: &GramMatrix,
    g: &GramMatrix,
    y: &LabelMatrix,
    lambda_u: f64,
    lambda_v: f64,
) -> Result<TheoremCheckResult> {
    theorem2_with_pairwise_lambda(k, g, y, lambda_u, lambda_v, 1.0)
}

/// The same comparison with an arbitrary regularization on the `Ξ` side. Any
/// value other than 1 is a negative control.
pub fn theorem2_with_pairwise_lambda(
    k: &GramMatrix,
    g: &GramMatrix,
    y: &LabelMatrix,
    lambda_u: f64,
    lambda_v: f64,
    pairwise_lambda: f64,
) -> Result<TheoremCheckResult> {
    require_pd(k, "K")?;
    require_pd(g, "G")?;
    let xi = xi_pairwise_gram(k, g, lambda_u, lambda_v)?;
    let f_xi = dense_krr_fitted(xi.as_matrix(), y, pairwise_lambda)?;
    let f_ts = training_predictions(&fit_two_step(k, g, y, lambda_u, lambda_v)?)?;
    let role = if pairwise_lambda == 1.0 {
        Role::Check
    } else {
        Role::NegativeControl
    };
    Ok(TheoremCheckResult::new(
        CheckKind::Theorem2,
        role,
        if role == Role::Check { "" } else { "pairwise lambda != 1" },
        descriptor(k, g, &[lambda_u, lambda_v, pairwise_lambda]),
        compare(&f_xi, &f_ts),
        THEOREM2_TOLERANCE,
    ))
}

/// Two-step KRR coincides with OKKLS under the kernel
/// `Υ = (k + λ_u δ)(g + λ_v δ)`: same parameters, and same predictions for
/// pairs of new instances and new tasks.
pub fn check_theorem3(
    k: &GramMatrix,
    g: &GramMatrix,
    y: &LabelMatrix,
    lambda_u: f64,
    lambda_v: f64,
    k_test: &DenseMatrix,
    g_test: &DenseMatrix,
) -> Result<TheoremCheckResult> {
    let ts = fit_two_step(k, g, y, lambda_u, lambda_v)?;
    let upsilon = two_step_pairwise_gram(k, g, lambda_u, lambda_v)?;
    let rhs = DVector::from_vec(vec(y.matrix()));
    let alpha = dense_solve(upsilon.into_inner(), &rhs, "two-step pairwise Gram")?;
    let a_okkls = DMatrix::from_column_slice(y.m(), y.q(), alpha.as_slice());
    let a_ts = ts.coefficients().expect("kernel model").matrix().as_matrix();
    let params = compare(a_ts, &a_okkls);

    // Off-sample the delta terms vanish, so Υ rows are plain products k·g.
    let f_ts = predict_setting(&ts, Setting::D, Some(k_test), Some(g_test))?;
    let f_okkls = kron_raw(g_test.as_matrix(), k_test.as_matrix()) * &alpha;
    let f_okkls = DMatrix::from_column_slice(k_test.rows(), g_test.rows(), f_okkls.as_slice());
    let preds = compare(&f_ts, &f_okkls);
    Ok(TheoremCheckResult::new(
        CheckKind::Theorem3,
        Role::Check,
        "",
        descriptor(k, g, &[lambda_u, lambda_v]),
        worst(params, preds),
        THEOREM3_TOLERANCE,
    ))
}

/// Out of contract: on training pairs the delta terms of `Υ` are active and
/// OKKLS interpolates `Y`, while two-step KRR shrinks. Reported as a negative control.
pub fn theorem3_in_sample_control(
    k: &GramMatrix,
    g: &GramMatrix,
    y: &LabelMatrix,
    lambda_u: f64,
    lambda_v: f64,
) -> Result<TheoremCheckResult> {
    let f_ts = training_predictions(&fit_two_step(k, g, y, lambda_u, lambda_v)?)?;
    let upsilon = two_step_pairwise_gram(k, g, lambda_u, lambda_v)?;
    let f_okkls = dense_krr_fitted(upsilon.as_matrix(), y, 0.0)?;
    Ok(TheoremCheckResult::new(
        CheckKind::Theorem3,
        Role::NegativeControl,
        "in-sample pairs",
        descriptor(k, g, &[lambda_u, lambda_v]),
        compare(&f_ts, &f_okkls),
        THEOREM3_TOLERANCE,
    ))
}

/// Hat coefficients `(a1..a4)` of Kronecker KRR with smoother kernels.
pub fn smoother_hat(m: usize, q: usize, theta_u: f64, theta_v: f64, lambda: f64) -> Result<SmootherMatrix> {
    let c = SmootherMatrix::from_smoother_kernels(m, q, theta_u, theta_v)?;
    c.mul(&c.shifted(lambda)?.inverse()?)
}

/// Filter weights equivalent to a smoother hat: `a2` (sums over tasks) becomes
/// the row-mean weight and `a3` (sums over instances) the column-mean weight.
pub fn smoother_filter_weights(h: &SmootherMatrix) -> [f64; 4] {
    let [a1, a2, a3, a4] = h.coeffs;
    let (m, q) = (h.m() as f64, h.q() as f64);
    [a1, a3 * m, a2 * q, a4 * m * q]
}

fn smoother_setup(
    m: usize,
    q: usize,
    theta_u: f64,
    theta_v: f64,
    lambda: f64,
    y: &LabelMatrix,
) -> Result<(DMatrix<f64>, SmootherMatrix, InstanceDescriptor)> {
    if (y.m(), y.q()) != (m, q) {
        return Err(Error::DimensionMismatch {
            context: "smoother check",
            expected: format!("{m}x{q} labels"),
            found: format!("{}x{}", y.m(), y.q()),
        });
    }
    let k = gram_smoother(m, theta_u)?;
    let g = gram_smoother(q, theta_v)?;
    let f_kron = training_predictions(&fit_kron(&k, &g, y, lambda)?)?.into_inner();
    let h = smoother_hat(m, q, theta_u, theta_v, lambda)?;
    let desc = InstanceDescriptor {
        m,
        q,
        seed: None,
        lambdas: vec![theta_u, theta_v, lambda],
    };
    Ok((f_kron, h, desc))
}

/// Kronecker KRR with smoother kernels is a weighted average of averages: the
/// fitted values equal the linear filter with weights read off the structured
/// hat matrix. When `m q` fits under the densification cap the structured hat
/// is also compared against the dense one.
pub fn check_smoother_theorem(
    m: usize,
    q: usize,
    theta_u: f64,
    theta_v: f64,
    lambda: f64,
    y: &LabelMatrix,
) -> Result<TheoremCheckResult> {
    let (f_kron, h, desc) = smoother_setup(m, q, theta_u, theta_v, lambda, y)?;
    let f_filter = linear_filter_apply(y.matrix(), smoother_filter_weights(&h));
    let mut disc = compare(f_filter.as_matrix(), &f_kron);
    if check_cap(m * q).is_ok() {
        let k = gram_smoother(m, theta_u)?;
        let g = gram_smoother(q, theta_v)?;
        let dense = hat_matrix(&k, &g, &SpectralFilter::KronTikhonov { lambda })?;
        disc = worst(disc, compare(h.to_dense()?.as_matrix(), dense.as_matrix()));
    }
    Ok(TheoremCheckResult::new(
        CheckKind::Smoother,
        Role::Check,
        "",
        desc,
        disc,
        SMOOTHER_TOLERANCE,
    ))
}

/// Negative control: exchanging the row- and column-mean weights.
pub fn smoother_swapped_control(
    m: usize,
    q: usize,
    theta_u: f64,
    theta_v: f64,
    lambda: f64,
    y: &LabelMatrix,
) -> Result<TheoremCheckResult> {
    let (f_kron, h, desc) = smoother_setup(m, q, theta_u, theta_v, lambda, y)?;
    let [a1, a2, a3, a4] = smoother_filter_weights(&h);
    let f_filter = linear_filter_apply(y.matrix(), [a1, a3, a2, a4]);
    Ok(TheoremCheckResult::new(
        CheckKind::Smoother,
        Role::NegativeControl,
        "row/column weights swapped",
        desc,
        compare(f_filter.as_matrix(), &f_kron),
        SMOOTHER_TOLERANCE,
    ))
}

fn normal_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            x[(i, j)] = rng.normal();
        }
    }
    x
}

/// `vec(M X N) = (Nᵀ ⊗ M) vec(X)` for random `M` (`r x p`), `X` (`p x s`), `N` (`s x t`).
pub fn check_vec_kron(seed: u64, dims: (usize, usize, usize, usize)) -> Result<TheoremCheckResult> {
    let (r, p, s, t) = dims;
    if [r, p, s, t].iter().any(|&d| d == 0 || d > 8) {
        return Err(Error::InvalidParameter(format!("dimensions must lie in 1..=8, got {dims:?}")));
    }
    let mut rng = SplitMix64::new(seed);
    let m = DenseMatrix::new(normal_matrix(&mut rng, r, p))?;
    let x = DenseMatrix::new(normal_matrix(&mut rng, p, s))?;
    let n = DenseMatrix::new(normal_matrix(&mut rng, s, t))?;
    let lhs = apply_kron_vec(&n, &m, &x)?;
    let rhs = kron_raw(&n.transpose(), &m) * DVector::from_vec(vec(&x));
    let rhs = unvec(rhs.as_slice(), r, t)?;
    Ok(TheoremCheckResult::new(
        CheckKind::VecKron,
        Role::Check,
        "",
        InstanceDescriptor {
            m: r,
            q: t,
            seed: Some(seed),
            lambdas: vec![],
        },
        compare(lhs.as_matrix(), rhs.as_matrix()),
        VEC_KRON_TOLERANCE,
    ))
}

/// Eigen-shortcut Kronecker solve against a dense `(G ⊗ K + λ I)` solve.
pub fn check_shifted_kron_solver(seed: u64, m: usize, q: usize, lambda: f64) -> Result<TheoremCheckResult> {
    check_cap(m * q)?;
    let mut rng = SplitMix64::new(seed);
    let k = random_pd_gram(&mut rng, m)?;
    let g = random_pd_gram(&mut rng, q)?;
    let y = LabelMatrix::new(DenseMatrix::new(normal_matrix(&mut rng, m, q))?)?;
    solver_discrepancy(&k, &g, &y, lambda, Some(seed))
}

/// Eigen-shortcut against dense solve on given inputs.
pub fn solver_discrepancy(
    k: &GramMatrix,
    g: &GramMatrix,
    y: &LabelMatrix,
    lambda: f64,
    seed: Option<u64>,
) -> Result<TheoremCheckResult> {
    let (m, q) = (k.size(), g.size());
    check_cap(m * q)?;
    let model = fit_kron(k, g, y, lambda)?;
    let a = model.coefficients().expect("kernel model").matrix().as_matrix();
    let gamma = kron_raw(g.matrix(), k.matrix()) + DMatrix::identity(m * q, m * q) * lambda;
    let dense = dense_solve(gamma, &DVector::from_vec(vec(y.matrix())), "G ⊗ K + λ I")?;
    let dense = DMatrix::from_column_slice(m, q, dense.as_slice());
    let mut desc = descriptor(k, g, &[lambda]);
    desc.seed = seed;
    Ok(TheoremCheckResult::new(
        CheckKind::Solver,
        Role::Check,
        "",
        desc,
        compare(a, &dense),
        SOLVER_TOLERANCE,
    ))
}

fn random_pd_gram(rng: &mut SplitMix64, n: usize) -> Result<GramMatrix> {
    let x = normal_matrix(rng, n, n);
    Ok(GramMatrix::from_trusted(
        DenseMatrix::new(&x * x.transpose() + DMatrix::identity(n, n) * 0.1)?,
        KernelConfig::precomputed(),
    ))
}

/// A seeded random instance (see the module docs for the recipe).
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub k: GramMatrix,
    pub g: GramMatrix,
    pub y: LabelMatrix,
    pub lambda_u: f64,
    pub lambda_v: f64,
    pub lambda: f64,
    /// Instance features behind `K` (without the `0.1 I` ridge).
    pub x_u: DMatrix<f64>,
    pub x_v: DMatrix<f64>,
    /// Kernel rows of 3 held-out instances against the training instances.
    pub k_test: DenseMatrix,
    /// Kernel rows of 2 held-out tasks against the training tasks.
    pub g_test: DenseMatrix,
}

pub const LAMBDA_RANGE: (f64, f64) = (1e-2, 10.0);
pub const SIZE_RANGE: (usize, usize) = (2, 8);

impl RandomInstance {
    pub fn generate(seed: u64, size: Option<(usize, usize)>) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let (m, q) = match size {
            Some((m, q)) => (m, q),
            None => {
                let m = rng.int_in(SIZE_RANGE.0, SIZE_RANGE.1);
                let q = rng.int_in(SIZE_RANGE.0, SIZE_RANGE.1);
                (m, q)
            }
        };
        if m == 0 || q == 0 {
            return Err(Error::EmptyMatrix);
        }
        let x_u = normal_matrix(&mut rng, m, m);
        let x_v = normal_matrix(&mut rng, q, q);
        let ridge = |x: &DMatrix<f64>| {
            let n = x.nrows();
            DenseMatrix::new(x * x.transpose() + DMatrix::identity(n, n) * 0.1)
        };
        let k = GramMatrix::from_trusted(ridge(&x_u)?, KernelConfig::precomputed());
        let g = GramMatrix::from_trusted(ridge(&x_v)?, KernelConfig::precomputed());
        let y = LabelMatrix::new(DenseMatrix::new(normal_matrix(&mut rng, m, q))?)?;
        let (lo, hi) = LAMBDA_RANGE;
        let lambda_u = rng.log_uniform(lo, hi);
        let lambda_v = rng.log_uniform(lo, hi);
        let lambda = rng.log_uniform(lo, hi);
        let xu_test = normal_matrix(&mut rng, 3, m);
        let xv_test = normal_matrix(&mut rng, 2, q);
        let k_test = DenseMatrix::new(&xu_test * x_u.transpose())?;
        let g_test = DenseMatrix::new(&xv_test * x_v.transpose())?;
        Ok(Self {
            seed,
            k,
            g,
            y,
            lambda_u,
            lambda_v,
            lambda,
            x_u,
            x_v,
            k_test,
            g_test,
        })
    }

    pub fn m(&self) -> usize {
        self.y.m()
    }

    pub fn q(&self) -> usize {
        self.y.q()
    }

    /// Rank-deficient task kernel built from the first `q − 1` feature columns.
    pub fn singular_g(&self) -> Result<GramMatrix> {
        let q = self.q();
        let cols = q.saturating_sub(1).max(1);
        let x = self.x_v.columns(0, cols).into_owned();
        let g = if q == 1 { DMatrix::zeros(1, 1) } else { &x * x.transpose() };
        Ok(GramMatrix::from_trusted(DenseMatrix::new(g)?, KernelConfig::precomputed()))
    }
}

fn with_seed(mut r: TheoremCheckResult, seed: u64) -> TheoremCheckResult {
    r.instance.seed = Some(seed);
    r
}

/// Runs the theorem checks (and their negative controls) on one random instance.
pub fn run_instance_checks(kind: CheckKind, inst: &RandomInstance) -> Result<Vec<TheoremCheckResult>> {
    let s = inst.seed;
    let (k, g, y) = (&inst.k, &inst.g, &inst.y);
    let out = match kind {
        CheckKind::Theorem1 => vec![
            check_theorem1(k, g, y, inst.lambda_u, &inst.k_test)?,
            theorem1_singular_control(k, &inst.singular_g()?, y, inst.lambda_u, &inst.k_test)?,
        ],
        CheckKind::Theorem2 => {
            // Any pairwise λ away from 1 breaks the identity; use the instance's λ
            // pushed away from 1 by at least a factor of 2.
            let off = if (0.5..=2.0).contains(&inst.lambda) { 4.0 } else { inst.lambda };
            vec![
                check_theorem2(k, g, y, inst.lambda_u, inst.lambda_v)?,
                theorem2_with_pairwise_lambda(k, g, y, inst.lambda_u, inst.lambda_v, off)?,
            ]
        }
        CheckKind::Theorem3 => vec![
            check_theorem3(k, g, y, inst.lambda_u, inst.lambda_v, &inst.k_test, &inst.g_test)?,
            theorem3_in_sample_control(k, g, y, inst.lambda_u, inst.lambda_v)?,
        ],
        CheckKind::Smoother => {
            // θ's reuse the instance's λ_u, λ_v draws.
            let (m, q) = (inst.m(), inst.q());
            vec![
                check_smoother_theorem(m, q, inst.lambda_u, inst.lambda_v, inst.lambda, y)?,
                smoother_swapped_control(m, q, inst.lambda_u, inst.lambda_v, inst.lambda, y)?,
            ]
        }
        CheckKind::VecKron => {
            let (m, q) = (inst.m(), inst.q());
            vec![check_vec_kron(s, (m, q, m.max(q), q))?]
        }
        CheckKind::Solver => vec![solver_discrepancy(k, g, y, inst.lambda, Some(s))?],
        CheckKind::Admissibility => admissibility_results()?,
    };
    Ok(out.into_iter().map(|r| with_seed(r, s)).collect())
}

/// Admissibility reports condensed into check rows: observed/bound ratios of
/// the Tikhonov, Kronecker and two-step (`a = b = 1`) filters, plus the
/// two-step filter at `ν = 0.75` as a control that must exceed its bound.
pub fn admissibility_results() -> Result<Vec<TheoremCheckResult>> {
    let opts = AdmissibilityOptions {
        b: Some(1.0),
        ..AdmissibilityOptions::default()
    };
    let filters = [
        SpectralFilter::Tikhonov { lambda: 1.0 },
        SpectralFilter::KronTikhonov { lambda: 1.0 },
        SpectralFilter::TwoStep { lambda_u: 1.0, lambda_v: 1.0 },
    ];
    let tolerance = 1.0 + crate::spectral::ADMISSIBILITY_SLACK;
    let desc = InstanceDescriptor {
        m: 0,
        q: 0,
        seed: None,
        lambdas: vec![],
    };
    let mut out = Vec::new();
    for f in filters {
        let report = admissibility_check(&f, &opts)?;
        let qual = report.qualification.unwrap_or(0.0);
        let ratio = report
            .nus
            .iter()
            .filter(|e| e.nu <= qual)
            .map(|e| e.gamma_nu_hat / e.bound)
            .fold(report.d_hat.max(report.b_hat).max(report.gamma_hat), f64::max);
        out.push(TheoremCheckResult::new(
            CheckKind::Admissibility,
            Role::Check,
            report.filter,
            desc.clone(),
            (ratio, ratio),
            tolerance,
        ));
        if matches!(f, SpectralFilter::TwoStep { .. }) {
            let e = report
                .nus
                .iter()
                .find(|e| e.nu > qual)
                .expect("default nu list probes beyond the qualification");
            let ratio = e.gamma_nu_hat / e.bound;
            out.push(TheoremCheckResult::new(
                CheckKind::Admissibility,
                Role::NegativeControl,
                "two_step beyond qualification",
                desc.clone(),
                (ratio, ratio),
                tolerance,
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub checks: Vec<CheckKind>,
    pub seeds: usize,
    pub base_seed: u64,
    /// Fixed `(m, q)`; random sizes in `2..=8` when absent.
    pub size: Option<(usize, usize)>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            checks: CheckKind::ALL.to_vec(),
            seeds: 50,
            base_seed: 0,
            size: None,
        }
    }
}

/// Runs the selected checks on seeds `base_seed .. base_seed + seeds`. The
/// admissibility check does not depend on the seed and runs once.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<TheoremCheckResult>> {
    let mut out = Vec::new();
    for &kind in &cfg.checks {
        if kind == CheckKind::Admissibility {
            out.extend(admissibility_results()?);
            continue;
        }
        for i in 0..cfg.seeds as u64 {
            let inst = RandomInstance::generate(cfg.base_seed.wrapping_add(i), cfg.size)?;
            out.extend(run_instance_checks(kind, &inst)?);
        }
    }
    Ok(out)
}

/// One CSV row per result.
pub fn write_report<W: Write>(writer: W, results: &[TheoremCheckResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "check",
        "role",
        "variant",
        "m",
        "q",
        "seed",
        "lambdas",
        "discrepancy",
        "max_abs_discrepancy",
        "tolerance",
        "pass",
        "as_expected",
    ])?;
    for r in results {
        let lambdas: Vec<String> = r.instance.lambdas.iter().map(|l| format!("{l:e}")).collect();
        wtr.write_record([
            r.check.as_str().to_string(),
            match r.role {
                Role::Check => "check",
                Role::NegativeControl => "negative-control",
            }
            .to_string(),
            r.variant.to_string(),
            r.instance.m.to_string(),
            r.instance.q.to_string(),
            r.instance.seed.map_or(String::new(), |s| s.to_string()),
            lambdas.join(";"),
            format!("{:e}", r.discrepancy),
            format!("{:e}", r.max_abs_discrepancy),
            format!("{:e}", r.tolerance),
            r.pass.to_string(),
            r.as_expected().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{validate_psd, PSD_TOLERANCE};

    fn dm(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn labels(rows: &[&[f64]]) -> LabelMatrix {
        LabelMatrix::new(dm(rows)).unwrap()
    }

    #[test]
    fn theorem1_identity_kernels() {
        let (k, g) = (GramMatrix::delta(2).unwrap(), GramMatrix::delta(3).unwrap());
        let y = labels(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 2.0]]);
        let test = dm(&[&[0.3, 0.7]]);
        let r = check_theorem1(&k, &g, &y, 0.5, &test).unwrap();
        assert!(r.pass);
        assert!(r.discrepancy < 1e-14);
    }

    #[test]
    fn theorem1_rejects_singular_g_and_control_fails() {
        let inst = RandomInstance::generate(3, Some((6, 4))).unwrap();
        let sing = inst.singular_g().unwrap();
        assert!(matches!(
            check_theorem1(&inst.k, &sing, &inst.y, 0.3, &inst.k_test),
            Err(Error::HypothesisViolation(_))
        ));
        let control = theorem1_singular_control(&inst.k, &sing, &inst.y, 0.3, &inst.k_test).unwrap();
        assert!(control.discrepancy > 1e-6);
        let r = check_theorem1(&inst.k, &inst.g, &inst.y, 0.3, &inst.k_test).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn theorem2_scalar_case() {
        let one = validate_psd(&dm(&[&[1.0]]), PSD_TOLERANCE).unwrap();
        let y = labels(&[&[8.0]]);
        let r = check_theorem2(&one, &one, &y, 1.0, 1.0).unwrap();
        assert!(r.pass);
        let f = training_predictions(&fit_two_step(&one, &one, &y, 1.0, 1.0).unwrap()).unwrap();
        assert!((f[(0, 0)] - 2.0).abs() < 1e-14);
        let zero = labels(&[&[0.0]]);
        assert_eq!(check_theorem2(&one, &one, &zero, 1.0, 1.0).unwrap().discrepancy, 0.0);
    }

    #[test]
    fn theorem2_random_and_control() {
        let inst = RandomInstance::generate(8, Some((4, 3))).unwrap();
        let r = check_theorem2(&inst.k, &inst.g, &inst.y, 0.5, 2.0).unwrap();
        assert!(r.pass, "{r:?}");
        let c = theorem2_with_pairwise_lambda(&inst.k, &inst.g, &inst.y, 0.5, 2.0, 3.0).unwrap();
        assert!(!c.pass);
        assert_eq!(c.role, Role::NegativeControl);
    }

    #[test]
    fn theorem3_identity_kernels() {
        let (k, g) = (GramMatrix::delta(2).unwrap(), GramMatrix::delta(2).unwrap());
        let y = labels(&[&[4.0, 8.0], &[-4.0, 2.0]]);
        let kt = dm(&[&[0.5, 0.5]]);
        let gt = dm(&[&[1.0, 0.0]]);
        let r = check_theorem3(&k, &g, &y, 1.0, 1.0, &kt, &gt).unwrap();
        assert!(r.pass);
        let a = fit_two_step(&k, &g, &y, 1.0, 1.0).unwrap();
        assert!(max_abs_diff(a.coefficients().unwrap().matrix(), &(y.matrix().as_matrix() / 4.0)) < 1e-15);
    }

    #[test]
    fn theorem3_random_and_in_sample_control() {
        let inst = RandomInstance::generate(9, Some((4, 3))).unwrap();
        let r = check_theorem3(&inst.k, &inst.g, &inst.y, inst.lambda_u, inst.lambda_v, &inst.k_test, &inst.g_test)
            .unwrap();
        assert!(r.pass, "{r:?}");
        let c = theorem3_in_sample_control(&inst.k, &inst.g, &inst.y, inst.lambda_u, inst.lambda_v).unwrap();
        assert!(c.as_expected(), "{c:?}");
    }

    #[test]
    fn smoother_examples() {
        let mut rng = SplitMix64::new(10);
        let y = LabelMatrix::new(DenseMatrix::new(normal_matrix(&mut rng, 3, 2)).unwrap()).unwrap();
        let r = check_smoother_theorem(3, 2, 1.0, 2.0, 0.5, &y).unwrap();
        assert!(r.pass, "{r:?}");

        // Dense hat oracle at 1e-10.
        let h = smoother_hat(3, 2, 1.0, 2.0, 0.5).unwrap().to_dense().unwrap();
        let k = gram_smoother(3, 1.0).unwrap();
        let g = gram_smoother(2, 2.0).unwrap();
        let dense = hat_matrix(&k, &g, &SpectralFilter::KronTikhonov { lambda: 0.5 }).unwrap();
        assert!(max_abs_diff(&h, &dense) <= 1e-10);

        // All-ones kernels: every prediction is the same multiple of the grand mean.
        let h = smoother_hat(3, 2, 0.0, 0.0, 0.5).unwrap();
        let w = smoother_filter_weights(&h);
        assert!(w[0].abs() < 1e-14 && w[1].abs() < 1e-14 && w[2].abs() < 1e-14);
        assert!((w[3] - 6.0 / 6.5).abs() < 1e-14);
        assert!(check_smoother_theorem(3, 2, 0.0, 0.0, 0.5, &y).unwrap().pass);

        // λ → 0 interpolates.
        let w = smoother_filter_weights(&smoother_hat(3, 2, 1.0, 2.0, 1e-10).unwrap());
        assert!((w[0] - 1.0).abs() < 1e-8 && w[1].abs() < 1e-8 && w[2].abs() < 1e-8 && w[3].abs() < 1e-8);

        let c = smoother_swapped_control(3, 2, 1.0, 2.0, 0.5, &y).unwrap();
        assert!(c.as_expected(), "{c:?}");
    }

    #[test]
    fn vec_kron_check() {
        assert!(check_vec_kron(1, (3, 4, 2, 3)).unwrap().pass);
        assert!(check_vec_kron(1, (1, 1, 1, 1)).unwrap().pass);
        assert!(check_vec_kron(1, (9, 1, 1, 1)).is_err());
    }

    #[test]
    fn solver_examples() {
        let (k, g) = (GramMatrix::delta(2).unwrap(), GramMatrix::delta(3).unwrap());
        let y = labels(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert!(solver_discrepancy(&k, &g, &y, 1.0, None).unwrap().discrepancy < 1e-15);
        let big = fit_kron(&k, &g, &y, 1e3).unwrap();
        let approx = y.matrix().as_matrix() / 1e3;
        assert!(max_abs_diff(big.coefficients().unwrap().matrix(), &approx) < 1e-5);
        let r = check_shifted_kron_solver(4, 5, 4, 0.01).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn instance_generation_is_reproducible() {
        let a = RandomInstance::generate(42, None).unwrap();
        let b = RandomInstance::generate(42, None).unwrap();
        assert_eq!(a.k, b.k);
        assert_eq!(a.y, b.y);
        assert_eq!(a.lambda, b.lambda);
        assert!((2..=8).contains(&a.m()) && (2..=8).contains(&a.q()));
        for l in [a.lambda_u, a.lambda_v, a.lambda] {
            assert!((1e-2..=10.0).contains(&l));
        }
        validate_psd(a.k.matrix(), PSD_TOLERANCE).unwrap();
    }

    #[test]
    fn small_suite_all_as_expected() {
        let cfg = SuiteConfig {
            seeds: 5,
            ..SuiteConfig::default()
        };
        let results = run_suite(&cfg).unwrap();
        for r in &results {
            assert!(r.as_expected(), "{r:?}");
        }
        let mut buf = Vec::new();
        write_report(&mut buf, &results).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), results.len() + 1);
    }

    #[test]
    fn check_names_round_trip() {
        for k in CheckKind::ALL {
            assert_eq!(k.as_str().parse::<CheckKind>().unwrap(), k);
        }
    }
}
