//! Closed-form fitting of the pairwise models and prediction under the four settings.
//!
//! All KRR variants share the same pattern: project `Y` onto the eigenbases,
//! scale entrywise by a function of the eigenvalues, rotate back. The
//! settings are:
//!
//! | setting | instance | task |
//! |---------|----------|------|
//! | A       | seen     | seen |
//! | B       | new      | seen |
//! | C       | seen     | new  |
//! | D       | new      | new  |

mod filter;
mod sweep;

pub use filter::{
    filter_loo, filter_predict, filter_predictions, fit_filter, linear_filter_apply, tune_filter, FilterTuning,
    FilterWeights, DEFAULT_GRID_STEP,
};
pub use sweep::{sweep, SweepPoint};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::{GramMatrix, KernelConfig, KernelKind};
use crate::matrix::{sym_eig, DenseMatrix, EigenDecomposition};

/// Relative threshold for treating a shifted eigenvalue as zero.
pub(crate) const INVERTIBILITY_EPS: f64 = 1e-12;

/// Complete `m x q` label matrix: rows are instances, columns are tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(DenseMatrix);

impl LabelMatrix {
    pub fn new(matrix: DenseMatrix) -> Result<Self> {
        Ok(Self(matrix))
    }

    /// Number of instances.
    pub fn m(&self) -> usize {
        self.0.rows()
    }

    /// Number of tasks.
    pub fn q(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }
}

/// Dual parameters `A` of `f(u, v) = Σ_ij a_ij k(u, u_i) g(v, v_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCoefficients(DenseMatrix);

impl DualCoefficients {
    pub fn new(matrix: DenseMatrix) -> Self {
        Self(matrix)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    IndependentTask,
    Kronecker,
    Okkls,
    TwoStep,
    Filter,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::IndependentTask => "it",
            Method::Kronecker => "kron",
            Method::Okkls => "okkls",
            Method::TwoStep => "two-step",
            Method::Filter => "filter",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "it" => Method::IndependentTask,
            "kron" => Method::Kronecker,
            "okkls" => Method::Okkls,
            "two-step" => Method::TwoStep,
            "filter" => Method::Filter,
            other => return Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        })
    }
}

/// Regularization (or filter weights) of a trained model; determines its method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hyperparameters {
    IndependentTask { lambda_u: f64 },
    Kronecker { lambda: f64 },
    Okkls,
    TwoStep { lambda_u: f64, lambda_v: f64 },
    Filter(FilterWeights),
}

impl Hyperparameters {
    pub fn method(&self) -> Method {
        match self {
            Hyperparameters::IndependentTask { .. } => Method::IndependentTask,
            Hyperparameters::Kronecker { .. } => Method::Kronecker,
            Hyperparameters::Okkls => Method::Okkls,
            Hyperparameters::TwoStep { .. } => Method::TwoStep,
            Hyperparameters::Filter(_) => Method::Filter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    A,
    B,
    C,
    D,
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Setting::A),
            "B" | "b" => Ok(Setting::B),
            "C" | "c" => Ok(Setting::C),
            "D" | "d" => Ok(Setting::D),
            other => Err(Error::InvalidParameter(format!("unknown setting {other:?}"))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// A fitted model. Immutable; eigendecompositions are shared between models
/// produced by the same sweep.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    hyper: Hyperparameters,
    coefficients: Option<DualCoefficients>,
    eig_k: Option<Arc<EigenDecomposition>>,
    eig_g: Option<Arc<EigenDecomposition>>,
    kernels: (KernelConfig, KernelConfig),
    labels: Option<LabelMatrix>,
}

impl TrainedModel {
    /// Reassembles a model from stored parts, checking that they fit together.
    pub fn from_parts(
        hyper: Hyperparameters,
        coefficients: Option<DualCoefficients>,
        eigs: Option<(EigenDecomposition, EigenDecomposition)>,
        kernels: (KernelConfig, KernelConfig),
        labels: Option<LabelMatrix>,
    ) -> Result<Self> {
        let is_filter = hyper.method() == Method::Filter;
        if is_filter {
            if labels.is_none() || coefficients.is_some() || eigs.is_some() {
                return Err(Error::InvalidParameter(
                    "a filter model carries labels and nothing else".into(),
                ));
            }
        } else {
            let (Some(a), Some((ek, eg))) = (&coefficients, &eigs) else {
                return Err(Error::InvalidParameter(
                    "a kernel model needs coefficients and both eigendecompositions".into(),
                ));
            };
            let shape = (a.matrix().rows(), a.matrix().cols());
            if shape != (ek.dim(), eg.dim()) {
                return Err(Error::DimensionMismatch {
                    context: "model parts",
                    expected: format!("coefficients {}x{}", ek.dim(), eg.dim()),
                    found: format!("{}x{}", shape.0, shape.1),
                });
            }
        }
        let (eig_k, eig_g) = match eigs {
            Some((k, g)) => (Some(Arc::new(k)), Some(Arc::new(g))),
            None => (None, None),
        };
        Ok(Self {
            hyper,
            coefficients,
            eig_k,
            eig_g,
            kernels,
            labels,
        })
    }

    pub fn method(&self) -> Method {
        self.hyper.method()
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.hyper
    }

    pub fn coefficients(&self) -> Option<&DualCoefficients> {
        self.coefficients.as_ref()
    }

    pub fn eig_k(&self) -> Option<&EigenDecomposition> {
        self.eig_k.as_deref()
    }

    pub fn eig_g(&self) -> Option<&EigenDecomposition> {
        self.eig_g.as_deref()
    }

    pub fn kernels(&self) -> (KernelConfig, KernelConfig) {
        self.kernels
    }

    /// Training labels; stored only by filter models.
    pub fn labels(&self) -> Option<&LabelMatrix> {
        self.labels.as_ref()
    }

    /// Training dimensions `(m, q)`.
    pub fn dims(&self) -> (usize, usize) {
        match (&self.coefficients, &self.labels) {
            (Some(a), _) => (a.matrix().rows(), a.matrix().cols()),
            (None, Some(y)) => (y.m(), y.q()),
            (None, None) => unreachable!("constructors always set coefficients or labels"),
        }
    }
}

fn check_lambda(name: &str, value: f64) -> Result<()> {
    if !(value >= 0.0 && value.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {value}")));
    }
    Ok(())
}

fn check_label_dims(k: Option<&GramMatrix>, g: Option<&GramMatrix>, y: &LabelMatrix) -> Result<()> {
    if let Some(k) = k {
        if k.size() != y.m() {
            return Err(Error::DimensionMismatch {
                context: "instance kernel vs labels",
                expected: format!("{0}x{0}", y.m()),
                found: format!("{0}x{0}", k.size()),
            });
        }
    }
    if let Some(g) = g {
        if g.size() != y.q() {
            return Err(Error::DimensionMismatch {
                context: "task kernel vs labels",
                expected: format!("{0}x{0}", y.q()),
                found: format!("{0}x{0}", g.size()),
            });
        }
    }
    Ok(())
}

/// `1 / (σ_i + λ)`, rejecting `σ_i + λ ≤ 1e-12 (σ_max + λ)`.
pub(crate) fn shifted_reciprocals(eig: &EigenDecomposition, lambda: f64, what: &str) -> Result<Vec<f64>> {
    let reference = eig.max_value() + lambda;
    let eps = INVERTIBILITY_EPS * reference;
    eig.values()
        .iter()
        .map(|&s| {
            let d = s + lambda;
            if reference <= 0.0 || d <= eps {
                Err(Error::Singular(format!(
                    "{what} + {lambda} I is not invertible (eigenvalue {s:e})"
                )))
            } else {
                Ok(1.0 / d)
            }
        })
        .collect()
}

/// `Uᵀ Y V`.
pub(crate) fn project(eig_k: &EigenDecomposition, eig_g: &EigenDecomposition, y: &DMatrix<f64>) -> DMatrix<f64> {
    eig_k.vectors().tr_mul(y) * eig_g.vectors()
}

/// `U E Vᵀ`.
pub(crate) fn rotate_back(eig_k: &EigenDecomposition, eig_g: &EigenDecomposition, e: &DMatrix<f64>) -> DMatrix<f64> {
    (eig_k.vectors() * e) * eig_g.vectors().transpose()
}

fn kernel_model(
    hyper: Hyperparameters,
    a: DMatrix<f64>,
    eig_k: Arc<EigenDecomposition>,
    eig_g: Arc<EigenDecomposition>,
    kernels: (KernelConfig, KernelConfig),
) -> Result<TrainedModel> {
    Ok(TrainedModel {
        hyper,
        coefficients: Some(DualCoefficients(DenseMatrix::new(a)?)),
        eig_k: Some(eig_k),
        eig_g: Some(eig_g),
        kernels,
        labels: None,
    })
}

/// Independent-task KRR: `(K + λ_u I) A = Y`, one ridge regression per task.
pub fn fit_it(k: &GramMatrix, y: &LabelMatrix, lambda_u: f64) -> Result<TrainedModel> {
    check_label_dims(Some(k), None, y)?;
    let eig_k = Arc::new(sym_eig(k.matrix())?);
    fit_it_with(eig_k, k.config(), y, lambda_u)
}

pub(crate) fn fit_it_with(
    eig_k: Arc<EigenDecomposition>,
    k_config: KernelConfig,
    y: &LabelMatrix,
    lambda_u: f64,
) -> Result<TrainedModel> {
    check_lambda("lambda_u", lambda_u)?;
    let phi = shifted_reciprocals(&eig_k, lambda_u, "K")?;
    let mut t = eig_k.vectors().tr_mul(y.matrix().as_matrix());
    for (i, p) in phi.iter().enumerate() {
        t.row_mut(i).scale_mut(*p);
    }
    let a = eig_k.vectors() * t;
    let eig_g = Arc::new(EigenDecomposition::identity(y.q()));
    kernel_model(
        Hyperparameters::IndependentTask { lambda_u },
        a,
        eig_k,
        eig_g,
        (k_config, KernelConfig::plain(KernelKind::Delta)),
    )
}

/// Kronecker KRR: `(G ⊗ K + λ I) vec(A) = vec(Y)`, solved as
/// `A = U ((Uᵀ Y V) ⊘ D) Vᵀ` with `D_ij = σ_i s_j + λ`.
pub fn fit_kron(k: &GramMatrix, g: &GramMatrix, y: &LabelMatrix, lambda: f64) -> Result<TrainedModel> {
    check_label_dims(Some(k), Some(g), y)?;
    let eig_k = Arc::new(sym_eig(k.matrix())?);
    let eig_g = Arc::new(sym_eig(g.matrix())?);
    let e = project(&eig_k, &eig_g, y.matrix().as_matrix());
    fit_kron_with(eig_k, eig_g, (k.config(), g.config()), &e, Hyperparameters::Kronecker { lambda })
}

/// Kronecker KRR without regularization.
pub fn fit_okkls(k: &GramMatrix, g: &GramMatrix, y: &LabelMatrix) -> Result<TrainedModel> {
    check_label_dims(Some(k), Some(g), y)?;
    let eig_k = Arc::new(sym_eig(k.matrix())?);
    let eig_g = Arc::new(sym_eig(g.matrix())?);
    let e = project(&eig_k, &eig_g, y.matrix().as_matrix());
    fit_kron_with(eig_k, eig_g, (k.config(), g.config()), &e, Hyperparameters::Okkls)
}

/// Entrywise `1 / (σ_i s_j + λ)`, rejecting near-zero denominators.
pub(crate) fn kron_reciprocals(
    eig_k: &EigenDecomposition,
    eig_g: &EigenDecomposition,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let reference = eig_k.max_value() * eig_g.max_value() + lambda;
    let eps = INVERTIBILITY_EPS * reference;
    let (sig, s) = (eig_k.values(), eig_g.values());
    let mut out = DMatrix::zeros(sig.len(), s.len());
    for (j, &sj) in s.iter().enumerate() {
        for (i, &si) in sig.iter().enumerate() {
            let d = si * sj + lambda;
            if reference <= 0.0 || d <= eps {
                return Err(Error::Singular(format!(
                    "G ⊗ K + {lambda} I is not invertible (eigenvalue product {:e})",
                    si * sj
                )));
            }
            out[(i, j)] = 1.0 / d;
        }
    }
    Ok(out)
}

/// Kronecker fit from precomputed eigendecompositions and `E = Uᵀ Y V`.
pub(crate) fn fit_kron_with(
    eig_k: Arc<EigenDecomposition>,
    eig_g: Arc<EigenDecomposition>,
    kernels: (KernelConfig, KernelConfig),
    e: &DMatrix<f64>,
    hyper: Hyperparameters,
) -> Result<TrainedModel> {
    let lambda = match hyper {
        Hyperparameters::Kronecker { lambda } => lambda,
        Hyperparameters::Okkls => 0.0,
        _ => unreachable!("kron fit called with {hyper:?}"),
    };
    check_lambda("lambda", lambda)?;
    let scale = kron_reciprocals(&eig_k, &eig_g, lambda)?;
    let a = rotate_back(&eig_k, &eig_g, &e.component_mul(&scale));
    kernel_model(hyper, a, eig_k, eig_g, kernels)
}

/// Two-step KRR: `A = (K + λ_u I)^{-1} Y (G + λ_v I)^{-1}`, i.e. a ridge
/// regression over instances followed by one over tasks.
pub fn fit_two_step(
    k: &GramMatrix,
    g: &GramMatrix,
    y: &LabelMatrix,
    lambda_u: f64,
    lambda_v: f64,
) -> Result<TrainedModel> {
    check_label_dims(Some(k), Some(g), y)?;
    check_lambda("lambda_u", lambda_u)?;
    check_lambda("lambda_v", lambda_v)?;
    let eig_k = Arc::new(sym_eig(k.matrix())?);
    let eig_g = Arc::new(sym_eig(g.matrix())?);
    let phi_u = shifted_reciprocals(&eig_k, lambda_u, "K")?;
    let phi_v = shifted_reciprocals(&eig_g, lambda_v, "G")?;

    // First step: (K + λ_u I)^{-1} Y.
    let mut t = eig_k.vectors().tr_mul(y.matrix().as_matrix());
    for (i, p) in phi_u.iter().enumerate() {
        t.row_mut(i).scale_mut(*p);
    }
    let first = eig_k.vectors() * t;
    // Second step: apply (G + λ_v I)^{-1} from the right.
    let mut t = first * eig_g.vectors();
    for (j, p) in phi_v.iter().enumerate() {
        t.column_mut(j).scale_mut(*p);
    }
    let a = t * eig_g.vectors().transpose();
    kernel_model(
        Hyperparameters::TwoStep { lambda_u, lambda_v },
        a,
        eig_k,
        eig_g,
        (k.config(), g.config()),
    )
}

fn require_coefficients(model: &TrainedModel) -> Result<&DualCoefficients> {
    model.coefficients().ok_or_else(|| {
        Error::Unsupported("filter models only predict for training pairs (Setting A)".into())
    })
}

fn check_test_cols(name: &'static str, test: &DenseMatrix, expected: usize) -> Result<()> {
    if test.cols() != expected {
        return Err(Error::DimensionMismatch {
            context: name,
            expected: format!("{expected} columns (one per training object)"),
            found: format!("{} columns", test.cols()),
        });
    }
    Ok(())
}

/// `F = K_test A G_testᵀ` for test kernel rows against the training objects.
pub fn predict(model: &TrainedModel, k_test: &DenseMatrix, g_test: &DenseMatrix) -> Result<DenseMatrix> {
    let a = require_coefficients(model)?;
    let (m, q) = model.dims();
    check_test_cols("instance test kernel", k_test, m)?;
    check_test_cols("task test kernel", g_test, q)?;
    DenseMatrix::new(k_test.as_matrix() * a.matrix().as_matrix() * g_test.transpose().as_matrix())
}

/// Fitted values `K A G` on the training pairs.
pub fn training_predictions(model: &TrainedModel) -> Result<DenseMatrix> {
    if model.method() == Method::Filter {
        return filter_predictions(model);
    }
    let a = require_coefficients(model)?;
    let (eig_k, eig_g) = spectra(model);
    DenseMatrix::new(eig_k.reconstruct() * a.matrix().as_matrix() * eig_g.reconstruct())
}

fn spectra(model: &TrainedModel) -> (&EigenDecomposition, &EigenDecomposition) {
    (
        model.eig_k().expect("kernel models store both eigendecompositions"),
        model.eig_g().expect("kernel models store both eigendecompositions"),
    )
}

/// Prediction dispatch over the four settings.
///
/// Test kernels hold evaluations against the training objects (rows are test
/// objects). Setting A takes none, B only `k_test`, C only `g_test`, D both.
pub fn predict_setting(
    model: &TrainedModel,
    setting: Setting,
    k_test: Option<&DenseMatrix>,
    g_test: Option<&DenseMatrix>,
) -> Result<DenseMatrix> {
    let method = model.method();
    if method == Method::Filter && setting != Setting::A {
        return Err(Error::Unsupported(format!(
            "the linear filter only predicts for training pairs (Setting A), not Setting {setting}"
        )));
    }
    if method == Method::IndependentTask && matches!(setting, Setting::C | Setting::D) {
        return Err(Error::Unsupported(format!(
            "independent-task models cannot generalize to new tasks (Setting {setting})"
        )));
    }
    let (need_k, need_g) = match setting {
        Setting::A => (false, false),
        Setting::B => (true, false),
        Setting::C => (false, true),
        Setting::D => (true, true),
    };
    for (name, needed, given) in [
        ("instance", need_k, k_test.is_some()),
        ("task", need_g, g_test.is_some()),
    ] {
        if needed && !given {
            return Err(Error::InvalidParameter(format!(
                "Setting {setting} needs a {name} test kernel"
            )));
        }
        if !needed && given {
            return Err(Error::InvalidParameter(format!(
                "Setting {setting} uses the training {name} kernel; do not pass a {name} test kernel"
            )));
        }
    }
    if setting == Setting::A {
        return training_predictions(model);
    }
    let a = require_coefficients(model)?;
    let (m, q) = model.dims();
    let (eig_k, eig_g) = spectra(model);
    let left = match k_test {
        Some(kt) => {
            check_test_cols("instance test kernel", kt, m)?;
            kt.as_matrix() * a.matrix().as_matrix()
        }
        None => eig_k.reconstruct() * a.matrix().as_matrix(),
    };
    let f = match g_test {
        Some(gt) => {
            check_test_cols("task test kernel", gt, q)?;
            left * gt.as_matrix().transpose()
        }
        None => left * eig_g.reconstruct(),
    };
    DenseMatrix::new(f)
}
