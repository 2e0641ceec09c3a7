//! Pairwise (dyadic) kernel ridge regression in closed form.
//!
//! Labels form a complete `m x q` matrix `Y` (rows are instances, columns are
//! tasks). Instances are compared with a Gram matrix `K` and tasks with `G`.
//! Every model here is fitted from the eigendecompositions `K = U Σ Uᵀ` and
//! `G = V S Vᵀ`, so the `(mq) x (mq)` pairwise Gram `G ⊗ K` is never formed
//! outside of the [`verify`] module.
//!
//! ```
//! use pairkrr_core::kernels::gram_linear;
//! use pairkrr_core::matrix::DenseMatrix;
//! use pairkrr_core::models::{fit_two_step, LabelMatrix, Setting, predict_setting};
//!
//! let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
//! let t = DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
//! let (k, g) = (gram_linear(&x), gram_linear(&t));
//! let y = LabelMatrix::new(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap()).unwrap();
//! let model = fit_two_step(&k, &g, &y, 0.1, 0.1).unwrap();
//! let fitted = predict_setting(&model, Setting::A, None, None).unwrap();
//! assert_eq!((fitted.rows(), fitted.cols()), (3, 2));
//! ```

pub mod error;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod models;
pub mod rng;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use kernels::{GramMatrix, KernelConfig, KernelKind};
pub use matrix::{DenseMatrix, EigenDecomposition, SmootherMatrix};
pub use models::{DualCoefficients, FilterWeights, LabelMatrix, Method, Setting, TrainedModel};
pub use spectral::SpectralFilter;
