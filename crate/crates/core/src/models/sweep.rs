use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{
    check_label_dims, check_lambda, fit_it_with, fit_kron_with, kernel_model, project, shifted_reciprocals,
    Hyperparameters, LabelMatrix, Method, TrainedModel,
};
use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::matrix::sym_eig;

/// One point of a regularization grid.
///
/// For two-step sweeps `Lambda(λ)` means `λ_u = λ_v = λ`; independent-task and
/// Kronecker sweeps accept only `Lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepPoint {
    Lambda(f64),
    Pair { lambda_u: f64, lambda_v: f64 },
}

/// Fits one model per grid point, reusing a single pair of eigendecompositions.
///
/// Failures at individual points (singular systems, invalid values) are
/// returned in place; the outer error covers problems with the shared inputs.
/// `g` is ignored for independent-task sweeps and required otherwise.
pub fn sweep(
    k: &GramMatrix,
    g: Option<&GramMatrix>,
    y: &LabelMatrix,
    method: Method,
    grid: &[SweepPoint],
) -> Result<Vec<Result<TrainedModel>>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("regularization grid is empty".into()));
    }
    if method == Method::IndependentTask {
        check_label_dims(Some(k), None, y)?;
        let eig_k = Arc::new(sym_eig(k.matrix())?);
        return Ok(grid
            .iter()
            .map(|p| match *p {
                SweepPoint::Lambda(l) => fit_it_with(eig_k.clone(), k.config(), y, l),
                SweepPoint::Pair { .. } => Err(pair_not_allowed(method)),
            })
            .collect());
    }
    if !matches!(method, Method::Kronecker | Method::TwoStep) {
        return Err(Error::Unsupported(format!(
            "{method} has no regularization path to sweep"
        )));
    }
    let g = g.ok_or_else(|| Error::InvalidParameter(format!("{method} sweep needs a task kernel")))?;
    check_label_dims(Some(k), Some(g), y)?;
    let eig_k = Arc::new(sym_eig(k.matrix())?);
    let eig_g = Arc::new(sym_eig(g.matrix())?);
    let kernels = (k.config(), g.config());
    let e = project(&eig_k, &eig_g, y.matrix().as_matrix());

    if method == Method::Kronecker {
        return Ok(grid
            .iter()
            .map(|p| match *p {
                SweepPoint::Lambda(lambda) => fit_kron_with(
                    eig_k.clone(),
                    eig_g.clone(),
                    kernels,
                    &e,
                    Hyperparameters::Kronecker { lambda },
                ),
                SweepPoint::Pair { .. } => Err(pair_not_allowed(method)),
            })
            .collect());
    }

    // Two-step: A = U Φ_u E Φ_v Vᵀ. U Φ_u E depends on λ_u only and is shared.
    let mut left: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut out = Vec::with_capacity(grid.len());
    for p in grid {
        let (lambda_u, lambda_v) = match *p {
            SweepPoint::Lambda(l) => (l, l),
            SweepPoint::Pair { lambda_u, lambda_v } => (lambda_u, lambda_v),
        };
        let point = (|| {
            check_lambda("lambda_u", lambda_u)?;
            check_lambda("lambda_v", lambda_v)?;
            let m = match left.entry(lambda_u.to_bits()) {
                Entry::Occupied(o) => o.into_mut(),
                Entry::Vacant(v) => {
                    let phi_u = shifted_reciprocals(&eig_k, lambda_u, "K")?;
                    let mut scaled = e.clone();
                    for (i, p) in phi_u.iter().enumerate() {
                        scaled.row_mut(i).scale_mut(*p);
                    }
                    v.insert(eig_k.vectors() * scaled)
                }
            };
            let phi_v = shifted_reciprocals(&eig_g, lambda_v, "G")?;
            let mut t = m.clone();
            for (j, p) in phi_v.iter().enumerate() {
                t.column_mut(j).scale_mut(*p);
            }
            let a = t * eig_g.vectors().transpose();
            kernel_model(
                Hyperparameters::TwoStep { lambda_u, lambda_v },
                a,
                eig_k.clone(),
                eig_g.clone(),
                kernels,
            )
        })();
        out.push(point);
    }
    Ok(out)
}

fn pair_not_allowed(method: Method) -> Error {
    Error::InvalidParameter(format!("{method} takes a single lambda per grid point"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{validate_psd, PSD_TOLERANCE};
    use crate::matrix::{max_abs_diff, DenseMatrix};
    use crate::models::{fit_it, fit_kron, fit_two_step};
    use crate::rng::SplitMix64;

    fn random_pd(rng: &mut SplitMix64, n: usize) -> GramMatrix {
        let x = DMatrix::from_fn(n, n, |_, _| rng.normal());
        validate_psd(
            &DenseMatrix::new(&x * x.transpose() + DMatrix::identity(n, n) * 0.1).unwrap(),
            PSD_TOLERANCE,
        )
        .unwrap()
    }

    fn coef(m: &TrainedModel) -> &DMatrix<f64> {
        m.coefficients().unwrap().matrix().as_matrix()
    }

    fn setup(seed: u64) -> (GramMatrix, GramMatrix, LabelMatrix) {
        let mut rng = SplitMix64::new(seed);
        let k = random_pd(&mut rng, 5);
        let g = random_pd(&mut rng, 4);
        let y = LabelMatrix::new(DenseMatrix::from_fn(5, 4, |_, _| rng.normal()).unwrap()).unwrap();
        (k, g, y)
    }

    #[test]
    fn single_point_equals_direct_fit() {
        let (k, g, y) = setup(1);
        let models = sweep(&k, Some(&g), &y, Method::Kronecker, &[SweepPoint::Lambda(0.3)]).unwrap();
        let direct = fit_kron(&k, &g, &y, 0.3).unwrap();
        assert!(max_abs_diff(coef(models[0].as_ref().unwrap()), coef(&direct)) <= 1e-10);
        let models = sweep(&k, None, &y, Method::IndependentTask, &[SweepPoint::Lambda(0.3)]).unwrap();
        let direct = fit_it(&k, &y, 0.3).unwrap();
        assert!(max_abs_diff(coef(models[0].as_ref().unwrap()), coef(&direct)) <= 1e-10);
    }

    #[test]
    fn two_step_points_match_fresh_fits() {
        let (k, g, y) = setup(2);
        let grid = [
            SweepPoint::Pair { lambda_u: 0.1, lambda_v: 0.1 },
            SweepPoint::Pair { lambda_u: 1.0, lambda_v: 1.0 },
            SweepPoint::Pair { lambda_u: 0.1, lambda_v: 3.0 },
            SweepPoint::Lambda(0.5),
        ];
        let models = sweep(&k, Some(&g), &y, Method::TwoStep, &grid).unwrap();
        for (p, model) in grid.iter().zip(&models) {
            let (lu, lv) = match *p {
                SweepPoint::Lambda(l) => (l, l),
                SweepPoint::Pair { lambda_u, lambda_v } => (lambda_u, lambda_v),
            };
            let fresh = fit_two_step(&k, &g, &y, lu, lv).unwrap();
            let got = model.as_ref().unwrap();
            assert_eq!(got.hyperparameters(), fresh.hyperparameters());
            assert!(max_abs_diff(coef(got), coef(&fresh)) <= 1e-10);
        }
    }

    #[test]
    fn singular_point_is_isolated() {
        let ones = validate_psd(&DenseMatrix::from_fn(3, 3, |_, _| 1.0).unwrap(), PSD_TOLERANCE).unwrap();
        let y = LabelMatrix::new(DenseMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64).unwrap()).unwrap();
        let grid = [SweepPoint::Lambda(0.0), SweepPoint::Lambda(1.0)];
        let models = sweep(&ones, Some(&ones), &y, Method::Kronecker, &grid).unwrap();
        assert!(matches!(models[0], Err(Error::Singular(_))));
        assert!(models[1].is_ok());
        let models = sweep(&ones, Some(&ones), &y, Method::TwoStep, &grid).unwrap();
        assert!(models[0].is_err());
        assert!(models[1].is_ok());
    }

    #[test]
    fn rejects_bad_sweeps() {
        let (k, g, y) = setup(3);
        assert!(sweep(&k, Some(&g), &y, Method::Kronecker, &[]).is_err());
        assert!(sweep(&k, Some(&g), &y, Method::Okkls, &[SweepPoint::Lambda(1.0)]).is_err());
        assert!(sweep(&k, None, &y, Method::TwoStep, &[SweepPoint::Lambda(1.0)]).is_err());
        let pair = [SweepPoint::Pair { lambda_u: 1.0, lambda_v: 2.0 }];
        assert!(sweep(&k, Some(&g), &y, Method::Kronecker, &pair).unwrap()[0].is_err());
    }
}
