//! The linear matrix filter: a weighted average of a label, its column mean,
//! its row mean and the grand mean, with a closed-form leave-one-pair-out shortcut.

use nalgebra::DMatrix;

use super::{Hyperparameters, LabelMatrix, Method, TrainedModel};
use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, KernelKind};
use crate::matrix::DenseMatrix;

pub const DEFAULT_GRID_STEP: f64 = 0.1;

/// LOO denominators `1 − c` at or below this are rejected.
const LOO_GUARD: f64 = 1e-12;

/// Filter weights `(α1, α2, α3, α4)`, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterWeights([f64; 4]);

impl FilterWeights {
    pub fn new(alphas: [f64; 4]) -> Result<Self> {
        if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidParameter(format!(
                "filter weights must lie in [0, 1], got {a} in {alphas:?}"
            )));
        }
        Ok(Self(alphas))
    }

    pub fn alphas(&self) -> [f64; 4] {
        self.0
    }

    /// Weight the fitted value puts on its own label: `α1 + α2/m + α3/q + α4/(mq)`.
    pub fn self_weight(&self, m: usize, q: usize) -> f64 {
        let [a1, a2, a3, a4] = self.0;
        let (m, q) = (m as f64, q as f64);
        a1 + a2 / m + a3 / q + a4 / (m * q)
    }
}

struct Means {
    cols: Vec<f64>,
    rows: Vec<f64>,
    grand: f64,
}

impl Means {
    fn of(y: &DMatrix<f64>) -> Self {
        let (m, q) = y.shape();
        let cols: Vec<f64> = (0..q).map(|j| y.column(j).sum() / m as f64).collect();
        let rows: Vec<f64> = (0..m).map(|i| y.row(i).sum() / q as f64).collect();
        let grand = y.sum() / (m * q) as f64;
        Self { cols, rows, grand }
    }
}

/// `α1 Y_ij + α2 colmean_j + α3 rowmean_i + α4 mean`, with no range check on the weights.
pub fn linear_filter_apply(y: &DenseMatrix, alphas: [f64; 4]) -> DenseMatrix {
    let means = Means::of(y.as_matrix());
    let [a1, a2, a3, a4] = alphas;
    DenseMatrix::from_fn(y.rows(), y.cols(), |i, j| {
        a1 * y[(i, j)] + a2 * means.cols[j] + a3 * means.rows[i] + a4 * means.grand
    })
    .expect("weighted averages of finite labels are finite")
}

pub fn fit_filter(y: &LabelMatrix, weights: FilterWeights) -> TrainedModel {
    TrainedModel {
        hyper: Hyperparameters::Filter(weights),
        coefficients: None,
        eig_k: None,
        eig_g: None,
        kernels: (
            KernelConfig::plain(KernelKind::Delta),
            KernelConfig::plain(KernelKind::Delta),
        ),
        labels: Some(y.clone()),
    }
}

fn filter_parts(model: &TrainedModel) -> Result<(&LabelMatrix, FilterWeights)> {
    match (model.hyperparameters(), model.labels()) {
        (Hyperparameters::Filter(w), Some(y)) => Ok((y, w)),
        _ => Err(Error::Unsupported(format!(
            "expected a filter model, got {}",
            model.method()
        ))),
    }
}

/// Filtered value for the training pair `(i, j)`.
pub fn filter_predict(model: &TrainedModel, i: usize, j: usize) -> Result<f64> {
    let (y, w) = filter_parts(model)?;
    if i >= y.m() || j >= y.q() {
        return Err(Error::InvalidParameter(format!(
            "pair ({i}, {j}) outside the {}x{} training grid",
            y.m(),
            y.q()
        )));
    }
    let y = y.matrix().as_matrix();
    let [a1, a2, a3, a4] = w.alphas();
    let (m, q) = y.shape();
    let col = y.column(j).sum() / m as f64;
    let row = y.row(i).sum() / q as f64;
    let grand = y.sum() / (m * q) as f64;
    Ok(a1 * y[(i, j)] + a2 * col + a3 * row + a4 * grand)
}

/// Filtered values for every training pair.
pub fn filter_predictions(model: &TrainedModel) -> Result<DenseMatrix> {
    let (y, w) = filter_parts(model)?;
    Ok(linear_filter_apply(y.matrix(), w.alphas()))
}

/// Leave-one-pair-out predictions `(F − c Y) / (1 − c)`.
pub fn filter_loo(model: &TrainedModel) -> Result<DenseMatrix> {
    debug_assert_eq!(model.method(), Method::Filter);
    let (y, w) = filter_parts(model)?;
    let c = w.self_weight(y.m(), y.q());
    if c >= 1.0 - LOO_GUARD {
        return Err(Error::InvalidParameter(format!(
            "leave-one-out shortcut undefined: self weight {c} is not below 1"
        )));
    }
    let f = linear_filter_apply(y.matrix(), w.alphas());
    let loo = (f.into_inner() - y.matrix().as_matrix() * c) / (1.0 - c);
    DenseMatrix::new(loo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterTuning {
    pub weights: FilterWeights,
    pub loo_mse: f64,
}

/// Grid `{0, step, 2 step, …} ∪ {1}` without accumulated rounding.
fn axis_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() < 1e-9 {
        let n = n as usize;
        return (0..=n).map(|k| k as f64 / n as f64).collect();
    }
    let mut grid: Vec<f64> = (0..).map(|k| k as f64 * step).take_while(|&v| v < 1.0).collect();
    grid.push(1.0);
    grid
}

/// Exhaustive grid search for the weights with the smallest mean squared
/// leave-one-pair-out error.
///
/// Candidates are visited in lexicographic order and replace the incumbent only
/// when they improve on it by more than `1e-12 · mean(Y²)`, so ties go to the
/// lexicographically smallest weights. Candidates whose shortcut denominator
/// vanishes are skipped.
pub fn tune_filter(y: &LabelMatrix, grid_step: f64) -> Result<FilterTuning> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "grid step must lie in (0, 0.5], got {grid_step}"
        )));
    }
    let (m, q) = (y.m(), y.q());
    let ym = y.matrix().as_matrix();
    let means = Means::of(ym);
    // LOO − Y = ((α1 − 1) Y + α2 C + α3 R + α4 M) / (1 − c), with C, R, M the
    // broadcast column, row and grand means; its mean square is a quadratic
    // form in (α1 − 1, α2, α3, α4).
    let mut gram = [[0.0_f64; 4]; 4];
    for j in 0..q {
        for i in 0..m {
            let t = [ym[(i, j)], means.cols[j], means.rows[i], means.grand];
            for a in 0..4 {
                for b in 0..4 {
                    gram[a][b] += t[a] * t[b];
                }
            }
        }
    }
    let n = (m * q) as f64;
    let tie_tol = 1e-12 * gram[0][0] / n;

    let grid = axis_grid(grid_step);
    let mut best: Option<([f64; 4], f64)> = None;
    for &a1 in &grid {
        for &a2 in &grid {
            for &a3 in &grid {
                for &a4 in &grid {
                    let alphas = [a1, a2, a3, a4];
                    let c = FilterWeights(alphas).self_weight(m, q);
                    if c >= 1.0 - LOO_GUARD {
                        continue;
                    }
                    let v = [a1 - 1.0, a2, a3, a4];
                    let mut quad = 0.0;
                    for a in 0..4 {
                        for b in 0..4 {
                            quad += v[a] * gram[a][b] * v[b];
                        }
                    }
                    let mse = quad / n / ((1.0 - c) * (1.0 - c));
                    match best {
                        Some((_, incumbent)) if mse >= incumbent - tie_tol => {}
                        _ => best = Some((alphas, mse)),
                    }
                }
            }
        }
    }
    let (alphas, loo_mse) = best.expect("the all-zero weights always have a valid shortcut");
    Ok(FilterTuning {
        weights: FilterWeights::new(alphas)?,
        loo_mse: loo_mse.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn labels(rows: &[&[f64]]) -> LabelMatrix {
        LabelMatrix::new(DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap())
            .unwrap()
    }

    fn random_labels(rng: &mut SplitMix64, m: usize, q: usize) -> LabelMatrix {
        LabelMatrix::new(DenseMatrix::from_fn(m, q, |_, _| rng.normal()).unwrap()).unwrap()
    }

    fn all(model: &TrainedModel) -> Vec<Vec<f64>> {
        filter_predictions(model).unwrap().to_rows()
    }

    #[test]
    fn weights_validated() {
        assert!(FilterWeights::new([0.0, 0.5, 1.0, 0.25]).is_ok());
        assert!(FilterWeights::new([1.1, 0.0, 0.0, 0.0]).is_err());
        assert!(FilterWeights::new([0.0, -0.1, 0.0, 0.0]).is_err());
        assert!(FilterWeights::new([f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn predict_examples() {
        let y = labels(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let echo = fit_filter(&y, FilterWeights::new([1.0, 0.0, 0.0, 0.0]).unwrap());
        assert_eq!(all(&echo), y.matrix().to_rows());
        let cols = fit_filter(&y, FilterWeights::new([0.0, 1.0, 0.0, 0.0]).unwrap());
        assert_eq!(all(&cols), vec![vec![2.0, 3.0], vec![2.0, 3.0]]);
        let grand = fit_filter(&y, FilterWeights::new([0.0, 0.0, 0.0, 1.0]).unwrap());
        assert_eq!(all(&grand), vec![vec![2.5, 2.5], vec![2.5, 2.5]]);
        assert_eq!(filter_predict(&cols, 1, 0).unwrap(), 2.0);
        assert!(filter_predict(&cols, 2, 0).is_err());
    }

    #[test]
    fn equal_weights_match_loop() {
        let mut rng = SplitMix64::new(12);
        let y = random_labels(&mut rng, 5, 4);
        let model = fit_filter(&y, FilterWeights::new([0.25; 4]).unwrap());
        let ym = y.matrix();
        for i in 0..5 {
            for j in 0..4 {
                let mut col = 0.0;
                for r in 0..5 {
                    col += ym[(r, j)];
                }
                let mut row = 0.0;
                for c in 0..4 {
                    row += ym[(i, c)];
                }
                let mut total = 0.0;
                for r in 0..5 {
                    for c in 0..4 {
                        total += ym[(r, c)];
                    }
                }
                let expected = 0.25 * (ym[(i, j)] + col / 5.0 + row / 4.0 + total / 20.0);
                assert!((filter_predict(&model, i, j).unwrap() - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn loo_examples() {
        let y = labels(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let cols = fit_filter(&y, FilterWeights::new([0.0, 1.0, 0.0, 0.0]).unwrap());
        let loo = filter_loo(&cols).unwrap();
        assert!((loo[(0, 0)] - 3.0).abs() < 1e-14);
        let zero = fit_filter(&y, FilterWeights::new([0.0; 4]).unwrap());
        assert_eq!(filter_loo(&zero).unwrap().max_abs(), 0.0);
        let echo = fit_filter(&y, FilterWeights::new([1.0, 0.0, 0.0, 0.0]).unwrap());
        assert!(filter_loo(&echo).is_err());
    }

    /// Leave-one-out computed by hand: the held-out label is replaced by the
    /// value that makes it invisible to every average it enters.
    fn held_out_oracle(y: &DMatrix<f64>, w: [f64; 4], i: usize, j: usize) -> f64 {
        let (m, q) = y.shape();
        let (mf, qf) = (m as f64, q as f64);
        let [a1, a2, a3, a4] = w;
        let col_rest: f64 = (0..m).filter(|&r| r != i).map(|r| y[(r, j)]).sum();
        let row_rest: f64 = (0..q).filter(|&c| c != j).map(|c| y[(i, c)]).sum();
        let total_rest: f64 = y.sum() - y[(i, j)];
        // With the label replaced by z, the prediction is
        // a1 z + a2 (col_rest + z)/m + a3 (row_rest + z)/q + a4 (total_rest + z)/(mq).
        // Self-consistency z = prediction(z) gives z below.
        let c = a1 + a2 / mf + a3 / qf + a4 / (mf * qf);
        let rest = a2 * col_rest / mf + a3 * row_rest / qf + a4 * total_rest / (mf * qf);
        rest / (1.0 - c)
    }

    #[test]
    fn loo_matches_held_out_oracle() {
        let mut rng = SplitMix64::new(77);
        let y = random_labels(&mut rng, 4, 3);
        let w = [0.1, 0.3, 0.2, 0.4];
        let loo = filter_loo(&fit_filter(&y, FilterWeights::new(w).unwrap())).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let expected = held_out_oracle(y.matrix(), w, i, j);
                assert!((loo[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loo_ignores_own_label() {
        let mut rng = SplitMix64::new(78);
        let y = random_labels(&mut rng, 4, 3);
        let w = FilterWeights::new([0.6, 0.2, 0.9, 0.3]).unwrap();
        let base = filter_loo(&fit_filter(&y, w)).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut bumped = y.matrix().clone().into_inner();
                bumped[(i, j)] += 1e-3;
                let y2 = LabelMatrix::new(DenseMatrix::new(bumped).unwrap()).unwrap();
                let loo = filter_loo(&fit_filter(&y2, w)).unwrap();
                assert!((loo[(i, j)] - base[(i, j)]).abs() <= 1e-12);
            }
        }
    }

    fn brute_force(y: &LabelMatrix, step: f64) -> ([f64; 4], f64) {
        let grid = axis_grid(step);
        let tol = 1e-12 * y.matrix().iter().map(|v| v * v).sum::<f64>() / (y.m() * y.q()) as f64;
        let mut best: Option<([f64; 4], f64)> = None;
        for &a1 in &grid {
            for &a2 in &grid {
                for &a3 in &grid {
                    for &a4 in &grid {
                        let w = FilterWeights::new([a1, a2, a3, a4]).unwrap();
                        let Ok(loo) = filter_loo(&fit_filter(y, w)) else { continue };
                        let mse = (loo.into_inner() - y.matrix().as_matrix()).norm_squared() / (y.m() * y.q()) as f64;
                        if best.is_none_or(|(_, b)| mse < b - tol) {
                            best = Some((w.alphas(), mse));
                        }
                    }
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn tune_matches_exhaustive_loop() {
        let mut rng = SplitMix64::new(90);
        for _ in 0..3 {
            let y = random_labels(&mut rng, 5, 4);
            let tuned = tune_filter(&y, 0.5).unwrap();
            let (alphas, mse) = brute_force(&y, 0.5);
            assert_eq!(tuned.weights.alphas(), alphas);
            assert!((tuned.loo_mse - mse).abs() <= 1e-10 * mse.max(1.0));
        }
    }

    #[test]
    fn tune_prefers_column_effects() {
        let mut rng = SplitMix64::new(91);
        let col_effect: Vec<f64> = (0..5).map(|_| 3.0 * rng.normal()).collect();
        let y = LabelMatrix::new(
            DenseMatrix::from_fn(8, 5, |_, j| col_effect[j] + 0.05 * rng.normal()).unwrap(),
        )
        .unwrap();
        let tuned = tune_filter(&y, 0.1).unwrap();
        let [_, a2, a3, _] = tuned.weights.alphas();
        assert!(a2 >= a3);
        let (alphas, _) = brute_force(&y, 0.1);
        assert_eq!(tuned.weights.alphas(), alphas);
    }

    #[test]
    fn tune_constant_labels() {
        let zero = LabelMatrix::new(DenseMatrix::zeros(3, 4).unwrap()).unwrap();
        assert_eq!(tune_filter(&zero, 0.1).unwrap().weights.alphas(), [0.0; 4]);
        // A nonzero constant is only reproduced by weights summing to one.
        let five = LabelMatrix::new(DenseMatrix::from_fn(3, 4, |_, _| 5.0).unwrap()).unwrap();
        let tuned = tune_filter(&five, 0.1).unwrap();
        assert_eq!(tuned.weights.alphas(), [0.0, 0.0, 0.0, 1.0]);
        assert!(tuned.loo_mse < 1e-20);
    }

    #[test]
    fn tune_rejects_bad_step() {
        let y = labels(&[&[1.0]]);
        assert!(tune_filter(&y, 0.0).is_err());
        assert!(tune_filter(&y, 0.6).is_err());
    }

    #[test]
    fn axis_grid_shapes() {
        assert_eq!(axis_grid(0.5), vec![0.0, 0.5, 1.0]);
        assert_eq!(axis_grid(0.1).len(), 11);
        assert_eq!(axis_grid(0.1)[3], 0.3);
        assert_eq!(axis_grid(0.3), vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
    }
}
