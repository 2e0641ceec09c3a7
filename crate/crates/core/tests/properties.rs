use nalgebra::DMatrix;
use proptest::prelude::*;

use pairkrr_core::io::{model_to_string, read_model};
use pairkrr_core::kernels::{validate_psd, PSD_TOLERANCE};
use pairkrr_core::matrix::{apply_kron_vec, kron, unvec, vec};
use pairkrr_core::models::{
    filter_loo, fit_filter, fit_it, fit_kron, fit_two_step, linear_filter_apply, predict, predict_setting, sweep,
    training_predictions, SweepPoint,
};
use pairkrr_core::rng::SplitMix64;
use pairkrr_core::spectral::filtered_fit;
use pairkrr_core::verify::RandomInstance;
use pairkrr_core::{DenseMatrix, FilterWeights, GramMatrix, LabelMatrix, Method, Setting, SmootherMatrix, SpectralFilter};

fn dense(rows: usize, cols: usize, data: &[f64]) -> DenseMatrix {
    DenseMatrix::from_row_slice(rows, cols, data).unwrap()
}

fn diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn matrix_strategy(max: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0..10.0f64, r * c).prop_map(move |d| dense(r, c, &d))
    })
}

fn pd_gram(seed: u64, n: usize) -> GramMatrix {
    let mut rng = SplitMix64::new(seed);
    let x = DMatrix::from_fn(n, n, |_, _| rng.normal());
    validate_psd(&DenseMatrix::new(&x * x.transpose() + DMatrix::identity(n, n) * 0.1).unwrap(), PSD_TOLERANCE)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vec_unvec_round_trip(m in matrix_strategy(6)) {
        let back = unvec(&vec(&m), m.rows(), m.cols()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn kron_matches_vec_identity(seed in any::<u64>(), r in 1usize..5, p in 1usize..5, s in 1usize..5, t in 1usize..5) {
        let mut rng = SplitMix64::new(seed);
        let mut draw = |a: usize, b: usize| DenseMatrix::from_fn(a, b, |_, _| rng.normal()).unwrap();
        let (m, x, n) = (draw(r, p), draw(p, s), draw(s, t));
        let fast = apply_kron_vec(&n, &m, &x).unwrap();
        let big = kron(&n.transpose(), &m);
        let slow = big.as_matrix() * nalgebra::DVector::from_vec(vec(&x));
        let slow = unvec(slow.as_slice(), r, t).unwrap();
        prop_assert!(diff(fast.as_matrix(), slow.as_matrix()) <= 1e-10 * slow.max_abs().max(1.0));
    }

    #[test]
    fn filter_loo_ignores_own_label(
        y in prop::collection::vec(-5.0..5.0f64, 12),
        a in prop::array::uniform4(0.0..0.3f64),
        i in 0usize..4,
        j in 0usize..3,
    ) {
        let y = LabelMatrix::new(dense(4, 3, &y)).unwrap();
        let w = FilterWeights::new(a).unwrap();
        let base = filter_loo(&fit_filter(&y, w)).unwrap();
        let mut bumped = y.matrix().as_matrix().clone();
        bumped[(i, j)] += 1.0;
        let bumped = LabelMatrix::new(DenseMatrix::new(bumped).unwrap()).unwrap();
        let after = filter_loo(&fit_filter(&bumped, w)).unwrap();
        prop_assert!((base.get(i, j) - after.get(i, j)).abs() <= 1e-12 * (1.0 + base.max_abs()));
    }

    #[test]
    fn smoother_algebra_matches_dense(
        c in prop::array::uniform4(-2.0..2.0f64),
        d in prop::array::uniform4(-2.0..2.0f64),
        m in 1usize..5,
        q in 1usize..5,
    ) {
        let a = SmootherMatrix::new(c, m, q).unwrap();
        let b = SmootherMatrix::new(d, m, q).unwrap();
        let prod = a.mul(&b).unwrap().to_dense().unwrap();
        let dense_prod = a.to_dense().unwrap().as_matrix() * b.to_dense().unwrap().as_matrix();
        prop_assert!(diff(prod.as_matrix(), &dense_prod) <= 1e-10 * (1.0 + dense_prod.amax()));
    }
}

#[test]
fn model_file_round_trip_for_every_method() {
    let inst = RandomInstance::generate(11, Some((5, 4))).unwrap();
    let (k, g, y) = (&inst.k, &inst.g, &inst.y);
    let models = [
        fit_it(k, y, 0.4).unwrap(),
        fit_kron(k, g, y, 0.2).unwrap(),
        pairkrr_core::models::fit_okkls(k, g, y).unwrap(),
        fit_two_step(k, g, y, 0.3, 0.9).unwrap(),
        fit_filter(y, FilterWeights::new([0.5, 0.1, 0.2, 0.1]).unwrap()),
    ];
    for model in &models {
        let text = model_to_string(model);
        let back = read_model(text.as_bytes()).unwrap();
        assert_eq!(model_to_string(&back), text);
        let before = training_predictions(model).unwrap();
        let after = training_predictions(&back).unwrap();
        assert!(diff(before.as_matrix(), after.as_matrix()) <= 1e-12 * before.max_abs().max(1.0));
        if model.method() != Method::Filter {
            let b0 = predict_setting(model, Setting::B, Some(&inst.k_test), None).unwrap();
            let b1 = predict_setting(&back, Setting::B, Some(&inst.k_test), None).unwrap();
            assert!(diff(b0.as_matrix(), b1.as_matrix()) <= 1e-12 * b0.max_abs().max(1.0));
        }
    }
}

#[test]
fn setting_a_equals_predict_with_training_kernels() {
    let inst = RandomInstance::generate(12, Some((6, 3))).unwrap();
    let model = fit_two_step(&inst.k, &inst.g, &inst.y, 0.5, 0.5).unwrap();
    let a = predict_setting(&model, Setting::A, None, None).unwrap();
    let full = predict(&model, inst.k.matrix(), inst.g.matrix()).unwrap();
    assert!(diff(a.as_matrix(), full.as_matrix()) <= 1e-10 * full.max_abs());
    assert!(predict_setting(&model, Setting::A, Some(&inst.k_test), None).is_err());
    assert!(predict_setting(&model, Setting::D, Some(&inst.k_test), None).is_err());
}

#[test]
fn spectral_filters_reproduce_direct_fits() {
    for seed in 0..10 {
        let inst = RandomInstance::generate(seed, None).unwrap();
        let (k, g, y) = (&inst.k, &inst.g, &inst.y);
        let kron_a = fit_kron(k, g, y, inst.lambda).unwrap();
        let filtered = filtered_fit(k, g, y, &SpectralFilter::KronTikhonov { lambda: inst.lambda }).unwrap();
        let scale = kron_a.coefficients().unwrap().matrix().max_abs();
        assert!(diff(filtered.matrix(), kron_a.coefficients().unwrap().matrix()) <= 1e-10 * scale);

        let ts = fit_two_step(k, g, y, inst.lambda_u, inst.lambda_v).unwrap();
        let f = SpectralFilter::TwoStep { lambda_u: inst.lambda_u, lambda_v: inst.lambda_v };
        let filtered = filtered_fit(k, g, y, &f).unwrap();
        let scale = ts.coefficients().unwrap().matrix().max_abs();
        assert!(diff(filtered.matrix(), ts.coefficients().unwrap().matrix()) <= 1e-10 * scale);
    }
}

#[test]
fn sweep_agrees_with_fresh_fits() {
    let k = pd_gram(1, 7);
    let g = pd_gram(2, 5);
    let mut rng = SplitMix64::new(3);
    let y = LabelMatrix::new(DenseMatrix::from_fn(7, 5, |_, _| rng.normal()).unwrap()).unwrap();
    let grid: Vec<SweepPoint> = [0.01, 0.1, 1.0, 10.0].into_iter().map(SweepPoint::Lambda).collect();
    for (p, model) in grid.iter().zip(sweep(&k, Some(&g), &y, Method::Kronecker, &grid).unwrap()) {
        let SweepPoint::Lambda(l) = *p else { unreachable!() };
        let fresh = fit_kron(&k, &g, &y, l).unwrap();
        let got = model.unwrap();
        let scale = fresh.coefficients().unwrap().matrix().max_abs();
        assert!(diff(got.coefficients().unwrap().matrix(), fresh.coefficients().unwrap().matrix()) <= 1e-10 * scale);
    }
}

#[test]
fn identity_filter_weights_reproduce_labels() {
    let y = dense(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(linear_filter_apply(&y, [1.0, 0.0, 0.0, 0.0]), y);
    let grand = linear_filter_apply(&y, [0.0, 0.0, 0.0, 1.0]);
    assert!(grand.as_matrix().iter().all(|&v| (v - 3.5).abs() < 1e-15));
}
