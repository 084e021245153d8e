use hrm_core::baselines::{
    dro_inner_max, fit_dro, fit_erm, fit_irm, irm_dummy_gradient, irm_objective, BaselineConfig,
    BaselineMethod,
};
use hrm_core::data::{generate_selection_bias, rng_from_seed, Dataset, SelectionBiasConfig};
use hrm_core::envs::{envs_from_labels, Environment};
use hrm_core::gates::LinearModel;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = rng_from_seed(seed);
    let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
    let coef: Vec<f64> = (0..=d).map(|_| z()).collect();
    let x = DMatrix::from_fn(n, d, |_, _| z());
    let y = DVector::from_fn(n, |i, _| {
        coef[d] + (0..d).map(|j| coef[j] * x[(i, j)]).sum::<f64>() + 0.3 * z()
    });
    (x, y)
}

/// Solves `[X 1]ᵀ[X 1] β = [X 1]ᵀ y` by Cholesky.
fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64) {
    let (n, d) = x.shape();
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
    let beta = (a.transpose() * &a)
        .cholesky()
        .unwrap()
        .solve(&(a.transpose() * y));
    (beta.rows(0, d).into_owned(), beta[d])
}

fn min_gram_eigenvalue(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    (centered.transpose() * &centered / n)
        .symmetric_eigenvalues()
        .min()
}

fn erm_cfg() -> BaselineConfig {
    BaselineConfig {
        method: BaselineMethod::Erm,
        ..BaselineConfig::default()
    }
}

fn dataset(x: DMatrix<f64>, y: DVector<f64>) -> Dataset {
    Dataset::new(x, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn erm_matches_normal_equations(seed in any::<u64>()) {
        let (x, y) = gaussian(seed, 20, 5);
        prop_assume!(min_gram_eigenvalue(&x) > 0.05);
        let (theta, b) = normal_equations(&x, &y);
        let fit = fit_erm(&dataset(x, y), &erm_cfg()).unwrap();
        let err = (&fit.model.theta - &theta).amax().max((fit.model.intercept - b).abs());
        prop_assert!(err <= 1e-3, "coefficient error {err}");
    }

    #[test]
    fn irm_dummy_gradient_matches_finite_difference(seed in any::<u64>(), n in 5usize..40, d in 1usize..5) {
        let (x, y) = gaussian(seed, n, d);
        let mut rng = rng_from_seed(seed ^ 0x5555);
        let theta = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let model = LinearModel { theta, intercept: 0.3 };
        let phi = model.predict(&x);
        let loss = |w: f64| (&phi * w - &y).norm_squared() / n as f64;
        let h = 1e-5;
        let fd = (loss(1.0 + h) - loss(1.0 - h)) / (2.0 * h);
        let env = Environment::unweighted(x, y).unwrap();
        let got = irm_dummy_gradient(&env, &model);
        prop_assert!((got - fd).abs() <= 1e-4 * fd.abs().max(1.0), "{got} vs {fd}");
    }

    /// At the pooled least-squares fit the residual is orthogonal to the
    /// prediction, so identical environments carry no IRM penalty.
    #[test]
    fn irm_penalty_vanishes_on_identical_environments(seed in any::<u64>(), copies in 2usize..5) {
        let (x, y) = gaussian(seed, 30, 3);
        let (theta, intercept) = normal_equations(&x, &y);
        let model = LinearModel { theta, intercept };
        let envs: Vec<Environment> = (0..copies).map(|_| Environment::unweighted(x.clone(), y.clone()).unwrap()).collect();
        let with = irm_objective(&envs, &model, 1e3);
        let without = irm_objective(&envs, &model, 0.0);
        prop_assert!((with - without).abs() <= 1e-12 * without.max(1.0), "{with} vs {without}");
    }

    #[test]
    fn dro_inner_max_matches_grid_search(
        theta in -1.5..1.5f64,
        b in -1.0..1.0f64,
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
        gamma in 3.0..15.0f64,
    ) {
        let model = LinearModel { theta: DVector::from_element(1, theta), intercept: b };
        let got = dro_inner_max(&model, &[x], y, gamma, 2000, 0.5 / gamma)[0];
        let surrogate = |delta: f64| (theta * (x + delta) + b - y).powi(2) - gamma * delta * delta;
        let best = (-200_000..=200_000)
            .map(|k| k as f64 * 1e-4)
            .max_by(|p, q| surrogate(*p).total_cmp(&surrogate(*q)))
            .unwrap();
        prop_assert!((got - best).abs() <= 2e-4, "ascent {got}, grid {best}");
    }
}

fn selection_data(seed: u64) -> Dataset {
    generate_selection_bias(
        &SelectionBiasConfig {
            sum: 400,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

#[test]
fn baselines_are_deterministic() {
    let data = selection_data(2);
    let cfg = BaselineConfig {
        epochs: 300,
        seed: 5,
        ..BaselineConfig::default()
    };
    assert_eq!(fit_erm(&data, &cfg).unwrap(), fit_erm(&data, &cfg).unwrap());
    assert_eq!(fit_dro(&data, &cfg).unwrap(), fit_dro(&data, &cfg).unwrap());
    let envs = envs_from_labels(&data).unwrap();
    assert_eq!(fit_irm(&envs, &cfg).unwrap(), fit_irm(&envs, &cfg).unwrap());
}

#[test]
fn huge_transport_cost_reduces_dro_to_erm() {
    let data = selection_data(3);
    let erm = fit_erm(&data, &erm_cfg()).unwrap().model;
    let cfg = BaselineConfig {
        dro_gamma: 1e5,
        dro_inner_lr: 1e-6,
        ..BaselineConfig::default()
    };
    let dro = fit_dro(&data, &cfg).unwrap().model;
    let err = (&dro.theta - &erm.theta)
        .amax()
        .max((dro.intercept - erm.intercept).abs());
    assert!(err <= 1e-2, "{err}");
}

#[test]
fn erm_is_ols_on_noiseless_data() {
    let (x, _) = gaussian(11, 50, 3);
    let y = DVector::from_fn(50, |i, _| {
        1.5 * x[(i, 0)] - 0.5 * x[(i, 1)] + 0.25 * x[(i, 2)] + 2.0
    });
    let cfg = BaselineConfig {
        epochs: 20_000,
        ..erm_cfg()
    };
    let fit = fit_erm(&dataset(x, y), &cfg).unwrap().model;
    let want = [1.5, -0.5, 0.25];
    for (g, w) in fit.theta.iter().zip(want) {
        assert!((g - w).abs() < 1e-6, "{:?}", fit.theta);
    }
    assert!((fit.intercept - 2.0).abs() < 1e-6);
}
