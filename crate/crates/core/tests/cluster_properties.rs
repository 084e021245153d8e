use hrm_core::cluster::{
    center_likelihood, clustering_objective, e_step, fit_mc, fit_mc_on, ClusterCenter, McConfig,
};
use hrm_core::data::{
    derive_seed, generate_selection_bias, rng_from_seed, Dataset, SelectionBiasConfig,
};
use hrm_core::gates::LinearModel;
use hrm_core::hrm::partition_agreement;
use hrm_core::linalg::ordinary_least_squares;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Rows drawn from `k` random regressions on `d` features.
fn mixture(
    seed: u64,
    n: usize,
    d: usize,
    k: usize,
    noise: f64,
) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let coefs: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..=d).map(|_| 2.0 * normal(&mut rng)).collect())
        .collect();
    let psi = DMatrix::from_fn(n, d, |_, _| normal(&mut rng));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let y = DVector::from_fn(n, |i, _| {
        let c = &coefs[labels[i]];
        c[d] + (0..d).map(|j| c[j] * psi[(i, j)]).sum::<f64>() + noise * normal(&mut rng)
    });
    (psi, y, labels)
}

fn center(theta: Vec<f64>, b: f64, sigma: f64) -> ClusterCenter {
    ClusterCenter {
        model: LinearModel {
            theta: DVector::from_vec(theta),
            intercept: b,
        },
        sigma_y: sigma,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn em_objective_is_monotone(
        seed in any::<u64>(),
        d in 1usize..4,
        k in 2usize..4,
        noise in 0.05..2.0f64,
        learn_sigma in any::<bool>(),
    ) {
        let (psi, y, _) = mixture(seed, 200, d, k, noise);
        let cfg = McConfig { k, seed, learn_sigma, ..McConfig::default() };
        let fit = fit_mc_on(&psi, &y, &cfg, None).unwrap();
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "objective rose from {} to {}", w[0], w[1]);
        }
        let q_sum: f64 = fit.partition.q.sum();
        prop_assert!((q_sum - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn responsibilities_lie_on_the_simplex(
        seed in any::<u64>(),
        k in 1usize..5,
        scale in prop_oneof![Just(1.0), Just(100.0), Just(1e4)],
        sigma in prop_oneof![Just(0.01), Just(0.5), Just(10.0)],
    ) {
        let mut rng = rng_from_seed(seed);
        let psi = DMatrix::from_fn(50, 2, |_, _| scale * normal(&mut rng));
        let y = DVector::from_fn(50, |_, _| scale * normal(&mut rng));
        let centers: Vec<ClusterCenter> = (0..k).map(|_| center(vec![normal(&mut rng), normal(&mut rng)], normal(&mut rng), sigma)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let q = DVector::from_iterator(k, raw.iter().map(|v| v / total));
        let w = e_step(&psi, &y, &centers, &q).unwrap();
        for row in w.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn permuting_initial_centers_permutes_labels(seed in any::<u64>(), k in 2usize..4) {
        let (psi, y, _) = mixture(seed, 150, 2, k, 0.3);
        let mut rng = rng_from_seed(derive_seed(seed, 9));
        let centers: Vec<ClusterCenter> = (0..k).map(|_| center(vec![normal(&mut rng), normal(&mut rng)], normal(&mut rng), 0.5)).collect();
        let q = DVector::from_element(k, 1.0 / k as f64);
        // cyclic shift: new index j holds old center perm[j]
        let perm: Vec<usize> = (0..k).map(|j| (j + 1) % k).collect();
        let permuted: Vec<ClusterCenter> = perm.iter().map(|&p| centers[p].clone()).collect();
        let cfg = McConfig { k, min_responsibility: 0.0, ..McConfig::default() };
        let a = fit_mc_on(&psi, &y, &cfg, Some((centers, q.clone()))).unwrap();
        let b = fit_mc_on(&psi, &y, &cfg, Some((permuted, q))).unwrap();
        let mut inverse = vec![0; k];
        for (j, &p) in perm.iter().enumerate() {
            inverse[p] = j;
        }
        for (la, lb) in a.partition.hard_labels.iter().zip(&b.partition.hard_labels) {
            prop_assert_eq!(inverse[*la], *lb);
        }
        prop_assert!((a.trace.last().unwrap() - b.trace.last().unwrap()).abs() <= 1e-9);
    }
}

/// Two centres `f₁(ψ) = ψ`, `f₂(ψ) = -ψ`, σ = 1, uniform prior, point (1, 1):
/// responsibility of centre 1 is `1 / (1 + e⁻²)`.
#[test]
fn e_step_hand_ratio() {
    let centers = vec![center(vec![1.0], 0.0, 1.0), center(vec![-1.0], 0.0, 1.0)];
    let w = e_step(
        &DMatrix::from_element(1, 1, 1.0),
        &DVector::from_element(1, 1.0),
        &centers,
        &DVector::from_vec(vec![0.5, 0.5]),
    )
    .unwrap();
    let want = 1.0 / (1.0 + (-2.0f64).exp());
    assert!((w[(0, 0)] - want).abs() < 1e-12);
    assert!((want - 0.8808).abs() < 1e-4);
}

/// Residual 2 under σ = 0.5 against a normal-pdf oracle.
#[test]
fn likelihood_matches_normal_pdf() {
    let c = center(vec![1.0], 0.0, 0.5);
    let oracle = statrs_free_pdf(2.0, 0.5);
    assert!((center_likelihood(&c, &[1.0], 3.0) - oracle).abs() < 1e-15);
    assert!((oracle - 2.6766e-4).abs() < 1e-7);
}

fn statrs_free_pdf(residual: f64, sigma: f64) -> f64 {
    (-(residual * residual) / (2.0 * sigma * sigma)).exp()
        / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Direct summation of `-(1/N) Σ log Σ_j q_j N(y; f_j, σ²)` on four points.
#[test]
fn objective_matches_direct_summation() {
    let psi = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, -1.0, 2.0]);
    let y = DVector::from_vec(vec![0.5, 1.2, -0.7, 3.0]);
    let centers = vec![center(vec![1.0], 0.0, 0.5), center(vec![-0.5], 1.0, 0.8)];
    let q = DVector::from_vec(vec![0.3, 0.7]);
    let mut total = 0.0;
    for i in 0..4 {
        let mut mix = 0.0;
        for (j, c) in centers.iter().enumerate() {
            let f = c.model.theta[0] * psi[(i, 0)] + c.model.intercept;
            mix += q[j] * statrs_free_pdf(y[i] - f, c.sigma_y);
        }
        total += mix.ln();
    }
    let got = clustering_objective(&psi, &y, &centers, &q).unwrap();
    assert!((got + total / 4.0).abs() < 1e-12);
}

/// `y = 2ψ` and `y = -2ψ` with small noise: hard labels recover the split.
#[test]
fn planted_regressions_are_recovered() {
    for seed in 0..10u64 {
        let mut rng = rng_from_seed(seed);
        let n = 1000;
        let psi = DMatrix::from_fn(n, 1, |_, _| normal(&mut rng));
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let y = DVector::from_fn(n, |i, _| {
            let s = if truth[i] == 0 { 2.0 } else { -2.0 };
            s * psi[(i, 0)] + 0.05 * normal(&mut rng)
        });
        let fit = fit_mc_on(
            &psi,
            &y,
            &McConfig {
                seed,
                ..McConfig::default()
            },
            None,
        )
        .unwrap();
        let acc = partition_agreement(&fit.partition.hard_labels, &truth).unwrap();
        assert!(acc >= 0.95, "seed {seed}: agreement {acc}");
    }
}

#[test]
fn random_labels_agree_about_half() {
    let mut rng = rng_from_seed(4);
    let n = 10_000;
    let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let acc = partition_agreement(&a, &b).unwrap();
    assert!((0.45..=0.55).contains(&acc), "{acc}");
}

#[test]
fn clustering_is_deterministic_per_seed() {
    let data = generate_selection_bias(&SelectionBiasConfig::default(), 3).unwrap();
    let sel = DVector::from_element(data.d(), 1.0);
    let cfg = McConfig {
        seed: 8,
        ..McConfig::default()
    };
    let a = fit_mc(&data, &sel, &cfg).unwrap();
    let b = fit_mc(&data, &sel, &cfg).unwrap();
    assert_eq!(a.partition, b.partition);
    assert_eq!(a.trace, b.trace);
}

/// Gaussian conditional `N(xᵀθ + b, σ²)` fitted by least squares.
struct Conditional {
    theta: DVector<f64>,
    b: f64,
    var: f64,
}

fn fit_conditional(x: &DMatrix<f64>, y: &DVector<f64>) -> Conditional {
    let (theta, b) = ordinary_least_squares(x, y).unwrap();
    let r = x * &theta + DVector::from_element(y.len(), b) - y;
    Conditional {
        theta,
        b,
        var: r.norm_squared() / (y.len() - x.ncols() - 1) as f64,
    }
}

fn mean_kl(p: &Conditional, q: &Conditional, x: &DMatrix<f64>) -> f64 {
    let mp = x * &p.theta + DVector::from_element(x.nrows(), p.b);
    let mq = x * &q.theta + DVector::from_element(x.nrows(), q.b);
    let kl: f64 = mp
        .iter()
        .zip(mq.iter())
        .map(|(a, b)| 0.5 * (q.var / p.var).ln() + (p.var + (a - b).powi(2)) / (2.0 * q.var) - 0.5)
        .sum();
    kl / x.nrows() as f64
}

fn columns(ds: &Dataset, cols: std::ops::Range<usize>) -> DMatrix<f64> {
    ds.x.columns(cols.start, cols.len()).into_owned()
}

/// The two true environments' conditionals are further apart on the
/// variant block alone than on all of X, in at least 9 of 10 seeds.
#[test]
fn variant_block_separates_environments_more_than_full_x() {
    let cfg = SelectionBiasConfig::default();
    let mut wins = 0;
    for seed in 0..10u64 {
        let train = generate_selection_bias(&cfg, derive_seed(seed, 0)).unwrap();
        let held = generate_selection_bias(&cfg, derive_seed(seed, 1)).unwrap();
        let e1 = train.env_subset(0).unwrap();
        let e2 = train.env_subset(1).unwrap();
        let full = 0..cfg.d;
        let psi = cfg.n_phi..cfg.d;
        let kl_x = mean_kl(
            &fit_conditional(&columns(&e1, full.clone()), &e1.y),
            &fit_conditional(&columns(&e2, full.clone()), &e2.y),
            &columns(&held, full),
        );
        let kl_psi = mean_kl(
            &fit_conditional(&columns(&e1, psi.clone()), &e1.y),
            &fit_conditional(&columns(&e2, psi.clone()), &e2.y),
            &columns(&held, psi),
        );
        if kl_psi >= kl_x {
            wins += 1;
        }
    }
    assert!(wins >= 9, "KL inequality held in {wins}/10 seeds");
}
