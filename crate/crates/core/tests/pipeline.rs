use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use screg::population::{make_logistic_population, make_source_population, SourceDesign};
use screg::rates::{lambda_schedule, Regime, RegimeParams};
use screg::sampling::{derive_seed, draw_counts};
use screg::solver::solve_erm;
use screg::{LossModel, Sample, SolverConfig};

#[test]
fn ridge_matches_normal_equations() {
    let xs = [
        DVector::from_vec(vec![1.0, 0.5, -0.2]),
        DVector::from_vec(vec![-0.3, 2.0, 0.1]),
        DVector::from_vec(vec![0.7, -1.1, 1.5]),
        DVector::from_vec(vec![0.0, 0.4, -0.9]),
    ];
    let ys = [1.2, -0.4, 0.3, 2.0];
    let weights = [0.1, 0.4, 0.3, 0.2];
    let lambda = 0.05;
    let samples: Vec<Sample> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| Sample::Scalar {
            features: x.clone(),
            label: y,
        })
        .collect();
    let fit = solve_erm(&samples, &weights, &LossModel::Square, lambda, &SolverConfig::default())
        .unwrap();
    assert!(fit.converged);

    let mut a = DMatrix::identity(3, 3) * lambda;
    let mut b = DVector::zeros(3);
    for ((x, y), w) in xs.iter().zip(ys).zip(weights) {
        a += x * x.transpose() * w;
        b += x * (y * w);
    }
    let exact = a.lu().solve(&b).unwrap();
    assert!((&fit.theta_hat - &exact).norm() <= 1e-10 * exact.norm());
}

#[test]
fn logistic_population_minimizer_is_theta_star() {
    let (pop, theta_star) = make_logistic_population(3, 12, 1.5, 4).unwrap();
    let theta = pop.minimize(1e-10, &SolverConfig::default()).unwrap();
    assert!((&theta - &theta_star).norm() < 1e-6);
    let grad = pop.gradient(&theta_star, 0.0).unwrap();
    assert!(grad.norm() < 1e-12);
}

#[test]
fn counts_are_reproducible_and_sum_to_n() {
    let weights = [0.5, 0.25, 0.125, 0.125];
    let n = 1 << 40;
    let seed = derive_seed(3, 1, 7);
    let a = draw_counts(&weights, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let b = draw_counts(&weights, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().sum::<u64>(), n);
    for (count, w) in a.iter().zip(weights) {
        let freq = *count as f64 / n as f64;
        assert!((freq - w).abs() < 1e-5, "{freq} vs {w}");
    }
    assert_ne!(derive_seed(3, 1, 7), derive_seed(3, 1, 8));
    assert_ne!(derive_seed(3, 1, 7), derive_seed(3, 2, 7));
}

#[test]
fn schedules_decrease_and_respect_cap() {
    let params = RegimeParams {
        b1_bar: Some(2.0),
        r_cert: Some(1.5),
        b1_star: Some(1.0),
        b2_star: Some(0.8),
        l_norm: Some(0.5),
        q: Some(3.0),
        r: Some(0.5),
        alpha: Some(2.0),
        ..Default::default()
    };
    for regime in [Regime::None, Regime::Source, Regime::SourceCapacity] {
        let mut last = f64::INFINITY;
        for k in 4..30 {
            let s = lambda_schedule(regime, 1u64 << k, &params, 0.1).unwrap();
            assert!(s.lambda > 0.0 && s.lambda <= 0.8);
            assert!(s.lambda <= last);
            assert_eq!(s.clamped, s.unclamped > 0.8);
            last = s.lambda;
        }
        assert!(last < 0.8, "{regime:?} never leaves the cap");
    }
    assert!(lambda_schedule(Regime::None, 100, &params, 0.7).is_err());
    assert!(lambda_schedule(Regime::None, 0, &params, 0.1).is_err());
}

#[test]
fn bias_grows_and_df_shrinks_with_lambda() {
    let pop = make_source_population(32, 0.5, 2.0, 9).unwrap();
    let sol = pop.solve(&SolverConfig::default()).unwrap();
    let grid: Vec<f64> = (0..12).map(|k| 10f64.powf(-4.0 + 0.4 * k as f64)).collect();
    let bias: Vec<f64> = grid.iter().map(|&l| sol.bias(l).unwrap()).collect();
    let df: Vec<f64> = grid.iter().map(|&l| sol.df(l).unwrap()).collect();
    for w in bias.windows(2) {
        assert!(w[1] >= w[0]);
    }
    for w in df.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert!(df[0] <= 32.0 + 1e-9);
}

#[test]
fn source_design_validation_rejects_bad_exponents() {
    assert!(SourceDesign::new(8, -0.1, 2.0, 1).validate().is_err());
    assert!(SourceDesign::new(8, 0.5, 0.5, 1).validate().is_err());
    assert!(SourceDesign::new(8, 0.5, 2.0, 1).validate().is_ok());
}
