use metass_core::rng::SimRng;
use metass_core::simulator::{
    generate_benchmark_datasets, generate_datasets, generate_test_ensemble, simulate_system,
    BenchmarkSystem, Dataset, EnsembleSpec, LinearGaussianSystem, StochasticSystem, TestEnsemble,
};
use ndarray::Array2;
use proptest::prelude::*;

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    let v = xs.map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[test]
fn training_input_has_requested_moments() {
    let (train, val) = generate_benchmark_datasets(300_000, 10_000, 1).unwrap();
    assert_eq!((train.len(), val.len()), (300_000, 10_000));
    let (m, s) = mean_std(train.u.iter().copied());
    assert!(m.abs() < 0.02, "mean {m}");
    assert!((s - 2.0).abs() < 0.02, "std {s}");
}

#[test]
fn datasets_are_seeded_and_streams_distinct() {
    let (a, va) = generate_benchmark_datasets(2_000, 500, 42).unwrap();
    let (b, vb) = generate_benchmark_datasets(2_000, 500, 42).unwrap();
    assert_eq!(a, b);
    assert_eq!(va, vb);
    let (c, _) = generate_benchmark_datasets(2_000, 500, 43).unwrap();
    assert_ne!(a.u, c.u);
    // Training and validation inputs come from different streams.
    assert_ne!(a.u.slice(ndarray::s![..500, ..]), va.u);
}

#[test]
fn benchmark_noise_is_uniform() {
    let sys = BenchmarkSystem::default();
    let mut rng = SimRng::new(11, 0);
    let mut v = Vec::new();
    let mut draws: Vec<f64> = (0..100_000)
        .map(|_| {
            sys.sample_process_noise(&mut rng, &mut v);
            v[0]
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = (x + 0.5).clamp(0.0, 1.0);
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS distance {ks}");
    assert!(draws[0] >= -0.5 && draws[draws.len() - 1] <= 0.5);
}

#[test]
fn linear_system_ensemble_matches_stationary_moments() {
    let sys = LinearGaussianSystem::default();
    let spec = EnsembleSpec {
        s: 4000,
        n_keep: 5,
        n_transient: 200,
        input_std: 0.0,
        seed: 8,
    };
    let ens = generate_test_ensemble(&sys, &spec).unwrap();
    let var = sys.stationary_predictive_variance();
    let s = spec.s as f64;
    for t in 0..ens.n_times() {
        let (m, sd) = mean_std(ens.y.row(t).iter().copied());
        assert!(m.abs() < 3.0 * var.sqrt() / s.sqrt(), "t={t} mean {m}");
        assert!((sd * sd / var - 1.0).abs() < 0.1, "t={t} var {}", sd * sd);
    }
}

#[test]
fn ensemble_is_reproducible_and_trajectories_differ() {
    let spec = EnsembleSpec {
        s: 50,
        n_keep: 200,
        n_transient: 100,
        input_std: 2.0,
        seed: 5,
    };
    let sys = BenchmarkSystem::default();
    let a = generate_test_ensemble(&sys, &spec).unwrap();
    let b = generate_test_ensemble(&sys, &spec).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.y.column(0), a.y.column(1));
    assert_eq!(a.meta.n_transient, 100);
}

#[test]
fn csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = generate_benchmark_datasets(300, 40, 9).unwrap();
    let p = dir.path().join("train.csv");
    train.write_csv(&p).unwrap();
    let back = Dataset::read_csv(&p).unwrap();
    assert_eq!(back.u, train.u);
    assert_eq!(back.y, train.y);

    let spec = EnsembleSpec {
        s: 7,
        n_keep: 30,
        n_transient: 10,
        input_std: 2.0,
        seed: 1,
    };
    let ens = generate_test_ensemble(&BenchmarkSystem::default(), &spec).unwrap();
    let p = dir.path().join("ensemble.csv");
    ens.write(&p).unwrap();
    assert_eq!(TestEnsemble::read(&p).unwrap(), ens);
}

#[test]
fn malformed_csv_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "t,u,y\n0,1.0\n").unwrap();
    let err = Dataset::read_csv(&p).unwrap_err();
    assert!(matches!(err, metass_core::Error::Format(_)), "{err}");
}

#[test]
fn linear_system_is_seeded_through_generic_path() {
    let sys = LinearGaussianSystem::default();
    let (a, _) = generate_datasets(&sys, 500, 50, 1.0, 3).unwrap();
    let (b, _) = generate_datasets(&sys, 500, 50, 1.0, 3).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn benchmark_step_is_bounded(x in -50.0f64..50.0, u in -10.0f64..10.0, e in -0.5f64..0.5) {
        let sys = BenchmarkSystem::default();
        let mut next = [0.0];
        sys.transition(&[x], &[u], &[e], &mut next);
        prop_assert!(next[0].abs() <= x.abs() + u.abs() + 1e-12);
    }

    #[test]
    fn benchmark_trajectories_stay_finite(seed in 0u64..1000) {
        let mut rng = SimRng::new(seed, 0);
        let u = Array2::from_shape_simple_fn((500, 1), || rng.normal(0.0, 10.0));
        let y = simulate_system(&BenchmarkSystem::default(), u.view(), &mut rng).unwrap();
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }
}
