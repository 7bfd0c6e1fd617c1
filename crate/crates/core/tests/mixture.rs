use metass_core::mixture::{log_sum_exp, softmax, GaussianMixture};
use metass_core::model::{MssDims, MssModel, NetLayout, Normalization};
use metass_core::rng::SimRng;
use metass_core::diffcore::ParamBlocks;
use ndarray::array;
use proptest::prelude::*;

/// Composite Simpson over breakpoints at every component's `μ ± kσ/4`,
/// `|k| ≤ 48`, so narrow components are resolved wherever they sit.
fn quadrature_density(mix: &GaussianMixture<f64>) -> f64 {
    let mut pts = Vec::new();
    for i in 0..mix.n_components() {
        let (m, s) = (mix.means()[[i, 0]], mix.sigmas()[[i, 0]]);
        pts.extend((-48..=48).map(|k| m + s * k as f64 / 4.0));
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let f = |y: f64| mix.density(&[y]);
    pts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let n = 8;
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for j in 1..n {
                s += if j % 2 == 1 { 4.0 } else { 2.0 } * f(a + h * j as f64);
            }
            s * h / 3.0
        })
        .sum()
}

fn random_model(seed: u64) -> MssModel<f64> {
    let mut rng = SimRng::new(seed, 0);
    let dims = MssDims { n_z: 3, n_u: 1, n_y: 1, n_normals: 5 };
    let mut m = MssModel::init(dims, &NetLayout::uniform(2, 8), Normalization::identity(1, 1), &mut rng).unwrap();
    for b in m.nets_mut().blocks_mut() {
        b.iter_mut().for_each(|v| *v = rng.normal(0.0, 0.4));
    }
    m
}

#[test]
fn predicted_mixtures_integrate_to_one() {
    let mut rng = SimRng::new(3, 3);
    for i in 0..100 {
        let model = random_model(i % 10);
        let z = array![rng.normal(0.0, 2.0), rng.normal(0.0, 2.0), rng.normal(0.0, 2.0)];
        let u = array![rng.normal(0.0, 2.0)];
        let mix = model.output_distribution(z.view(), u.view()).unwrap();
        let total = quadrature_density(&mix);
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }
}

#[test]
fn extreme_logits_stay_finite() {
    for big in [1000.0f64, -1000.0] {
        let w = softmax(&[big, 0.0, -big, 3.0]);
        assert!(w.iter().all(|v| v.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let lse = log_sum_exp(&[big, 0.0, -big]);
        assert!(lse.is_finite());
    }
    let mix = GaussianMixture::univariate(softmax(&[1000.0, -1000.0]), vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
    let lp = mix.log_prob(&[0.5]).unwrap();
    assert!((lp - (-0.5 * (2.0 * std::f64::consts::PI).ln() - 0.125)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(
        logits in prop::collection::vec(-50.0f64..50.0, 1..12),
        c in -500.0f64..500.0,
    ) {
        let a = softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_prob_agrees_with_direct_density(
        params in prop::collection::vec((-5.0f64..5.0, -3.0f64..3.0, 0.1f64..3.0), 1..8),
        y in -6.0f64..6.0,
    ) {
        let logits: Vec<f64> = params.iter().map(|p| p.0).collect();
        let w = softmax(&logits);
        let means: Vec<f64> = params.iter().map(|p| p.1).collect();
        let sigmas: Vec<f64> = params.iter().map(|p| p.2).collect();
        let direct: f64 = w.iter().zip(&means).zip(&sigmas).map(|((w, m), s)| {
            let z = (y - m) / s;
            w * (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        }).sum();
        let mix = GaussianMixture::univariate(w, means, sigmas).unwrap();
        let lp = mix.log_prob(&[y]).unwrap();
        prop_assert!((lp.exp() - direct).abs() <= 1e-10 * direct.max(1e-300) + 1e-300);
        prop_assert!((mix.density(&[y]) - direct).abs() <= 1e-12 * direct.max(1.0));
    }

    #[test]
    fn component_densities_sum_to_mixture(
        params in prop::collection::vec((-5.0f64..5.0, -3.0f64..3.0, 0.05f64..3.0), 1..8),
        y in -6.0f64..6.0,
    ) {
        let w = softmax(&params.iter().map(|p| p.0).collect::<Vec<_>>());
        let mix = GaussianMixture::univariate(
            w,
            params.iter().map(|p| p.1).collect(),
            params.iter().map(|p| p.2).collect(),
        ).unwrap();
        let parts: f64 = mix.component_densities(&[y]).iter().sum();
        prop_assert!((parts - mix.density(&[y])).abs() <= 1e-12 * parts.max(1e-300));
    }
}
