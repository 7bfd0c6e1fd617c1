//! Fast numerical properties, each checked against an independent oracle.

use metass_core::checkpoint::{decode, encode};
use metass_core::diffcore::{Activation, MlpParams, ParamBlocks};
use metass_core::eval::{baseline_scores, compute_baselines, vasicek_entropy};
use metass_core::mixture::{log_sum_exp, softmax, GaussianMixture};
use metass_core::model::{MssDims, MssModel, MssNets, NetLayout, Normalization};
use metass_core::rng::SimRng;
use metass_core::simulator::{generate_benchmark_datasets, Dataset, EnsembleMeta, TestEnsemble};
use metass_core::trainer::{fit, full_simulation_nll, section_nll, section_nll_value, SectionData, TrainConfig};
use ndarray::{Array1, Array2};
use std::f64::consts::{E, PI};

const STEP: f64 = 1e-5;
pub const GRADIENT_TOL: f64 = 1e-5;

/// One named check: `Ok(summary)` or `Err(reason)`.
pub type Check = (&'static str, Result<String, String>);

pub fn run_all() -> Vec<Check> {
    vec![
        ("mlp gradient", mlp_gradient()),
        ("head gradient", head_gradient()),
        ("section gradient", section_gradient()),
        ("quadrature", quadrature()),
        ("extreme logits", extreme_logits()),
        ("T = N equivalence", full_length_equivalence()),
        ("baseline ordering", baseline_ordering()),
        ("vasicek", vasicek()),
        ("checkpoint round trip", checkpoint_round_trip()),
        ("seeded replay", seeded_replay()),
    ]
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn random_like<P: ParamBlocks<f64> + Clone>(p: &P, rng: &mut SimRng) -> P {
    let mut d = p.clone();
    for b in d.blocks_mut() {
        b.iter_mut().for_each(|v| *v = rng.standard_normal());
    }
    d
}

fn shifted<P: ParamBlocks<f64> + Clone>(p: &P, d: &P, h: f64) -> P {
    let mut q = p.clone();
    let dirs: Vec<Vec<f64>> = d.blocks().into_iter().map(|(_, b)| b.to_vec()).collect();
    for (b, db) in q.blocks_mut().into_iter().zip(dirs) {
        b.iter_mut().zip(db).for_each(|(v, dv)| *v += h * dv);
    }
    q
}

/// Five-point central difference of `f` along `d`.
fn directional<P: ParamBlocks<f64> + Clone>(p: &P, d: &P, f: impl Fn(P) -> f64) -> f64 {
    let at = |k: f64| f(shifted(p, d, k * STEP));
    (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * STEP)
}

fn inner<P: ParamBlocks<f64>>(a: &P, b: &P) -> f64 {
    a.blocks()
        .iter()
        .zip(b.blocks())
        .map(|((_, x), (_, y))| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

fn verdict(worst: f64, tol: f64, what: &str) -> Result<String, String> {
    if worst < tol {
        Ok(format!("worst {what} {worst:.1e} < {tol:.0e}"))
    } else {
        Err(format!("worst {what} {worst:.1e} >= {tol:.0e}"))
    }
}

fn mlp_gradient() -> Result<String, String> {
    let mut rng = SimRng::new(41, 0);
    let mut worst: f64 = 0.0;
    for probe in 0..100 {
        let hidden: Vec<usize> = (0..probe % 3).map(|_| 2 + (rng.uniform() * 4.0) as usize).collect();
        let (n_in, n_out) = (1 + probe % 3, 1 + (probe / 3) % 3);
        let mut net = MlpParams::<f64>::init(n_in, &hidden, n_out, Activation::Tanh, probe % 2 == 0, &mut rng);
        for b in net.blocks_mut() {
            b.iter_mut().for_each(|v| *v = rng.normal(0.0, 0.8));
        }
        let x = Array1::from_shape_simple_fn(n_in, || rng.standard_normal());
        let g = Array1::from_shape_simple_fn(n_out, || rng.standard_normal());
        let (_, tape) = net.forward(x.view()).map_err(|e| e.to_string())?;
        let (grads, _) = net.backward(&tape, g.view()).map_err(|e| e.to_string())?;
        let f = |n: &MlpParams<f64>| n.forward(x.view()).unwrap().0.dot(&g);
        let d = random_like(&net, &mut rng);
        let fd = (f(&shifted(&net, &d, STEP)) - f(&shifted(&net, &d, -STEP))) / (2.0 * STEP);
        worst = worst.max(rel_err(inner(&grads, &d), fd));
    }
    verdict(worst, GRADIENT_TOL, "relative error")
}

fn perturbed_model(seed: u64, n_z: usize, width: usize, norm: Normalization<f64>, scale: f64) -> MssModel<f64> {
    let mut rng = SimRng::new(seed, 0);
    let dims = MssDims { n_z, n_u: 1, n_y: 1, n_normals: 3 };
    let mut m = MssModel::init(dims, &NetLayout::uniform(1, width), norm, &mut rng).unwrap();
    for b in m.nets_mut().blocks_mut() {
        b.iter_mut().for_each(|v| *v = rng.normal(0.0, scale));
    }
    m
}

fn scaled_norm() -> Normalization<f64> {
    Normalization {
        u_mean: vec![0.2],
        u_scale: vec![1.9],
        y_mean: vec![-0.1],
        y_scale: vec![2.2],
    }
}

fn with_nets(model: &MssModel<f64>, nets: MssNets<f64>) -> MssModel<f64> {
    MssModel::from_parts(model.dims(), nets, model.normalization().clone()).unwrap()
}

fn head_gradient() -> Result<String, String> {
    let data = generate_benchmark_datasets(40, 10, 12).map_err(|e| e.to_string())?.0;
    let mut rng = SimRng::new(43, 0);
    let mut worst: f64 = 0.0;
    for probe in 0..30 {
        let model = perturbed_model(200 + probe, 2, 5, scaled_norm(), 0.5);
        let t = (rng.uniform() * 40.0) as usize;
        let sd = SectionData::new(model.normalization(), &data).map_err(|e| e.to_string())?;
        let (_, grads) = section_nll(&model, &sd, &[t], 1, 0).map_err(|e| e.to_string())?;
        let logp = |nets: MssNets<f64>| {
            with_nets(&model, nets)
                .output_distribution(Array1::zeros(2).view(), data.u.row(t))
                .unwrap()
                .log_prob(&[data.y[[t, 0]]])
                .unwrap()
        };
        let mut d = random_like(model.nets(), &mut rng);
        d.transition.fill_zero();
        let fd = directional(model.nets(), &d, logp);
        worst = worst.max(rel_err(-inner(&grads, &d), fd));
    }
    verdict(worst, GRADIENT_TOL, "relative error")
}

fn section_gradient() -> Result<String, String> {
    let data = generate_benchmark_datasets(60, 10, 13).map_err(|e| e.to_string())?.0;
    let mut rng = SimRng::new(47, 0);
    let mut worst: f64 = 0.0;
    for probe in 0..15 {
        let model = perturbed_model(300 + probe, 2, 4, scaled_norm(), 0.5);
        let sd = SectionData::new(model.normalization(), &data).map_err(|e| e.to_string())?;
        let starts = [0, 9, 30, 55];
        let (_, grads) = section_nll(&model, &sd, &starts, 5, 1).map_err(|e| e.to_string())?;
        let loss = |nets: MssNets<f64>| section_nll(&with_nets(&model, nets), &sd, &starts, 5, 1).unwrap().0;
        let d = random_like(model.nets(), &mut rng);
        let fd = directional(model.nets(), &d, loss);
        worst = worst.max(rel_err(inner(&grads, &d), fd));
    }
    verdict(worst, GRADIENT_TOL, "relative error")
}

/// Composite Simpson over breakpoints at `μ ± kσ/4` of every component.
fn integrate(mix: &GaussianMixture<f64>) -> f64 {
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
            let h = (w[1] - w[0]) / 8.0;
            let inner: f64 = (1..8)
                .map(|j| if j % 2 == 1 { 4.0 } else { 2.0 } * f(w[0] + h * j as f64))
                .sum();
            (f(w[0]) + f(w[1]) + inner) * h / 3.0
        })
        .sum()
}

fn quadrature() -> Result<String, String> {
    let mut rng = SimRng::new(53, 0);
    let mut worst: f64 = 0.0;
    for probe in 0..60 {
        let model = perturbed_model(400 + probe, 3, 8, Normalization::identity(1, 1), 0.5);
        let z = Array1::from_shape_simple_fn(3, || rng.normal(0.0, 2.0));
        let u = Array1::from_elem(1, rng.normal(0.0, 2.0));
        let mix = model.output_distribution(z.view(), u.view()).map_err(|e| e.to_string())?;
        worst = worst.max((integrate(&mix) - 1.0).abs());
    }
    verdict(worst, 1e-6, "|∫p − 1|")
}

fn extreme_logits() -> Result<String, String> {
    for big in [1000.0f64, -1000.0] {
        let w = softmax(&[big, 0.0, -big]);
        if !w.iter().all(|v| v.is_finite()) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-15 {
            return Err(format!("softmax at {big} gave {w:?}"));
        }
        let lse = log_sum_exp(&[big, 0.0, -big]);
        if (lse - big.abs()).abs() > 1e-12 {
            return Err(format!("log-sum-exp at {big} gave {lse}"));
        }
    }
    // Through the training path: a weight head saturated at ±1000.
    let data = generate_benchmark_datasets(50, 10, 14).map_err(|e| e.to_string())?.0;
    let mut model = perturbed_model(9, 2, 4, scaled_norm(), 0.5);
    let head = &mut model.nets_mut().weight_head;
    let out_bias = head
        .blocks()
        .iter()
        .rposition(|(name, _)| name.ends_with(".bias"))
        .expect("output layer has a bias");
    for (i, v) in head.blocks_mut()[out_bias].iter_mut().enumerate() {
        *v = if i % 2 == 0 { 1000.0 } else { -1000.0 };
    }
    let sd = SectionData::new(model.normalization(), &data).map_err(|e| e.to_string())?;
    let (loss, grads) = section_nll(&model, &sd, &[0, 20], 10, 2).map_err(|e| e.to_string())?;
    let finite = grads.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()));
    if loss.is_finite() && finite {
        Ok(format!("loss {loss:.3}, all gradients finite"))
    } else {
        Err(format!("loss {loss}, finite gradients: {finite}"))
    }
}

fn full_length_equivalence() -> Result<String, String> {
    let data = generate_benchmark_datasets(150, 10, 15).map_err(|e| e.to_string())?.0;
    let norm = Normalization::from_data(data.u.view(), data.y.view());
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let model = perturbed_model(500 + seed, 3, 6, norm.clone(), 0.3);
        let sd = SectionData::new(model.normalization(), &data).map_err(|e| e.to_string())?;
        let ms = section_nll_value(&model, &sd, &[0], data.len(), 0, 1).map_err(|e| e.to_string())?;
        let free = full_simulation_nll(&model, &data).map_err(|e| e.to_string())?;
        worst = worst.max((ms - free).abs());
    }
    verdict(worst, 1e-12, "|difference|")
}

fn baseline_ordering() -> Result<String, String> {
    let mut rng = SimRng::new(59, 0);
    for case in 0..200 {
        let (n, s) = (2 + case % 9, 3 + case % 17);
        let drift = rng.uniform() * 3.0;
        let y = Array2::from_shape_fn((n, s), |(t, _)| drift * (t as f64).sin() + rng.normal(0.0, 0.2 + 0.3 * t as f64));
        let meta = EnsembleMeta {
            seed: 0,
            s,
            n,
            n_transient: 0,
            system: "synthetic".into(),
            generator: "synthetic".into(),
            input_std: 0.0,
        };
        let ens = TestEnsemble::new(Array2::zeros((n, 1)), y, meta).map_err(|e| e.to_string())?;
        let sc = baseline_scores(&compute_baselines(&ens), &ens).map_err(|e| e.to_string())?;
        if sc.static_gaussian > sc.dynamic_mean + 1e-12 || sc.dynamic_mean > sc.dynamic_both + 1e-12 {
            return Err(format!("case {case}: {sc:?}"));
        }
    }
    Ok("200 random ensembles ordered".into())
}

fn vasicek() -> Result<String, String> {
    let mut rng = SimRng::new(61, 0);
    let n = 100_000;
    let m = (n as f64).sqrt() as usize;
    let sigma = 1.3;
    let normal: Vec<f64> = (0..n).map(|_| rng.normal(-0.4, sigma)).collect();
    let uniform: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 2.0)).collect();
    let err_n = (vasicek_entropy(&normal, m).map_err(|e| e.to_string())? - 0.5 * (2.0 * PI * E * sigma * sigma).ln()).abs();
    let err_u = (vasicek_entropy(&uniform, m).map_err(|e| e.to_string())? - 2f64.ln()).abs();
    verdict(err_n.max(err_u), 0.02, "entropy error")
}

fn checkpoint_round_trip() -> Result<String, String> {
    let model = perturbed_model(77, 3, 7, scaled_norm(), 0.5);
    let bytes = encode(&model).map_err(|e| e.to_string())?;
    let back: MssModel<f64> = decode(&bytes).map_err(|e| e.to_string())?;
    let again = encode(&back).map_err(|e| e.to_string())?;
    let same_bits = model
        .nets()
        .blocks()
        .iter()
        .zip(back.nets().blocks())
        .all(|((_, a), (_, b))| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    if same_bits && bytes == again && back == model {
        Ok(format!("{} bytes, identical bits", bytes.len()))
    } else {
        Err("decoded checkpoint differs".into())
    }
}

fn seeded_run(seed: u64) -> Result<(Vec<u8>, String), String> {
    let (train, val): (Dataset, Dataset) = generate_benchmark_datasets(1200, 300, seed).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        n_z: 2,
        n_normals: 3,
        n_layers: 1,
        n_hidden: 8,
        section_len: 10,
        burn_in: 2,
        batch_size: 64,
        max_epochs: 3,
        seed,
        ..TrainConfig::default()
    };
    let (model, report) = fit::<f64>(&train, &val, &cfg).map_err(|e| e.to_string())?;
    let report = serde_json::to_string(&report.without_timing()).map_err(|e| e.to_string())?;
    Ok((encode(&model).map_err(|e| e.to_string())?, report))
}

fn seeded_replay() -> Result<String, String> {
    let a = seeded_run(23)?;
    let b = seeded_run(23)?;
    let c = seeded_run(24)?;
    if a != b {
        return Err("identical seeds gave different checkpoints or reports".into());
    }
    if a.0 == c.0 {
        return Err("different seeds gave identical checkpoints".into());
    }
    Ok("data, checkpoint and report identical across replays".into())
}
