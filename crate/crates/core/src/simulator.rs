//! Stochastic discrete-time state-space systems
//!
//! ```text
//! x_{t+1} = f(x_t, u_t, v_t),    y_t = h(x_t, u_t, e_t)
//! ```
//!
//! plus dataset and test-ensemble generation and their CSV/JSON files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag, SimRng, GENERATOR_NAME};

/// A stochastic state-space system driven by a known input.
pub trait StochasticSystem: Sync {
    fn id(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn initial_state(&self) -> Vec<f64>;

    /// Draws the process noise `v_t`.
    fn sample_process_noise(&self, rng: &mut SimRng, v: &mut Vec<f64>);
    /// Draws the measurement noise `e_t`.
    fn sample_measurement_noise(&self, rng: &mut SimRng, e: &mut Vec<f64>);

    fn transition(&self, x: &[f64], u: &[f64], v: &[f64], next: &mut [f64]);
    fn output(&self, x: &[f64], u: &[f64], e: &[f64], y: &mut [f64]);
}

/// `x₊ = α(x, e)·x + u`, `y = x`, with `α(x, e) = 0.3 + 0.7·exp(-(x + e)²)`
/// and `e ~ U(-w, w)` (the benchmark uses `w = 0.5`).
///
/// The noise enters the state transition, so it is drawn as process noise.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSystem {
    pub noise_half_width: f64,
}

impl Default for BenchmarkSystem {
    fn default() -> Self {
        BenchmarkSystem {
            noise_half_width: 0.5,
        }
    }
}

impl BenchmarkSystem {
    /// Input standard deviation used to excite the system.
    pub const INPUT_STD: f64 = 2.0;

    #[inline]
    pub fn alpha(x: f64, e: f64) -> f64 {
        let a = x + e;
        0.3 + 0.7 * (-a * a).exp()
    }
}

impl StochasticSystem for BenchmarkSystem {
    fn id(&self) -> &str {
        "benchmark"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn sample_process_noise(&self, rng: &mut SimRng, v: &mut Vec<f64>) {
        v.clear();
        let w = self.noise_half_width;
        v.push(rng.uniform_range(-w, w));
    }

    fn sample_measurement_noise(&self, _rng: &mut SimRng, e: &mut Vec<f64>) {
        e.clear();
    }

    fn transition(&self, x: &[f64], u: &[f64], v: &[f64], next: &mut [f64]) {
        next[0] = Self::alpha(x[0], v[0]) * x[0] + u[0];
    }

    fn output(&self, x: &[f64], _u: &[f64], _e: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

/// `x₊ = a·x + b·u + v`, `y = x`, `v ~ N(0, σ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianSystem {
    pub a: f64,
    pub b: f64,
    pub noise_std: f64,
}

impl Default for LinearGaussianSystem {
    fn default() -> Self {
        LinearGaussianSystem {
            a: 0.5,
            b: 1.0,
            noise_std: 0.1,
        }
    }
}

impl LinearGaussianSystem {
    /// Stationary variance of `x_t` given the whole input history.
    pub fn stationary_predictive_variance(&self) -> f64 {
        self.noise_std * self.noise_std / (1.0 - self.a * self.a)
    }

    /// Expected log-density of `y_t` under the exact stationary predictive
    /// distribution, `-½ ln(2πe σ²)`.
    pub fn stationary_mean_log_likelihood(&self) -> f64 {
        let var = self.stationary_predictive_variance();
        -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln()
    }
}

impl StochasticSystem for LinearGaussianSystem {
    fn id(&self) -> &str {
        "linear-gaussian"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn sample_process_noise(&self, rng: &mut SimRng, v: &mut Vec<f64>) {
        v.clear();
        v.push(rng.normal(0.0, self.noise_std));
    }

    fn sample_measurement_noise(&self, _rng: &mut SimRng, e: &mut Vec<f64>) {
        e.clear();
    }

    fn transition(&self, x: &[f64], u: &[f64], v: &[f64], next: &mut [f64]) {
        next[0] = self.a * x[0] + self.b * u[0] + v[0];
    }

    fn output(&self, x: &[f64], _u: &[f64], _e: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

/// Iterates the system over `inputs` (rows = time) from its initial state,
/// drawing `v_t` then `e_t` from `noise` at every step.
pub fn simulate_system<S: StochasticSystem + ?Sized>(
    sys: &S,
    inputs: ArrayView2<f64>,
    noise: &mut SimRng,
) -> Result<Array2<f64>> {
    if inputs.ncols() != sys.input_dim() {
        return Err(Error::dim("system input", sys.input_dim(), inputs.ncols()));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("system input".into()));
    }
    let mut x = sys.initial_state();
    let mut next = vec![0.0; sys.state_dim()];
    let mut y = vec![0.0; sys.output_dim()];
    let (mut v, mut e) = (Vec::new(), Vec::new());
    let mut out = Array2::zeros((inputs.nrows(), sys.output_dim()));
    for (t, u) in inputs.rows().into_iter().enumerate() {
        let u = u.as_slice().expect("standard layout");
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t });
        }
        sys.sample_process_noise(noise, &mut v);
        sys.sample_measurement_noise(noise, &mut e);
        sys.output(&x, u, &e, &mut y);
        out.row_mut(t).assign(&ndarray::aview1(&y));
        sys.transition(&x, u, &v, &mut next);
        std::mem::swap(&mut x, &mut next);
    }
    Ok(out)
}

/// White Gaussian input sequence.
pub fn white_gaussian_input(n: usize, n_u: usize, std: f64, rng: &mut SimRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, n_u), || rng.normal(0.0, std))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub seed: u64,
    pub generator: String,
    pub input_std: f64,
}

/// Paired input/output sequences; rows are time steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub u: Array2<f64>,
    pub y: Array2<f64>,
    pub meta: Option<DatasetMeta>,
}

impl Dataset {
    pub fn new(u: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(Error::dim("dataset length", u.nrows(), y.nrows()));
        }
        Ok(Dataset { u, y, meta: None })
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    pub fn n_u(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.y.ncols()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(csv_header(self.n_u(), self.n_y()).as_bytes())?;
        for t in 0..self.len() {
            write!(w, "{t}")?;
            for v in self.u.row(t).iter().chain(self.y.row(t).iter()) {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `t,u,y` (or `t,u_1..,y_1..`) files; a `t,u` file yields an
    /// empty output block.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Format(format!("unexpected dataset header `{header}`")));
        }
        let n_u = cols.iter().filter(|c| c.starts_with('u')).count();
        let n_y = cols.iter().filter(|c| c.starts_with('y')).count();
        if n_u == 0 || n_u + n_y + 1 != cols.len() {
            return Err(Error::Format(format!("unexpected dataset header `{header}`")));
        }
        let (mut u, mut y) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = parse_row(&line, cols.len(), i + 2)?;
            u.extend_from_slice(&vals[1..1 + n_u]);
            y.extend_from_slice(&vals[1 + n_u..]);
        }
        let n = u.len() / n_u;
        Dataset::new(
            Array2::from_shape_vec((n, n_u), u).unwrap(),
            Array2::from_shape_vec((n, n_y), y).unwrap(),
        )
    }
}

fn csv_header(n_u: usize, n_y: usize) -> String {
    let mut cols = vec!["t".to_string()];
    if n_u == 1 {
        cols.push("u".into());
    } else {
        cols.extend((1..=n_u).map(|i| format!("u_{i}")));
    }
    if n_y == 1 {
        cols.push("y".into());
    } else {
        cols.extend((1..=n_y).map(|i| format!("y_{i}")));
    }
    cols.join(",") + "\n"
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_row(line: &str, expected: usize, line_no: usize) -> Result<Vec<f64>> {
    let vals = line
        .trim()
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("line {line_no}: `{s}`: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if vals.len() != expected {
        return Err(Error::Format(format!(
            "line {line_no}: expected {expected} columns, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Training and validation data for a system excited by white Gaussian input
/// with standard deviation `input_std`, both started from the system's
/// initial state.
pub fn generate_datasets<S: StochasticSystem + ?Sized>(
    sys: &S,
    n_train: usize,
    n_val: usize,
    input_std: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::Config("dataset sizes must be >= 1".into()));
    }
    let make = |n: usize, input_tag: u64, noise_tag: u64| -> Result<Dataset> {
        let mut in_rng = SimRng::new(derive_seed(seed, input_tag), 0);
        let mut noise = SimRng::new(derive_seed(seed, noise_tag), 0);
        let u = white_gaussian_input(n, sys.input_dim(), input_std, &mut in_rng);
        let y = simulate_system(sys, u.view(), &mut noise)?;
        let mut d = Dataset::new(u, y)?;
        d.meta = Some(DatasetMeta {
            system: sys.id().to_string(),
            seed,
            generator: GENERATOR_NAME.to_string(),
            input_std,
        });
        Ok(d)
    };
    Ok((
        make(n_train, tag::TRAIN_INPUT, tag::TRAIN_NOISE)?,
        make(n_val, tag::VAL_INPUT, tag::VAL_NOISE)?,
    ))
}

/// The benchmark datasets: input `N(0, 2²)`, `x₀ = 0`.
pub fn generate_benchmark_datasets(n_train: usize, n_val: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    generate_datasets(
        &BenchmarkSystem::default(),
        n_train,
        n_val,
        BenchmarkSystem::INPUT_STD,
        seed,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub seed: u64,
    pub s: usize,
    pub n: usize,
    pub n_transient: usize,
    pub system: String,
    pub generator: String,
    pub input_std: f64,
}

/// `S` output trajectories of one system under one shared input realization.
#[derive(Clone, Debug, PartialEq)]
pub struct TestEnsemble {
    /// Retained inputs, `(N, n_u)`.
    pub u: Array2<f64>,
    /// Retained outputs, `(N, S)`: column `i` is trajectory `i`.
    pub y: Array2<f64>,
    pub meta: EnsembleMeta,
}

impl TestEnsemble {
    pub fn new(u: Array2<f64>, y: Array2<f64>, meta: EnsembleMeta) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(Error::dim("ensemble length", u.nrows(), y.nrows()));
        }
        if y.ncols() < 2 {
            return Err(Error::Config("ensemble needs S >= 2 trajectories".into()));
        }
        if y.nrows() == 0 {
            return Err(Error::Config("ensemble needs N >= 1 samples".into()));
        }
        Ok(TestEnsemble { u, y, meta })
    }

    pub fn n_times(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_trajectories(&self) -> usize {
        self.y.ncols()
    }

    /// Writes `path` (`t,u,y_1..y_S`) and the JSON sidecar `path.json`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
        let mut header = String::from("t,u");
        for i in 1..=self.n_trajectories() {
            header.push_str(&format!(",y_{i}"));
        }
        writeln!(w, "{header}")?;
        for t in 0..self.n_times() {
            write!(w, "{t},{}", fmt_f64(self.u[[t, 0]]))?;
            for v in self.y.row(t) {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        let side = File::create(sidecar_path(path))?;
        serde_json::to_writer_pretty(side, &self.meta)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: EnsembleMeta = serde_json::from_reader(BufReader::new(File::open(
            sidecar_path(path),
        )?))?;
        let mut lines = BufReader::with_capacity(1 << 20, File::open(path)?).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty ensemble file".into()))??;
        let cols = header.trim().split(',').count();
        if !header.starts_with("t,u,") || cols < 4 {
            return Err(Error::Format("unexpected ensemble header (S >= 2 required)".into()));
        }
        let s = cols - 2;
        let (mut u, mut y) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = parse_row(&line, cols, i + 2)?;
            u.push(vals[1]);
            y.extend_from_slice(&vals[2..]);
        }
        let n = u.len();
        if meta.s != s || meta.n != n {
            return Err(Error::Format(format!(
                "ensemble sidecar says S={} N={}, file has S={s} N={n}",
                meta.s, meta.n
            )));
        }
        TestEnsemble::new(
            Array2::from_shape_vec((n, 1), u).unwrap(),
            Array2::from_shape_vec((n, s), y).unwrap(),
            meta,
        )
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub s: usize,
    pub n_keep: usize,
    pub n_transient: usize,
    pub input_std: f64,
    pub seed: u64,
}

/// Generates an ensemble whose trajectory `i` draws noise from stream
/// `noise_stream(i)`.
pub fn generate_ensemble_with<S, F>(sys: &S, spec: &EnsembleSpec, noise_stream: F) -> Result<TestEnsemble>
where
    S: StochasticSystem + ?Sized,
    F: Fn(usize) -> u64 + Sync,
{
    if spec.s < 2 {
        return Err(Error::Config("ensemble needs S >= 2".into()));
    }
    if spec.n_keep == 0 {
        return Err(Error::Config("ensemble needs N >= 1".into()));
    }
    if sys.output_dim() != 1 {
        return Err(Error::Config("ensembles support single-output systems only".into()));
    }
    let total = spec.n_keep + spec.n_transient;
    let mut in_rng = SimRng::new(derive_seed(spec.seed, tag::ENSEMBLE_INPUT), 0);
    let u_full = white_gaussian_input(total, sys.input_dim(), spec.input_std, &mut in_rng);
    let noise_seed = derive_seed(spec.seed, tag::ENSEMBLE_NOISE);
    let columns: Vec<Vec<f64>> = (0..spec.s)
        .into_par_iter()
        .map(|i| {
            let mut rng = SimRng::new(noise_seed, noise_stream(i));
            let y = simulate_system(sys, u_full.view(), &mut rng)?;
            Ok(y.slice(s![spec.n_transient.., 0]).to_vec())
        })
        .collect::<Result<_>>()?;
    let mut y = Array2::zeros((spec.n_keep, spec.s));
    for (i, col) in columns.into_iter().enumerate() {
        y.column_mut(i).assign(&ndarray::Array1::from_vec(col));
    }
    let meta = EnsembleMeta {
        seed: spec.seed,
        s: spec.s,
        n: spec.n_keep,
        n_transient: spec.n_transient,
        system: sys.id().to_string(),
        generator: GENERATOR_NAME.to_string(),
        input_std: spec.input_std,
    };
    TestEnsemble::new(u_full.slice(s![spec.n_transient.., ..]).to_owned(), y, meta)
}

/// Ensemble with independent noise stream per trajectory.
pub fn generate_test_ensemble<S: StochasticSystem + ?Sized>(sys: &S, spec: &EnsembleSpec) -> Result<TestEnsemble> {
    generate_ensemble_with(sys, spec, |i| i as u64)
}
