//! The subcommands, callable in-process.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use metass_core::checkpoint::{load_model, save_model};
use metass_core::eval::{ensemble_mean_log_likelihood, evaluate, histogram_compare, EvalReport};
use metass_core::simulator::{
    fmt_f64, generate_datasets, generate_test_ensemble, BenchmarkSystem, Dataset, EnsembleSpec,
    LinearGaussianSystem, StochasticSystem, TestEnsemble,
};
use metass_core::trainer::{fit_with_progress, EpochRecord, ReductionMode, TrainConfig, TrainReport};
use metass_core::{MssModelF64, Real};
use ndarray::Array2;
use serde::Serialize;

use crate::config::{Precision, RunConfig, SystemKind};
use crate::error::{CliError, Context};

pub const TRAIN_FILE: &str = "train.csv";
pub const VAL_FILE: &str = "val.csv";
pub const ENSEMBLE_FILE: &str = "ensemble.csv";
pub const MODEL_FILE: &str = "model.mss";
pub const REPORT_FILE: &str = "report.json";
pub const EVAL_FILE: &str = "eval.json";
pub const TABLE_FILE: &str = "table.csv";
pub const SIMULATION_FILE: &str = "simulation.csv";
pub const SWEEP_FILE: &str = "sweep.json";

/// Sizes the global worker pool from `threads`, falling back to
/// `METASS_THREADS`. Only the first call in a process has an effect.
pub fn configure_threads(cfg: &RunConfig) -> Result<(), CliError> {
    let from_env = || -> Result<Option<usize>, CliError> {
        match std::env::var("METASS_THREADS") {
            Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(Some(n)),
                _ => Err(CliError::Usage(format!("METASS_THREADS must be a positive integer, got `{v}`"))),
            },
            _ => Ok(None),
        }
    };
    let threads = match cfg.threads {
        Some(n) => Some(n),
        None => from_env()?,
    };
    if let Some(n) = threads {
        // Already initialized (e.g. several commands in one test process):
        // keep the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn system(kind: SystemKind) -> Box<dyn StochasticSystem> {
    match kind {
        SystemKind::Benchmark => Box::new(BenchmarkSystem::default()),
        SystemKind::Linear => Box::new(LinearGaussianSystem::default()),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(metass_core::Error::from)
        .context(|| format!("writing {}", path.display()))?;
    writeln!(w).context(|| format!("writing {}", path.display()))?;
    w.flush().context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Debug)]
pub struct GenerateOutput {
    pub train: PathBuf,
    pub val: PathBuf,
    pub ensemble: Option<PathBuf>,
}

/// Writes training/validation data and (when `ensemble_s > 0`) the test
/// ensemble into `out_dir`.
pub fn generate(cfg: &RunConfig) -> Result<GenerateOutput, CliError> {
    if cfg.n_train == 0 || cfg.n_val == 0 {
        return Err(CliError::Usage("n_train and n_val must be >= 1".into()));
    }
    if cfg.ensemble_s == 1 || (cfg.ensemble_s > 0 && cfg.ensemble_n == 0) {
        return Err(CliError::Usage(
            "an ensemble needs ensemble_s >= 2 and ensemble_n >= 1 (ensemble_s = 0 skips it)".into(),
        ));
    }
    let sys = system(cfg.system);
    create_dir(&cfg.out_dir)?;
    let (train, val) = generate_datasets(sys.as_ref(), cfg.n_train, cfg.n_val, cfg.input_std, cfg.seed)
        .context(|| "generating datasets".into())?;
    let train_path = cfg.out_dir.join(TRAIN_FILE);
    let val_path = cfg.out_dir.join(VAL_FILE);
    train
        .write_csv(&train_path)
        .context(|| format!("writing {}", train_path.display()))?;
    val.write_csv(&val_path)
        .context(|| format!("writing {}", val_path.display()))?;
    let ensemble = if cfg.ensemble_s > 0 {
        let spec = EnsembleSpec {
            s: cfg.ensemble_s,
            n_keep: cfg.ensemble_n,
            n_transient: cfg.transient,
            input_std: cfg.input_std,
            seed: cfg.seed,
        };
        let ens = generate_test_ensemble(sys.as_ref(), &spec).context(|| "generating test ensemble".into())?;
        let path = cfg.out_dir.join(ENSEMBLE_FILE);
        ens.write(&path).context(|| format!("writing {}", path.display()))?;
        Some(path)
    } else {
        None
    };
    Ok(GenerateOutput {
        train: train_path,
        val: val_path,
        ensemble,
    })
}

fn effective_train_config(cfg: &RunConfig) -> TrainConfig {
    let mut t = cfg.train.clone();
    t.seed = cfg.seed;
    if cfg.deterministic {
        t.reduction = ReductionMode::Ordered;
    }
    t
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::read_csv(path).context(|| format!("reading {}", path.display()))
}

fn fit_and_save<T: Real>(
    train: &Dataset,
    val: &Dataset,
    tc: &TrainConfig,
    model_path: &Path,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport, CliError> {
    let (model, report) = fit_with_progress::<T>(train, val, tc, |r| on_epoch(r)).context(|| "training".into())?;
    save_model(&model, model_path).context(|| format!("writing {}", model_path.display()))?;
    Ok(report)
}

/// Trains on `data_dir/{train,val}.csv`; writes the best checkpoint and
/// the training report into `out_dir`.
pub fn train(cfg: &RunConfig, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainReport, CliError> {
    cfg.validate()?;
    let train = read_dataset(&cfg.data_dir.join(TRAIN_FILE))?;
    let val = read_dataset(&cfg.data_dir.join(VAL_FILE))?;
    train_on(cfg, &train, &val, &cfg.out_dir, on_epoch)
}

fn train_on(
    cfg: &RunConfig,
    train: &Dataset,
    val: &Dataset,
    out_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport, CliError> {
    let tc = effective_train_config(cfg);
    create_dir(out_dir)?;
    let model_path = out_dir.join(MODEL_FILE);
    let report = match cfg.precision {
        Precision::F64 => fit_and_save::<f64>(train, val, &tc, &model_path, on_epoch)?,
        Precision::F32 => fit_and_save::<f32>(train, val, &tc, &model_path, on_epoch)?,
    };
    write_json(&out_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

fn read_ensemble(path: &Path) -> Result<TestEnsemble, CliError> {
    TestEnsemble::read(path).context(|| format!("reading {}", path.display()))
}

fn read_model(path: &Path) -> Result<MssModelF64, CliError> {
    load_model::<f64>(path).context(|| format!("reading {}", path.display()))
}

/// Scores the baselines, the upper limit and (with `with_model`) the model
/// on the test ensemble. Writes `eval.json`, `table.csv` and, for a model,
/// `hist_t{t}.csv` / `curve_t{t}.csv` for every requested time.
pub fn eval(cfg: &RunConfig, with_model: bool) -> Result<EvalReport, CliError> {
    let ens = read_ensemble(&cfg.ensemble)?;
    let model = if with_model {
        Some(read_model(&cfg.model)?)
    } else {
        None
    };
    let report = evaluate(model.as_ref(), &ens, cfg.eval_burn_in, cfg.vasicek_window)
        .context(|| "evaluating".into())?;
    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(EVAL_FILE), &report)?;
    write_table(&cfg.out_dir.join(TABLE_FILE), &report)?;
    if let Some(model) = &model {
        let tables = histogram_compare(model, &ens, &cfg.times, cfg.bins)
            .context(|| "building histogram tables".into())?;
        for tab in &tables {
            let hist = cfg.out_dir.join(format!("hist_t{}.csv", tab.t));
            let curve = cfg.out_dir.join(format!("curve_t{}.csv", tab.t));
            tab.write_histogram_csv(&hist)
                .context(|| format!("writing {}", hist.display()))?;
            tab.write_curve_csv(&curve)
                .context(|| format!("writing {}", curve.display()))?;
        }
    }
    Ok(report)
}

fn write_table(path: &Path, report: &EvalReport) -> Result<(), CliError> {
    let mut text = String::from("method,mean_log_likelihood\n");
    for (name, value) in report.rows() {
        text.push_str(&format!(
            "{name},{}\n",
            value.map(fmt_f64).unwrap_or_default()
        ));
    }
    std::fs::write(path, text).context(|| format!("writing {}", path.display()))
}

/// Reads an input file: a header starting with `t`, then any columns whose
/// names start with `u` are inputs; other columns are ignored.
pub fn read_inputs(path: &Path) -> Result<Array2<f64>, CliError> {
    let bad = |m: String| CliError::Core {
        context: format!("reading {}", path.display()),
        source: metass_core::Error::Format(m),
    };
    let file = File::open(path).context(|| format!("reading {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.context(|| format!("reading {}", path.display()))?,
        None => return Err(bad("empty input file".into())),
    };
    let names: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if names.first() != Some(&"t") {
        return Err(bad(format!("header must start with `t`, got `{}`", header.trim())));
    }
    let cols: Vec<usize> = (0..names.len()).filter(|&i| names[i].starts_with('u')).collect();
    if cols.is_empty() {
        return Err(bad("no input columns (names starting with `u`)".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line.context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(bad(format!(
                "line {}: expected {} columns, found {}",
                i + 2,
                names.len(),
                fields.len()
            )));
        }
        for &c in &cols {
            let v: f64 = fields[c]
                .trim()
                .parse()
                .map_err(|e| bad(format!("line {}: `{}`: {e}", i + 2, fields[c].trim())))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(bad("input file has no samples".into()));
    }
    Ok(Array2::from_shape_vec((rows, cols.len()), values).expect("row-major fill"))
}

/// Runs a checkpoint along `input` from `z = 0` and writes the predicted
/// mixture at every time step to `out_dir/simulation.csv`.
pub fn simulate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let model = read_model(&cfg.model)?;
    let u = read_inputs(&cfg.input)?;
    let dims = model.dims();
    if u.ncols() != dims.n_u {
        return Err(CliError::Core {
            context: format!("reading {}", cfg.input.display()),
            source: metass_core::Error::Dimension {
                context: "model inputs".into(),
                expected: dims.n_u,
                actual: u.ncols(),
            },
        });
    }
    let dists = model
        .predict_distributions(u.view())
        .context(|| "simulating model".into())?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(SIMULATION_FILE);
    let (k, ny) = (dims.n_normals, dims.n_y);
    let suffix = |d: usize| if ny == 1 { String::new() } else { format!("_{}", d + 1) };
    let mut header = vec!["t".to_string()];
    header.extend((0..dims.n_u).map(|j| format!("u_{}", j + 1)));
    header.extend((0..ny).map(|d| format!("mean{}", suffix(d))));
    header.extend((0..ny).map(|d| format!("std{}", suffix(d))));
    header.extend((0..k).map(|i| format!("w_{}", i + 1)));
    for name in ["mu", "sigma"] {
        for i in 0..k {
            header.extend((0..ny).map(|d| format!("{name}_{}{}", i + 1, suffix(d))));
        }
    }
    let write_err = |e: std::io::Error| CliError::Core {
        context: format!("writing {}", path.display()),
        source: e.into(),
    };
    let mut w = BufWriter::new(File::create(&path).map_err(write_err)?);
    writeln!(w, "{}", header.join(",")).map_err(write_err)?;
    for (t, mix) in dists.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(u.row(t).iter().map(|&v| fmt_f64(v)));
        row.extend(mix.mean().into_iter().map(fmt_f64));
        row.extend(mix.variance().into_iter().map(|v| fmt_f64(v.sqrt())));
        row.extend(mix.weights().iter().map(|&v| fmt_f64(v)));
        row.extend(mix.means().iter().map(|&v| fmt_f64(v)));
        row.extend(mix.sigmas().iter().map(|&v| fmt_f64(v)));
        writeln!(w, "{}", row.join(",")).map_err(write_err)?;
    }
    w.flush().map_err(write_err)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepEntry {
    pub n_z: usize,
    pub best_epoch: Option<usize>,
    pub best_val_log_likelihood: Option<f64>,
    /// Mean log-likelihood on the test ensemble, when one was available.
    pub ensemble_log_likelihood: Option<f64>,
    pub model: PathBuf,
}

/// Trains one model per `nz_values` entry (in `out_dir/nz_{n}`) and
/// records the scores side by side in `out_dir/sweep.json`. The ensemble
/// is scored when `cfg.ensemble` exists.
pub fn sweep_nz(cfg: &RunConfig, on_epoch: &mut dyn FnMut(usize, &EpochRecord)) -> Result<Vec<SweepEntry>, CliError> {
    cfg.validate()?;
    let train = read_dataset(&cfg.data_dir.join(TRAIN_FILE))?;
    let val = read_dataset(&cfg.data_dir.join(VAL_FILE))?;
    let ens = if cfg.ensemble.exists() {
        Some(read_ensemble(&cfg.ensemble)?)
    } else {
        None
    };
    let mut entries = Vec::new();
    for &n_z in &cfg.nz_values {
        let mut run = cfg.clone();
        run.train.n_z = n_z;
        let dir = cfg.out_dir.join(format!("nz_{n_z}"));
        let report = train_on(&run, &train, &val, &dir, &mut |r| on_epoch(n_z, r))?;
        let model_path = dir.join(MODEL_FILE);
        let ensemble_log_likelihood = match &ens {
            Some(ens) => {
                let model = read_model(&model_path)?;
                Some(
                    ensemble_mean_log_likelihood(&model, ens, cfg.eval_burn_in)
                        .context(|| format!("scoring n_z = {n_z} on the ensemble"))?,
                )
            }
            None => None,
        };
        entries.push(SweepEntry {
            n_z,
            best_epoch: report.best_epoch,
            best_val_log_likelihood: report.best_val_log_likelihood,
            ensemble_log_likelihood,
            model: model_path,
        });
    }
    write_json(&cfg.out_dir.join(SWEEP_FILE), &entries)?;
    Ok(entries)
}
