use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metass_cli::commands;
use metass_cli::config::Preset;
use metass_cli::{exit, CliError, RunConfig};
use metass_core::trainer::EpochRecord;

/// Meta-state-space identification of stochastic systems.
///
/// Settings resolve as: built-in defaults < --preset < --config file <
/// --set KEY=VALUE < command flags.
#[derive(Parser, Debug)]
#[command(name = "metass", version, subcommand_required = false, arg_required_else_help = true)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Size preset applied before the config file (`paper` or `desk`).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override any config key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker threads (default: $METASS_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<String>,
    /// Bit-reproducible mode: ordered reductions, no wall-clock cap.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write training/validation data and the test ensemble.
    Generate(GenerateArgs),
    /// Fit a model; writes the best checkpoint and a JSON report.
    Train(TrainArgs),
    /// Score baselines, upper limit and a model on the test ensemble.
    Eval(EvalArgs),
    /// Predict output distributions of a checkpoint along an input file.
    Simulate(SimulateArgs),
    /// Train one model per meta-state size and compare their scores.
    SweepNz(SweepArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Training samples.
    #[arg(long)]
    train: Option<String>,
    /// Validation samples.
    #[arg(long)]
    val: Option<String>,
    /// Ensemble trajectories (0 skips the ensemble).
    #[arg(long)]
    ensemble_s: Option<String>,
    /// Retained steps per ensemble trajectory.
    #[arg(long)]
    ensemble_n: Option<String>,
    /// Discarded leading steps per trajectory.
    #[arg(long)]
    transient: Option<String>,
    /// Root seed.
    #[arg(long)]
    seed: Option<String>,
    /// `benchmark` or `linear`.
    #[arg(long)]
    system: Option<String>,
    /// Standard deviation of the white Gaussian input.
    #[arg(long)]
    input_std: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct TrainingFlags {
    /// Meta-state dimension n_z.
    #[arg(long)]
    nz: Option<String>,
    /// Mixture components.
    #[arg(long)]
    n_normals: Option<String>,
    /// Hidden layers per network.
    #[arg(long)]
    n_layers: Option<String>,
    /// Units per hidden layer.
    #[arg(long)]
    n_hidden: Option<String>,
    /// `tanh`, `relu` or `identity`.
    #[arg(long)]
    activation: Option<String>,
    /// Section length.
    #[arg(long)]
    section_len: Option<String>,
    /// Leading section steps left out of the loss.
    #[arg(long)]
    burn_in: Option<String>,
    /// Sections per optimizer step.
    #[arg(long)]
    batch_size: Option<String>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<String>,
    /// Epoch limit (0 writes the initialized model).
    #[arg(long)]
    max_epochs: Option<String>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    patience: Option<String>,
    /// Sections per work unit.
    #[arg(long)]
    chunk_size: Option<String>,
    /// Stop after the first epoch ending past this many seconds.
    #[arg(long)]
    max_wall_secs: Option<String>,
    /// `f64` or `f32`.
    #[arg(long)]
    precision: Option<String>,
    /// Root seed for initialization and shuffling.
    #[arg(long)]
    seed: Option<String>,
    /// Directory holding train.csv and val.csv.
    #[arg(long)]
    data: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainingFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long)]
    model: Option<String>,
    /// Test ensemble CSV.
    #[arg(long)]
    ensemble: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Leading retained steps excluded from the model score.
    #[arg(long)]
    burn_in: Option<String>,
    /// Vasicek spacing window (`auto` = floor(sqrt(S))).
    #[arg(long)]
    window: Option<String>,
    /// Retained time indices for histogram tables.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    times: Option<Vec<String>>,
    /// `auto` or a bin count.
    #[arg(long)]
    bins: Option<String>,
    /// Only the baselines and the upper limit.
    #[arg(long)]
    no_model: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Checkpoint to run.
    #[arg(long)]
    model: Option<String>,
    /// CSV with a `t` column and input columns `u...`.
    #[arg(long)]
    input: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated meta-state sizes.
    #[arg(long)]
    nz_values: Option<String>,
    /// Test ensemble scored for each model when present.
    #[arg(long)]
    ensemble: Option<String>,
    /// Leading ensemble steps excluded from the model scores.
    #[arg(long)]
    eval_burn_in: Option<String>,
    #[command(flatten)]
    flags: TrainingFlags,
}

type Overrides = Vec<(&'static str, String)>;

fn push(out: &mut Overrides, key: &'static str, value: &Option<String>) {
    if let Some(v) = value {
        out.push((key, v.clone()));
    }
}

impl TrainingFlags {
    fn overrides(&self, out: &mut Overrides) {
        push(out, "n_z", &self.nz);
        push(out, "n_normals", &self.n_normals);
        push(out, "n_layers", &self.n_layers);
        push(out, "n_hidden", &self.n_hidden);
        push(out, "activation", &self.activation);
        push(out, "section_len", &self.section_len);
        push(out, "burn_in", &self.burn_in);
        push(out, "batch_size", &self.batch_size);
        push(out, "learning_rate", &self.lr);
        push(out, "max_epochs", &self.max_epochs);
        push(out, "patience", &self.patience);
        push(out, "chunk_size", &self.chunk_size);
        push(out, "max_wall_secs", &self.max_wall_secs);
        push(out, "precision", &self.precision);
        push(out, "seed", &self.seed);
        push(out, "data_dir", &self.data);
        push(out, "out_dir", &self.out);
    }
}

impl Command {
    fn overrides(&self) -> Overrides {
        let mut out = Vec::new();
        match self {
            Command::Generate(a) => {
                push(&mut out, "n_train", &a.train);
                push(&mut out, "n_val", &a.val);
                push(&mut out, "ensemble_s", &a.ensemble_s);
                push(&mut out, "ensemble_n", &a.ensemble_n);
                push(&mut out, "transient", &a.transient);
                push(&mut out, "seed", &a.seed);
                push(&mut out, "system", &a.system);
                push(&mut out, "input_std", &a.input_std);
                push(&mut out, "out_dir", &a.out);
            }
            Command::Train(a) => a.flags.overrides(&mut out),
            Command::Eval(a) => {
                push(&mut out, "model", &a.model);
                push(&mut out, "ensemble", &a.ensemble);
                push(&mut out, "out_dir", &a.out);
                push(&mut out, "eval_burn_in", &a.burn_in);
                push(&mut out, "vasicek_window", &a.window);
                push(&mut out, "times", &a.times.as_ref().map(|t| t.join(",")));
                push(&mut out, "bins", &a.bins);
            }
            Command::Simulate(a) => {
                push(&mut out, "model", &a.model);
                push(&mut out, "input", &a.input);
                push(&mut out, "out_dir", &a.out);
            }
            Command::SweepNz(a) => {
                a.flags.overrides(&mut out);
                push(&mut out, "nz_values", &a.nz_values);
                push(&mut out, "ensemble", &a.ensemble);
                push(&mut out, "eval_burn_in", &a.eval_burn_in);
            }
        }
        out
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.preset {
        let preset: Preset = p.parse().map_err(CliError::Usage)?;
        cfg.apply_preset(preset);
    }
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(cmd) = &cli.command {
        for (k, v) in cmd.overrides() {
            cfg.set(k, &v)?;
        }
    }
    if let Some(t) = &cli.threads {
        cfg.set("threads", t)?;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn log_epoch(prefix: &str, r: &EpochRecord) {
    eprintln!(
        "{prefix}epoch {:>4}  train_nll {:>9.4}  val_ll {:>8.4}  skipped {}  {:.1}s",
        r.epoch, r.train_loss, r.val_log_likelihood, r.skipped_batches, r.seconds
    );
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(CliError::Usage("no command given (try --help)".into()));
    };
    commands::configure_threads(&cfg)?;
    match command {
        Command::Generate(_) => {
            let out = commands::generate(&cfg)?;
            println!("wrote {}", out.train.display());
            println!("wrote {}", out.val.display());
            if let Some(p) = out.ensemble {
                println!("wrote {}", p.display());
            }
        }
        Command::Train(_) => {
            let report = commands::train(&cfg, &mut |r| log_epoch("", r))?;
            match (report.best_epoch, report.best_val_log_likelihood) {
                (Some(e), Some(ll)) => println!("best epoch {e}: validation log-likelihood {ll:.4}"),
                _ => println!("no epochs run; wrote the initialized model"),
            }
        }
        Command::Eval(a) => {
            let report = commands::eval(&cfg, !a.no_model)?;
            for (name, value) in report.rows() {
                match value {
                    Some(v) => println!("{name:<30} {v:>8.4}"),
                    None => println!("{name:<30} {:>8}", "-"),
                }
            }
        }
        Command::Simulate(_) => {
            let path = commands::simulate(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::SweepNz(_) => {
            let entries = commands::sweep_nz(&cfg, &mut |nz, r| log_epoch(&format!("[n_z={nz}] "), r))?;
            for e in entries {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "n_z = {}: validation {}  ensemble {}",
                    e.n_z,
                    fmt(e.best_val_log_likelihood),
                    fmt(e.ensemble_log_likelihood)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::OK as u8 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
