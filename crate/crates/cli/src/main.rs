//! `wxforecast`: batch front end for synthesizing, splitting, selecting,
//! training, evaluating and comparing weather forecasters.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use wxforecast::data::{self, read_csv, Bucket, YearSplit};
use wxforecast::eval::Space;
use wxforecast::nn::{LstmVariant, ModelKind};
use wxforecast::pipeline::{self, ModelFile, ModelSettings};
use wxforecast::select::Grid;
use wxforecast::train::write_epoch_log;
use wxforecast::{Error, Exec, Result};

use config::{ConfigFile, RunConfig};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "wxforecast",
    version,
    about = "Neural next-step forecasting for 10-minute weather station series",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic station CSV.
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        days: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a station CSV into training and test files by calendar year.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        /// Reject out-of-range or missing values instead of warning.
        #[arg(long)]
        strict: bool,
        /// Years routed to training (default 2022).
        #[arg(long = "train-year")]
        train_years: Vec<i32>,
        /// Years routed to testing (default 2021).
        #[arg(long = "test-year")]
        test_years: Vec<i32>,
        /// Where records of any other year go; unset makes them an error.
        #[arg(long, value_parser = parse_bucket)]
        other_years: Option<Bucket>,
    },
    /// K-fold grid search over learning rate and hidden width.
    Cv(CvArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Score a saved model on a test file.
    Evaluate {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
        /// Directory for per-variable series and scatter CSVs.
        #[arg(long)]
        plots: Option<PathBuf>,
        #[arg(long, value_parser = parse_space)]
        space: Option<Space>,
        #[arg(long)]
        strict: bool,
    },
    /// Forecast the step after the last observations in a CSV.
    Predict {
        #[arg(long)]
        model_file: PathBuf,
        /// CSV holding at least as many recent observations as the model's window.
        #[arg(long)]
        window: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Train MLP, RNN and LSTM on the same data and report them side by side.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Visit minibatches in order instead of reshuffling every epoch.
    #[arg(long)]
    no_shuffle: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "dump_config")]
    train: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    model: Option<ModelKind>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    lstm_variant: Option<LstmVariant>,
    #[command(flatten)]
    fit: FitArgs,
    /// Hold out this trailing fraction of the training windows for validation.
    #[arg(long)]
    val_split: Option<f64>,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    early_stop: Option<usize>,
    #[arg(long, required_unless_present = "dump_config")]
    out_model: Option<PathBuf>,
    #[arg(long, required_unless_present = "dump_config")]
    log: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long, required_unless_present = "dump_config")]
    train: Option<PathBuf>,
    /// JSON grid `{"learning_rates": [...], "hidden_sizes": [...]}`.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_kind)]
    model: Option<ModelKind>,
    #[arg(long, value_parser = parse_variant)]
    lstm_variant: Option<LstmVariant>,
    /// Epochs per fold.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit the scaler on each fold's training part.
    #[arg(long)]
    per_fold_scaler: bool,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    /// Loss-matrix CSV; defaults to the `--out` path with a `.csv` extension.
    #[arg(long)]
    matrix_out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, required_unless_present = "dump_config")]
    train: Option<PathBuf>,
    #[arg(long, required_unless_present = "dump_config")]
    test: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    lstm_variant: Option<LstmVariant>,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, value_parser = parse_space)]
    space: Option<Space>,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    /// Train the three models one after another.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<LstmVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_space(s: &str) -> std::result::Result<Space, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_bucket(s: &str) -> std::result::Result<Bucket, String> {
    match s {
        "train" => Ok(Bucket::Train),
        "test" => Ok(Bucket::Test),
        other => Err(format!("expected `train` or `test`, got `{other}`")),
    }
}

/// Writes pretty JSON to stdout. A closed pipe (`| head`) is not an error.
fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn time_seed() -> u64 {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    nanos ^ ((std::process::id() as u64) << 32)
}

/// Flag, then config file, then the clock. A clock seed is echoed on stderr
/// so the run can be repeated.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> u64 {
    flag.or(file).unwrap_or_else(|| {
        let seed = time_seed();
        eprintln!(
            "{}",
            json!({ "schema_version": SCHEMA_VERSION, "seed": seed, "seed_source": "time" })
        );
        seed
    })
}

/// Layers flags over an optional config file and fills in defaults.
fn layered(config: &ConfigArgs, flags: ConfigFile) -> Result<RunConfig> {
    let file = match &config.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let seed = resolve_seed(flags.seed, file.seed);
    RunConfig::resolve(file.overlay(flags), seed)
}

fn flag_bool(set: bool, value: bool) -> Option<bool> {
    set.then_some(value)
}

fn fit_flags(fit: &FitArgs) -> ConfigFile {
    ConfigFile {
        learning_rate: fit.lr,
        batch_size: fit.batch,
        epochs: fit.epochs,
        seed: fit.seed,
        shuffle: flag_bool(fit.no_shuffle, false),
        ..ConfigFile::default()
    }
}

fn need<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("{flag} is required")))
}

/// Fails before any work is done when an input file is missing.
fn check_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::Io {
                path: p.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            });
        }
    }
    Ok(())
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn dump(cfg: &RunConfig) -> Result<()> {
    print_json(&cfg.to_file())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let flags = ConfigFile {
        model: a.model,
        hidden: a.hidden,
        lstm_variant: a.lstm_variant,
        val_split: a.val_split,
        early_stop_patience: a.early_stop,
        strict: flag_bool(a.strict, true),
        ..fit_flags(&a.fit)
    };
    let cfg = layered(&a.config, flags)?;
    if a.config.dump_config {
        return dump(&cfg);
    }
    let (train_path, out_model, log) = (
        need(&a.train, "--train")?,
        need(&a.out_model, "--out-model")?,
        need(&a.log, "--log")?,
    );
    check_inputs(&[train_path])?;
    let train = data::window(
        &read_csv(train_path, cfg.strict)?.series,
        data::DEFAULT_WINDOW,
    )?;
    let (model, logs) = pipeline::train_model(&train, &cfg.settings, &cfg.train, cfg.val_split)?;
    model.save(out_model)?;
    write_epoch_log(log, &logs)?;
    let last = logs.last();
    print_json(&json!({
        "schema_version": SCHEMA_VERSION,
        "model": cfg.settings.kind,
        "hidden": cfg.settings.hidden,
        "seed": cfg.train.seed,
        "epochs_run": logs.len(),
        "train_loss": last.map(|l| l.train_loss),
        "val_loss": last.and_then(|l| l.val_loss),
        "model_file": out_model,
        "log": log,
    }))
}

fn run_cv(a: CvArgs) -> Result<()> {
    let grid = match &a.grid {
        Some(p) => {
            check_inputs(&[p])?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            Some(
                serde_json::from_str::<Grid>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    let flags = ConfigFile {
        model: a.model,
        lstm_variant: a.lstm_variant,
        cv_k: a.k,
        cv_epochs: a.epochs,
        cv_batch_size: a.batch,
        seed: a.seed,
        per_fold_scaler: flag_bool(a.per_fold_scaler, true),
        grid,
        strict: flag_bool(a.strict, true),
        ..ConfigFile::default()
    };
    let cfg = layered(&a.config, flags)?;
    if a.config.dump_config {
        return dump(&cfg);
    }
    let (train_path, out) = (need(&a.train, "--train")?, need(&a.out, "--out")?);
    check_inputs(&[train_path])?;
    let matrix_out = a
        .matrix_out
        .clone()
        .unwrap_or_else(|| out.with_extension("csv"));
    let train = data::window(
        &read_csv(train_path, cfg.strict)?.series,
        data::DEFAULT_WINDOW,
    )?;
    let result = pipeline::cross_validate(
        &train,
        &cfg.settings,
        &cfg.grid,
        &cfg.cv,
        exec(a.sequential),
    )?;
    result.write(out, &matrix_out)?;
    print_json(&json!({
        "schema_version": SCHEMA_VERSION,
        "chosen": result.chosen,
        "pairs": result.pairs.len(),
        "diverged_folds": result.pairs.iter().map(|p| p.divergence_count).sum::<usize>(),
        "report": out,
        "loss_matrix": matrix_out,
    }))
}

fn run_compare(a: CompareArgs) -> Result<()> {
    let flags = ConfigFile {
        hidden: a.hidden,
        lstm_variant: a.lstm_variant,
        space: a.space,
        strict: flag_bool(a.strict, true),
        ..fit_flags(&a.fit)
    };
    let cfg = layered(&a.config, flags)?;
    if a.config.dump_config {
        return dump(&cfg);
    }
    let (train_path, test_path, out) = (
        need(&a.train, "--train")?,
        need(&a.test, "--test")?,
        need(&a.out, "--out")?,
    );
    check_inputs(&[train_path, test_path])?;
    let train = data::window(
        &read_csv(train_path, cfg.strict)?.series,
        data::DEFAULT_WINDOW,
    )?;
    let test = data::window(
        &read_csv(test_path, cfg.strict)?.series,
        data::DEFAULT_WINDOW,
    )?;
    let settings: Vec<ModelSettings> = ModelKind::ALL
        .iter()
        .map(|&kind| ModelSettings {
            kind,
            ..cfg.settings
        })
        .collect();
    let output = pipeline::compare(
        &train,
        &test,
        &settings,
        &cfg.train,
        cfg.space,
        exec(a.sequential),
    )?;
    let written = output.write(out)?;
    print_json(&json!({
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.train.seed,
        "mse": output.comparison.reports.iter().map(|(k, r)| (k.clone(), r.mse)).collect::<std::collections::BTreeMap<_, _>>(),
        "files": written,
    }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { days, seed, out } => {
            let seed = resolve_seed(seed, None);
            let series = pipeline::synth_to_file(days as usize, seed, &out)?;
            print_json(&json!({
                "schema_version": SCHEMA_VERSION,
                "records": series.len(),
                "seed": seed,
                "out": out,
            }))
        }
        Command::Prep {
            input,
            train_out,
            test_out,
            strict,
            train_years,
            test_years,
            other_years,
        } => {
            check_inputs(&[&input])?;
            let defaults = YearSplit::default();
            let rule = YearSplit {
                train_years: if train_years.is_empty() {
                    defaults.train_years
                } else {
                    train_years.into_iter().collect()
                },
                test_years: if test_years.is_empty() {
                    defaults.test_years
                } else {
                    test_years.into_iter().collect()
                },
                default_bucket: other_years,
            };
            let summary = pipeline::prep(&input, &train_out, &test_out, strict, &rule)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            print_json(&json!({
                "schema_version": SCHEMA_VERSION,
                "train_records": summary.train_records,
                "test_records": summary.test_records,
                "warnings": summary.warnings,
            }))
        }
        Command::Cv(a) => run_cv(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate {
            model_file,
            test,
            out_report,
            plots,
            space,
            strict,
        } => {
            check_inputs(&[&model_file, &test])?;
            let model = ModelFile::load(&model_file)?;
            let test = data::window(&read_csv(&test, strict)?.series, model.window)?;
            let (report, _) = pipeline::evaluate_model(
                &model,
                &test,
                space.unwrap_or_default(),
                plots.as_deref(),
            )?;
            pipeline::write_json(&out_report, &report)?;
            print_json(&report)
        }
        Command::Predict {
            model_file,
            window,
            strict,
        } => {
            check_inputs(&[&model_file, &window])?;
            let model = ModelFile::load(&model_file)?;
            let recent = read_csv(&window, strict)?.series;
            print_json(&pipeline::predict_next(&model, &recent)?)
        }
        Command::Compare(a) => run_compare(a),
    }
}

/// Structured error on stderr; the exit code separates usage mistakes (2),
/// divergence (3) and everything else (1).
fn report(err: &Error) -> ExitCode {
    let mut body = json!({
        "schema_version": SCHEMA_VERSION,
        "error": err.kind(),
        "message": err.to_string(),
    });
    if let Error::Diverged { epoch, batch } = err {
        body["epoch"] = json!(epoch);
        body["batch"] = json!(batch);
    }
    eprintln!("{body}");
    match err {
        Error::Config(_) => ExitCode::from(2),
        Error::Diverged { .. } | Error::Selection => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
