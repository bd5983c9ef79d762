//! End-to-end operations behind the command-line tool: every step reads and
//! writes plain files so runs can be chained and diffed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::data::{
    self, format_timestamp, read_csv, split_train_test, window, MinMaxScaler, Series, WindowedSet,
    YearSplit, CADENCE_MINUTES, DEFAULT_WINDOW, NUM_CHANNELS,
};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport, Persistence, Space};
use crate::exec::Exec;
use crate::ndcore::Matrix;
use crate::nn::{ArchSpec, LstmVariant, ModelKind, ModelParams, Network};
use crate::select::{grid_search, CvOptions, CvResult, Grid};
use crate::train::{fit, write_epoch_log, EpochLog, TrainConfig};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedMatrix {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    schema_version: u32,
    arch: ArchSpec,
    window: usize,
    channels: Vec<String>,
    scaler: MinMaxScaler,
    params: Vec<NamedMatrix>,
}

/// A trained network together with the scaler fitted on its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub network: Network,
    pub scaler: MinMaxScaler,
    pub channels: Vec<String>,
    pub window: usize,
}

impl ModelFile {
    /// JSON document; floats use shortest round-trip formatting, so
    /// `from_json(to_json(m)) == m` bit for bit.
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            schema_version: MODEL_SCHEMA_VERSION,
            arch: self.network.arch,
            window: self.window,
            channels: self.channels.clone(),
            scaler: self.scaler.clone(),
            params: self
                .network
                .params
                .named_tensors()
                .into_iter()
                .map(|(name, m)| NamedMatrix {
                    name: name.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Model(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        let tensors = doc
            .params
            .into_iter()
            .map(|p| Ok((p.name, Matrix::from_vec(p.rows, p.cols, p.data)?)))
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams::from_named(&doc.arch, tensors)?;
        if doc.scaler.num_channels() != doc.channels.len()
            || doc.scaler.max.len() != doc.channels.len()
        {
            return Err(Error::Model("scaler does not match channel list".into()));
        }
        Ok(ModelFile {
            network: Network::new(doc.arch, params)?,
            scaler: doc.scaler,
            channels: doc.channels,
            window: doc.window,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Architecture choices that are not data-derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub hidden: usize,
    #[serde(default)]
    pub lstm_variant: LstmVariant,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            kind: ModelKind::Mlp,
            hidden: 344,
            lstm_variant: LstmVariant::PaperExact,
        }
    }
}

impl ModelSettings {
    pub fn arch(&self, channels: usize, window: usize) -> ArchSpec {
        ArchSpec::for_windows(self.kind, channels, window, self.hidden, self.lstm_variant)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn synth_to_file(days: usize, seed: u64, out: &Path) -> Result<Series> {
    let series = data::synth_weather(days, seed)?;
    data::write_csv_path(&series, out)?;
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepSummary {
    pub train_records: usize,
    pub test_records: usize,
    pub warnings: Vec<String>,
}

/// Splits a station file by year into training and test files.
pub fn prep(
    input: &Path,
    train_out: &Path,
    test_out: &Path,
    strict: bool,
    rule: &YearSplit,
) -> Result<PrepSummary> {
    let parsed = read_csv(input, strict)?;
    let split = split_train_test(&parsed.series, rule)?;
    data::write_csv_path(&split.train, train_out)?;
    data::write_csv_path(&split.test, test_out)?;
    let mut warnings = parsed.warnings;
    warnings.extend(split.warnings);
    Ok(PrepSummary {
        train_records: split.train.len(),
        test_records: split.test.len(),
        warnings,
    })
}

/// Reads and windows a station file.
pub fn load_windows(path: &Path, strict: bool) -> Result<WindowedSet> {
    window(&read_csv(path, strict)?.series, DEFAULT_WINDOW)
}

/// Fits the scaler on `train`, then trains one model.
///
/// With `val_fraction > 0`, the chronologically last fraction of windows is
/// held out and reported in the epoch log.
pub fn train_model(
    train: &WindowedSet,
    settings: &ModelSettings,
    cfg: &TrainConfig,
    val_fraction: f64,
) -> Result<(ModelFile, Vec<EpochLog>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "validation fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    let scaler = MinMaxScaler::fit(train)?;
    let scaled = scaler.transform(train)?;
    let n_val = (scaled.len() as f64 * val_fraction).round() as usize;
    let n_fit = scaled.len() - n_val;
    let fit_part = scaled.subset(&(0..n_fit).collect::<Vec<_>>());
    let val_part = scaled.subset(&(n_fit..scaled.len()).collect::<Vec<_>>());
    let val = (n_val > 0).then(|| val_part.samples());
    let arch = settings.arch(train.num_channels(), train.window);
    let (network, logs) = fit(arch, cfg, fit_part.samples(), val)?;
    Ok((
        ModelFile {
            network,
            scaler,
            channels: train.channels.clone(),
            window: train.window,
        },
        logs,
    ))
}

pub fn cross_validate(
    train: &WindowedSet,
    settings: &ModelSettings,
    grid: &Grid,
    opts: &CvOptions,
    exec: Exec,
) -> Result<CvResult> {
    let arch = settings.arch(train.num_channels(), train.window);
    grid_search(arch, grid, train, opts, exec)
}

/// Scores a saved model on a raw test set and optionally writes plot data.
pub fn evaluate_model(
    model: &ModelFile,
    test: &WindowedSet,
    space: Space,
    plots: Option<&Path>,
) -> Result<(MetricsReport, Vec<PathBuf>)> {
    check_compatible(model, test)?;
    let report = eval::evaluate(&model.network, &model.scaler, test, space)?;
    let files = match plots {
        Some(dir) => eval::emit_plot_data(&model.network, &model.scaler, test, dir)?,
        None => Vec::new(),
    };
    Ok((report, files))
}

fn check_compatible(model: &ModelFile, test: &WindowedSet) -> Result<()> {
    if test.window != model.window || test.channels != model.channels {
        return Err(Error::shape(
            "model/data",
            format!("{} × {:?}", model.window, model.channels),
            format!("{} × {:?}", test.window, test.channels),
        ));
    }
    Ok(())
}

/// Persistence baseline on a raw test set, scaled with `scaler`.
pub fn persistence_report(
    scaler: &MinMaxScaler,
    test: &WindowedSet,
    space: Space,
) -> Result<MetricsReport> {
    let baseline = Persistence {
        window: test.window,
        channels: test.num_channels(),
    };
    eval::evaluate(&baseline, scaler, test, space)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub schema_version: u32,
    /// Timestamp of the forecast step, one cadence after the last input.
    pub timestamp: String,
    pub values: BTreeMap<String, f64>,
}

/// Next-step forecast in physical units from the last `window` records.
pub fn predict_next(model: &ModelFile, recent: &Series) -> Result<Forecast> {
    let w = model.window;
    if recent.len() < w {
        return Err(Error::Size(format!(
            "need at least {w} observations, got {}",
            recent.len()
        )));
    }
    let tail = &recent.records()[recent.len() - w..];
    let row: Vec<f64> = tail.iter().flat_map(|r| r.values).collect();
    let x = model
        .scaler
        .transform_matrix(&Matrix::from_vec(1, w * NUM_CHANNELS, row)?)?;
    let y = model
        .scaler
        .inverse_transform(&model.network.predict(&x)?)?;
    let next = tail[w - 1].timestamp + Duration::minutes(CADENCE_MINUTES);
    Ok(Forecast {
        schema_version: MODEL_SCHEMA_VERSION,
        timestamp: format_timestamp(&next),
        values: model
            .channels
            .iter()
            .cloned()
            .zip(y.row(0).iter().copied())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub hidden: BTreeMap<String, usize>,
    pub reports: BTreeMap<String, MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub comparison: Comparison,
    pub logs: BTreeMap<String, Vec<EpochLog>>,
    pub models: BTreeMap<String, ModelFile>,
}

/// Trains the MLP, simple RNN and LSTM on the same data with the same training
/// configuration and scores each on the test set.
pub fn compare(
    train: &WindowedSet,
    test: &WindowedSet,
    settings: &[ModelSettings],
    cfg: &TrainConfig,
    space: Space,
    exec: Exec,
) -> Result<CompareOutput> {
    let runs = exec.map(
        settings,
        |s| -> Result<(ModelFile, Vec<EpochLog>, MetricsReport)> {
            let (model, logs) = train_model(train, s, cfg, 0.0)?;
            let (report, _) = evaluate_model(&model, test, space, None)?;
            Ok((model, logs, report))
        },
    );
    let mut reports = BTreeMap::new();
    let mut logs = BTreeMap::new();
    let mut models = BTreeMap::new();
    let mut hidden = BTreeMap::new();
    for (s, run) in settings.iter().zip(runs) {
        let (model, log, report) = run?;
        let key = s.kind.name().to_string();
        hidden.insert(key.clone(), s.hidden);
        reports.insert(key.clone(), report);
        logs.insert(key.clone(), log);
        models.insert(key, model);
    }
    Ok(CompareOutput {
        comparison: Comparison {
            schema_version: eval::REPORT_SCHEMA_VERSION,
            seed: cfg.seed,
            train_config: cfg.clone(),
            hidden,
            reports,
        },
        logs,
        models,
    })
}

impl CompareOutput {
    /// Writes `compare.json`, `metrics.csv`, and `<model>_log.csv` /
    /// `<model>_model.json` per model into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let json = dir.join("compare.json");
        write_text(&json, &to_json_line(&self.comparison)?)?;
        written.push(json);

        let mut csv = String::from("model,mse,mae,rmse\n");
        for (name, r) in &self.comparison.reports {
            csv.push_str(&format!("{name},{},{},{}\n", r.mse, r.mae, r.rmse));
        }
        let summary = dir.join("metrics.csv");
        write_text(&summary, &csv)?;
        written.push(summary);

        for (name, log) in &self.logs {
            let p = dir.join(format!("{name}_log.csv"));
            write_epoch_log(&p, log)?;
            written.push(p);
        }
        for (name, model) in &self.models {
            let p = dir.join(format!("{name}_model.json"));
            model.save(&p)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Serializes any report-like value with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_line(value)?)
}
