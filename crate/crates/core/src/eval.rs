//! Test-set metrics and plot-data emission.
//!
//! Aggregate errors are element means over the whole `n × channels` label
//! matrix. Correlation and R² are per channel and return `None` when the
//! statistic is undefined (zero variance) instead of NaN.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{format_timestamp, MinMaxScaler, WindowedSet};
use crate::error::{Error, Result};
use crate::ndcore::Matrix;
use crate::nn::Network;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn check_pair(y: &Matrix, y_hat: &Matrix, op: &'static str) -> Result<()> {
    if y.shape() != y_hat.shape() {
        return Err(Error::shape(op, y.shape_str(), y_hat.shape_str()));
    }
    if y.data().is_empty() {
        return Err(Error::Size(format!("{op} of an empty matrix")));
    }
    Ok(())
}

pub fn mse(y: &Matrix, y_hat: &Matrix) -> Result<f64> {
    check_pair(y, y_hat, "mse")?;
    let s: f64 = y
        .data()
        .iter()
        .zip(y_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / y.data().len() as f64)
}

pub fn mae(y: &Matrix, y_hat: &Matrix) -> Result<f64> {
    check_pair(y, y_hat, "mae")?;
    let s: f64 = y
        .data()
        .iter()
        .zip(y_hat.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(s / y.data().len() as f64)
}

pub fn rmse(y: &Matrix, y_hat: &Matrix) -> Result<f64> {
    mse(y, y_hat).map(f64::sqrt)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation; `None` for fewer than two points, mismatched
/// lengths, or zero variance in either argument.
pub fn pearson(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    if y.len() != y_hat.len() || y.len() < 2 {
        return None;
    }
    let (my, mh) = (mean(y), mean(y_hat));
    let mut cov = 0.0;
    let mut vy = 0.0;
    let mut vh = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        let (da, db) = (a - my, b - mh);
        cov += da * db;
        vy += da * da;
        vh += db * db;
    }
    if vy == 0.0 || vh == 0.0 {
        return None;
    }
    Some((cov / (vy.sqrt() * vh.sqrt())).clamp(-1.0, 1.0))
}

/// `1 − Σ(y−ŷ)² / Σ(y−ȳ)²`; `None` when `y` is constant or shorter than two.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    if y.len() != y_hat.len() || y.len() < 2 {
        return None;
    }
    let my = mean(y);
    let ss_tot: f64 = y.iter().map(|a| (a - my) * (a - my)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Some(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    #[default]
    Normalized,
    Physical,
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(Space::Normalized),
            "physical" => Ok(Space::Physical),
            other => Err(Error::Config(format!("unknown metrics space `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMetrics {
    pub rho: Option<f64>,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub model: String,
    pub space: Space,
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub per_variable: BTreeMap<String, VariableMetrics>,
}

/// Anything that maps normalized feature rows to normalized label rows.
pub trait Forecaster {
    fn id(&self) -> String;
    fn forecast(&self, x: &Matrix) -> Result<Matrix>;
}

impl Forecaster for Network {
    fn id(&self) -> String {
        self.arch.kind.name().to_string()
    }

    fn forecast(&self, x: &Matrix) -> Result<Matrix> {
        self.predict(x)
    }
}

/// Repeats the most recent observation of each window.
#[derive(Debug, Clone, Copy)]
pub struct Persistence {
    pub window: usize,
    pub channels: usize,
}

impl Forecaster for Persistence {
    fn id(&self) -> String {
        "persistence".to_string()
    }

    fn forecast(&self, x: &Matrix) -> Result<Matrix> {
        x.slice_cols(
            (self.window - 1) * self.channels,
            self.window * self.channels,
        )
    }
}

/// Builds a report from normalized labels and predictions.
pub fn report_from(
    model: &str,
    channels: &[String],
    y: &Matrix,
    y_hat: &Matrix,
    scaler: Option<&MinMaxScaler>,
    space: Space,
) -> Result<MetricsReport> {
    check_pair(y, y_hat, "evaluate")?;
    if channels.len() != y.cols() {
        return Err(Error::shape(
            "evaluate",
            format!("{} channels", channels.len()),
            y.shape_str(),
        ));
    }
    let (ey, eh) = match (space, scaler) {
        (Space::Normalized, _) => (y.clone(), y_hat.clone()),
        (Space::Physical, Some(s)) => (s.inverse_transform(y)?, s.inverse_transform(y_hat)?),
        (Space::Physical, None) => {
            return Err(Error::Config("physical-space metrics need a scaler".into()))
        }
    };
    let mse_v = mse(&ey, &eh)?;
    let per_variable = channels
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (col, hat) = (y.column(c), y_hat.column(c));
            (
                name.clone(),
                VariableMetrics {
                    rho: pearson(&col, &hat),
                    r2: r_squared(&col, &hat),
                },
            )
        })
        .collect();
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model: model.to_string(),
        space,
        n: y.rows(),
        mse: mse_v,
        mae: mae(&ey, &eh)?,
        rmse: mse_v.sqrt(),
        per_variable,
    })
}

/// Scales the raw test set with the training scaler, forecasts, and scores.
pub fn evaluate(
    model: &dyn Forecaster,
    scaler: &MinMaxScaler,
    test: &WindowedSet,
    space: Space,
) -> Result<MetricsReport> {
    let scaled = scaler.transform(test)?;
    let y_hat = model.forecast(&scaled.x)?;
    report_from(
        &model.id(),
        &scaled.channels,
        &scaled.y,
        &y_hat,
        Some(scaler),
        space,
    )
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `<variable>_series.csv` and `<variable>_scatter.csv` for every
/// channel, in physical units. Returns the written paths.
pub fn emit_plot_data(
    model: &dyn Forecaster,
    scaler: &MinMaxScaler,
    test: &WindowedSet,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let scaled = scaler.transform(test)?;
    let predicted = scaler.inverse_transform(&model.forecast(&scaled.x)?)?;
    let observed = scaler.inverse_transform(&scaled.y)?;
    let mut written = Vec::with_capacity(2 * test.num_channels());
    for (c, name) in test.channels.iter().enumerate() {
        let mut series = String::from("index,timestamp,observed,predicted\n");
        let mut scatter = String::from("observed,predicted,identity\n");
        for r in 0..test.len() {
            let (o, p) = (observed.get(r, c), predicted.get(r, c));
            series.push_str(&format!(
                "{r},{},{o},{p}\n",
                format_timestamp(&test.label_times[r])
            ));
            scatter.push_str(&format!("{o},{p},{o}\n"));
        }
        for (suffix, body) in [("series", &series), ("scatter", &scatter)] {
            let path = out_dir.join(format!("{name}_{suffix}.csv"));
            write_file(&path, body)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_cases() {
        let y = Matrix::row_vector(&[1.0, 2.0]);
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        let z = Matrix::zeros(1, 2);
        assert_eq!(mse(&y, &z).unwrap(), 2.5);
        assert_eq!(mae(&y, &z).unwrap(), 1.5);
        assert_eq!(rmse(&y, &z).unwrap(), 2.5f64.sqrt());
        assert!(mse(&y, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn pearson_cases() {
        let y = [1.0, 2.0, 4.0, 7.0, 3.0];
        let lin: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&y, &lin).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson(&y, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&y, &[5.0; 5]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
    }

    #[test]
    fn r_squared_cases() {
        let y = [1.0, 2.0, 3.0, 6.0];
        assert_eq!(r_squared(&y, &y), Some(1.0));
        assert!(r_squared(&y, &[3.0; 4]).unwrap().abs() < 1e-12);
        // ss_tot = 4+1+0+9 = 14, residuals (1-6,2-3,3-3,6-0) → 25+1+0+36 = 62.
        let r = r_squared(&y, &[6.0, 3.0, 3.0, 0.0]).unwrap();
        assert!((r - (1.0 - 62.0 / 14.0)).abs() < 1e-12);
        assert!(r < 0.0);
        assert_eq!(r_squared(&[2.0; 3], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn perfect_and_mean_forecasters() {
        let channels: Vec<String> = vec!["a".into(), "b".into()];
        let y = Matrix::from_rows(&[[0.1, 0.5], [0.4, 0.2], [0.9, 0.7]]).unwrap();
        let rep = report_from("perfect", &channels, &y, &y, None, Space::Normalized).unwrap();
        assert_eq!(rep.mse, 0.0);
        for v in rep.per_variable.values() {
            assert_eq!(v.r2, Some(1.0));
            assert!((v.rho.unwrap() - 1.0).abs() < 1e-12);
        }
        let means = y.col_sums().scale(1.0 / 3.0);
        let mean_pred = Matrix::zeros(3, 2).add_row_broadcast(&means).unwrap();
        let rep = report_from("mean", &channels, &y, &mean_pred, None, Space::Normalized).unwrap();
        for v in rep.per_variable.values() {
            assert!(v.r2.unwrap().abs() < 1e-12);
            assert_eq!(v.rho, None);
        }
        assert!(report_from("x", &channels, &y, &y, None, Space::Physical).is_err());
    }
}
