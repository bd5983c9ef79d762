//! Station CSV ingestion, chronological splitting, sliding windows, min-max
//! scaling and the synthetic weather generator.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Matrix;
use crate::rng::{derive_seed, Xoshiro256pp};

pub const NUM_CHANNELS: usize = 7;

/// Observations per window fed to the models.
pub const DEFAULT_WINDOW: usize = 3;

/// Station sampling cadence in minutes.
pub const CADENCE_MINUTES: i64 = 10;

/// Channel identifiers in column order.
pub const CHANNELS: [&str; NUM_CHANNELS] = [
    "temperature",
    "humidity",
    "wind_speed",
    "wind_direction",
    "radiation",
    "rainfall",
    "pressure",
];

pub const CSV_HEADER: &str =
    "Time,Temperature,Humidity,WindSpeed,WindDirection,Radiation,Rainfall,Pressure";

const HEADER_FIELDS: [&str; NUM_CHANNELS + 1] = [
    "Time",
    "Temperature",
    "Humidity",
    "WindSpeed",
    "WindDirection",
    "Radiation",
    "Rainfall",
    "Pressure",
];

/// One station observation.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRecord {
    pub timestamp: NaiveDateTime,
    /// °C, %, m/s, degrees, W/m², mm/10min, hPa
    pub values: [f64; NUM_CHANNELS],
}

impl WeatherRecord {
    pub fn temperature(&self) -> f64 {
        self.values[0]
    }
    pub fn humidity(&self) -> f64 {
        self.values[1]
    }
    pub fn wind_speed(&self) -> f64 {
        self.values[2]
    }
    pub fn wind_direction(&self) -> f64 {
        self.values[3]
    }
    pub fn radiation(&self) -> f64 {
        self.values[4]
    }
    pub fn rainfall(&self) -> f64 {
        self.values[5]
    }
    pub fn pressure(&self) -> f64 {
        self.values[6]
    }

    /// First violated physical range, if any.
    pub fn violation(&self) -> Option<(&'static str, f64)> {
        let v = &self.values;
        let checks: [(usize, bool); 5] = [
            (1, (0.0..=100.0).contains(&v[1])),
            (2, v[2] >= 0.0),
            (3, (0.0..360.0).contains(&v[3])),
            (4, v[4] >= 0.0),
            (5, v[5] >= 0.0),
        ];
        checks
            .iter()
            .find(|(_, ok)| !ok)
            .map(|&(c, _)| (CHANNELS[c], v[c]))
            .or_else(|| {
                v.iter()
                    .position(|x| !x.is_finite())
                    .map(|c| (CHANNELS[c], v[c]))
            })
    }
}

/// Chronologically ordered observations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    records: Vec<WeatherRecord>,
}

impl Series {
    /// Fails with an ordering error unless timestamps strictly increase.
    pub fn new(records: Vec<WeatherRecord>) -> Result<Self> {
        for (i, pair) in records.windows(2).enumerate() {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::Ordering {
                    line: i + 2,
                    timestamp: format_timestamp(&pair[1].timestamp),
                });
            }
        }
        Ok(Series { records })
    }

    pub fn records(&self) -> &[WeatherRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends another series that starts after this one ends.
    pub fn concat(mut self, other: Series) -> Result<Series> {
        self.records.extend(other.records);
        Series::new(self.records)
    }

    /// Splits into maximal runs whose consecutive timestamps are exactly one
    /// cadence apart.
    pub fn contiguous_blocks(&self) -> Vec<&[WeatherRecord]> {
        let step = Duration::minutes(CADENCE_MINUTES);
        let mut blocks = Vec::new();
        let mut start = 0;
        for i in 1..self.records.len() {
            if self.records[i].timestamp - self.records[i - 1].timestamp != step {
                blocks.push(&self.records[start..i]);
                start = i;
            }
        }
        if start < self.records.len() {
            blocks.push(&self.records[start..]);
        }
        blocks
    }
}

/// Result of parsing a station file.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub series: Series,
    /// Lenient-mode notes about rows that were kept or skipped.
    pub warnings: Vec<String>,
}

/// Parses `YY/MM/DD H:MM`. Two-digit years map to 2000–2099.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let (date, time) = s.trim().split_once(' ')?;
    let mut d = date.split('/');
    let yy: i32 = d.next()?.parse().ok()?;
    let mm: u32 = d.next()?.parse().ok()?;
    let dd: u32 = d.next()?.parse().ok()?;
    if d.next().is_some() || !(0..=99).contains(&yy) {
        return None;
    }
    let (h, m) = time.trim().split_once(':')?;
    let h: u32 = h.parse().ok()?;
    let m: u32 = m.parse().ok()?;
    NaiveDate::from_ymd_opt(2000 + yy, mm, dd)?.and_hms_opt(h, m, 0)
}

/// Formats as `YY/MM/DD H:MM`, e.g. `21/10/15 0:00`.
pub fn format_timestamp(t: &NaiveDateTime) -> String {
    format!(
        "{:02}/{:02}/{:02} {}:{:02}",
        t.year().rem_euclid(100),
        t.month(),
        t.day(),
        t.hour(),
        t.minute()
    )
}

fn normalize_header(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

/// Reads a station CSV.
///
/// Strict mode rejects rows with out-of-range or missing values; lenient mode
/// keeps out-of-range rows and skips rows with missing values, recording a
/// warning for each. Malformed timestamps or numbers and non-increasing
/// timestamps are errors in both modes.
pub fn parse_csv<R: Read>(reader: R, strict: bool) -> Result<Parsed> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<String> = header.iter().map(normalize_header).collect();
    let expected: Vec<String> = HEADER_FIELDS.iter().map(|h| normalize_header(h)).collect();
    if names != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `{CSV_HEADER}`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut records: Vec<WeatherRecord> = Vec::new();
    let mut warnings = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != NUM_CHANNELS + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", NUM_CHANNELS + 1, row.len()),
            });
        }
        let timestamp = parse_timestamp(&row[0]).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad timestamp `{}` (expected YY/MM/DD H:MM)", &row[0]),
        })?;
        let mut values = [0.0; NUM_CHANNELS];
        let mut missing = None;
        for c in 0..NUM_CHANNELS {
            let field = &row[c + 1];
            if field.is_empty() || field.eq_ignore_ascii_case("nan") {
                missing = Some(CHANNELS[c]);
                break;
            }
            values[c] = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("{}: `{field}` is not a number", CHANNELS[c]),
            })?;
        }
        if let Some(channel) = missing {
            if strict {
                return Err(Error::Parse {
                    line,
                    message: format!("missing value for {channel}"),
                });
            }
            warnings.push(format!("line {line}: missing {channel}, row skipped"));
            continue;
        }
        let record = WeatherRecord { timestamp, values };
        if let Some((channel, value)) = record.violation() {
            if strict {
                return Err(Error::Invariant {
                    line,
                    channel,
                    value,
                });
            }
            warnings.push(format!("line {line}: {channel} out of range ({value})"));
        }
        if let Some(prev) = records.last() {
            if record.timestamp <= prev.timestamp {
                return Err(Error::Ordering {
                    line,
                    timestamp: row[0].to_string(),
                });
            }
        }
        records.push(record);
    }
    Ok(Parsed {
        series: Series { records },
        warnings,
    })
}

pub fn read_csv(path: &Path, strict: bool) -> Result<Parsed> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(std::io::BufReader::new(file), strict)
}

/// Writes the station CSV format, floats in shortest round-trip form.
pub fn write_csv<W: Write>(series: &Series, mut out: W) -> std::io::Result<()> {
    let mut buf = String::with_capacity(64 * (series.len() + 1));
    buf.push_str(CSV_HEADER);
    buf.push('\n');
    for r in &series.records {
        buf.push_str(&format_timestamp(&r.timestamp));
        for v in r.values {
            buf.push(',');
            buf.push_str(&v.to_string());
        }
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())
}

pub fn write_csv_path(series: &Series, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(series, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Feature/label pairs built from sliding windows.
///
/// Row `j` of `x` holds `window` consecutive observations, record-major
/// (all channels of the first record, then the next); row `j` of `y` is the
/// observation that follows them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSet {
    pub x: Matrix,
    pub y: Matrix,
    pub window: usize,
    pub channels: Vec<String>,
    /// Timestamp of each label row.
    pub label_times: Vec<NaiveDateTime>,
}

impl WindowedSet {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn subset(&self, indices: &[usize]) -> WindowedSet {
        WindowedSet {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            window: self.window,
            channels: self.channels.clone(),
            label_times: indices.iter().map(|&i| self.label_times[i]).collect(),
        }
    }

    /// The last observation of every window, i.e. the persistence forecast.
    pub fn last_observation(&self) -> Matrix {
        let c = self.num_channels();
        self.x
            .slice_cols((self.window - 1) * c, self.window * c)
            .expect("window layout")
    }

    pub fn samples(&self) -> crate::train::Samples<'_> {
        crate::train::Samples {
            x: &self.x,
            y: &self.y,
        }
    }
}

/// Windows each contiguous block of `series` separately; a block of length `L`
/// yields `L - w` pairs.
pub fn window(series: &Series, w: usize) -> Result<WindowedSet> {
    if w == 0 {
        return Err(Error::Size("window length must be at least 1".into()));
    }
    let mut xdata = Vec::new();
    let mut ydata = Vec::new();
    let mut label_times = Vec::new();
    for block in series.contiguous_blocks() {
        if block.len() <= w {
            continue;
        }
        for j in 0..block.len() - w {
            for r in &block[j..j + w] {
                xdata.extend_from_slice(&r.values);
            }
            ydata.extend_from_slice(&block[j + w].values);
            label_times.push(block[j + w].timestamp);
        }
    }
    let n = label_times.len();
    if n == 0 {
        return Err(Error::Size(format!(
            "series of {} records has no contiguous run longer than the window of {w}",
            series.len()
        )));
    }
    Ok(WindowedSet {
        x: Matrix::from_vec(n, w * NUM_CHANNELS, xdata)?,
        y: Matrix::from_vec(n, NUM_CHANNELS, ydata)?,
        window: w,
        channels: CHANNELS.iter().map(|s| s.to_string()).collect(),
        label_times,
    })
}

/// Per-channel min-max scaler fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits per-channel extrema over every occurrence of each channel in the
    /// features and labels.
    pub fn fit(train: &WindowedSet) -> Result<Self> {
        let c = train.num_channels();
        if train.is_empty() || c == 0 {
            return Err(Error::Size("cannot fit a scaler on an empty set".into()));
        }
        let mut min = vec![f64::INFINITY; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        let mut see = |col: usize, v: f64| {
            let ch = col % c;
            min[ch] = min[ch].min(v);
            max[ch] = max[ch].max(v);
        };
        for r in 0..train.len() {
            for (col, &v) in train.x.row(r).iter().enumerate() {
                see(col, v);
            }
            for (col, &v) in train.y.row(r).iter().enumerate() {
                see(col, v);
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn num_channels(&self) -> usize {
        self.min.len()
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        let c = self.num_channels();
        if c == 0 || !m.cols().is_multiple_of(c) {
            return Err(Error::shape(
                "scaler",
                format!("multiple of {c} columns"),
                m.shape_str(),
            ));
        }
        Ok(())
    }

    /// `(x - min) / (max - min)` per channel; channels with `max == min` map to 0.
    pub fn transform_matrix(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let c = self.num_channels();
        let mut out = m.clone();
        let cols = m.cols();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (k % cols) % c;
            let span = self.max[ch] - self.min[ch];
            *v = if span > 0.0 {
                (*v - self.min[ch]) / span
            } else {
                0.0
            };
        }
        Ok(out)
    }

    /// Maps scaled values back to physical units.
    pub fn inverse_matrix(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let c = self.num_channels();
        let mut out = m.clone();
        let cols = m.cols();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (k % cols) % c;
            *v = *v * (self.max[ch] - self.min[ch]) + self.min[ch];
        }
        Ok(out)
    }

    pub fn transform(&self, set: &WindowedSet) -> Result<WindowedSet> {
        if set.num_channels() != self.num_channels() {
            return Err(Error::shape(
                "scaler transform",
                format!("{} channels", self.num_channels()),
                format!("{} channels", set.num_channels()),
            ));
        }
        Ok(WindowedSet {
            x: self.transform_matrix(&set.x)?,
            y: self.transform_matrix(&set.y)?,
            ..set.clone()
        })
    }

    /// Inverse of [`MinMaxScaler::transform`] on label rows.
    pub fn inverse_transform(&self, y: &Matrix) -> Result<Matrix> {
        self.inverse_matrix(y)
    }
}

pub fn fit_scaler(train: &WindowedSet) -> Result<MinMaxScaler> {
    MinMaxScaler::fit(train)
}

/// Which bucket records of an unlisted year fall into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Train,
    Test,
}

/// Year-based routing of records into train and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSplit {
    pub train_years: BTreeSet<i32>,
    pub test_years: BTreeSet<i32>,
    pub default_bucket: Option<Bucket>,
}

impl Default for YearSplit {
    fn default() -> Self {
        YearSplit {
            train_years: [2022].into(),
            test_years: [2021].into(),
            default_bucket: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainTestSplit {
    pub train: Series,
    pub test: Series,
    pub warnings: Vec<String>,
}

/// Partitions records by calendar year, preserving order within each side.
pub fn split_train_test(full: &Series, rule: &YearSplit) -> Result<TrainTestSplit> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in full.records() {
        let year = r.timestamp.year();
        let bucket = if rule.train_years.contains(&year) {
            Bucket::Train
        } else if rule.test_years.contains(&year) {
            Bucket::Test
        } else {
            rule.default_bucket.ok_or_else(|| Error::Routing {
                timestamp: format_timestamp(&r.timestamp),
                year,
            })?
        };
        match bucket {
            Bucket::Train => train.push(r.clone()),
            Bucket::Test => test.push(r.clone()),
        }
    }
    let mut warnings = Vec::new();
    if train.is_empty() {
        warnings.push("training set is empty".to_string());
    }
    if test.is_empty() {
        warnings.push("test set is empty".to_string());
    }
    Ok(TrainTestSplit {
        train: Series::new(train)?,
        test: Series::new(test)?,
        warnings,
    })
}

/// Knobs for [`synth_weather_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub start: NaiveDateTime,
    pub records: usize,
    pub seed: u64,
    /// Multiplies every stochastic component; 0 gives a purely periodic series.
    pub noise: f64,
    /// Round to the station's reporting precision.
    pub round: bool,
}

impl SynthOptions {
    pub fn days(days: usize, seed: u64) -> Self {
        SynthOptions {
            start: NaiveDate::from_ymd_opt(2022, 4, 1)
                .expect("valid date")
                .and_hms_opt(0, 0, 0)
                .expect("valid time"),
            records: days * 24 * 60 / CADENCE_MINUTES as usize,
            seed,
            noise: 1.0,
            round: true,
        }
    }
}

/// `days` days of 10-minute observations starting 2022-04-01.
pub fn synth_weather(days: usize, seed: u64) -> Result<Series> {
    if days == 0 {
        return Err(Error::Size("days must be at least 1".into()));
    }
    synth_weather_with(&SynthOptions::days(days, seed))
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (v * f).round() / f
}

/// Seeded synthetic station series: diurnal and annual sinusoids, slow
/// synoptic pressure waves, white measurement noise, a day/night radiation
/// mask with cloud attenuation and sparse rain bursts.
pub fn synth_weather_with(opts: &SynthOptions) -> Result<Series> {
    use std::f64::consts::{PI, TAU};

    let mut rng = Xoshiro256pp::seed_from_u64(derive_seed(opts.seed, &[0x5EED]));
    let k = opts.noise;
    let mut cloud = 0.3f64;
    let mut raining = false;
    let mut records = Vec::with_capacity(opts.records);
    for idx in 0..opts.records {
        let t = opts.start + Duration::minutes(CADENCE_MINUTES * idx as i64);
        let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
        let doy = t.ordinal() as f64 + hour / 24.0;
        // Absolute time in days since the epoch keeps waves continuous across calls.
        let abs_days = t.and_utc().timestamp() as f64 / 86_400.0;
        let diurnal = (TAU * (hour - 9.0) / 24.0).sin();
        let seasonal = (TAU * (doy - 105.0) / 365.0).sin();

        cloud = (0.98 * cloud + 0.02 * 0.3 + 0.03 * k * rng.normal()).clamp(0.0, 1.0);
        if raining {
            raining = rng.next_f64() >= 0.08;
        } else {
            raining = rng.next_f64() < 0.004 * k.min(1.0);
        }

        let temperature =
            16.0 + 8.0 * seasonal + 4.0 * diurnal - 1.5 * cloud + 0.15 * k * rng.normal();
        let humidity = (72.0 - 14.0 * diurnal
            + 15.0 * cloud
            + if raining { 10.0 } else { 0.0 }
            + 1.0 * k * rng.normal())
        .clamp(0.0, 100.0);
        let wind_speed = (2.5
            + 1.2 * (TAU * (hour - 13.0) / 24.0).sin()
            + 0.8 * (TAU * abs_days / 3.7).sin()
            + 0.4 * k * rng.normal())
        .max(0.0);
        let wind_direction =
            (200.0 + 70.0 * (TAU * abs_days / 4.3).sin() + 12.0 * k * rng.normal())
                .rem_euclid(360.0);
        let sun = (PI * (hour - 6.0) / 12.0).sin();
        let radiation = if (6.0..18.0).contains(&hour) && sun > 0.0 {
            (850.0 * sun * (1.0 - 0.6 * cloud) + 15.0 * k * rng.normal()).max(0.0)
        } else {
            0.0
        };
        let rainfall = if raining {
            0.4 * -(1.0 - rng.next_f64()).ln()
        } else {
            0.0
        };
        let pressure =
            1013.0 + 6.0 * (TAU * abs_days / 5.3).sin() + 2.5 * (TAU * abs_days / 2.1).cos()
                - 0.8 * (TAU * hour / 12.0).cos()
                + 0.05 * k * rng.normal();

        let mut values = [
            temperature,
            humidity,
            wind_speed,
            wind_direction,
            radiation,
            rainfall,
            pressure,
        ];
        if opts.round {
            for (v, d) in values.iter_mut().zip([2, 1, 3, 1, 2, 1, 1]) {
                *v = round_to(*v, d);
            }
            // Rounding can land exactly on 360.
            if values[3] >= 360.0 {
                values[3] -= 360.0;
            }
        }
        records.push(WeatherRecord {
            timestamp: t,
            values,
        });
    }
    Series::new(records)
}
