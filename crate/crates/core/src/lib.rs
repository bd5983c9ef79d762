//! Neural next-step forecasting for 10-minute weather station series.
//!
//! The crate covers the whole workflow: station CSV ingestion
//! ([`data`]), a dense matrix substrate ([`ndcore`]), a two-layer perceptron,
//! an Elman RNN and an LSTM with hand-derived gradients ([`nn`], [`train`]),
//! K-fold grid search over learning rate and hidden width ([`select`]), test
//! metrics and plot data ([`eval`]), and file-level operations used by the
//! `wxforecast` binary ([`pipeline`]).
//!
//! Independent work items (grid points, folds, model comparisons, large matrix
//! products) run on rayon when the default `parallel` feature is enabled; see
//! [`exec::Exec`]. Results do not depend on the number of worker threads.
//!
//! ```
//! use wxforecast::data::{synth_weather, window, MinMaxScaler};
//! use wxforecast::nn::{ArchSpec, ModelKind, LstmVariant};
//! use wxforecast::train::{fit, TrainConfig};
//!
//! # fn main() -> wxforecast::Result<()> {
//! let windows = window(&synth_weather(2, 7)?, 3)?;
//! let scaler = MinMaxScaler::fit(&windows)?;
//! let scaled = scaler.transform(&windows)?;
//! let arch = ArchSpec::for_windows(ModelKind::Mlp, 7, 3, 16, LstmVariant::PaperExact);
//! let cfg = TrainConfig { learning_rate: 0.1, batch_size: 32, epochs: 2, ..TrainConfig::default() };
//! let (net, logs) = fit(arch, &cfg, scaled.samples(), None)?;
//! assert_eq!(logs.len(), 2);
//! assert_eq!(net.predict(&scaled.x)?.cols(), 7);
//! # Ok(())
//! # }
//! ```

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod ndcore;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod select;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
pub use ndcore::Matrix;
