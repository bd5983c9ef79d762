//! K-fold cross-validated grid search over (learning rate, hidden width).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{MinMaxScaler, WindowedSet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::ArchSpec;
use crate::rng::{derive_seed, Xoshiro256pp};
use crate::train::{fit, squared_loss, Samples, TrainConfig};

pub const CV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub learning_rates: Vec<f64>,
    pub hidden_sizes: Vec<usize>,
}

impl Grid {
    /// Widths 32, 40, …, 1024 and rates 0.01, 0.05, 0.10, …, 0.80.
    pub fn full() -> Self {
        let mut learning_rates = vec![0.01];
        learning_rates.extend((1..=16).map(|k| k as f64 * 5.0 / 100.0));
        Grid {
            learning_rates,
            hidden_sizes: (32..=1024).step_by(8).collect(),
        }
    }

    /// A 4 × 4 grid that runs in minutes on a laptop.
    pub fn desk() -> Self {
        Grid {
            learning_rates: vec![0.05, 0.1, 0.3, 0.7],
            hidden_sizes: vec![32, 64, 128, 344],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.hidden_sizes.is_empty() {
            return Err(Error::Config(
                "grid needs at least one rate and one width".into(),
            ));
        }
        if self
            .learning_rates
            .iter()
            .any(|&r| !(r > 0.0 && r.is_finite()))
            || self.hidden_sizes.contains(&0)
        {
            return Err(Error::Config("grid values must be positive".into()));
        }
        let increasing_f = self.learning_rates.windows(2).all(|w| w[0] < w[1]);
        let increasing_h = self.hidden_sizes.windows(2).all(|w| w[0] < w[1]);
        if !increasing_f || !increasing_h {
            return Err(Error::Config(
                "grid values must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// `(learning_rate, hidden)` pairs, rate-major.
    pub fn pairs(&self) -> Vec<(f64, usize)> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.hidden_sizes.iter().map(move |&h| (lr, h)))
            .collect()
    }
}

/// A seeded permutation of `0..n` cut into `k` folds whose sizes differ by at
/// most one (the first `n % k` folds get the extra element).
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::Size(format!("{n} samples cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Xoshiro256pp::seed_from_u64(derive_seed(seed, &[FOLD_STREAM])).shuffle(&mut order);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

const FOLD_STREAM: u64 = 0xF01D;

/// One (pair, fold) training job.
#[derive(Debug, Clone)]
pub struct FoldTask {
    pub pair_index: usize,
    pub fold_index: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    /// Derived from the master seed, the pair and the fold only.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub learning_rate: f64,
    pub hidden: usize,
    /// Validation loss per fold; `None` where training diverged.
    pub fold_losses: Vec<Option<f64>>,
    pub diverged: Vec<bool>,
    pub divergence_count: usize,
    /// Mean over folds; `None` when any fold diverged (infinite mean).
    pub mean_loss: Option<f64>,
}

impl PairResult {
    fn mean_or_inf(&self) -> f64 {
        self.mean_loss.unwrap_or(f64::INFINITY)
    }

    fn fully_diverged(&self) -> bool {
        self.divergence_count == self.fold_losses.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChosenPair {
    pub learning_rate: f64,
    pub hidden: usize,
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub schema_version: u32,
    pub k: usize,
    pub seed: u64,
    pub grid: Grid,
    pub pairs: Vec<PairResult>,
    pub chosen: ChosenPair,
}

impl CvResult {
    /// Mean-loss matrix for heatmaps: one row per width, one column per rate.
    pub fn loss_matrix_csv(&self) -> String {
        let mut out = String::from("hidden");
        for lr in &self.grid.learning_rates {
            out.push_str(&format!(",{lr}"));
        }
        out.push('\n');
        for &h in &self.grid.hidden_sizes {
            out.push_str(&h.to_string());
            for &lr in &self.grid.learning_rates {
                let cell = self
                    .pairs
                    .iter()
                    .find(|p| p.hidden == h && p.learning_rate == lr)
                    .and_then(|p| p.mean_loss)
                    .map_or_else(|| "inf".to_string(), |v| v.to_string());
                out.push(',');
                out.push_str(&cell);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(json_path, json + "\n").map_err(|e| Error::io(json_path, e))?;
        std::fs::write(csv_path, self.loss_matrix_csv()).map_err(|e| Error::io(csv_path, e))
    }
}

/// Smallest mean loss among pairs that did not diverge on every fold; ties go
/// to the smaller width, then the smaller rate.
pub fn choose(pairs: &[PairResult]) -> Result<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.fully_diverged())
        .min_by(|(_, a), (_, b)| {
            a.mean_or_inf()
                .total_cmp(&b.mean_or_inf())
                .then(a.hidden.cmp(&b.hidden))
                .then(a.learning_rate.total_cmp(&b.learning_rate))
        })
        .map(|(i, _)| i)
        .ok_or(Error::Selection)
}

/// Runs `trainer` on every (pair, fold) task and reduces the results in pair
/// order. A [`Error::Diverged`] from the trainer counts as an infinite fold
/// loss; any other error aborts the search.
pub fn grid_search_with<F>(
    grid: &Grid,
    n: usize,
    k: usize,
    seed: u64,
    exec: Exec,
    trainer: F,
) -> Result<CvResult>
where
    F: Fn(&FoldTask) -> Result<f64> + Sync + Send,
{
    grid.validate()?;
    let folds = kfold_indices(n, k, seed)?;
    let pairs = grid.pairs();
    let mut tasks = Vec::with_capacity(pairs.len() * k);
    for (p, &(learning_rate, hidden)) in pairs.iter().enumerate() {
        for (f, val) in folds.iter().enumerate() {
            let train_indices: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            tasks.push(FoldTask {
                pair_index: p,
                fold_index: f,
                learning_rate,
                hidden,
                train_indices,
                val_indices: val.clone(),
                seed: derive_seed(seed, &[PAIR_STREAM, p as u64, f as u64]),
            });
        }
    }

    let outcomes = exec.map(&tasks, |t| match trainer(t) {
        Ok(loss) if loss.is_finite() => Ok(Some(loss)),
        Ok(_) | Err(Error::Diverged { .. }) => Ok(None),
        Err(e) => Err(e),
    });

    let mut results = Vec::with_capacity(pairs.len());
    let mut outcomes = outcomes.into_iter();
    for &(learning_rate, hidden) in &pairs {
        let fold_losses = outcomes
            .by_ref()
            .take(k)
            .collect::<Result<Vec<Option<f64>>>>()?;
        let diverged: Vec<bool> = fold_losses.iter().map(Option::is_none).collect();
        let divergence_count = diverged.iter().filter(|&&d| d).count();
        let mean_loss = if divergence_count == 0 {
            Some(fold_losses.iter().flatten().sum::<f64>() / k as f64)
        } else {
            None
        };
        results.push(PairResult {
            learning_rate,
            hidden,
            fold_losses,
            diverged,
            divergence_count,
            mean_loss,
        });
    }
    let best = choose(&results)?;
    let chosen = ChosenPair {
        learning_rate: results[best].learning_rate,
        hidden: results[best].hidden,
        mean_loss: results[best].mean_loss,
    };
    Ok(CvResult {
        schema_version: CV_SCHEMA_VERSION,
        k,
        seed,
        grid: grid.clone(),
        pairs: results,
        chosen,
    })
}

const PAIR_STREAM: u64 = 0xC0DE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    /// Fit the scaler on each fold's training part instead of once on the
    /// whole training set.
    #[serde(default)]
    pub per_fold_scaler: bool,
}

fn default_true() -> bool {
    true
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            k: 5,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            shuffle: true,
            per_fold_scaler: false,
        }
    }
}

/// Cross-validated grid search on a raw (unscaled) windowed training set.
///
/// `arch` supplies everything but the hidden width. Validation loss is the
/// training objective evaluated on normalized data.
pub fn grid_search(
    arch: ArchSpec,
    grid: &Grid,
    train: &WindowedSet,
    opts: &CvOptions,
    exec: Exec,
) -> Result<CvResult> {
    let global = if opts.per_fold_scaler {
        None
    } else {
        let scaler = MinMaxScaler::fit(train)?;
        Some(scaler.transform(train)?)
    };
    grid_search_with(grid, train.len(), opts.k, opts.seed, exec, |task| {
        let (tr, va) = match &global {
            Some(scaled) => (
                scaled.subset(&task.train_indices),
                scaled.subset(&task.val_indices),
            ),
            None => {
                let raw_tr = train.subset(&task.train_indices);
                let scaler = MinMaxScaler::fit(&raw_tr)?;
                (
                    scaler.transform(&raw_tr)?,
                    scaler.transform(&train.subset(&task.val_indices))?,
                )
            }
        };
        let cfg = TrainConfig {
            learning_rate: task.learning_rate,
            batch_size: opts.batch_size,
            epochs: opts.epochs,
            seed: task.seed,
            shuffle: opts.shuffle,
            early_stop_patience: None,
        };
        let (net, _) = fit(arch.with_hidden(task.hidden), &cfg, tr.samples(), None)?;
        let val = Samples::new(&va.x, &va.y)?;
        squared_loss(val.y, &net.predict(val.x)?)
    })
}
