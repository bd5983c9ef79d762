//! Squared loss, analytic gradients and minibatch SGD.
//!
//! The training objective is the per-sample squared loss
//! `L = (1/n) Σ_k Σ_i (y_ik - ŷ_ik)²`: summed over outputs, averaged over
//! samples. Evaluation metrics in [`crate::eval`] average over every element
//! instead, so the two differ by a factor of the output width.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::ndcore::Matrix;
use crate::nn::{
    ForwardCache, GateParams, LstmCache, LstmParams, MlpCache, MlpParams, ModelParams, Network,
    RnnCache, RnnParams,
};
use crate::rng::{derive_seed, Xoshiro256pp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    /// Stop after this many epochs without validation improvement. Needs a
    /// validation set; off when `None`.
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.7,
            batch_size: 64,
            epochs: 60,
            seed: 0,
            shuffle: true,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.batch_size > n_train {
            return Err(Error::Config(format!(
                "batch size {} exceeds the {n_train} training samples",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// `(1/n) Σ_k Σ_i (y_ik - ŷ_ik)²`
pub fn squared_loss(y: &Matrix, y_hat: &Matrix) -> Result<f64> {
    if y.shape() != y_hat.shape() {
        return Err(Error::shape(
            "squared_loss",
            y.shape_str(),
            y_hat.shape_str(),
        ));
    }
    if y.rows() == 0 {
        return Err(Error::Size("squared loss over zero samples".into()));
    }
    let sse: f64 = y
        .data()
        .iter()
        .zip(y_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / y.rows() as f64)
}

/// Logged "accuracy": mean coefficient of determination across output
/// columns, skipping constant columns. Zero when every column is constant.
pub fn accuracy(y: &Matrix, y_hat: &Matrix) -> f64 {
    let defined: Vec<f64> = (0..y.cols())
        .filter_map(|c| eval::r_squared(&y.column(c), &y_hat.column(c)))
        .collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Loss and its exact gradient with respect to every parameter.
pub fn grad(net: &Network, x: &Matrix, y: &Matrix) -> Result<(f64, ModelParams)> {
    if x.rows() == 0 {
        return Err(Error::Size("gradient of an empty batch".into()));
    }
    let (y_hat, cache) = net.forward(x)?;
    let loss = squared_loss(y, &y_hat)?;
    let d_out = y_hat.sub(y)?.scale(2.0 / y.rows() as f64);
    let grads = match (&net.params, cache) {
        (ModelParams::Mlp(p), ForwardCache::Mlp(c)) => {
            ModelParams::Mlp(mlp_backward(p, &c, &d_out)?)
        }
        (ModelParams::Rnn(p), ForwardCache::Rnn(c)) => {
            ModelParams::Rnn(rnn_backward(p, &c, &d_out)?)
        }
        (ModelParams::Lstm(p), ForwardCache::Lstm(c)) => {
            ModelParams::Lstm(lstm_backward(p, &c, &d_out)?)
        }
        _ => unreachable!("forward cache always matches the parameter kind"),
    };
    Ok((loss, grads))
}

pub fn mlp_backward(p: &MlpParams, c: &MlpCache, d_out: &Matrix) -> Result<MlpParams> {
    let w2 = c.hidden.transpose().matmul(d_out)?;
    let b2 = d_out.col_sums();
    let d_hidden = d_out.matmul(&p.w2.transpose())?;
    // ReLU derivative is 0 at exactly 0.
    let d_pre = d_hidden.zip_map(&c.pre_hidden, |g, u| if u > 0.0 { g } else { 0.0 })?;
    let w1 = c.x.transpose().matmul(&d_pre)?;
    let b1 = d_pre.col_sums();
    Ok(MlpParams { w1, b1, w2, b2 })
}

pub fn rnn_backward(p: &RnnParams, c: &RnnCache, d_out: &Matrix) -> Result<RnnParams> {
    let t_len = c.xs.len();
    let h_last = &c.hs[t_len];
    let w_o = h_last.transpose().matmul(d_out)?;
    let b_o = d_out.col_sums();

    let mut w1 = Matrix::zeros(p.w1.rows(), p.w1.cols());
    let mut w2 = Matrix::zeros(p.w2.rows(), p.w2.cols());
    let mut b_h = Matrix::zeros(1, p.b_h.cols());
    let w2_t = p.w2.transpose();
    let mut d_h = d_out.matmul(&p.w_o.transpose())?;
    for t in (0..t_len).rev() {
        let h = &c.hs[t + 1];
        let h_prev = &c.hs[t];
        let d_a = d_h.zip_map(h, |g, hv| g * (1.0 - hv * hv))?;
        w1.add_assign(&c.xs[t].transpose().matmul(&d_a)?)?;
        w2.add_assign(&h_prev.transpose().matmul(&d_a)?)?;
        b_h.add_assign(&d_a.col_sums())?;
        d_h = d_a.matmul(&w2_t)?;
    }
    Ok(RnnParams {
        w1,
        w2,
        b_h,
        w_o,
        b_o,
    })
}

struct GateGrad {
    w_x: Matrix,
    w_h: Matrix,
    b: Matrix,
}

impl GateGrad {
    fn zeros_like(g: &GateParams) -> Self {
        GateGrad {
            w_x: Matrix::zeros(g.w_x.rows(), g.w_x.cols()),
            w_h: Matrix::zeros(g.w_h.rows(), g.w_h.cols()),
            b: Matrix::zeros(1, g.b.cols()),
        }
    }

    /// Accumulates the parameter gradient of one step given the gradient at
    /// the gate preactivation, and returns its contribution to `dL/dh_{t-1}`.
    fn accumulate(
        &mut self,
        gate: &GateParams,
        x: &Matrix,
        h_prev: &Matrix,
        d_pre: &Matrix,
    ) -> Result<Matrix> {
        self.w_x.add_assign(&x.transpose().matmul(d_pre)?)?;
        self.w_h.add_assign(&h_prev.transpose().matmul(d_pre)?)?;
        self.b.add_assign(&d_pre.col_sums())?;
        d_pre.matmul(&gate.w_h.transpose())
    }

    fn into_params(self) -> GateParams {
        GateParams {
            w_x: self.w_x,
            w_h: self.w_h,
            b: self.b,
        }
    }
}

pub fn lstm_backward(p: &LstmParams, c: &LstmCache, d_out: &Matrix) -> Result<LstmParams> {
    let t_len = c.xs.len();
    let w_out = c.hs[t_len].transpose().matmul(d_out)?;
    let b_out = d_out.col_sums();

    let mut gf = GateGrad::zeros_like(&p.forget);
    let mut gi = GateGrad::zeros_like(&p.input);
    let mut go = GateGrad::zeros_like(&p.output);
    let mut gc = p.candidate.as_ref().map(GateGrad::zeros_like);

    let sig_grad = |d: &Matrix, s: &Matrix| d.zip_map(s, |g, v| g * v * (1.0 - v));
    let tanh_grad = |d: &Matrix, t: &Matrix| d.zip_map(t, |g, v| g * (1.0 - v * v));

    let mut d_h = d_out.matmul(&p.w_out.transpose())?;
    let mut d_c = Matrix::zeros(d_h.rows(), d_h.cols());
    for t in (0..t_len).rev() {
        let step = &c.steps[t];
        let x = &c.xs[t];
        let h_prev = &c.hs[t];
        let c_prev = &c.cs[t];

        let d_o = d_h.hadamard(&step.tanh_c)?;
        d_c = d_c.add(&tanh_grad(&d_h.hadamard(&step.o)?, &step.tanh_c)?)?;
        let d_f = d_c.hadamard(c_prev)?;
        let d_i = d_c.hadamard(&step.g)?;
        let d_g = d_c.hadamard(&step.i)?;

        let mut d_h_prev = gf.accumulate(&p.forget, x, h_prev, &sig_grad(&d_f, &step.f)?)?;
        d_h_prev.add_assign(&gi.accumulate(&p.input, x, h_prev, &sig_grad(&d_i, &step.i)?)?)?;
        d_h_prev.add_assign(&go.accumulate(&p.output, x, h_prev, &sig_grad(&d_o, &step.o)?)?)?;
        let d_g_pre = tanh_grad(&d_g, &step.g)?;
        match (&p.candidate, gc.as_mut()) {
            (Some(cand), Some(g)) => {
                d_h_prev.add_assign(&g.accumulate(cand, x, h_prev, &d_g_pre)?)?;
            }
            // g = tanh(h_{t-1}) feeds h_{t-1} directly.
            _ => d_h_prev.add_assign(&d_g_pre)?,
        }

        d_c = d_c.hadamard(&step.f)?;
        d_h = d_h_prev;
    }

    Ok(LstmParams {
        forget: gf.into_params(),
        input: gi.into_params(),
        output: go.into_params(),
        candidate: gc.map(GateGrad::into_params),
        w_out,
        b_out,
    })
}

/// `w ← w − η·g` for every parameter.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, learning_rate: f64) -> Result<()> {
    let grads = grads.named_tensors();
    let mut slots = params.named_tensors_mut();
    if grads.len() != slots.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} tensors", slots.len()),
            format!("{} gradients", grads.len()),
        ));
    }
    for ((name, w), (gname, g)) in slots.iter_mut().zip(grads) {
        if *name != gname || w.shape() != g.shape() {
            return Err(Error::shape("sgd_step", w.shape_str(), g.shape_str()));
        }
        for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv -= learning_rate * gv;
        }
    }
    Ok(())
}

/// Index batches for one epoch: a permutation of `0..n` (identity without
/// shuffling) cut into chunks of `batch_size`; the last chunk may be short.
pub fn minibatches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        Xoshiro256pp::seed_from_u64(derive_seed(seed, &[SHUFFLE_STREAM, epoch as u64]))
            .shuffle(&mut order);
    }
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

const SHUFFLE_STREAM: u64 = 1;

/// Borrowed feature/label matrices.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub x: &'a Matrix,
    pub y: &'a Matrix,
}

impl<'a> Samples<'a> {
    pub fn new(x: &'a Matrix, y: &'a Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::shape("samples", x.shape_str(), y.shape_str()));
        }
        Ok(Samples { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

fn evaluate_loss(net: &Network, data: Samples<'_>) -> Result<(f64, f64)> {
    let y_hat = net.predict(data.x)?;
    Ok((squared_loss(data.y, &y_hat)?, accuracy(data.y, &y_hat)))
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn fit(
    arch: crate::nn::ArchSpec,
    cfg: &TrainConfig,
    train: Samples<'_>,
    val: Option<Samples<'_>>,
) -> Result<(Network, Vec<EpochLog>)> {
    let net = Network::init(arch, cfg.seed)?;
    fit_from(net, cfg, train, val)
}

/// Continues training `net` for `cfg.epochs` epochs.
pub fn fit_from(
    mut net: Network,
    cfg: &TrainConfig,
    train: Samples<'_>,
    val: Option<Samples<'_>>,
) -> Result<(Network, Vec<EpochLog>)> {
    if train.is_empty() {
        return Err(Error::Size("training set is empty".into()));
    }
    cfg.validate(train.len())?;
    if train.x.cols() != net.arch.feature_width() || train.y.cols() != net.arch.output_dim {
        return Err(Error::shape(
            "fit",
            format!("{}→{}", net.arch.feature_width(), net.arch.output_dim),
            format!("{}→{}", train.x.cols(), train.y.cols()),
        ));
    }
    if cfg.early_stop_patience.is_some() && val.is_none() {
        return Err(Error::Config(
            "early stopping needs a validation set".into(),
        ));
    }

    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 0..cfg.epochs {
        for (b, idx) in minibatches(train.len(), cfg.batch_size, cfg.seed, epoch, cfg.shuffle)
            .iter()
            .enumerate()
        {
            let xb = train.x.select_rows(idx);
            let yb = train.y.select_rows(idx);
            let (loss, grads) = grad(&net, &xb, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: Some(b),
                });
            }
            sgd_step(&mut net.params, &grads, cfg.learning_rate)?;
        }

        let (train_loss, train_accuracy) = evaluate_loss(&net, train)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch, batch: None });
        }
        let (val_loss, val_accuracy) = match val {
            Some(v) => {
                let (l, a) = evaluate_loss(&net, v)?;
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch, batch: None });
                }
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        logs.push(EpochLog {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });

        if let (Some(patience), Some(vl)) = (cfg.early_stop_patience, val_loss) {
            if vl < best_val {
                best_val = vl;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok((net, logs))
}

/// Writes the epoch log as CSV: `epoch,train_loss,train_acc,val_loss,val_acc`.
/// Missing validation values are left empty.
pub fn write_epoch_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for l in logs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            l.epoch,
            l.train_loss,
            l.train_accuracy,
            opt(l.val_loss),
            opt(l.val_accuracy)
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
