//! Loop-based reference implementations shared by the integration tests.
//!
//! Nothing here calls the library's matrix arithmetic: every forward pass is
//! written out as plain index loops so it can serve as an oracle.

#![allow(dead_code)]

use wxforecast::nn::{
    lstm_forward_from, split_sequence, ArchSpec, GateParams, LstmParams, LstmVariant, ModelKind,
    ModelParams, Network,
};
use wxforecast::rng::Xoshiro256pp;
use wxforecast::train::{grad, lstm_backward};
use wxforecast::Matrix;

pub const FD_EPS: f64 = 1e-5;

type Grid2 = Vec<Vec<f64>>;

fn to_grid(m: &Matrix) -> Grid2 {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// `x W + b` for one row.
fn affine(x: &[f64], w: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|j| {
            let mut s = b.get(0, j);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w.get(i, j);
            }
            s
        })
        .collect()
}

fn gate(x: &[f64], h: &[f64], g: &GateParams) -> Vec<f64> {
    let mut a = affine(x, &g.w_x, &g.b);
    for (j, aj) in a.iter_mut().enumerate() {
        for (i, hi) in h.iter().enumerate() {
            *aj += hi * g.w_h.get(i, j);
        }
    }
    a
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn lstm_row(p: &LstmParams, steps: &[&[f64]], h0: &[f64], c0: &[f64]) -> Vec<f64> {
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    for x in steps {
        let f: Vec<f64> = gate(x, &h, &p.forget).into_iter().map(sig).collect();
        let i: Vec<f64> = gate(x, &h, &p.input).into_iter().map(sig).collect();
        let o: Vec<f64> = gate(x, &h, &p.output).into_iter().map(sig).collect();
        let g: Vec<f64> = match &p.candidate {
            Some(cand) => gate(x, &h, cand).into_iter().map(f64::tanh).collect(),
            None => h.iter().map(|v| v.tanh()).collect(),
        };
        for j in 0..c.len() {
            c[j] = f[j] * c[j] + i[j] * g[j];
        }
        h = (0..c.len()).map(|j| o[j] * c[j].tanh()).collect();
    }
    affine(&h, &p.w_out, &p.b_out)
}

/// Reference forward pass; `state` gives an LSTM initial `(h_0, c_0)`.
pub fn oracle_forward(
    arch: &ArchSpec,
    params: &ModelParams,
    x: &Matrix,
    state: Option<(&Matrix, &Matrix)>,
) -> Grid2 {
    let d = arch.input_dim;
    let rows = to_grid(x);
    rows.iter()
        .enumerate()
        .map(|(r, row)| {
            let steps: Vec<&[f64]> = row.chunks(d).collect();
            match params {
                ModelParams::Mlp(p) => {
                    let hidden: Vec<f64> = affine(row, &p.w1, &p.b1)
                        .into_iter()
                        .map(|v| v.max(0.0))
                        .collect();
                    affine(&hidden, &p.w2, &p.b2)
                }
                ModelParams::Rnn(p) => {
                    let mut h = vec![0.0; arch.hidden_dim];
                    for s in &steps {
                        let mut a = affine(s, &p.w1, &p.b_h);
                        for (j, aj) in a.iter_mut().enumerate() {
                            for (i, hi) in h.iter().enumerate() {
                                *aj += hi * p.w2.get(i, j);
                            }
                        }
                        h = a.into_iter().map(f64::tanh).collect();
                    }
                    affine(&h, &p.w_o, &p.b_o)
                }
                ModelParams::Lstm(p) => {
                    let zeros = vec![0.0; arch.hidden_dim];
                    let (h0, c0) = match state {
                        Some((h, c)) => (h.row(r).to_vec(), c.row(r).to_vec()),
                        None => (zeros.clone(), zeros),
                    };
                    lstm_row(p, &steps, &h0, &c0)
                }
            }
        })
        .collect()
}

/// `(1/n) Σ_i Σ_j (y_ij − ŷ_ij)²` by loops.
pub fn oracle_loss(y: &Matrix, y_hat: &Grid2) -> f64 {
    let mut s = 0.0;
    for (r, row) in y_hat.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let e = y.get(r, c) - v;
            s += e * e;
        }
    }
    s / y.rows() as f64
}

/// Symmetric relative error with a floor that keeps near-zero partials from
/// dominating.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub partials: usize,
}

/// Compares analytic partials with central differences of the oracle loss.
fn check_against<F>(params: &ModelParams, analytic: &ModelParams, loss_at: F) -> GradCheck
where
    F: Fn(&ModelParams) -> f64,
{
    let mut worst = 0.0f64;
    let mut partials = 0;
    let n_tensors = params.named_tensors().len();
    for t in 0..n_tensors {
        let len = params.named_tensors()[t].1.data().len();
        for k in 0..len {
            let mut plus = params.clone();
            plus.named_tensors_mut()[t].1.data_mut()[k] += FD_EPS;
            let mut minus = params.clone();
            minus.named_tensors_mut()[t].1.data_mut()[k] -= FD_EPS;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_EPS);
            let a = analytic.named_tensors()[t].1.data()[k];
            worst = worst.max(rel_err(a, numeric));
            partials += 1;
        }
    }
    GradCheck {
        max_rel_err: worst,
        partials,
    }
}

pub fn check_network(net: &Network, x: &Matrix, y: &Matrix) -> GradCheck {
    let (_, analytic) = grad(net, x, y).expect("gradient");
    check_against(&net.params, &analytic, |p| {
        oracle_loss(y, &oracle_forward(&net.arch, p, x, None))
    })
}

/// Gradient check of an LSTM started from a nonzero state, which exercises
/// the recurrent paths that stay inactive from a zero start.
pub fn check_lstm_from_state(
    net: &Network,
    x: &Matrix,
    y: &Matrix,
    h0: &Matrix,
    c0: &Matrix,
) -> GradCheck {
    let ModelParams::Lstm(p) = &net.params else {
        panic!("not an LSTM")
    };
    let xs = split_sequence(x, net.arch.seq_len).expect("split");
    let (y_hat, cache) = lstm_forward_from(p, &xs, h0.clone(), c0.clone()).expect("forward");
    let d_out = y_hat.sub(y).unwrap().scale(2.0 / y.rows() as f64);
    let analytic = ModelParams::Lstm(lstm_backward(p, &cache, &d_out).expect("backward"));
    check_against(&net.params, &analytic, |q| {
        oracle_loss(y, &oracle_forward(&net.arch, q, x, Some((h0, c0))))
    })
}

pub fn random_matrix(rng: &mut Xoshiro256pp, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal() * scale).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn dim(rng: &mut Xoshiro256pp) -> usize {
    1 + rng.below(6)
}

pub struct Instance {
    pub net: Network,
    pub x: Matrix,
    pub y: Matrix,
}

/// A random network with every parameter (biases included) drawn from
/// N(0, 0.5²), plus a batch of at most 8 rows. MLP instances are redrawn when
/// a hidden preactivation lies within reach of the ReLU kink.
pub fn random_instance(rng: &mut Xoshiro256pp, kind: ModelKind, variant: LstmVariant) -> Instance {
    loop {
        let n = 1 + rng.below(8);
        let (d, h, o) = (dim(rng), dim(rng), dim(rng));
        let arch = match kind {
            ModelKind::Mlp => ArchSpec::mlp(d, h, o),
            ModelKind::Rnn => ArchSpec::rnn(d, h, o, 1 + rng.below(4)),
            ModelKind::Lstm => ArchSpec::lstm(d, h, o, 1 + rng.below(4), variant),
        };
        let mut params = ModelParams::zeros(&arch);
        for (_, m) in params.named_tensors_mut() {
            for v in m.data_mut() {
                *v = rng.normal() * 0.5;
            }
        }
        let x = random_matrix(rng, n, arch.feature_width(), 1.0);
        let y = random_matrix(rng, n, o, 1.0);
        if let ModelParams::Mlp(p) = &params {
            let near_kink = (0..n).any(|r| {
                affine(x.row(r), &p.w1, &p.b1)
                    .iter()
                    .any(|u| u.abs() < 1e-3)
            });
            if near_kink {
                continue;
            }
        }
        let net = Network::new(arch, params).expect("consistent instance");
        return Instance { net, x, y };
    }
}

/// Worst relative error over `count` random instances of one architecture.
/// LSTMs are checked both from a zero state and from a random state.
pub fn gradient_suite(kind: ModelKind, variant: LstmVariant, count: usize, seed: u64) -> GradCheck {
    let mut rng = Xoshiro256pp::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut partials = 0;
    for _ in 0..count {
        let inst = random_instance(&mut rng, kind, variant);
        let mut results = vec![check_network(&inst.net, &inst.x, &inst.y)];
        if kind == ModelKind::Lstm {
            let (n, h) = (inst.x.rows(), inst.net.arch.hidden_dim);
            let h0 = random_matrix(&mut rng, n, h, 0.5);
            let c0 = random_matrix(&mut rng, n, h, 0.5);
            results.push(check_lstm_from_state(&inst.net, &inst.x, &inst.y, &h0, &c0));
        }
        for r in results {
            worst = worst.max(r.max_rel_err);
            partials += r.partials;
        }
    }
    GradCheck {
        max_rel_err: worst,
        partials,
    }
}

/// Brute-force metric oracles.
pub mod metrics {
    pub fn mse(y: &[f64], h: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..y.len() {
            s += (y[i] - h[i]) * (y[i] - h[i]);
        }
        s / y.len() as f64
    }

    pub fn mae(y: &[f64], h: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..y.len() {
            s += (y[i] - h[i]).abs();
        }
        s / y.len() as f64
    }

    fn mean(v: &[f64]) -> f64 {
        let mut s = 0.0;
        for x in v {
            s += x;
        }
        s / v.len() as f64
    }

    pub fn pearson(y: &[f64], h: &[f64]) -> f64 {
        let (my, mh) = (mean(y), mean(h));
        let (mut num, mut sy, mut sh) = (0.0, 0.0, 0.0);
        for i in 0..y.len() {
            num += (y[i] - my) * (h[i] - mh);
            sy += (y[i] - my).powi(2);
            sh += (h[i] - mh).powi(2);
        }
        num / (sy * sh).sqrt()
    }

    pub fn r_squared(y: &[f64], h: &[f64]) -> f64 {
        let my = mean(y);
        let (mut res, mut tot) = (0.0, 0.0);
        for i in 0..y.len() {
            res += (y[i] - h[i]).powi(2);
            tot += (y[i] - my).powi(2);
        }
        1.0 - res / tot
    }
}
