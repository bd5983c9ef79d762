//! Network definitions and forward passes.
//!
//! Batches are row-major: one sample per row. Recurrent networks read a
//! flattened window of `seq_len` consecutive observations as a sequence of
//! `seq_len` blocks of `input_dim` columns and emit their prediction from the
//! final hidden state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Matrix;
use crate::rng::Xoshiro256pp;

/// Standard deviation of initial weights (variance 0.01).
pub const INIT_WEIGHT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Rnn,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::Rnn, ModelKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Rnn => "rnn",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn is_recurrent(self) -> bool {
        !matches!(self, ModelKind::Mlp)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "rnn" | "simplernn" => Ok(ModelKind::Rnn),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Which internal-state update the LSTM uses.
///
/// `PaperExact` computes `c_t = f_t ⊙ c_{t-1} + i_t ⊙ tanh(h_{t-1})` with no
/// input-dependent candidate. `Standard` uses the conventional candidate
/// `tanh(x_t W_c + h_{t-1} U_c + b_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmVariant {
    #[default]
    PaperExact,
    Standard,
}

impl std::str::FromStr for LstmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "paper_exact" | "paperexact" | "paper" => Ok(LstmVariant::PaperExact),
            "standard" => Ok(LstmVariant::Standard),
            other => Err(Error::Config(format!("unknown lstm variant `{other}`"))),
        }
    }
}

/// Architecture descriptor.
///
/// For the MLP, `input_dim` is the full flattened feature width and `seq_len`
/// is 1. For recurrent kinds, `input_dim` is the width of one time step and a
/// sample row holds `seq_len * input_dim` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub seq_len: usize,
    #[serde(default)]
    pub lstm_variant: LstmVariant,
}

impl ArchSpec {
    pub fn mlp(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        ArchSpec {
            kind: ModelKind::Mlp,
            input_dim,
            hidden_dim,
            output_dim,
            seq_len: 1,
            lstm_variant: LstmVariant::default(),
        }
    }

    pub fn rnn(input_dim: usize, hidden_dim: usize, output_dim: usize, seq_len: usize) -> Self {
        ArchSpec {
            kind: ModelKind::Rnn,
            input_dim,
            hidden_dim,
            output_dim,
            seq_len,
            lstm_variant: LstmVariant::default(),
        }
    }

    pub fn lstm(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        seq_len: usize,
        variant: LstmVariant,
    ) -> Self {
        ArchSpec {
            kind: ModelKind::Lstm,
            input_dim,
            hidden_dim,
            output_dim,
            seq_len,
            lstm_variant: variant,
        }
    }

    /// Architecture for windowed data: `window` observations of `channels`
    /// values each, predicting the next observation.
    pub fn for_windows(
        kind: ModelKind,
        channels: usize,
        window: usize,
        hidden_dim: usize,
        variant: LstmVariant,
    ) -> Self {
        match kind {
            ModelKind::Mlp => ArchSpec::mlp(channels * window, hidden_dim, channels),
            ModelKind::Rnn => ArchSpec::rnn(channels, hidden_dim, channels, window),
            ModelKind::Lstm => ArchSpec::lstm(channels, hidden_dim, channels, window, variant),
        }
    }

    pub fn with_hidden(mut self, hidden_dim: usize) -> Self {
        self.hidden_dim = hidden_dim;
        self
    }

    /// Number of columns a sample row must have.
    pub fn feature_width(&self) -> usize {
        self.input_dim * self.seq_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(
                "input, hidden and output dimensions must be at least 1".into(),
            ));
        }
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be at least 1".into()));
        }
        if self.kind == ModelKind::Mlp && self.seq_len != 1 {
            return Err(Error::Config(
                "seq_len applies to recurrent models only".into(),
            ));
        }
        Ok(())
    }
}

/// Two-layer perceptron weights: `relu(X W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Elman cell `h_t = tanh(x_t W1 + h_{t-1} W2 + b_h)` with a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    pub w1: Matrix,
    pub w2: Matrix,
    pub b_h: Matrix,
    pub w_o: Matrix,
    pub b_o: Matrix,
}

/// Input weights, recurrent weights and bias of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Matrix,
}

impl GateParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        GateParams {
            w_x: Matrix::zeros(input, hidden),
            w_h: Matrix::zeros(hidden, hidden),
            b: Matrix::zeros(1, hidden),
        }
    }

    /// `x W_x + h W_h + b`
    fn preactivation(&self, x: &Matrix, h: &Matrix) -> Result<Matrix> {
        x.matmul(&self.w_x)?
            .add(&h.matmul(&self.w_h)?)?
            .add_row_broadcast(&self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub forget: GateParams,
    pub input: GateParams,
    pub output: GateParams,
    /// Present only for [`LstmVariant::Standard`].
    pub candidate: Option<GateParams>,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

impl LstmParams {
    pub fn variant(&self) -> LstmVariant {
        if self.candidate.is_some() {
            LstmVariant::Standard
        } else {
            LstmVariant::PaperExact
        }
    }
}

/// Parameters of any supported architecture. Gradients use the same type.
// Only a few of these exist at a time; boxing the LSTM variant buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Mlp(MlpParams),
    Rnn(RnnParams),
    Lstm(LstmParams),
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `arch`.
    pub fn zeros(arch: &ArchSpec) -> Self {
        let (d, h, o) = (arch.input_dim, arch.hidden_dim, arch.output_dim);
        match arch.kind {
            ModelKind::Mlp => ModelParams::Mlp(MlpParams {
                w1: Matrix::zeros(d, h),
                b1: Matrix::zeros(1, h),
                w2: Matrix::zeros(h, o),
                b2: Matrix::zeros(1, o),
            }),
            ModelKind::Rnn => ModelParams::Rnn(RnnParams {
                w1: Matrix::zeros(d, h),
                w2: Matrix::zeros(h, h),
                b_h: Matrix::zeros(1, h),
                w_o: Matrix::zeros(h, o),
                b_o: Matrix::zeros(1, o),
            }),
            ModelKind::Lstm => ModelParams::Lstm(LstmParams {
                forget: GateParams::zeros(d, h),
                input: GateParams::zeros(d, h),
                output: GateParams::zeros(d, h),
                candidate: match arch.lstm_variant {
                    LstmVariant::PaperExact => None,
                    LstmVariant::Standard => Some(GateParams::zeros(d, h)),
                },
                w_out: Matrix::zeros(h, o),
                b_out: Matrix::zeros(1, o),
            }),
        }
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.named_tensors_mut() {
            m.data_mut().fill(0.0);
        }
        z
    }

    /// Every parameter matrix with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            ModelParams::Mlp(p) => vec![("w1", &p.w1), ("b1", &p.b1), ("w2", &p.w2), ("b2", &p.b2)],
            ModelParams::Rnn(p) => vec![
                ("w1", &p.w1),
                ("w2", &p.w2),
                ("b_h", &p.b_h),
                ("w_o", &p.w_o),
                ("b_o", &p.b_o),
            ],
            ModelParams::Lstm(p) => {
                let mut v = vec![
                    ("w_f1", &p.forget.w_x),
                    ("w_f2", &p.forget.w_h),
                    ("b_f", &p.forget.b),
                    ("w_i1", &p.input.w_x),
                    ("w_i2", &p.input.w_h),
                    ("b_i", &p.input.b),
                    ("w_o1", &p.output.w_x),
                    ("w_o2", &p.output.w_h),
                    ("b_o", &p.output.b),
                ];
                if let Some(c) = &p.candidate {
                    v.extend([("w_c1", &c.w_x), ("w_c2", &c.w_h), ("b_c", &c.b)]);
                }
                v.extend([("w_out", &p.w_out), ("b_out", &p.b_out)]);
                v
            }
        }
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        match self {
            ModelParams::Mlp(p) => vec![
                ("w1", &mut p.w1),
                ("b1", &mut p.b1),
                ("w2", &mut p.w2),
                ("b2", &mut p.b2),
            ],
            ModelParams::Rnn(p) => vec![
                ("w1", &mut p.w1),
                ("w2", &mut p.w2),
                ("b_h", &mut p.b_h),
                ("w_o", &mut p.w_o),
                ("b_o", &mut p.b_o),
            ],
            ModelParams::Lstm(p) => {
                let mut v = vec![
                    ("w_f1", &mut p.forget.w_x),
                    ("w_f2", &mut p.forget.w_h),
                    ("b_f", &mut p.forget.b),
                    ("w_i1", &mut p.input.w_x),
                    ("w_i2", &mut p.input.w_h),
                    ("b_i", &mut p.input.b),
                    ("w_o1", &mut p.output.w_x),
                    ("w_o2", &mut p.output.w_h),
                    ("b_o", &mut p.output.b),
                ];
                if let Some(c) = &mut p.candidate {
                    v.extend([
                        ("w_c1", &mut c.w_x),
                        ("w_c2", &mut c.w_h),
                        ("b_c", &mut c.b),
                    ]);
                }
                v.extend([("w_out", &mut p.w_out), ("b_out", &mut p.b_out)]);
                v
            }
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors()
            .iter()
            .map(|(_, m)| m.data().len())
            .sum()
    }

    /// Rebuilds parameters from named matrices, checking every shape against `arch`.
    pub fn from_named(arch: &ArchSpec, tensors: Vec<(String, Matrix)>) -> Result<Self> {
        arch.validate()?;
        let mut params = ModelParams::zeros(arch);
        let expected = params.named_tensors().len();
        if tensors.len() != expected {
            return Err(Error::Model(format!(
                "expected {expected} parameter matrices for {}, found {}",
                arch.kind.name(),
                tensors.len()
            )));
        }
        for (name, slot) in params.named_tensors_mut() {
            let (_, m) = tensors
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Model(format!("missing parameter `{name}`")))?;
            if m.shape() != slot.shape() {
                return Err(Error::shape(
                    "load parameter",
                    slot.shape_str(),
                    m.shape_str(),
                ));
            }
            *slot = m.clone();
        }
        Ok(params)
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

/// Draws weights i.i.d. from N(0, 0.01) and sets biases to zero.
///
/// Tensors are filled in [`ModelParams::named_tensors`] order, row-major, one
/// normal draw per weight entry.
pub fn init_params(arch: &ArchSpec, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = Xoshiro256pp::seed_from_u64(seed);
    let mut params = ModelParams::zeros(arch);
    for (name, m) in params.named_tensors_mut() {
        if name.starts_with('b') {
            continue;
        }
        for v in m.data_mut() {
            *v = INIT_WEIGHT_STD * rng.normal();
        }
    }
    Ok(params)
}

/// Splits flattened sample rows into `seq_len` consecutive column blocks.
pub fn split_sequence(x: &Matrix, seq_len: usize) -> Result<Vec<Matrix>> {
    if seq_len == 0 || !x.cols().is_multiple_of(seq_len) {
        return Err(Error::shape(
            "split_sequence",
            x.shape_str(),
            format!("{seq_len} steps"),
        ));
    }
    let step = x.cols() / seq_len;
    (0..seq_len)
        .map(|t| x.slice_cols(t * step, (t + 1) * step))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub x: Matrix,
    pub pre_hidden: Matrix,
    pub hidden: Matrix,
}

pub fn mlp_forward(p: &MlpParams, x: &Matrix) -> Result<(Matrix, MlpCache)> {
    let pre_hidden = x.matmul(&p.w1)?.add_row_broadcast(&p.b1)?;
    let hidden = relu(&pre_hidden);
    let y = hidden.matmul(&p.w2)?.add_row_broadcast(&p.b2)?;
    Ok((
        y,
        MlpCache {
            x: x.clone(),
            pre_hidden,
            hidden,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct RnnCache {
    pub xs: Vec<Matrix>,
    /// `h_0 ..= h_T`
    pub hs: Vec<Matrix>,
}

fn check_sequence(xs: &[Matrix], input_dim: usize) -> Result<usize> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Size("input sequence is empty".into()))?;
    let n = first.rows();
    for x in xs {
        if x.rows() != n || x.cols() != input_dim {
            return Err(Error::shape(
                "sequence step",
                format!("{n}x{input_dim}"),
                x.shape_str(),
            ));
        }
    }
    Ok(n)
}

pub fn rnn_forward(p: &RnnParams, xs: &[Matrix]) -> Result<(Matrix, RnnCache)> {
    let n = check_sequence(xs, p.w1.rows())?;
    let mut hs = Vec::with_capacity(xs.len() + 1);
    hs.push(Matrix::zeros(n, p.w2.rows()));
    for x in xs {
        let prev = hs.last().expect("h_0 present");
        let a = x
            .matmul(&p.w1)?
            .add(&prev.matmul(&p.w2)?)?
            .add_row_broadcast(&p.b_h)?;
        hs.push(tanh(&a));
    }
    let y = hs
        .last()
        .expect("nonempty")
        .matmul(&p.w_o)?
        .add_row_broadcast(&p.b_o)?;
    Ok((
        y,
        RnnCache {
            xs: xs.to_vec(),
            hs,
        },
    ))
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub f: Matrix,
    pub i: Matrix,
    pub o: Matrix,
    /// The candidate added to the state, `tanh(h_{t-1})` or `tanh(x W_c + h U_c + b_c)`.
    pub g: Matrix,
    pub tanh_c: Matrix,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    pub xs: Vec<Matrix>,
    /// `h_0 ..= h_T`
    pub hs: Vec<Matrix>,
    /// `c_0 ..= c_T`
    pub cs: Vec<Matrix>,
    pub steps: Vec<LstmStep>,
}

/// LSTM forward from zero hidden and cell state.
pub fn lstm_forward(p: &LstmParams, xs: &[Matrix]) -> Result<(Matrix, LstmCache)> {
    let n = check_sequence(xs, p.forget.w_x.rows())?;
    let h = p.forget.w_h.rows();
    lstm_forward_from(p, xs, Matrix::zeros(n, h), Matrix::zeros(n, h))
}

/// LSTM forward from an explicit initial state `(h_0, c_0)`.
pub fn lstm_forward_from(
    p: &LstmParams,
    xs: &[Matrix],
    h0: Matrix,
    c0: Matrix,
) -> Result<(Matrix, LstmCache)> {
    let n = check_sequence(xs, p.forget.w_x.rows())?;
    let hidden = p.forget.w_h.rows();
    for s in [&h0, &c0] {
        if s.shape() != (n, hidden) {
            return Err(Error::shape(
                "lstm initial state",
                format!("{n}x{hidden}"),
                s.shape_str(),
            ));
        }
    }
    let mut hs = vec![h0];
    let mut cs = vec![c0];
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let h_prev = hs.last().expect("h_0 present");
        let c_prev = cs.last().expect("c_0 present");
        let f = sigmoid(&p.forget.preactivation(x, h_prev)?);
        let i = sigmoid(&p.input.preactivation(x, h_prev)?);
        let o = sigmoid(&p.output.preactivation(x, h_prev)?);
        let g = match &p.candidate {
            None => tanh(h_prev),
            Some(c) => tanh(&c.preactivation(x, h_prev)?),
        };
        let c = f.hadamard(c_prev)?.add(&i.hadamard(&g)?)?;
        let tanh_c = tanh(&c);
        let h = o.hadamard(&tanh_c)?;
        hs.push(h);
        cs.push(c);
        steps.push(LstmStep { f, i, o, g, tanh_c });
    }
    let y = hs
        .last()
        .expect("nonempty")
        .matmul(&p.w_out)?
        .add_row_broadcast(&p.b_out)?;
    Ok((
        y,
        LstmCache {
            xs: xs.to_vec(),
            hs,
            cs,
            steps,
        },
    ))
}

/// Forward-pass state retained for the gradient computation.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Mlp(MlpCache),
    Rnn(RnnCache),
    Lstm(LstmCache),
}

/// A trained or freshly initialized network: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: ArchSpec,
    pub params: ModelParams,
}

impl Network {
    pub fn new(arch: ArchSpec, params: ModelParams) -> Result<Self> {
        arch.validate()?;
        let expected = ModelParams::zeros(&arch);
        let shapes_match = expected
            .named_tensors()
            .iter()
            .zip(params.named_tensors())
            .all(|((a, m), (b, n))| a == &b && m.shape() == n.shape())
            && expected.named_tensors().len() == params.named_tensors().len();
        if !shapes_match {
            return Err(Error::Model(format!(
                "parameters do not match a {} architecture with hidden width {}",
                arch.kind.name(),
                arch.hidden_dim
            )));
        }
        Ok(Network { arch, params })
    }

    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        let params = init_params(&arch, seed)?;
        Ok(Network { arch, params })
    }

    /// Forward pass on flattened sample rows.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if x.cols() != self.arch.feature_width() {
            return Err(Error::shape(
                "forward",
                format!("{} feature columns", self.arch.feature_width()),
                x.shape_str(),
            ));
        }
        match &self.params {
            ModelParams::Mlp(p) => mlp_forward(p, x).map(|(y, c)| (y, ForwardCache::Mlp(c))),
            ModelParams::Rnn(p) => {
                let xs = split_sequence(x, self.arch.seq_len)?;
                rnn_forward(p, &xs).map(|(y, c)| (y, ForwardCache::Rnn(c)))
            }
            ModelParams::Lstm(p) => {
                let xs = split_sequence(x, self.arch.seq_len)?;
                lstm_forward(p, &xs).map(|(y, c)| (y, ForwardCache::Lstm(c)))
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(y, _)| y)
    }
}
