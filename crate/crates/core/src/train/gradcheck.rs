//! Central-difference gradient checks.
//!
//! A subject maps a list of named tensors to an output `y`. With a fixed
//! random projection `r`, the scalar `L = Σ r ⊙ y` is differentiated two
//! ways: analytically by the subject's backward pass given `∂L/∂y = r`, and
//! numerically by `(L(x + ε) − L(x − ε)) / 2ε` per element.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{arg_err, Error, Result};
use crate::kernels::{pointwise, pointwise_grad, Pointwise};
use crate::layers::{Layer, Mode};
use crate::model::{Model, ModelConfig, NormSlot};
use crate::recurrent::{
    convlstm_sequence, convlstm_sequence_backward, lstm_sequence, lstm_sequence_backward, ConvLstmParams,
    ConvLstmState, LstmParams, LstmState,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Absolute denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-7;
pub const DEFAULT_SCALE_FLOOR: f64 = 1e-2;

/// Spread of the cell fixtures' inputs. Finite-difference truncation on
/// the input-kernel gradients grows with the square of this spread.
pub const CELL_INPUT_SCALE: f64 = 0.3;
/// Largest step used for the end-to-end model, whose deep composition has
/// larger third derivatives than any single kernel.
pub const MODEL_EPS: f64 = 1e-4;

pub type Vars = Vec<(String, Tensor<f64>)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen elements per tensor.
    pub max_per_tensor: Option<usize>,
    /// Fraction of a tensor's largest analytic gradient below which an
    /// element's error is measured against that fraction instead of its
    /// own magnitude.
    pub scale_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            tolerance: DEFAULT_TOLERANCE,
            max_per_tensor: None,
            scale_floor: DEFAULT_SCALE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub subject: String,
    pub max_rel_error: f64,
    /// `tensor[flat_index]` of the largest error.
    pub worst: String,
    pub checked: usize,
    /// Elements whose `±eps` step changed the activation pattern and were
    /// measured with a smaller step instead.
    pub refined: usize,
    /// Elements sitting on a kink at every step size tried.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    /// Within tolerance, with at most 5% of the elements skipped.
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.skipped * 20 <= self.checked.max(1)
    }
}

/// `|a − n| / max(|a|, |n|, floor)` with `floor` at least [`REL_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor).max(REL_FLOOR)
}

fn projected(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Step sizes tried, as fractions of `eps`, when a step crosses a kink.
const REFINEMENTS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// Compares `backward(vars, r)` against central differences of
/// `Σ r ⊙ forward(vars)` for smooth subjects.
pub fn check_gradients<F, B>(
    subject: &str,
    vars: &[(String, Tensor<f64>)],
    forward: F,
    backward: B,
    opts: &GradCheckOptions,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    check_piecewise(subject, vars, |v| Ok((forward(v)?, 0)), backward, opts, rng)
}

/// Like [`check_gradients`] for piecewise-smooth subjects: `forward` also
/// returns a hash of its activation pattern. A difference whose steps land
/// on another pattern is retried with smaller steps.
pub fn check_piecewise<F, B>(
    subject: &str,
    vars: &[(String, Tensor<f64>)],
    forward: F,
    backward: B,
    opts: &GradCheckOptions,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<(Tensor<f64>, u64)>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    let mut values: Vec<Tensor<f64>> = vars.iter().map(|(_, t)| t.clone()).collect();
    let (y, pattern) = forward(&values)?;
    let r = Tensor::randn(y.dims(), rng);
    let analytic = backward(&values, &r)?;
    if analytic.len() != values.len() {
        return Err(arg_err!("{subject}: backward returned {} gradients for {} tensors", analytic.len(), values.len()));
    }
    let mut report = GradCheckReport {
        subject: subject.to_string(),
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        refined: 0,
        skipped: 0,
        tolerance: opts.tolerance,
    };
    for (v, (name, _)) in vars.iter().enumerate() {
        analytic[v].expect_dims(values[v].dims(), &format!("{subject}: gradient of {name}"))?;
        let floor = opts.scale_floor * analytic[v].max_abs();
        let n = values[v].len();
        let mut idx: Vec<usize> = (0..n).collect();
        if let Some(m) = opts.max_per_tensor.filter(|&m| m < n) {
            rng.shuffle(&mut idx);
            idx.truncate(m);
            idx.sort_unstable();
        }
        for k in idx {
            report.checked += 1;
            let orig = values[v].data()[k];
            let mut numeric = None;
            for (attempt, scale) in std::iter::once(1.0).chain(REFINEMENTS).enumerate() {
                let h = opts.eps * scale;
                values[v].data_mut()[k] = orig + h;
                let (yp, pp) = forward(&values)?;
                values[v].data_mut()[k] = orig - h;
                let (ym, pm) = forward(&values)?;
                values[v].data_mut()[k] = orig;
                if pp == pattern && pm == pattern {
                    numeric = Some((projected(&yp, &r) - projected(&ym, &r)) / (2.0 * h));
                    report.refined += usize::from(attempt > 0);
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let err = relative_error(analytic[v].data()[k], numeric, floor);
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err;
                report.worst = format!("{name}[{k}]");
            }
        }
    }
    Ok(report)
}

/// Named gradient-check targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Conv2d,
    MaxPool,
    Relu,
    Linear,
    BatchNorm,
    Sigmoid,
    Tanh,
    Hadamard,
    /// Convolutional LSTM over a sequence of the given length.
    ConvLstm(usize),
    /// Fully-connected LSTM over a sequence of the given length.
    Lstm(usize),
    /// Tiny backbone, ConvLSTM and head on two 3-frame 16×16 clips.
    Model,
    /// Bilinear resizing; has no backward pass.
    Resize,
}

impl Subject {
    /// Every differentiable layer, both cells at lengths 1 to 4, and the
    /// tiny end-to-end model.
    pub fn suite() -> Vec<Subject> {
        let mut s = vec![
            Subject::Conv2d,
            Subject::MaxPool,
            Subject::Relu,
            Subject::Linear,
            Subject::BatchNorm,
            Subject::Sigmoid,
            Subject::Tanh,
            Subject::Hadamard,
        ];
        s.extend((1..=4).map(Subject::ConvLstm));
        s.extend((1..=4).map(Subject::Lstm));
        s.push(Subject::Model);
        s
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Conv2d => write!(f, "conv2d"),
            Subject::MaxPool => write!(f, "maxpool"),
            Subject::Relu => write!(f, "relu"),
            Subject::Linear => write!(f, "linear"),
            Subject::BatchNorm => write!(f, "batchnorm"),
            Subject::Sigmoid => write!(f, "sigmoid"),
            Subject::Tanh => write!(f, "tanh"),
            Subject::Hadamard => write!(f, "hadamard"),
            Subject::ConvLstm(n) => write!(f, "convlstm:{n}"),
            Subject::Lstm(n) => write!(f, "lstm:{n}"),
            Subject::Model => write!(f, "model"),
            Subject::Resize => write!(f, "resize"),
        }
    }
}

impl FromStr for Subject {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, len) = match s.split_once(':') {
            Some((h, n)) => {
                let n: usize = n.parse().map_err(|_| arg_err!("bad sequence length in `{s}`"))?;
                if n == 0 {
                    return Err(arg_err!("sequence length must be positive in `{s}`"));
                }
                (h, Some(n))
            }
            None => (s, None),
        };
        let subject = match (head, len) {
            ("conv2d", None) => Subject::Conv2d,
            ("maxpool", None) => Subject::MaxPool,
            ("relu", None) => Subject::Relu,
            ("linear", None) => Subject::Linear,
            ("batchnorm", None) => Subject::BatchNorm,
            ("sigmoid", None) => Subject::Sigmoid,
            ("tanh", None) => Subject::Tanh,
            ("hadamard", None) => Subject::Hadamard,
            ("convlstm", n) => Subject::ConvLstm(n.unwrap_or(3)),
            ("lstm", n) => Subject::Lstm(n.unwrap_or(3)),
            ("model", None) => Subject::Model,
            ("resize", None) => Subject::Resize,
            _ => return Err(arg_err!("unknown gradient-check subject `{s}`")),
        };
        Ok(subject)
    }
}

/// Standard normal values pushed at least `gap` away from zero, so no
/// finite-difference step crosses a ReLU kink.
fn away_from_zero(dims: &[usize], gap: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::<f64>::randn(dims, rng).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

/// Distinct values spaced well beyond the step size, in random order, so
/// every pooling window has a clear maximum.
fn spaced(dims: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    rng.shuffle(&mut v);
    Tensor::new(dims, v).expect("dims match data")
}

fn check_layer(
    subject: &str,
    layer: Layer<f64>,
    x: Tensor<f64>,
    mode: Mode,
    opts: &GradCheckOptions,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    let mut vars: Vars = vec![("input".into(), x)];
    vars.extend(layer.params().iter().map(|p| (p.name.clone(), p.value.clone())));
    let with = |v: &[Tensor<f64>]| {
        let mut l = layer.clone();
        for (p, t) in l.params_mut().iter_mut().zip(&v[1..]) {
            p.value = t.clone();
        }
        l
    };
    check_piecewise(
        subject,
        &vars,
        |v| {
            let l = with(v);
            let (y, cache) = l.forward_with(&v[0], mode)?;
            let mut h = std::collections::hash_map::DefaultHasher::new();
            l.hash_pattern(&cache, &mut h);
            Ok((y, std::hash::Hasher::finish(&h)))
        },
        |v, r| {
            let l = with(v);
            let (_, cache) = l.forward_with(&v[0], mode)?;
            let mut grads = l.grad_buffers();
            let gx = l.backward_with(&cache, r, &mut grads)?;
            Ok(std::iter::once(gx).chain(grads).collect())
        },
        opts,
        rng,
    )
}

fn check_pointwise(kind: Pointwise, opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckReport> {
    let binary = kind == Pointwise::Hadamard;
    let mut vars: Vars = vec![("a".into(), Tensor::randn(&[2, 3, 3], rng))];
    if binary {
        vars.push(("b".into(), Tensor::randn(&[2, 3, 3], rng)));
    }
    check_gradients(
        &format!("{kind:?}").to_lowercase(),
        &vars,
        |v| pointwise(kind, &v[0], v.get(1)),
        |v, r| {
            let y = pointwise(kind, &v[0], v.get(1))?;
            let (ga, gb) = pointwise_grad(kind, &v[0], v.get(1), &y, r)?;
            Ok(std::iter::once(ga).chain(gb).collect())
        },
        opts,
        rng,
    )
}

fn check_convlstm(steps: usize, opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckReport> {
    let (cin, ch, hw, k) = (2, 3, 4, 3);
    let p = ConvLstmParams::<f64>::init("cell", cin, ch, k, rng)?;
    let mut vars: Vars = p.params().iter().map(|q| (q.name.clone(), q.value.clone())).collect();
    vars[2].1 = Tensor::randn(&[4 * ch], rng).map(|v| 0.5 * v);
    for t in 0..steps {
        vars.push((format!("input{t}"), Tensor::randn(&[cin, hw, hw], rng).map(|v| CELL_INPUT_SCALE * v)));
    }
    vars.push(("h0".into(), Tensor::randn(&[ch, hw, hw], rng).map(|v| 0.5 * v)));
    vars.push(("c0".into(), Tensor::randn(&[ch, hw, hw], rng)));
    let split = |v: &[Tensor<f64>]| -> Result<(ConvLstmParams<f64>, ConvLstmState<f64>)> {
        let p = ConvLstmParams::from_tensors("cell", v[0].clone(), v[1].clone(), v[2].clone())?;
        let s = ConvLstmState {
            h: v[3 + steps].clone(),
            c: v[4 + steps].clone(),
        };
        Ok((p, s))
    };
    check_gradients(
        &Subject::ConvLstm(steps).to_string(),
        &vars,
        |v| {
            let (p, s) = split(v)?;
            Ok(convlstm_sequence(&v[3..3 + steps], &p, &s)?.0)
        },
        |v, r| {
            let (p, s) = split(v)?;
            let (_, cache) = convlstm_sequence(&v[3..3 + steps], &p, &s)?;
            let g = convlstm_sequence_backward(&p, &cache, r)?;
            let mut out = vec![g.w_x, g.w_h, g.bias];
            out.extend(g.inputs);
            out.push(g.h0);
            out.push(g.c0);
            Ok(out)
        },
        opts,
        rng,
    )
}

fn check_lstm(steps: usize, opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckReport> {
    let (n_in, units) = (4, 3);
    let p = LstmParams::<f64>::init("cell", n_in, units, rng)?;
    let mut vars: Vars = p.params().iter().map(|q| (q.name.clone(), q.value.clone())).collect();
    vars[2].1 = Tensor::randn(&[4 * units], rng).map(|v| 0.5 * v);
    for t in 0..steps {
        vars.push((format!("input{t}"), Tensor::randn(&[n_in], rng).map(|v| CELL_INPUT_SCALE * v)));
    }
    vars.push(("h0".into(), Tensor::randn(&[units], rng).map(|v| 0.5 * v)));
    vars.push(("c0".into(), Tensor::randn(&[units], rng)));
    let split = |v: &[Tensor<f64>]| -> Result<(LstmParams<f64>, LstmState<f64>)> {
        let p = LstmParams::from_tensors("cell", v[0].clone(), v[1].clone(), v[2].clone())?;
        let s = LstmState {
            h: v[3 + steps].clone(),
            c: v[4 + steps].clone(),
        };
        Ok((p, s))
    };
    check_gradients(
        &Subject::Lstm(steps).to_string(),
        &vars,
        |v| {
            let (p, s) = split(v)?;
            Ok(lstm_sequence(&v[3..3 + steps], &p, &s)?.0)
        },
        |v, r| {
            let (p, s) = split(v)?;
            let (_, cache) = lstm_sequence(&v[3..3 + steps], &p, &s)?;
            let g = lstm_sequence_backward(&p, &cache, r)?;
            let mut out = vec![g.w_x, g.w_h, g.bias];
            out.extend(g.inputs);
            out.push(g.h0);
            out.push(g.c0);
            Ok(out)
        },
        opts,
        rng,
    )
}

/// Config of the end-to-end subject: tiny backbone with a batch norm in the
/// first slot, a 3-filter ConvLSTM and a 4-unit hidden head layer.
pub fn model_subject_config() -> ModelConfig {
    ModelConfig {
        norm_slots: vec![NormSlot::Batchnorm],
        head: vec![4, 1],
        ..ModelConfig::tiny(16, 3)
    }
}

fn check_model(opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckReport> {
    let opts = &GradCheckOptions {
        eps: opts.eps.min(MODEL_EPS),
        ..*opts
    };
    let cfg = model_subject_config();
    let mut model = Model::<f64>::build(&cfg, rng)?;
    // Non-trivial affine parameters so their gradients are exercised.
    for p in model.params_mut() {
        if p.name.ends_with(".gamma") || p.name.ends_with(".beta") || p.name.ends_with(".bias") {
            let n = Tensor::randn(p.value.dims(), rng);
            p.value.add_assign(&n.map(|v| 0.2 * v))?;
        }
    }
    let clips: Vec<Vec<Tensor<f64>>> = (0..2)
        .map(|_| (0..3).map(|_| Tensor::randn(&[3, 16, 16], rng)).collect())
        .collect();
    let vars: Vars = model.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    let with = |v: &[Tensor<f64>]| {
        let mut m = model.clone();
        for (p, t) in m.params_mut().into_iter().zip(v) {
            p.value = t.clone();
        }
        m
    };
    check_piecewise(
        "model",
        &vars,
        |v| {
            let m = with(v);
            let cache = m.forward_batch(&clips, Mode::Train)?;
            let pattern = m.activation_pattern(&cache);
            Ok((Tensor::new(&[cache.probs.len()], cache.probs)?, pattern))
        },
        |v, r| {
            let m = with(v);
            let cache = m.forward_batch(&clips, Mode::Train)?;
            m.backward_batch(&cache, r.data())
        },
        opts,
        rng,
    )
}

/// Runs one named subject in double precision.
pub fn grad_check(subject: Subject, opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckReport> {
    let name = subject.to_string();
    match subject {
        Subject::Conv2d => {
            let layer = Layer::conv2d("conv", 2, 3, 3, 2, 1, rng)?;
            let x = Tensor::randn(&[2, 2, 5, 5], rng);
            check_layer(&name, layer, x, Mode::Train, opts, rng)
        }
        Subject::MaxPool => {
            let x = spaced(&[2, 2, 6, 6], rng);
            check_layer(&name, Layer::maxpool("pool", 3, 2), x, Mode::Train, opts, rng)
        }
        Subject::Relu => {
            let x = away_from_zero(&[2, 3, 4], 10.0 * opts.eps, rng);
            check_layer(&name, Layer::relu("relu"), x, Mode::Train, opts, rng)
        }
        Subject::Linear => {
            let layer = Layer::linear("fc", 5, 4, rng)?;
            let x = Tensor::randn(&[2, 5], rng);
            check_layer(&name, layer, x, Mode::Train, opts, rng)
        }
        Subject::BatchNorm => {
            let mut layer = Layer::batchnorm("bn", 2);
            for p in layer.params_mut() {
                p.value = Tensor::randn(&[2], rng);
            }
            let x = Tensor::randn(&[3, 2, 2, 2], rng);
            check_layer(&name, layer, x, Mode::Train, opts, rng)
        }
        Subject::Sigmoid => check_pointwise(Pointwise::Sigmoid, opts, rng),
        Subject::Tanh => check_pointwise(Pointwise::Tanh, opts, rng),
        Subject::Hadamard => check_pointwise(Pointwise::Hadamard, opts, rng),
        Subject::ConvLstm(n) => check_convlstm(n, opts, rng),
        Subject::Lstm(n) => check_lstm(n, opts, rng),
        Subject::Model => check_model(opts, rng),
        Subject::Resize => Err(Error::Unsupported(format!("{name} has no backward pass"))),
    }
}
