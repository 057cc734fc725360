//! The transformer encoder-decoder forecaster.
//!
//! A history window is standardized by its own mean and standard deviation,
//! projected to `d_model`, given fixed sinusoidal positions relative to the
//! window start and passed through a post-norm encoder. The decoder receives
//! `h` start tokens (learned embedding plus window-relative positions and,
//! when present, projected future covariates), applies causal self-attention,
//! cross-attention over the encoder output and a feed-forward block, and a
//! linear head maps every decoder position to one forecast value. All `h`
//! steps are emitted in a single parallel pass.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{Forecaster, PointForecast};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::timeseries::{Frequency, TimeSeries};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const MASK_VALUE: f64 = -1e9;
/// Upper bound on items per forward pass during batched inference.
const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_length: usize,
    pub max_horizon: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub n_exo_channels: usize,
}

impl ModelConfig {
    /// Default toy configuration for a frequency.
    pub fn for_frequency(freq: Frequency) -> ModelConfig {
        ModelConfig {
            input_length: 2 * freq.season_length().max(freq.default_horizon()),
            max_horizon: freq.default_horizon(),
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ff_dim: 128,
            dropout: 0.1,
            n_exo_channels: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(format!("invalid model config: {msg}")));
        if self.input_length < 2 {
            return fail("input_length must be >= 2");
        }
        if self.max_horizon < 1 {
            return fail("max_horizon must be >= 1");
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail("d_model must be a positive multiple of n_heads");
        }
        if self.n_encoder_layers == 0 || self.n_decoder_layers == 0 || self.ff_dim == 0 {
            return fail("layer counts and ff_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Input features per timestep: the target plus exogenous channels.
    pub fn input_channels(&self) -> usize {
        1 + self.n_exo_channels
    }

    /// Every parameter name with its shape, in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let linear = |out: &mut Vec<(String, Vec<usize>)>, name: &str, fan_in: usize, fan_out: usize| {
            out.push((format!("{name}.w"), vec![fan_in, fan_out]));
            out.push((format!("{name}.b"), vec![fan_out]));
        };
        let norm = |out: &mut Vec<(String, Vec<usize>)>, name: &str| {
            out.push((format!("{name}.gain"), vec![d]));
            out.push((format!("{name}.bias"), vec![d]));
        };
        linear(&mut out, "input", self.input_channels(), d);
        out.push((POS_ENCODER.to_string(), vec![self.input_length, d]));
        out.push((POS_DECODER.to_string(), vec![self.max_horizon, d]));
        for i in 0..self.n_encoder_layers {
            for p in ["q", "k", "v", "o"] {
                linear(&mut out, &format!("enc.{i}.attn.{p}"), d, d);
            }
            norm(&mut out, &format!("enc.{i}.ln1"));
            linear(&mut out, &format!("enc.{i}.ff1"), d, self.ff_dim);
            linear(&mut out, &format!("enc.{i}.ff2"), self.ff_dim, d);
            norm(&mut out, &format!("enc.{i}.ln2"));
        }
        out.push(("dec.start".to_string(), vec![d]));
        if self.n_exo_channels > 0 {
            linear(&mut out, "dec.exo", self.n_exo_channels, d);
        }
        for i in 0..self.n_decoder_layers {
            for p in ["q", "k", "v", "o"] {
                linear(&mut out, &format!("dec.{i}.self.{p}"), d, d);
            }
            norm(&mut out, &format!("dec.{i}.ln1"));
            for p in ["q", "k", "v", "o"] {
                linear(&mut out, &format!("dec.{i}.cross.{p}"), d, d);
            }
            norm(&mut out, &format!("dec.{i}.ln2"));
            linear(&mut out, &format!("dec.{i}.ff1"), d, self.ff_dim);
            linear(&mut out, &format!("dec.{i}.ff2"), self.ff_dim, d);
            norm(&mut out, &format!("dec.{i}.ln3"));
        }
        linear(&mut out, "head", d, 1);
        out
    }
}

pub const POS_ENCODER: &str = "pos.encoder";
pub const POS_DECODER: &str = "pos.decoder";

/// Named parameter tensors of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    params: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn from_map(params: BTreeMap<String, Tensor>) -> WeightStore {
        WeightStore { params }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Fixed positional tables are stored with the weights but never trained.
    pub fn is_trainable(name: &str) -> bool {
        name != POS_ENCODER && name != POS_DECODER
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params.keys().filter(|n| Self::is_trainable(n)).cloned().collect()
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        match self.params.get_mut(name) {
            Some(slot) if slot.shape() == value.shape() => {
                *slot = value.detach();
                Ok(())
            }
            Some(slot) => Err(Error::shape(
                "weights",
                format!("{name}: expected {:?}, got {:?}", slot.shape(), value.shape()),
            )),
            None => Err(Error::config(format!("unknown parameter '{name}'"))),
        }
    }

    /// Check that the store holds exactly the parameters `config` dictates.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let expected = config.parameter_shapes();
        if expected.len() != self.params.len() {
            return Err(Error::config(format!(
                "weights hold {} tensors, config requires {}",
                self.params.len(),
                expected.len()
            )));
        }
        for (name, shape) in expected {
            match self.params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::config(format!(
                        "parameter {name} has shape {:?}, config requires {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::config(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }
}

pub fn sinusoidal_table(rows: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * d);
    for pos in 0..rows {
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![rows, d], data).expect("finite table")
}

/// Deterministic initialization: Glorot-uniform linear weights, zero biases,
/// unit layer-norm gains and fixed sinusoidal position tables.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<WeightStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    for (name, shape) in config.parameter_shapes() {
        let n: usize = shape.iter().product();
        let tensor = if name == POS_ENCODER || name == POS_DECODER {
            sinusoidal_table(shape[0], shape[1])
        } else if name.ends_with(".gain") {
            Tensor::full(&shape, 1.0)
        } else if name.ends_with(".b") || name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let (fan_in, fan_out) = if shape.len() == 2 { (shape[0], shape[1]) } else { (1, shape[0]) };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
            Tensor::new(shape, data)?
        };
        params.insert(name, tensor);
    }
    Ok(WeightStore { params })
}

/// Mean and standard deviation used to standardize one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowScale {
    pub mean: f64,
    pub std: f64,
}

impl WindowScale {
    /// Population statistics; near-constant windows get `std = 1`.
    pub fn of(values: &[f64]) -> WindowScale {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let degenerate = !(std > 1e-10 * mean.abs().max(1e-10));
        WindowScale {
            mean,
            std: if degenerate { 1.0 } else { std },
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// A batch of model inputs. Values are raw; the forward pass standardizes
/// them with `scale` (target) and per-channel window statistics (covariates).
#[derive(Debug, Clone)]
pub struct ForecastWindowBatch {
    /// `B x L x (1 + n_exo)`, target in channel 0.
    pub history: Tensor,
    /// `B x h x n_exo` known future covariates.
    pub future_exo: Option<Tensor>,
    pub scale: Vec<WindowScale>,
}

impl ForecastWindowBatch {
    pub fn new(history: Tensor, future_exo: Option<Tensor>) -> Result<Self> {
        if history.rank() != 3 {
            return Err(Error::shape("batch", format!("history must be B x L x C, got {:?}", history.shape())));
        }
        let (b, l, c) = (history.shape()[0], history.shape()[1], history.shape()[2]);
        if let Some(fx) = &future_exo {
            if fx.rank() != 3 || fx.shape()[0] != b || fx.shape()[2] + 1 != c {
                return Err(Error::shape("batch", format!("future covariates {:?} for history {:?}", fx.shape(), history.shape())));
            }
        }
        let scale = history
            .data()
            .chunks(l * c)
            .map(|item| {
                let target: Vec<f64> = item.iter().step_by(c).copied().collect();
                WindowScale::of(&target)
            })
            .collect();
        Ok(ForecastWindowBatch {
            history,
            future_exo,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.history.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Build a batch from per-item windows.
    pub fn from_windows(windows: &[Window]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::shape("batch", "no windows"))?;
        let (l, c) = (first.target.len(), 1 + first.exo.len());
        let h_future = first.exo.first().map(|ch| ch.len() - l);
        let mut hist = Vec::with_capacity(windows.len() * l * c);
        let mut fut = Vec::new();
        for w in windows {
            if w.target.len() != l || w.exo.len() + 1 != c {
                return Err(Error::shape("batch", "windows differ in length or channel count"));
            }
            for t in 0..l {
                hist.push(w.target[t]);
                hist.extend(w.exo.iter().map(|ch| ch[t]));
            }
            if let Some(hf) = h_future {
                for t in l..l + hf {
                    fut.extend(w.exo.iter().map(|ch| ch[t]));
                }
            }
        }
        let history = Tensor::new(vec![windows.len(), l, c], hist)?;
        let future_exo = match h_future {
            Some(hf) if hf > 0 => Some(Tensor::new(vec![windows.len(), hf, c - 1], fut)?),
            _ => None,
        };
        ForecastWindowBatch::new(history, future_exo)
    }
}

/// One model input: `L` target values and, per covariate, `L` history
/// values followed by the known future values.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub target: Vec<f64>,
    pub exo: Vec<Vec<f64>>,
}

/// Window ending after `cut` observations, left-padded with the earliest
/// value when fewer than `input_length` points are available. Covariates
/// carry `future` extra values.
pub fn window_at(series: &TimeSeries, cut: usize, input_length: usize, future: usize) -> Result<Window> {
    if cut == 0 || cut > series.len() {
        return Err(Error::data(format!("invalid cut {cut} for series '{}'", series.id())));
    }
    let padded = |values: &[f64], end: usize| -> Vec<f64> {
        let start = end.saturating_sub(input_length);
        let pad = input_length.saturating_sub(end);
        let mut out = vec![values[0]; pad];
        out.extend_from_slice(&values[start..end]);
        out
    };
    let mut exo = Vec::with_capacity(series.exogenous().len());
    for ch in series.exogenous() {
        if future > 0 && ch.values.len() < cut + future {
            return Err(Error::data(format!(
                "series '{}': covariate '{}' lacks {future} future values",
                series.id(),
                ch.name
            )));
        }
        let mut v = padded(&ch.values, cut);
        if future > 0 {
            v.extend_from_slice(&ch.values[cut..cut + future]);
        }
        exo.push(v);
    }
    Ok(Window {
        target: padded(series.values(), cut),
        exo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Parameters bound to a tape, either as differentiable leaves or constants.
pub struct BoundWeights {
    tensors: HashMap<String, Tensor>,
}

impl BoundWeights {
    pub fn constant(weights: &WeightStore) -> BoundWeights {
        BoundWeights {
            tensors: weights.iter().map(|(k, v)| (k.clone(), v.detach())).collect(),
        }
    }

    /// Trainable parameters become leaves of `tape`.
    pub fn trainable(tape: &Tape, weights: &WeightStore) -> BoundWeights {
        BoundWeights {
            tensors: weights
                .iter()
                .map(|(k, v)| {
                    let t = if WeightStore::is_trainable(k) { tape.leaf(v) } else { v.detach() };
                    (k.clone(), t)
                })
                .collect(),
        }
    }

    /// Substitute one parameter, for example with a leaf created elsewhere.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(slot) if slot.shape() == tensor.shape() => {
                *slot = tensor;
                Ok(())
            }
            Some(slot) => Err(Error::shape("replace", format!("{name}: {:?} vs {:?}", slot.shape(), tensor.shape()))),
            None => Err(Error::config(format!("missing parameter {name}"))),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }
}

struct Net<'a> {
    tape: &'a Tape,
    w: &'a BoundWeights,
    cfg: &'a ModelConfig,
    dropout: Option<RefCell<ChaCha8Rng>>,
}

impl Net<'_> {
    fn linear(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let y = self.tape.matmul(x, self.w.get(&format!("{name}.w"))?)?;
        self.tape.add(&y, self.w.get(&format!("{name}.b"))?)
    }

    fn drop(&self, x: Tensor) -> Result<Tensor> {
        let Some(rng) = &self.dropout else { return Ok(x) };
        let p = self.cfg.dropout;
        if p == 0.0 {
            return Ok(x);
        }
        let mut rng = rng.borrow_mut();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.tape.mul(&x, &Tensor::new(x.shape().to_vec(), mask)?)
    }

    fn add_norm(&self, x: &Tensor, sub: Tensor, name: &str) -> Result<Tensor> {
        let sum = self.tape.add(x, &self.drop(sub)?)?;
        self.tape.layer_norm(
            &sum,
            self.w.get(&format!("{name}.gain"))?,
            self.w.get(&format!("{name}.bias"))?,
            LAYER_NORM_EPS,
        )
    }

    fn feed_forward(&self, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let hidden = self.linear(x, &format!("{prefix}.ff1"))?;
        let hidden = self.tape.gelu(&hidden)?;
        self.linear(&hidden, &format!("{prefix}.ff2"))
    }

    /// Multi-head attention of `query` (`B x T x d`) over `memory`
    /// (`B x S x d`).
    fn attention(&self, query: &Tensor, memory: &Tensor, name: &str, mask: Option<&Tensor>) -> Result<Tensor> {
        let t = self.tape;
        let q = self.linear(query, &format!("{name}.q"))?;
        let k = self.linear(memory, &format!("{name}.k"))?;
        let v = self.linear(memory, &format!("{name}.v"))?;
        let dh = self.cfg.d_model / self.cfg.n_heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = t.slice(&q, 2, lo, hi)?;
            let kh = t.slice(&k, 2, lo, hi)?;
            let vh = t.slice(&v, 2, lo, hi)?;
            let scores = t.scale(&t.matmul(&qh, &t.transpose(&kh)?)?, inv_sqrt)?;
            let scores = match mask {
                Some(m) => t.add(&scores, m)?,
                None => scores,
            };
            heads.push(t.matmul(&t.softmax(&scores)?, &vh)?);
        }
        let refs: Vec<&Tensor> = heads.iter().collect();
        let joined = t.concat(&refs, 2)?;
        self.linear(&joined, &format!("{name}.o"))
    }
}

fn causal_mask(h: usize) -> Tensor {
    let data = (0..h * h)
        .map(|i| if i % h > i / h { MASK_VALUE } else { 0.0 })
        .collect();
    Tensor::new(vec![h, h], data).expect("finite mask")
}

/// Standardize each channel of every item by its own history statistics;
/// future covariates reuse the statistics of their channel.
fn normalized_inputs(batch: &ForecastWindowBatch) -> Result<(Tensor, Option<Tensor>)> {
    let shape = batch.history.shape();
    let (b, l, c) = (shape[0], shape[1], shape[2]);
    let mut hist = batch.history.data().to_vec();
    let mut fut = batch.future_exo.as_ref().map(|f| f.data().to_vec());
    let hf = batch.future_exo.as_ref().map_or(0, |f| f.shape()[1]);
    for item in 0..b {
        let block = &mut hist[item * l * c..(item + 1) * l * c];
        for ch in 0..c {
            let scale = if ch == 0 {
                batch.scale[item]
            } else {
                WindowScale::of(&block.iter().skip(ch).step_by(c).copied().collect::<Vec<_>>())
            };
            block.iter_mut().skip(ch).step_by(c).for_each(|v| *v = scale.normalize(*v));
            if let (Some(fut), true) = (&mut fut, ch > 0) {
                let fblock = &mut fut[item * hf * (c - 1)..(item + 1) * hf * (c - 1)];
                fblock.iter_mut().skip(ch - 1).step_by(c - 1).for_each(|v| *v = scale.normalize(*v));
            }
        }
    }
    let hist = Tensor::new(shape.to_vec(), hist)?;
    let fut = match (fut, &batch.future_exo) {
        (Some(data), Some(f)) => Some(Tensor::new(f.shape().to_vec(), data)?),
        _ => None,
    };
    Ok((hist, fut))
}

/// Forecast in standardized units, `B x h`. Train mode applies dropout
/// driven by `seed`; Infer mode is deterministic and ignores it.
pub fn forward_normalized(
    tape: &Tape,
    weights: &BoundWeights,
    config: &ModelConfig,
    batch: &ForecastWindowBatch,
    horizon: usize,
    mode: Mode,
    seed: u64,
) -> Result<Tensor> {
    if horizon == 0 || horizon > config.max_horizon {
        return Err(Error::config(format!(
            "horizon {horizon} outside 1..={} supported by the model",
            config.max_horizon
        )));
    }
    let shape = batch.history.shape();
    if shape[1] != config.input_length || shape[2] != config.input_channels() {
        return Err(Error::shape(
            "forward",
            format!(
                "history {:?} does not match L={} channels={}",
                shape,
                config.input_length,
                config.input_channels()
            ),
        ));
    }
    let b = shape[0];
    if config.n_exo_channels > 0 {
        match &batch.future_exo {
            Some(f) if f.shape()[1] >= horizon => {}
            _ => return Err(Error::shape("forward", format!("model needs {horizon} steps of future covariates"))),
        }
    }
    let net = Net {
        tape,
        w: weights,
        cfg: config,
        dropout: (mode == Mode::Train && config.dropout > 0.0).then(|| RefCell::new(ChaCha8Rng::seed_from_u64(seed))),
    };
    let d = config.d_model;
    let (hist, fut) = normalized_inputs(batch)?;

    let mut x = net.linear(&hist, "input")?;
    x = tape.add(&x, weights.get(POS_ENCODER)?)?;
    x = net.drop(x)?;
    for i in 0..config.n_encoder_layers {
        let attn = net.attention(&x, &x, &format!("enc.{i}.attn"), None)?;
        x = net.add_norm(&x, attn, &format!("enc.{i}.ln1"))?;
        let ff = net.feed_forward(&x, &format!("enc.{i}"))?;
        x = net.add_norm(&x, ff, &format!("enc.{i}.ln2"))?;
    }
    let memory = x;

    let pos = tape.slice(weights.get(POS_DECODER)?, 0, 0, horizon)?;
    let tokens = tape.add(&pos, weights.get("dec.start")?)?;
    let mut y = match (&fut, config.n_exo_channels) {
        (Some(f), n) if n > 0 => {
            let f = tape.slice(f, 1, 0, horizon)?;
            tape.add(&net.linear(&f, "dec.exo")?, &tokens)?
        }
        _ => tape.add(&Tensor::zeros(&[b, horizon, d]), &tokens)?,
    };
    let mask = causal_mask(horizon);
    for i in 0..config.n_decoder_layers {
        let sa = net.attention(&y, &y, &format!("dec.{i}.self"), Some(&mask))?;
        y = net.add_norm(&y, sa, &format!("dec.{i}.ln1"))?;
        let ca = net.attention(&y, &memory, &format!("dec.{i}.cross"), None)?;
        y = net.add_norm(&y, ca, &format!("dec.{i}.ln2"))?;
        let ff = net.feed_forward(&y, &format!("dec.{i}"))?;
        y = net.add_norm(&y, ff, &format!("dec.{i}.ln3"))?;
    }
    let out = net.linear(&y, "head")?;
    tape.reshape(&out, &[b, horizon])
}

/// Forecast in the original units, `B x h`.
pub fn forward(
    weights: &WeightStore,
    config: &ModelConfig,
    batch: &ForecastWindowBatch,
    horizon: usize,
    mode: Mode,
    seed: u64,
) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = BoundWeights::constant(weights);
    let out = forward_normalized(&tape, &bound, config, batch, horizon, mode, seed)?;
    denormalize(&tape, &out, batch)
}

/// Map standardized outputs back with each item's window scale.
pub fn denormalize(tape: &Tape, out: &Tensor, batch: &ForecastWindowBatch) -> Result<Tensor> {
    let h = out.shape()[1];
    let stds: Vec<f64> = batch.scale.iter().flat_map(|s| std::iter::repeat_n(s.std, h)).collect();
    let means: Vec<f64> = batch.scale.iter().flat_map(|s| std::iter::repeat_n(s.mean, h)).collect();
    let scaled = tape.mul(out, &Tensor::new(out.shape().to_vec(), stds)?)?;
    tape.add(&scaled, &Tensor::new(out.shape().to_vec(), means)?)
}

/// Point forecasts for many series; inference runs in chunks of at most
/// 256 windows.
pub fn predict_batch(
    weights: &WeightStore,
    config: &ModelConfig,
    series: &[TimeSeries],
    horizon: usize,
) -> Result<Vec<PointForecast>> {
    if horizon == 0 || horizon > config.max_horizon {
        return Err(Error::config(format!(
            "horizon {horizon} exceeds the model maximum {}",
            config.max_horizon
        )));
    }
    let future = if config.n_exo_channels > 0 { horizon } else { 0 };
    let mut out = Vec::with_capacity(series.len());
    for chunk in series.chunks(INFER_CHUNK) {
        let windows = chunk
            .iter()
            .map(|s| {
                if s.exogenous().len() != config.n_exo_channels {
                    return Err(Error::data(format!(
                        "series '{}' has {} covariates, model expects {}",
                        s.id(),
                        s.exogenous().len(),
                        config.n_exo_channels
                    )));
                }
                window_at(s, s.len(), config.input_length, future)
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = ForecastWindowBatch::from_windows(&windows)?;
        let pred = forward(weights, config, &batch, horizon, Mode::Infer, 0)?;
        for (s, row) in chunk.iter().zip(pred.data().chunks(horizon)) {
            out.push(PointForecast {
                series_id: s.id().to_string(),
                values: row.to_vec(),
            });
        }
    }
    Ok(out)
}

pub fn predict_series(weights: &WeightStore, config: &ModelConfig, series: &TimeSeries, horizon: usize) -> Result<PointForecast> {
    Ok(predict_batch(weights, config, std::slice::from_ref(series), horizon)?
        .pop()
        .expect("one forecast per series"))
}

/// The network as a [`Forecaster`].
#[derive(Debug, Clone)]
pub struct TgptForecaster {
    pub weights: Arc<WeightStore>,
    pub config: ModelConfig,
}

impl TgptForecaster {
    pub fn new(weights: WeightStore, config: ModelConfig) -> Result<Self> {
        weights.validate(&config)?;
        Ok(TgptForecaster {
            weights: Arc::new(weights),
            config,
        })
    }
}

impl Forecaster for TgptForecaster {
    fn name(&self) -> String {
        "TGPT".to_string()
    }

    fn forecast(&self, series: &TimeSeries, horizon: usize) -> Result<PointForecast> {
        predict_series(&self.weights, &self.config, series, horizon)
    }

    fn forecast_batch(&self, series: &[TimeSeries], horizon: usize) -> Result<Vec<PointForecast>> {
        predict_batch(&self.weights, &self.config, series, horizon)
    }
}
