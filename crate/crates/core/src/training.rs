//! Pretraining and fine-tuning: window sampling, MAE loss on standardized
//! values, and Adam with a linear learning-rate decay to a fixed fraction of
//! the initial rate.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::rmae;
use crate::model::{
    forward_normalized, init_weights, predict_batch, window_at, BoundWeights, ForecastWindowBatch, Mode,
    ModelConfig, WeightStore,
};
use crate::tensor::{Tape, Tensor};
use crate::timeseries::{Dataset, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    #[serde(rename = "MAE")]
    Mae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_final_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: Loss,
    /// Fewest history points a sampled window may have.
    #[serde(default = "one")]
    pub min_history: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 256,
            lr0: 1e-4,
            lr_final_fraction: 0.12,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: Loss::Mae,
            min_history: 1,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(format!("invalid train config: {msg}")));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return fail("lr0 must be a finite non-negative number");
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return fail("lr_final_fraction must lie in (0, 1]");
        }
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) {
            return fail("adam betas must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive");
        }
        if self.min_history == 0 {
            return fail("min_history must be positive");
        }
        Ok(())
    }

    /// Learning rate for 0-based `step`: `lr0` at the first step, decaying
    /// linearly to `lr_final_fraction * lr0` at the last one.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.lr0;
        }
        let progress = step.min(self.steps - 1) as f64 / (self.steps - 1) as f64;
        self.lr0 * (1.0 - (1.0 - self.lr_final_fraction) * progress)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,lr\n");
        for (i, (l, lr)) in self.losses.iter().zip(&self.lrs).enumerate() {
            out.push_str(&format!("{i},{l},{lr}\n"));
        }
        out
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

/// One bias-corrected Adam update at 0-based `step_index`, using the
/// scheduled learning rate. `grads` must cover exactly the trainable
/// parameters.
pub fn adam_step(
    weights: &mut WeightStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    step_index: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    let names = weights.trainable_names();
    if names.len() != grads.len() || names.iter().any(|n| !grads.contains_key(n)) {
        return Err(Error::config("gradients do not cover exactly the trainable parameters"));
    }
    for (name, g) in grads {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("gradient of {name} (element {i})"),
            });
        }
    }
    let lr = cfg.lr_at(step_index);
    let t = (step_index + 1) as i32;
    let c1 = 1.0 - cfg.adam_beta1.powi(t);
    let c2 = 1.0 - cfg.adam_beta2.powi(t);
    for (name, g) in grads {
        let current = weights.get(name).expect("trainable name");
        let shape = current.shape().to_vec();
        let mut w = current.data().to_vec();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
        }
        weights.set(name, Tensor::new(shape, w)?)?;
    }
    Ok(())
}

/// Random training windows. Each item picks a series uniformly, then a
/// forecast origin uniformly among positions with at least one history point
/// and `h` future points. Returns the batch and the raw `B x h` targets.
pub fn sample_batch(
    ds: &Dataset,
    input_length: usize,
    horizon: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ForecastWindowBatch, Tensor)> {
    sample_batch_with_history(ds, input_length, horizon, batch_size, 1, rng)
}

/// [`sample_batch`] restricted to origins with at least `min_history`
/// history points; series too short for that are skipped.
pub fn sample_batch_with_history(
    ds: &Dataset,
    input_length: usize,
    horizon: usize,
    batch_size: usize,
    min_history: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ForecastWindowBatch, Tensor)> {
    let min_history = min_history.max(1);
    let pool: Vec<&TimeSeries> = ds.series().iter().filter(|s| s.len() >= horizon + min_history).collect();
    if pool.is_empty() {
        return Err(Error::data(format!(
            "no series has the {} observations needed for sampling",
            horizon + min_history
        )));
    }
    let future = if ds.n_exo() > 0 { horizon } else { 0 };
    let mut windows = Vec::with_capacity(batch_size);
    let mut targets = Vec::with_capacity(batch_size * horizon);
    for _ in 0..batch_size {
        let s = pool[rng.random_range(0..pool.len())];
        let cut = rng.random_range(min_history..=s.len() - horizon);
        windows.push(window_at(s, cut, input_length, future)?);
        targets.extend_from_slice(&s.values()[cut..cut + horizon]);
    }
    let batch = ForecastWindowBatch::from_windows(&windows)?;
    Ok((batch, Tensor::new(vec![batch_size, horizon], targets)?))
}

/// Every window with at least `min_history` history points and a full
/// horizon, in series order.
pub fn all_windows(
    ds: &Dataset,
    input_length: usize,
    horizon: usize,
    min_history: usize,
) -> Result<(ForecastWindowBatch, Tensor)> {
    let future = if ds.n_exo() > 0 { horizon } else { 0 };
    let mut windows = Vec::new();
    let mut targets = Vec::new();
    for s in ds.series() {
        for cut in min_history.max(1)..=s.len().saturating_sub(horizon) {
            windows.push(window_at(s, cut, input_length, future)?);
            targets.extend_from_slice(&s.values()[cut..cut + horizon]);
        }
    }
    if windows.is_empty() {
        return Err(Error::data("dataset has no complete windows"));
    }
    let n = windows.len();
    Ok((ForecastWindowBatch::from_windows(&windows)?, Tensor::new(vec![n, horizon], targets)?))
}

/// Inference-mode MAE on standardized values, the quantity the training
/// loss measures without dropout.
pub fn normalized_mae(
    weights: &WeightStore,
    config: &ModelConfig,
    batch: &ForecastWindowBatch,
    targets: &Tensor,
) -> Result<f64> {
    let h = targets.shape()[1];
    let tape = Tape::new();
    let bound = BoundWeights::constant(weights);
    let pred = forward_normalized(&tape, &bound, config, batch, h, Mode::Infer, 0)?;
    let mut total = 0.0;
    for ((p, t), s) in pred.data().chunks(h).zip(targets.data().chunks(h)).zip(&batch.scale) {
        total += p.iter().zip(t).map(|(p, t)| (p - s.normalize(*t)).abs()).sum::<f64>();
    }
    Ok(total / targets.numel() as f64)
}

/// Mean absolute error between the standardized forecast and the targets
/// standardized with each window's scale, with gradients for every
/// trainable parameter.
pub fn loss_and_grads(
    weights: &WeightStore,
    config: &ModelConfig,
    batch: &ForecastWindowBatch,
    targets: &Tensor,
    dropout_seed: u64,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let h = targets.shape()[1];
    let tape = Tape::new();
    let bound = BoundWeights::trainable(&tape, weights);
    let pred = forward_normalized(&tape, &bound, config, batch, h, Mode::Train, dropout_seed)?;
    let norm_targets: Vec<f64> = targets
        .data()
        .chunks(h)
        .zip(&batch.scale)
        .flat_map(|(row, s)| row.iter().map(|v| s.normalize(*v)))
        .collect();
    let diff = tape.sub(&pred, &Tensor::new(targets.shape().to_vec(), norm_targets)?)?;
    let loss = tape.mean_all(&tape.abs(&diff)?)?;
    let value = loss.item()?;
    let grads = tape.backward(&loss)?;
    let mut out = BTreeMap::new();
    for name in weights.trainable_names() {
        let g = match grads.get(bound.get(&name)?) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; weights.get(&name).expect("known").numel()],
        };
        out.insert(name, g);
    }
    Ok((value, out))
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

/// Held-out data for tracking rMAE during fine-tuning.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub history: Dataset,
    pub actuals: Dataset,
    /// Step counts at which to evaluate (0 = before any update).
    pub checkpoints: Vec<usize>,
}

/// rMAE of the model against SeasonalNaive on an [`EvalSet`].
pub fn eval_rmae(weights: &WeightStore, config: &ModelConfig, eval: &EvalSet) -> Result<f64> {
    let h = eval.actuals.series()[0].len();
    let preds = predict_batch(weights, config, eval.history.series(), h)?;
    let base = crate::evaluation::seasonal_naive_forecasts(&eval.history, h)?;
    let actuals: Vec<Vec<f64>> = eval.actuals.series().iter().map(|s| s.values().to_vec()).collect();
    let preds: Vec<Vec<f64>> = preds.into_iter().map(|p| p.values).collect();
    rmae(&actuals, &preds, &base)?.value().ok_or(Error::UndefinedMetric)
}

fn train_loop(
    mut weights: WeightStore,
    config: &ModelConfig,
    ds: &Dataset,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<(WeightStore, LossTrace, Vec<(usize, f64)>)> {
    config.validate()?;
    cfg.validate()?;
    weights.validate(config)?;
    if ds.is_empty() {
        return Err(Error::data("training dataset is empty"));
    }
    if ds.n_exo() != config.n_exo_channels {
        return Err(Error::config(format!(
            "dataset has {} covariates, model expects {}",
            ds.n_exo(),
            config.n_exo_channels
        )));
    }
    let h = config.max_horizon;
    let mut state = AdamState::default();
    let mut trace = LossTrace::default();
    let mut curve = Vec::new();
    let want_eval = |step: usize| eval.filter(|e| e.checkpoints.contains(&step));
    for step in 0..cfg.steps {
        if let Some(e) = want_eval(step) {
            curve.push((step, eval_rmae(&weights, config, e)?));
        }
        let mut rng = step_rng(cfg.seed, step);
        let (batch, targets) =
            sample_batch_with_history(ds, config.input_length, h, cfg.batch_size, cfg.min_history, &mut rng)?;
        let dropout_seed = rng.random::<u64>();
        let (loss, grads) = loss_and_grads(&weights, config, &batch, &targets, dropout_seed)?;
        adam_step(&mut weights, &grads, &mut state, step, cfg)?;
        trace.losses.push(loss);
        trace.lrs.push(cfg.lr_at(step));
    }
    if let Some(e) = want_eval(cfg.steps) {
        curve.push((cfg.steps, eval_rmae(&weights, config, e)?));
    }
    Ok((weights, trace, curve))
}

/// Train from a fresh initialization seeded with `train_cfg.seed`.
pub fn pretrain(ds_source: &Dataset, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<(WeightStore, LossTrace)> {
    let weights = init_weights(model_cfg, train_cfg.seed)?;
    let (w, trace, _) = train_loop(weights, model_cfg, ds_source, train_cfg, None)?;
    Ok((w, trace))
}

/// Continue training from existing weights.
pub fn finetune(
    weights: &WeightStore,
    config: &ModelConfig,
    ds_target: &Dataset,
    train_cfg: &TrainConfig,
) -> Result<(WeightStore, LossTrace)> {
    let (w, trace, _) = train_loop(weights.clone(), config, ds_target, train_cfg, None)?;
    Ok((w, trace))
}

/// Fine-tune and record `(steps, rMAE)` at each of `eval.checkpoints`.
pub fn finetune_with_eval(
    weights: &WeightStore,
    config: &ModelConfig,
    ds_target: &Dataset,
    train_cfg: &TrainConfig,
    eval: &EvalSet,
) -> Result<(WeightStore, LossTrace, Vec<(usize, f64)>)> {
    train_loop(weights.clone(), config, ds_target, train_cfg, Some(eval))
}
