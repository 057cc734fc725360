use std::collections::BTreeMap;

use tgpt_core::model::{init_weights, predict_batch, ModelConfig, WeightStore};
use tgpt_core::synthetic::simple_shapes;
use tgpt_core::tensor::Tensor;
use tgpt_core::training::{adam_step, all_windows, finetune, loss_and_grads, AdamState, TrainConfig};

#[test]
fn adam_matches_scalar_recursion() {
    let cfg = TrainConfig {
        steps: 100,
        lr0: 0.05,
        ..TrainConfig::default()
    };
    let g = 0.37;
    let mut store = WeightStore::from_map(BTreeMap::from([("x".to_string(), Tensor::scalar(1.5))]));
    let mut state = AdamState::default();
    let (mut x, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
    for step in 0..100 {
        adam_step(&mut store, &BTreeMap::from([("x".to_string(), vec![g])]), &mut state, step, &cfg).unwrap();
        let lr = 0.05 * (1.0 - 0.88 * step as f64 / 99.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mhat = m / (1.0 - 0.9f64.powi(step as i32 + 1));
        let vhat = v / (1.0 - 0.999f64.powi(step as i32 + 1));
        x -= lr * mhat / (vhat.sqrt() + 1e-8);
        let got = store.get("x").unwrap().item().unwrap();
        assert!((got - x).abs() < 1e-12, "step {step}: {got} vs {x}");
    }
}

fn small() -> ModelConfig {
    ModelConfig {
        input_length: 24,
        max_horizon: 12,
        d_model: 16,
        n_heads: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ff_dim: 32,
        dropout: 0.0,
        n_exo_channels: 0,
    }
}

#[test]
fn loss_on_a_frozen_batch_decreases() {
    let config = small();
    let ds = simple_shapes(32, 36, 1);
    let (batch, targets) = all_windows(&ds, 24, 12, 24).unwrap();
    let cfg = TrainConfig {
        steps: 10,
        lr0: 1e-3,
        ..TrainConfig::default()
    };
    let mut weights = init_weights(&config, 0).unwrap();
    let mut state = AdamState::default();
    let mut losses = Vec::new();
    for step in 0..=10 {
        let (loss, grads) = loss_and_grads(&weights, &config, &batch, &targets, 0).unwrap();
        losses.push(loss);
        if step < 10 {
            adam_step(&mut weights, &grads, &mut state, step, &cfg).unwrap();
        }
    }
    let decreases = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(decreases >= 8, "{losses:?}");
}

#[test]
fn zero_finetune_steps_keep_zero_shot_forecasts() {
    let config = small();
    let ds = simple_shapes(6, 40, 3);
    let w = init_weights(&config, 4).unwrap();
    let cfg = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let (tuned, trace) = finetune(&w, &config, &ds, &cfg).unwrap();
    assert!(trace.is_empty());
    assert_eq!(
        predict_batch(&tuned, &config, ds.series(), 12).unwrap(),
        predict_batch(&w, &config, ds.series(), 12).unwrap()
    );
}

#[test]
fn recorded_schedule_ends_at_final_fraction() {
    let config = ModelConfig {
        d_model: 8,
        ff_dim: 8,
        ..small()
    };
    let cfg = TrainConfig {
        steps: 7,
        batch_size: 2,
        lr0: 3e-3,
        ..TrainConfig::default()
    };
    let (_, trace) = tgpt_core::training::pretrain(&simple_shapes(3, 40, 0), &config, &cfg).unwrap();
    assert_eq!(trace.lrs[0], 3e-3);
    assert!((trace.lrs[6] - 0.12 * 3e-3).abs() < 1e-12);
    assert!(trace.lrs.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(trace.to_csv().lines().count(), 8);
}
