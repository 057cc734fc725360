//! Gradient-check suite shared by the autodiff tests and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgpt_core::model::{forward_normalized, init_weights, BoundWeights, ForecastWindowBatch, Mode, ModelConfig, WeightStore};
use tgpt_core::tensor::{grad_check_many, Tape, Tensor};
use tgpt_core::Result;

pub const STEP: f64 = 1e-5;
pub const POINTS: usize = 10;

pub fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.random_range(1..=3);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Contract `out` with fixed, position-dependent weights so the checked
/// scalar depends on every output entry differently.
pub fn project(tape: &Tape, out: &Tensor) -> Result<Tensor> {
    let w: Vec<f64> = (0..out.numel()).map(|i| ((i as f64) * 0.7 + 0.3).sin() + 1.1).collect();
    let w = Tensor::new(out.shape().to_vec(), w)?;
    tape.sum_all(&tape.mul(out, &w)?)
}

/// Worst relative error of `f` over `POINTS` random inputs from `gen`.
fn worst<G, F>(seed: u64, gen: G, f: F) -> f64
where
    G: Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..POINTS)
        .map(|_| {
            let pts = gen(&mut rng);
            grad_check_many(|tape, xs| project(tape, &f(tape, xs)?), &pts, STEP).unwrap()
        })
        .fold(0.0, f64::max)
}

fn unary(lo: f64, hi: f64) -> impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> {
    move |rng| {
        let s = random_shape(rng);
        vec![random_tensor(rng, &s, lo, hi)]
    }
}

/// Second operand shaped like a suffix of the first, to exercise broadcasting.
fn binary(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let s = random_shape(rng);
    let keep = rng.random_range(1..=s.len());
    let b_shape = s[s.len() - keep..].to_vec();
    vec![random_tensor(rng, &s, -2.0, 2.0), random_tensor(rng, &b_shape, -2.0, 2.0)]
}

fn at_least_2d(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let rank = rng.random_range(2..=3);
    let s: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=4)).collect();
    vec![random_tensor(rng, &s, -1.0, 1.0)]
}

fn batched_matmul(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (b, m, k, n) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
    let a = random_tensor(rng, &[b, m, k], -1.0, 1.0);
    let w = if rng.random_bool(0.5) { vec![k, n] } else { vec![b, k, n] };
    vec![a, random_tensor(rng, &w, -1.0, 1.0)]
}

fn layer_norm_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut s = random_shape(rng);
    let last = s.len() - 1;
    s[last] = rng.random_range(2..=5);
    let d = s[last];
    vec![random_tensor(rng, &s, -2.0, 2.0), random_tensor(rng, &[d], 0.5, 1.5), random_tensor(rng, &[d], -0.5, 0.5)]
}

fn concat_inputs(axis: usize) -> impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> {
    move |rng| {
        let s: Vec<usize> = (0..3).map(|_| rng.random_range(1..=3)).collect();
        let mut s2 = s.clone();
        s2[axis] = rng.random_range(1..=3);
        vec![random_tensor(rng, &s, -1.0, 1.0), random_tensor(rng, &s2, -1.0, 1.0)]
    }
}

/// `(primitive, worst relative error, tolerance)` for every differentiable
/// primitive.
pub fn primitive_suite() -> Vec<(String, f64, f64)> {
    let mut out = vec![
        ("add".to_string(), worst(1, binary, |t, x| t.add(&x[0], &x[1])), 1e-4),
        ("sub".into(), worst(2, binary, |t, x| t.sub(&x[0], &x[1])), 1e-4),
        ("mul".into(), worst(3, binary, |t, x| t.mul(&x[0], &x[1])), 1e-4),
        ("scale".into(), worst(4, unary(-2.0, 2.0), |t, x| t.scale(&x[0], -1.7)), 1e-4),
        ("exp".into(), worst(5, unary(-2.0, 2.0), |t, x| t.exp(&x[0])), 1e-4),
        ("log".into(), worst(6, unary(0.2, 3.0), |t, x| t.log(&x[0])), 1e-4),
        ("sqrt".into(), worst(7, unary(0.2, 3.0), |t, x| t.sqrt(&x[0])), 1e-4),
        ("abs".into(), worst(8, unary(0.1, 2.0), |t, x| t.abs(&t.scale(&x[0], -1.0)?)), 1e-4),
        ("gelu".into(), worst(9, unary(-6.0, 6.0), |t, x| t.gelu(&x[0])), 1e-3),
        ("matmul".into(), worst(10, batched_matmul, |t, x| t.matmul(&x[0], &x[1])), 1e-4),
        ("transpose".into(), worst(11, at_least_2d, |t, x| t.transpose(&x[0])), 1e-4),
        ("reshape".into(), worst(12, unary(-1.0, 1.0), |t, x| t.reshape(&x[0], &[x[0].numel()])), 1e-4),
        (
            "slice".into(),
            worst(14, unary(-1.0, 1.0), |t, x| {
                let axis = x[0].rank() - 1;
                let n = x[0].shape()[axis];
                t.slice(&x[0], axis, n / 2, n)
            }),
            1e-4,
        ),
        ("softmax".into(), worst(15, unary(-3.0, 3.0), |t, x| t.softmax(&x[0])), 1e-4),
        ("layer_norm".into(), worst(16, layer_norm_inputs, |t, x| t.layer_norm(&x[0], &x[1], &x[2], 1e-5)), 1e-4),
        ("reduce_sum".into(), worst(17, unary(-1.0, 1.0), |t, x| t.reduce_sum(&x[0], x[0].rank() - 1)), 1e-4),
        ("reduce_mean".into(), worst(18, unary(-1.0, 1.0), |t, x| t.reduce_mean(&x[0], 0)), 1e-4),
        ("mean_all".into(), worst(19, unary(-1.0, 1.0), |t, x| t.mean_all(&x[0])), 1e-4),
        (
            "gather".into(),
            worst(20, unary(-1.0, 1.0), |t, x| {
                let rows = x[0].shape()[0];
                t.gather(&x[0], &[rows - 1, 0, rows - 1])
            }),
            1e-4,
        ),
    ];
    for axis in 0..3 {
        out.push((
            format!("concat(axis {axis})"),
            worst(13 + 100 * axis as u64, concat_inputs(axis), move |t, x| t.concat(&[&x[0], &x[1]], axis)),
            1e-4,
        ));
    }
    out
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_length: 8,
        max_horizon: 2,
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ff_dim: 8,
        dropout: 0.0,
        n_exo_channels: 0,
    }
}

/// MAE of the network against fixed standardized targets, checked with
/// respect to every trainable parameter.
fn network_error(weights: &WeightStore, config: &ModelConfig, batch: &ForecastWindowBatch, targets: &Tensor) -> f64 {
    let names = weights.trainable_names();
    let points: Vec<Tensor> = names.iter().map(|n| weights.get(n).unwrap().clone()).collect();
    grad_check_many(
        |tape, xs| {
            let mut bound = BoundWeights::constant(weights);
            for (n, x) in names.iter().zip(xs) {
                bound.replace(n, x.clone())?;
            }
            let pred = forward_normalized(tape, &bound, config, batch, targets.shape()[1], Mode::Infer, 0)?;
            tape.mean_all(&tape.abs(&tape.sub(&pred, targets)?)?)
        },
        &points,
        STEP,
    )
    .unwrap()
}

/// Worst relative error of the full encoder-decoder over `POINTS` random
/// weight and input draws.
pub fn network_suite() -> f64 {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_seen: f64 = 0.0;
    for point in 0..POINTS {
        let weights = init_weights(&config, point as u64).unwrap();
        let history = random_tensor(&mut rng, &[2, 8, 1], -2.0, 2.0);
        let batch = ForecastWindowBatch::new(history, None).unwrap();
        let targets = random_tensor(&mut rng, &[2, 2], 3.0, 4.0);
        worst_seen = worst_seen.max(network_error(&weights, &config, &batch, &targets));
    }
    worst_seen
}
