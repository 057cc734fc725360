//! Seeded synthetic corpora for training, transfer and calibration checks.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::timeseries::{Dataset, DatasetRole, Frequency, TimeSeries};

fn dataset(freq: Frequency, series: Vec<TimeSeries>, role: DatasetRole) -> Dataset {
    Dataset::new(freq, series, role).expect("generated ids are unique")
}

/// Noise-free constants, linear trends and sinusoids in equal shares.
pub fn simple_shapes(n: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let series = (0..n)
        .map(|i| {
            let level = rng.random_range(-50.0..50.0);
            let values: Vec<f64> = match i % 3 {
                0 => vec![level; len],
                1 => {
                    let slope = rng.random_range(-2.0..2.0);
                    (0..len).map(|t| level + slope * t as f64).collect()
                }
                _ => {
                    let amp = rng.random_range(1.0..10.0);
                    let period = rng.random_range(4..=12) as f64;
                    let phase = rng.random_range(0.0..TAU);
                    (0..len).map(|t| level + amp * (TAU * t as f64 / period + phase).sin()).collect()
                }
            };
            TimeSeries::from_values(format!("shape{i}"), Frequency::Monthly, values).expect("finite")
        })
        .collect();
    dataset(Frequency::Monthly, series, DatasetRole::Source)
}

/// Parameter ranges of a monthly trend + seasonality + noise family.
/// Amplitudes, slopes and noise are relative to the level.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalFamily {
    pub level: (f64, f64),
    pub slope: (f64, f64),
    pub amplitude: (f64, f64),
    /// Weight of the second harmonic relative to the first.
    pub harmonic: (f64, f64),
    pub noise: (f64, f64),
}

impl SeasonalFamily {
    pub fn standard() -> SeasonalFamily {
        SeasonalFamily {
            level: (50.0, 500.0),
            slope: (-0.004, 0.008),
            amplitude: (0.05, 0.25),
            harmonic: (0.0, 0.3),
            noise: (0.01, 0.04),
        }
    }

    /// Steeper trends, a dominant second harmonic and less noise.
    pub fn shifted() -> SeasonalFamily {
        SeasonalFamily {
            level: (50.0, 500.0),
            slope: (0.006, 0.015),
            amplitude: (0.10, 0.30),
            harmonic: (0.8, 1.5),
            noise: (0.005, 0.02),
        }
    }

    /// `n` series of length `len` with ids `{prefix}{i}`.
    pub fn generate(&self, prefix: &str, n: usize, len: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: (f64, f64)| if r.0 < r.1 { rng.random_range(r.0..r.1) } else { r.0 };
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            params.push((
                draw(self.level),
                draw(self.slope),
                draw(self.amplitude),
                draw(self.harmonic),
                draw(self.noise),
                draw((0.0, TAU)),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let series = params
            .into_iter()
            .enumerate()
            .map(|(i, (level, slope, amp, harmonic, noise, phase))| {
                let gauss = Normal::new(0.0, noise * level).expect("positive sigma");
                let values = (0..len)
                    .map(|t| {
                        let x = TAU * t as f64 / 12.0 + phase;
                        let season = x.sin() + harmonic * (2.0 * x).sin();
                        level * (1.0 + slope * t as f64 + amp * season) + gauss.sample(&mut rng)
                    })
                    .collect();
                TimeSeries::from_values(format!("{prefix}{i}"), Frequency::Monthly, values).expect("finite")
            })
            .collect();
        dataset(Frequency::Monthly, series, DatasetRole::Source)
    }
}

/// Independent standard normal noise scaled by `sigma`.
pub fn gaussian_noise(n: usize, len: usize, sigma: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, sigma).expect("valid sigma");
    let series = (0..n)
        .map(|i| {
            let values = (0..len).map(|_| gauss.sample(&mut rng)).collect();
            TimeSeries::from_values(format!("noise{i}"), Frequency::Monthly, values).expect("finite")
        })
        .collect();
    dataset(Frequency::Monthly, series, DatasetRole::Target)
}
