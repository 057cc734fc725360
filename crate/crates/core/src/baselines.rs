//! Classical per-series forecasters: benchmark competitors and the
//! normalization base of the relative metrics.
//!
//! Every model is split into a `fit` step (estimating parameters from the
//! history) and a `predict` step so the benchmark harness can time them
//! separately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;

/// Smoothing constant for both Croston recursions.
pub const CROSTON_ALPHA: f64 = 0.1;

/// One-sided 95% normal quantile; the seasonality test is a two-sided 90% test.
const SEASONAL_TEST_Z: f64 = 1.644_853_626_951_472_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointForecast {
    pub series_id: String,
    pub values: Vec<f64>,
}

impl PointForecast {
    pub fn horizon(&self) -> usize {
        self.values.len()
    }
}

/// Anything that maps a history to a point forecast.
pub trait Forecaster: Send + Sync {
    fn name(&self) -> String;

    fn forecast(&self, series: &TimeSeries, horizon: usize) -> Result<PointForecast>;

    /// Forecast many series at once. Global models override this to batch.
    fn forecast_batch(&self, series: &[TimeSeries], horizon: usize) -> Result<Vec<PointForecast>> {
        series.iter().map(|s| self.forecast(s, horizon)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    Zero,
    HistoricAverage,
    SeasonalNaive { season_length: usize },
    Theta { season_length: usize },
    Croston,
}

/// Parameters estimated by [`Baseline::fit`].
#[derive(Debug, Clone, PartialEq)]
pub enum FittedBaseline {
    Zero,
    Constant(f64),
    Seasonal(Vec<f64>),
    Theta(ThetaFit),
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Zero => "ZeroModel",
            Baseline::HistoricAverage => "HistoricAverage",
            Baseline::SeasonalNaive { .. } => "SeasonalNaive",
            Baseline::Theta { .. } => "Theta",
            Baseline::Croston => "CrostonClassic",
        }
    }

    pub fn fit(&self, history: &[f64]) -> Result<FittedBaseline> {
        if history.is_empty() && *self != Baseline::Zero {
            return Err(Error::data("cannot fit a baseline on an empty history"));
        }
        Ok(match *self {
            Baseline::Zero => FittedBaseline::Zero,
            Baseline::HistoricAverage => {
                FittedBaseline::Constant(history.iter().sum::<f64>() / history.len() as f64)
            }
            Baseline::SeasonalNaive { season_length } => {
                if season_length == 0 || history.len() < season_length {
                    return Err(Error::data(format!(
                        "seasonal naive needs at least {season_length} observations, got {}",
                        history.len()
                    )));
                }
                FittedBaseline::Seasonal(history[history.len() - season_length..].to_vec())
            }
            Baseline::Theta { season_length } => FittedBaseline::Theta(ThetaFit::fit(history, season_length)),
            Baseline::Croston => FittedBaseline::Constant(croston_rate(history)?),
        })
    }
}

impl FittedBaseline {
    pub fn predict(&self, horizon: usize) -> Vec<f64> {
        match self {
            FittedBaseline::Zero => vec![0.0; horizon],
            FittedBaseline::Constant(c) => vec![*c; horizon],
            FittedBaseline::Seasonal(last) => (0..horizon).map(|j| last[j % last.len()]).collect(),
            FittedBaseline::Theta(fit) => fit.predict(horizon),
        }
    }
}

impl Forecaster for Baseline {
    fn name(&self) -> String {
        Baseline::name(self).to_string()
    }

    fn forecast(&self, series: &TimeSeries, horizon: usize) -> Result<PointForecast> {
        let fitted = self.fit(series.values()).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("series '{}': {msg}", series.id())),
            other => other,
        })?;
        Ok(PointForecast {
            series_id: series.id().to_string(),
            values: fitted.predict(horizon),
        })
    }
}

pub fn zero_model(series: &TimeSeries, horizon: usize) -> PointForecast {
    PointForecast {
        series_id: series.id().to_string(),
        values: vec![0.0; horizon],
    }
}

pub fn historic_average(series: &TimeSeries, horizon: usize) -> Result<PointForecast> {
    Baseline::HistoricAverage.forecast(series, horizon)
}

pub fn seasonal_naive(series: &TimeSeries, horizon: usize, season_length: usize) -> Result<PointForecast> {
    Baseline::SeasonalNaive { season_length }.forecast(series, horizon)
}

pub fn theta(series: &TimeSeries, horizon: usize, season_length: usize) -> Result<PointForecast> {
    Baseline::Theta { season_length }.forecast(series, horizon)
}

pub fn croston_classic(series: &TimeSeries, horizon: usize) -> Result<PointForecast> {
    Baseline::Croston.forecast(series, horizon)
}

/// Final level of simple exponential smoothing started at the first value.
fn ses_level(xs: &[f64], alpha: f64) -> f64 {
    xs[1..].iter().fold(xs[0], |level, x| level + alpha * (x - level))
}

fn croston_rate(history: &[f64]) -> Result<f64> {
    let mut sizes = Vec::new();
    let mut intervals = Vec::new();
    let mut last = None;
    for (i, &y) in history.iter().enumerate() {
        if y != 0.0 {
            sizes.push(y);
            intervals.push(match last {
                Some(prev) => (i - prev) as f64,
                None => (i + 1) as f64,
            });
            last = Some(i);
        }
    }
    if sizes.is_empty() {
        return Err(Error::data("Croston needs at least one nonzero observation"));
    }
    Ok(ses_level(&sizes, CROSTON_ALPHA) / ses_level(&intervals, CROSTON_ALPHA))
}

/// Fitted state of the Theta method.
///
/// The (optionally deseasonalized) series is split into the theta=0 line
/// (its least-squares trend) and the theta=2 line `2y - trend`. The theta=2
/// line is extrapolated with simple exponential smoothing and the forecast is
/// the average of both extrapolations, reseasonalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    pub intercept: f64,
    pub slope: f64,
    pub alpha: f64,
    pub level: f64,
    pub n: usize,
    /// Multiplicative seasonal indices by position `t mod s`, when the
    /// seasonality test passed.
    pub seasonal_indices: Option<Vec<f64>>,
}

impl ThetaFit {
    pub fn fit(history: &[f64], season_length: usize) -> ThetaFit {
        let n = history.len();
        let seasonal_indices = if season_length > 1 && n >= (2 * season_length).max(3) && is_seasonal(history, season_length) {
            multiplicative_indices(history, season_length)
        } else {
            None
        };
        let adjusted: Vec<f64> = match &seasonal_indices {
            Some(idx) => history
                .iter()
                .enumerate()
                .map(|(t, y)| y / idx[t % season_length])
                .collect(),
            None => history.to_vec(),
        };
        let (intercept, slope) = least_squares_line(&adjusted);
        let theta2: Vec<f64> = adjusted
            .iter()
            .enumerate()
            .map(|(t, y)| 2.0 * y - (intercept + slope * t as f64))
            .collect();
        let alpha = best_ses_alpha(&theta2);
        ThetaFit {
            intercept,
            slope,
            alpha,
            level: ses_level(&theta2, alpha),
            n,
            seasonal_indices,
        }
    }

    pub fn predict(&self, horizon: usize) -> Vec<f64> {
        (1..=horizon)
            .map(|j| {
                let t = self.n - 1 + j;
                let line = self.intercept + self.slope * t as f64;
                let f = 0.5 * line + 0.5 * self.level;
                match &self.seasonal_indices {
                    Some(idx) => f * idx[t % idx.len()],
                    None => f,
                }
            })
            .collect()
    }
}

/// Ordinary least squares on `t = 0..n`; a single point has slope 0.
fn least_squares_line(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in ys.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (y_mean - slope * t_mean, slope)
}

/// Grid search over alpha in {0.01, ..., 0.99} minimizing the in-sample
/// one-step-ahead squared error. Ties keep the smaller alpha.
fn best_ses_alpha(xs: &[f64]) -> f64 {
    let mut best = (f64::INFINITY, 0.01);
    for k in 1..=99 {
        let alpha = k as f64 / 100.0;
        let mut level = xs[0];
        let mut sse = 0.0;
        for x in &xs[1..] {
            let err = x - level;
            sse += err * err;
            level += alpha * err;
        }
        if sse < best.0 {
            best = (sse, alpha);
        }
    }
    best.1
}

/// Sample autocorrelations at lags `1..=max_lag`; `None` for a constant series.
pub(crate) fn autocorrelations(ys: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = ys.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let denom: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    if denom <= 0.0 {
        return None;
    }
    Some(
        (1..=max_lag)
            .map(|k| (k..n).map(|t| (ys[t] - mean) * (ys[t - k] - mean)).sum::<f64>() / denom)
            .collect(),
    )
}

fn is_seasonal(ys: &[f64], s: usize) -> bool {
    let Some(acf) = autocorrelations(ys, s) else {
        return false;
    };
    let sum_sq: f64 = acf[..s - 1].iter().map(|r| r * r).sum();
    let limit = SEASONAL_TEST_Z * ((1.0 + 2.0 * sum_sq) / ys.len() as f64).sqrt();
    acf[s - 1].abs() > limit
}

/// Classical multiplicative decomposition indices (centered moving average
/// trend, per-position mean ratio, normalized to mean 1). `None` when the
/// decomposition is not valid for the data.
fn multiplicative_indices(ys: &[f64], s: usize) -> Option<Vec<f64>> {
    if ys.iter().any(|&y| y <= 0.0) {
        return None;
    }
    let n = ys.len();
    let weights: Vec<f64> = if s.is_multiple_of(2) {
        let mut w = vec![1.0 / s as f64; s + 1];
        w[0] = 0.5 / s as f64;
        w[s] = 0.5 / s as f64;
        w
    } else {
        vec![1.0 / s as f64; s]
    };
    let half = weights.len() / 2;
    let mut sums = vec![0.0; s];
    let mut counts = vec![0usize; s];
    for t in half..n.saturating_sub(weights.len() - 1 - half) {
        let trend: f64 = weights.iter().enumerate().map(|(i, w)| w * ys[t + i - half]).sum();
        if trend <= 0.0 {
            return None;
        }
        sums[t % s] += ys[t] / trend;
        counts[t % s] += 1;
    }
    if counts.contains(&0) {
        return None;
    }
    let raw: Vec<f64> = sums.iter().zip(&counts).map(|(sum, c)| sum / *c as f64).collect();
    let mean = raw.iter().sum::<f64>() / s as f64;
    let idx: Vec<f64> = raw.iter().map(|r| r / mean).collect();
    idx.iter().all(|v| v.is_finite() && *v > 0.0).then_some(idx)
}
