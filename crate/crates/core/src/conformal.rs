//! Split-conformal prediction intervals from rolling-origin residuals, and
//! interval-based anomaly flags.

use serde::Serialize;

use crate::baselines::{Forecaster, PointForecast};
use crate::error::{Error, Result};
use crate::timeseries::{rolling_origins, TimeSeries, Timestamp};

/// Below this many calibration windows residuals are pooled across steps.
pub const POOLING_THRESHOLD: usize = 5;

/// Calibration windows used when the caller does not choose.
pub const DEFAULT_WINDOWS: usize = 10;

/// Sorted absolute residuals, per horizon step or pooled over all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStore {
    residuals: Vec<Vec<f64>>,
    pooled: bool,
    horizon: usize,
    n_windows: usize,
}

impl CalibrationStore {
    /// Build from `per_step[j]` = residuals at horizon step `j`. Negative
    /// entries are taken in absolute value.
    pub fn from_residuals(per_step: Vec<Vec<f64>>, n_windows: usize) -> Result<CalibrationStore> {
        let horizon = per_step.len();
        if horizon == 0 || per_step.iter().any(Vec::is_empty) {
            return Err(Error::data("calibration needs at least one residual per step"));
        }
        if per_step.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::data("calibration residuals must be finite"));
        }
        let pooled = n_windows < POOLING_THRESHOLD;
        let mut residuals = if pooled {
            vec![per_step.into_iter().flatten().collect::<Vec<_>>()]
        } else {
            per_step
        };
        for r in &mut residuals {
            for v in r.iter_mut() {
                *v = v.abs();
            }
            r.sort_by(f64::total_cmp);
        }
        Ok(CalibrationStore {
            residuals,
            pooled,
            horizon,
            n_windows,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn is_pooled(&self) -> bool {
        self.pooled
    }

    /// Sorted residuals used for horizon step `step` (0-based).
    pub fn residuals(&self, step: usize) -> &[f64] {
        if self.pooled {
            &self.residuals[0]
        } else {
            &self.residuals[step]
        }
    }

    /// The ceil((m+1) * level / 100)-th smallest of the `m` residuals for
    /// `step`, clamped to the largest.
    pub fn quantile(&self, step: usize, level: f64) -> f64 {
        let r = self.residuals(step);
        let m = r.len();
        let rank = ((m as f64 + 1.0) * level / 100.0).ceil() as usize;
        r[rank.clamp(1, m) - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalForecast {
    pub point: PointForecast,
    pub levels: Vec<f64>,
    /// `lo[k]` and `hi[k]` belong to `levels[k]`.
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    match levels.iter().find(|l| !(**l > 0.0 && **l < 100.0)) {
        Some(l) => Err(Error::config(format!("coverage level {l} must lie strictly between 0 and 100"))),
        None => Ok(()),
    }
}

/// Symmetric intervals `point -/+ q` per step and level.
pub fn interval(point: &PointForecast, cal: &CalibrationStore, levels: &[f64]) -> Result<IntervalForecast> {
    validate_levels(levels)?;
    if point.horizon() > cal.horizon() {
        return Err(Error::config(format!(
            "forecast horizon {} exceeds calibrated horizon {}",
            point.horizon(),
            cal.horizon()
        )));
    }
    let mut lo = Vec::with_capacity(levels.len());
    let mut hi = Vec::with_capacity(levels.len());
    for &level in levels {
        let q: Vec<f64> = (0..point.horizon()).map(|j| cal.quantile(j, level)).collect();
        lo.push(point.values.iter().zip(&q).map(|(p, q)| p - q).collect());
        hi.push(point.values.iter().zip(&q).map(|(p, q)| p + q).collect());
    }
    Ok(IntervalForecast {
        point: point.clone(),
        levels: levels.to_vec(),
        lo,
        hi,
    })
}

/// Largest window count up to [`DEFAULT_WINDOWS`] that a series of `len`
/// observations supports, or 0 when none fits.
pub fn feasible_windows(len: usize, horizon: usize) -> usize {
    if horizon == 0 {
        return 0;
    }
    (len.saturating_sub(1) / horizon).min(DEFAULT_WINDOWS)
}

/// Absolute residuals `[window][step]` of rolling-origin forecasts over the
/// last `n_windows * horizon` observations, oldest window first.
fn rolling_residuals(
    forecaster: &dyn Forecaster,
    series: &TimeSeries,
    horizon: usize,
    n_windows: usize,
) -> Result<Vec<(usize, Vec<f64>, Vec<f64>)>> {
    let windows = rolling_origins(series, horizon, n_windows)?;
    let future = if series.exogenous().is_empty() { 0 } else { horizon };
    let histories = windows
        .iter()
        .map(|w| series.history(w.cut, future))
        .collect::<Result<Vec<_>>>()?;
    let forecasts = forecaster.forecast_batch(&histories, horizon)?;
    Ok(windows
        .into_iter()
        .zip(forecasts)
        .map(|(w, f)| (w.cut, w.actuals, f.values))
        .collect())
}

/// Residuals of `forecaster` on `n_windows` rolling windows at the end of
/// `series`, each forecast from its pre-cut history only.
pub fn calibrate(
    forecaster: &dyn Forecaster,
    series: &TimeSeries,
    horizon: usize,
    n_windows: usize,
) -> Result<CalibrationStore> {
    let rows = rolling_residuals(forecaster, series, horizon, n_windows)?;
    let per_step = (0..horizon)
        .map(|j| rows.iter().map(|(_, a, f)| (a[j] - f[j]).abs()).collect())
        .collect();
    CalibrationStore::from_residuals(per_step, n_windows)
}

/// Point forecast from the full series plus conformal intervals calibrated
/// on its own recent history.
pub fn forecast_with_intervals(
    forecaster: &dyn Forecaster,
    series: &TimeSeries,
    horizon: usize,
    levels: &[f64],
    n_windows: usize,
) -> Result<IntervalForecast> {
    let point = forecaster.forecast(series, horizon)?;
    let cal = calibrate(forecaster, series, horizon, n_windows)?;
    interval(&point, &cal, levels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnomalyPoint {
    pub index: usize,
    pub timestamp: Timestamp,
    pub actual: f64,
    pub yhat: f64,
    pub lo: f64,
    pub hi: f64,
    pub anomaly: bool,
}

/// Score the final `horizon * n_windows` observations. Each window is
/// forecast from its own history and judged against intervals calibrated on
/// the residuals of the other windows.
pub fn detect_anomalies(
    forecaster: &dyn Forecaster,
    series: &TimeSeries,
    horizon: usize,
    level: f64,
    n_windows: usize,
) -> Result<Vec<AnomalyPoint>> {
    validate_levels(&[level])?;
    if n_windows < 2 {
        return Err(Error::config("anomaly detection needs at least 2 windows"));
    }
    let rows = rolling_residuals(forecaster, series, horizon, n_windows)?;
    let mut out = Vec::with_capacity(horizon * n_windows);
    for (k, (cut, actuals, yhat)) in rows.iter().enumerate() {
        let per_step = (0..horizon)
            .map(|j| {
                rows.iter()
                    .enumerate()
                    .filter(|(i, _)| *i != k)
                    .map(|(_, (_, a, f))| (a[j] - f[j]).abs())
                    .collect()
            })
            .collect();
        let cal = CalibrationStore::from_residuals(per_step, n_windows - 1)?;
        for j in 0..horizon {
            let q = cal.quantile(j, level);
            let (lo, hi) = (yhat[j] - q, yhat[j] + q);
            out.push(AnomalyPoint {
                index: cut + j,
                timestamp: series.timestamp(cut + j),
                actual: actuals[j],
                yhat: yhat[j],
                lo,
                hi,
                anomaly: actuals[j] < lo || actuals[j] > hi,
            });
        }
    }
    Ok(out)
}
