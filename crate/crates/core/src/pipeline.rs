//! Point forecasts plus optional conformal intervals for many series, and
//! their long-format CSV rendering.

use std::io::Write;

use crate::baselines::Forecaster;
use crate::conformal::{calibrate, feasible_windows, interval, validate_levels};
use crate::error::{Error, Result};
use crate::timeseries::{Frequency, TimeSeries, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesForecast {
    pub id: String,
    pub timestamps: Vec<Timestamp>,
    pub yhat: Vec<f64>,
    /// One row per requested level; empty when no levels were requested or
    /// calibration failed.
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
    pub calibration_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastRequest {
    pub horizon: usize,
    pub levels: Vec<f64>,
    /// Calibration windows per series; `None` uses as many as the series
    /// supports, up to the default.
    pub calib_windows: Option<usize>,
}

pub fn forecast_all(forecaster: &dyn Forecaster, series: &[TimeSeries], req: &ForecastRequest) -> Result<Vec<SeriesForecast>> {
    if req.horizon == 0 {
        return Err(Error::config("horizon must be positive"));
    }
    validate_levels(&req.levels)?;
    if req.calib_windows == Some(0) {
        return Err(Error::config("calibration windows must be positive"));
    }
    let points = forecaster.forecast_batch(series, req.horizon)?;
    let mut out = Vec::with_capacity(series.len());
    for (s, point) in series.iter().zip(points) {
        let mut result = SeriesForecast {
            id: s.id().to_string(),
            timestamps: s.future_timestamps(req.horizon),
            yhat: point.values.clone(),
            lo: Vec::new(),
            hi: Vec::new(),
            calibration_error: None,
        };
        if !req.levels.is_empty() {
            let windows = req.calib_windows.unwrap_or_else(|| feasible_windows(s.len(), req.horizon));
            let intervals = if windows == 0 {
                Err(Error::InsufficientData {
                    series: s.id().to_string(),
                    needed: req.horizon + 1,
                    got: s.len(),
                })
            } else {
                calibrate(forecaster, s, req.horizon, windows).and_then(|cal| interval(&point, &cal, &req.levels))
            };
            match intervals {
                Ok(iv) => {
                    result.lo = iv.lo;
                    result.hi = iv.hi;
                }
                Err(e) => result.calibration_error = Some(e.to_string()),
            }
        }
        out.push(result);
    }
    Ok(out)
}

/// Column suffix for a coverage level: `80` or `97.5`.
pub fn level_label(level: f64) -> String {
    format!("{level}")
}

/// `unique_id,ds,yhat[,lo_L,hi_L...]`; interval cells are empty for series
/// whose calibration failed.
pub fn write_forecast_csv<W: Write>(
    forecasts: &[SeriesForecast],
    freq: Frequency,
    levels: &[f64],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unique_id".to_string(), "ds".into(), "yhat".into()];
    for l in levels {
        header.push(format!("lo_{}", level_label(*l)));
        header.push(format!("hi_{}", level_label(*l)));
    }
    w.write_record(&header).map_err(csv_io)?;
    for f in forecasts {
        for (j, (ts, y)) in f.timestamps.iter().zip(&f.yhat).enumerate() {
            let mut row = vec![f.id.clone(), freq.format_ts(*ts), y.to_string()];
            for k in 0..levels.len() {
                match (f.lo.get(k), f.hi.get(k)) {
                    (Some(lo), Some(hi)) => {
                        row.push(lo[j].to_string());
                        row.push(hi[j].to_string());
                    }
                    _ => row.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
