use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tgpt_core::conformal::{feasible_windows, validate_levels};
use tgpt_core::model::ModelConfig;
use tgpt_core::pipeline::{level_label, SeriesForecast};
use tgpt_core::timeseries::{ExoChannel, Frequency, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastRequest {
    pub freq: Frequency,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    pub series: Vec<SeriesInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesInput {
    pub id: String,
    pub start: String,
    pub y: Vec<f64>,
    /// Named covariates, each covering the history plus the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<BTreeMap<String, Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesOutput {
    pub id: String,
    pub ds: Vec<String>,
    pub yhat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<BTreeMap<String, Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub forecasts: Vec<SeriesOutput>,
    pub model_version: String,
    pub timing_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_series: usize,
    pub max_points: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_series: 1000,
            max_points: 10_000,
        }
    }
}

/// A request that failed validation, with the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub schema: bool,
    pub path: String,
    pub message: String,
}

impl Rejection {
    fn semantic(path: impl Into<String>, message: impl Into<String>) -> Self {
        Rejection {
            schema: false,
            path: path.into(),
            message: message.into(),
        }
    }
}

pub fn parse_request(body: &[u8]) -> Result<ForecastRequest, Rejection> {
    let mut de = serde_json::Deserializer::from_slice(body);
    let req: ForecastRequest = serde_path_to_error::deserialize(&mut de).map_err(|e| Rejection {
        schema: true,
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| Rejection {
        schema: true,
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok(req)
}

/// Check a parsed request against the served model and build the series.
pub fn validate(req: &ForecastRequest, config: &ModelConfig, limits: Limits) -> Result<Vec<TimeSeries>, Rejection> {
    if req.horizon == 0 || req.horizon > config.max_horizon {
        return Err(Rejection::semantic(
            "horizon",
            format!("horizon must lie in 1..={}", config.max_horizon),
        ));
    }
    let levels = req.levels.as_deref().unwrap_or(&[]);
    validate_levels(levels).map_err(|e| Rejection::semantic("levels", e.to_string()))?;
    if req.series.is_empty() {
        return Err(Rejection::semantic("series", "at least one series is required"));
    }
    if req.series.len() > limits.max_series {
        return Err(Rejection::semantic(
            "series",
            format!("at most {} series per request", limits.max_series),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(req.series.len());
    for (i, s) in req.series.iter().enumerate() {
        let at = |field: &str| format!("series[{i}].{field}");
        if !seen.insert(s.id.as_str()) {
            return Err(Rejection::semantic(at("id"), format!("duplicate series id '{}'", s.id)));
        }
        if s.y.is_empty() {
            return Err(Rejection::semantic(at("y"), "series has no observations"));
        }
        if s.y.len() > limits.max_points {
            return Err(Rejection::semantic(
                at("y"),
                format!("at most {} points per series", limits.max_points),
            ));
        }
        if let Some(k) = s.y.iter().position(|v| !v.is_finite()) {
            return Err(Rejection::semantic(format!("series[{i}].y[{k}]"), "value is not finite"));
        }
        if !levels.is_empty() && feasible_windows(s.y.len(), req.horizon) == 0 {
            return Err(Rejection::semantic(
                at("y"),
                format!(
                    "intervals need at least {} observations for horizon {}",
                    req.horizon + 1,
                    req.horizon
                ),
            ));
        }
        let start = req.freq.parse_ts(&s.start).map_err(|e| Rejection {
            schema: true,
            path: at("start"),
            message: e.to_string(),
        })?;
        let channels = s.x.clone().unwrap_or_default();
        if channels.len() != config.n_exo_channels {
            return Err(Rejection::semantic(
                at("x"),
                format!("model expects {} covariate channels, got {}", config.n_exo_channels, channels.len()),
            ));
        }
        let need = s.y.len() + req.horizon;
        let mut exogenous = Vec::with_capacity(channels.len());
        for (name, values) in channels {
            if values.len() != need {
                return Err(Rejection::semantic(
                    format!("series[{i}].x.{name}"),
                    format!("covariate needs {need} values (history plus horizon), got {}", values.len()),
                ));
            }
            exogenous.push(ExoChannel { name, values });
        }
        let series = TimeSeries::with_exogenous(s.id.clone(), start, req.freq, s.y.clone(), exogenous)
            .map_err(|e| Rejection::semantic(format!("series[{i}]"), e.to_string()))?;
        out.push(series);
    }
    Ok(out)
}

pub fn render(forecasts: Vec<SeriesForecast>, freq: Frequency, levels: &[f64]) -> Vec<SeriesOutput> {
    forecasts
        .into_iter()
        .map(|f| {
            let bands = |rows: Vec<Vec<f64>>| {
                (!levels.is_empty()).then(|| levels.iter().map(|l| level_label(*l)).zip(rows).collect())
            };
            SeriesOutput {
                ds: f.timestamps.iter().map(|t| freq.format_ts(*t)).collect(),
                lo: bands(f.lo),
                hi: bands(f.hi),
                id: f.id,
                yhat: f.yhat,
            }
        })
        .collect()
}
