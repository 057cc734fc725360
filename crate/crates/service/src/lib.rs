//! HTTP forecast endpoint serving one checkpoint.
//!
//! `POST /v1/forecast` takes a JSON [`ForecastRequest`] behind a static
//! bearer token and answers with point forecasts plus optional conformal
//! intervals. `GET /health` reports whether a model is loaded.

mod wire;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tgpt_core::checkpoint::load_checkpoint;
use tgpt_core::model::TgptForecaster;
use tgpt_core::pipeline::{forecast_all, ForecastRequest as PipelineRequest};
use tokio::net::TcpListener;

pub use wire::{parse_request, ForecastRequest, ForecastResponse, Limits, Rejection, SeriesInput, SeriesOutput};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
const BODY_LIMIT: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub model_path: Option<PathBuf>,
    pub token: String,
    pub bind: String,
    pub limits: Limits,
}

impl ServiceConfig {
    /// Reads `TGPT_MODEL_PATH`, `TGPT_TOKEN` and `TGPT_BIND`.
    pub fn from_env() -> Result<ServiceConfig, String> {
        let token = std::env::var("TGPT_TOKEN").unwrap_or_default();
        if token.is_empty() {
            return Err("TGPT_TOKEN must be set to a non-empty token".into());
        }
        Ok(ServiceConfig {
            model_path: std::env::var_os("TGPT_MODEL_PATH").map(PathBuf::from),
            token,
            bind: std::env::var("TGPT_BIND").unwrap_or_else(|_| DEFAULT_BIND.to_string()),
            limits: Limits::default(),
        })
    }
}

struct LoadedModel {
    forecaster: TgptForecaster,
    version: String,
}

/// Immutable per-process state shared by all requests.
pub struct AppState {
    model: Option<LoadedModel>,
    load_error: Option<String>,
    token: String,
    limits: Limits,
    started: Instant,
}

impl AppState {
    /// Loads the checkpoint; a missing or invalid file leaves the service
    /// running but unavailable.
    pub fn new(config: &ServiceConfig) -> AppState {
        let loaded = match &config.model_path {
            None => Err("no model path configured".to_string()),
            Some(path) => load_checkpoint(path)
                .and_then(|ck| {
                    let version = ck.version_string();
                    TgptForecaster::new(ck.weights, ck.config).map(|forecaster| LoadedModel { forecaster, version })
                })
                .map_err(|e| format!("{}: {e}", path.display())),
        };
        let (model, load_error) = match loaded {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e)),
        };
        AppState {
            model,
            load_error,
            token: config.token.clone(),
            limits: config.limits,
            started: Instant::now(),
        }
    }

    pub fn model_version(&self) -> Option<&str> {
        self.model.as_ref().map(|m| m.version.as_str())
    }

    pub fn load_error(&self) -> Option<&str> {
        self.load_error.as_deref()
    }

    fn authorized(&self, headers: &HeaderMap) -> bool {
        let Some(value) = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) else {
            return false;
        };
        let Some((scheme, token)) = value.split_once(' ') else {
            return false;
        };
        scheme.eq_ignore_ascii_case("bearer") && constant_time_eq(token.trim().as_bytes(), self.token.as_bytes())
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/forecast", post(forecast))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let uptime_s = state.started.elapsed().as_secs_f64();
    match state.model_version() {
        Some(version) => Json(json!({"status": "ok", "model_version": version, "uptime_s": uptime_s})).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({
                "status": "unavailable",
                "model_version": null,
                "uptime_s": uptime_s,
                "error": state.load_error,
            })),
        )
            .into_response(),
    }
}

fn error(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

async fn forecast(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    if !state.authorized(&headers) {
        return error(StatusCode::UNAUTHORIZED, json!({"error": "unauthorized"}));
    }
    if state.model.is_none() {
        return error(StatusCode::SERVICE_UNAVAILABLE, json!({"error": "model not loaded"}));
    }
    let req = match parse_request(&body) {
        Ok(r) => r,
        Err(r) => return rejection(r),
    };
    let worker = Arc::clone(&state);
    let result = tokio::task::spawn_blocking(move || run_forecast(&worker, &req)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(r)) => rejection(r),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": format!("worker failed: {e}")})),
    }
}

fn rejection(r: Rejection) -> Response {
    let status = if r.schema {
        StatusCode::BAD_REQUEST
    } else {
        StatusCode::UNPROCESSABLE_ENTITY
    };
    let kind = if r.schema { "invalid request" } else { "unprocessable request" };
    error(status, json!({"error": kind, "path": r.path, "detail": r.message}))
}

/// Forecast a parsed request with the loaded model.
pub fn run_forecast(state: &AppState, req: &ForecastRequest) -> Result<ForecastResponse, Rejection> {
    let clock = Instant::now();
    let model = state.model.as_ref().ok_or_else(|| Rejection {
        schema: false,
        path: ".".into(),
        message: "model not loaded".into(),
    })?;
    let series = wire::validate(req, &model.forecaster.config, state.limits)?;
    let levels = req.levels.clone().unwrap_or_default();
    let pipeline_req = PipelineRequest {
        horizon: req.horizon,
        levels: levels.clone(),
        calib_windows: None,
    };
    let unprocessable = |path: String, message: String| Rejection {
        schema: false,
        path,
        message,
    };
    let forecasts = forecast_all(&model.forecaster, &series, &pipeline_req)
        .map_err(|e| unprocessable("series".into(), e.to_string()))?;
    if let Some((i, f)) = forecasts.iter().enumerate().find(|(_, f)| f.calibration_error.is_some()) {
        return Err(unprocessable(format!("series[{i}]"), f.calibration_error.clone().unwrap_or_default()));
    }
    Ok(ForecastResponse {
        forecasts: wire::render(forecasts, req.freq, &levels),
        model_version: model.version.clone(),
        timing_ms: clock.elapsed().as_secs_f64() * 1e3,
    })
}

/// Serve until Ctrl-C.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub async fn bind(addr: &str) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}
