use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tempfile::TempDir;
use tgpt_core::checkpoint::{load_checkpoint, save_weights};
use tgpt_core::model::{init_weights, predict_batch, ModelConfig};
use tgpt_core::timeseries::{Frequency, TimeSeries};
use tgpt_service::{router, AppState, Limits, ServiceConfig};
use tower::ServiceExt;

const TOKEN: &str = "secret-token";

fn model_config() -> ModelConfig {
    ModelConfig {
        input_length: 24,
        max_horizon: 12,
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ff_dim: 16,
        dropout: 0.1,
        n_exo_channels: 0,
    }
}

fn write_model(dir: &Path) -> PathBuf {
    let path = dir.join("model.tgpt");
    let cfg = model_config();
    save_weights(&init_weights(&cfg, 5).unwrap(), &cfg, &path).unwrap();
    path
}

fn app_with(model_path: Option<PathBuf>, limits: Limits) -> Router {
    let config = ServiceConfig {
        model_path,
        token: TOKEN.into(),
        bind: "127.0.0.1:0".into(),
        limits,
    };
    router(Arc::new(AppState::new(&config)))
}

fn app(dir: &TempDir) -> Router {
    app_with(Some(write_model(dir.path())), Limits::default())
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn post(body: impl Into<Body>, token: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/v1/forecast").header("content-type", "application/json");
    if let Some(t) = token {
        b = b.header("authorization", format!("Bearer {t}"));
    }
    b.body(body.into()).unwrap()
}

async fn forecast(app: &Router, body: &Value) -> (StatusCode, Value) {
    let (status, bytes) = call(app, post(body.to_string(), Some(TOKEN))).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn wave(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|t| 50.0 + 10.0 * (t as f64 * 0.5 + phase).sin() + 0.2 * t as f64).collect()
}

fn two_series(horizon: usize) -> Value {
    json!({
        "freq": "monthly",
        "horizon": horizon,
        "series": [
            {"id": "a", "start": "2020-01", "y": wave(40, 0.0)},
            {"id": "b", "start": "2019-06-01", "y": wave(30, 1.0)}
        ]
    })
}

#[tokio::test]
async fn missing_or_wrong_token_is_unauthorized() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    for token in [None, Some("nope"), Some("")] {
        let (status, body) = call(&app, post(two_series(3).to_string(), token)).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED);
        assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!({"error": "unauthorized"}));
    }
    let basic = Request::post("/v1/forecast")
        .header("authorization", format!("Basic {TOKEN}"))
        .body(Body::from(two_series(3).to_string()))
        .unwrap();
    assert_eq!(call(&app, basic).await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn health_reports_the_checkpoint_version() {
    let dir = TempDir::new().unwrap();
    let path = write_model(dir.path());
    let app = app_with(Some(path.clone()), Limits::default());
    let (status, body) = call(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["model_version"], load_checkpoint(&path).unwrap().version_string());
    assert!(v["uptime_s"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn missing_checkpoint_means_unavailable() {
    let dir = TempDir::new().unwrap();
    let app = app_with(Some(dir.path().join("absent.tgpt")), Limits::default());
    let (status, body) = call(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "unavailable");
    assert!(v["model_version"].is_null());
    assert_eq!(forecast(&app, &two_series(3)).await.0, StatusCode::SERVICE_UNAVAILABLE);
    // authentication is still checked first
    assert_eq!(call(&app, post("{}", None)).await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn point_forecasts_without_levels() {
    let dir = TempDir::new().unwrap();
    let path = write_model(dir.path());
    let app = app_with(Some(path.clone()), Limits::default());
    let (status, v) = forecast(&app, &two_series(7)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let out = v["forecasts"].as_array().unwrap();
    assert_eq!(out.len(), 2);
    for f in out {
        assert_eq!(f["yhat"].as_array().unwrap().len(), 7);
        assert_eq!(f["ds"].as_array().unwrap().len(), 7);
        assert!(f.get("lo").is_none() && f.get("hi").is_none());
    }
    assert_eq!(out[0]["id"], "a");
    assert_eq!(out[0]["ds"][0], "2023-05");
    assert_eq!(out[1]["ds"][6], "2022-06");
    assert!(v["timing_ms"].as_f64().unwrap() >= 0.0);

    // same numbers as calling the model directly
    let ck = load_checkpoint(&path).unwrap();
    let series = vec![
        TimeSeries::from_values("a", Frequency::Monthly, wave(40, 0.0)).unwrap(),
        TimeSeries::from_values("b", Frequency::Monthly, wave(30, 1.0)).unwrap(),
    ];
    let direct = predict_batch(&ck.weights, &ck.config, &series, 7).unwrap();
    for (f, d) in out.iter().zip(direct) {
        let got: Vec<f64> = serde_json::from_value(f["yhat"].clone()).unwrap();
        assert_eq!(got, d.values);
    }
}

#[tokio::test]
async fn intervals_are_keyed_by_level_and_nested() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    let mut body = two_series(6);
    body["levels"] = json!([80, 95]);
    let (status, v) = forecast(&app, &body).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    for f in v["forecasts"].as_array().unwrap() {
        let col = |band: &str, level: &str| -> Vec<f64> { serde_json::from_value(f[band][level].clone()).unwrap() };
        let yhat: Vec<f64> = serde_json::from_value(f["yhat"].clone()).unwrap();
        let (lo80, hi80, lo95, hi95) = (col("lo", "80"), col("hi", "80"), col("lo", "95"), col("hi", "95"));
        for j in 0..6 {
            assert!(lo95[j] <= lo80[j] && lo80[j] <= yhat[j]);
            assert!(yhat[j] <= hi80[j] && hi80[j] <= hi95[j]);
        }
    }
}

#[tokio::test]
async fn identical_requests_give_identical_forecasts() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    let mut body = two_series(12);
    body["levels"] = json!([90]);
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("timing_ms");
        v
    };
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (app, body) = (app.clone(), body.clone());
            tokio::spawn(async move { forecast(&app, &body).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        let (status, v) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(strip(v));
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn schema_violations_name_the_field() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    let cases = [
        (json!({"freq": "monthly", "horizon": 3, "series": [{"id": "a", "start": "2020-01", "y": [1, "x"]}]}), "series[0].y[1]"),
        (json!({"freq": "yearly", "horizon": 3, "series": []}), "freq"),
        (json!({"freq": "monthly", "horizon": -1, "series": []}), "horizon"),
        (json!({"freq": "monthly", "horizon": 3, "series": [], "extra": 1}), "extra"),
        (json!({"freq": "monthly", "horizon": 3, "series": [{"id": "a", "start": "2020-13", "y": [1.0]}]}), "series[0].start"),
        (json!({"freq": "monthly", "series": []}), "."),
    ];
    for (body, path) in cases {
        let (status, v) = forecast(&app, &body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}: {v}");
        assert_eq!(v["path"], path, "{v}");
        assert!(v["detail"].as_str().is_some());
    }
    let (status, bytes) = call(&app, post("{\"freq\": \"monthly\"", Some(TOKEN))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(serde_json::from_slice::<Value>(&bytes).is_ok());
}

#[tokio::test]
async fn semantic_violations_are_unprocessable() {
    let dir = TempDir::new().unwrap();
    let limits = Limits {
        max_series: 2,
        max_points: 50,
    };
    let app = app_with(Some(write_model(dir.path())), limits);
    let series = |id: &str, n: usize| json!({"id": id, "start": "2020-01", "y": wave(n, 0.0)});
    let cases = [
        (json!({"freq": "monthly", "horizon": 13, "series": [series("a", 30)]}), "horizon"),
        (json!({"freq": "monthly", "horizon": 0, "series": [series("a", 30)]}), "horizon"),
        (json!({"freq": "monthly", "horizon": 3, "series": []}), "series"),
        (json!({"freq": "monthly", "horizon": 3, "series": [series("a", 5), series("b", 5), series("c", 5)]}), "series"),
        (json!({"freq": "monthly", "horizon": 3, "series": [series("a", 51)]}), "series[0].y"),
        (json!({"freq": "monthly", "horizon": 3, "series": [series("a", 0)]}), "series[0].y"),
        (json!({"freq": "monthly", "horizon": 3, "series": [series("a", 5), series("a", 6)]}), "series[1].id"),
        (json!({"freq": "monthly", "horizon": 3, "levels": [80], "series": [series("a", 3)]}), "series[0].y"),
        (json!({"freq": "monthly", "horizon": 3, "levels": [100], "series": [series("a", 30)]}), "levels"),
        (
            json!({"freq": "monthly", "horizon": 3, "series": [{"id": "a", "start": "2020-01", "y": [1.0, 2.0], "x": {"promo": [0, 1, 0, 1, 0]}}]}),
            "series[0].x",
        ),
    ];
    for (body, path) in cases {
        let (status, v) = forecast(&app, &body).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}: {v}");
        assert_eq!(v["path"], path, "{v}");
    }
    // enough history for one calibration window
    let ok = json!({"freq": "monthly", "horizon": 3, "levels": [80], "series": [series("a", 4)]});
    assert_eq!(forecast(&app, &ok).await.0, StatusCode::OK);
}

#[tokio::test]
async fn random_bodies_never_crash_the_service() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    let valid = two_series(3).to_string().into_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..10_000 {
        let body: Vec<u8> = match i % 3 {
            0 => (0..rng.random_range(0..200)).map(|_| rng.random()).collect(),
            1 => (0..rng.random_range(0..100))
                .map(|_| b"{}[]\":,0123456789.eE-+truefalsnul \\"[rng.random_range(0..34)])
                .collect(),
            _ => valid[..rng.random_range(0..valid.len())].to_vec(),
        };
        let authed = i % 2 == 0;
        let (status, bytes) = call(&app, post(body.clone(), authed.then_some(TOKEN))).await;
        let expected = if authed {
            StatusCode::BAD_REQUEST
        } else {
            StatusCode::UNAUTHORIZED
        };
        assert_eq!(status, expected, "body {:?}", String::from_utf8_lossy(&body));
        assert!(serde_json::from_slice::<Value>(&bytes).is_ok());
    }
    let (status, _) = call(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn requests_never_touch_the_model_file() {
    let dir = TempDir::new().unwrap();
    let path = write_model(dir.path());
    let before = std::fs::read(&path).unwrap();
    let app = app_with(Some(path.clone()), Limits::default());
    let mut body = two_series(5);
    forecast(&app, &body).await;
    body["levels"] = json!([50, 99]);
    forecast(&app, &body).await;
    call(&app, post("garbage", Some(TOKEN))).await;
    call(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    let after = std::fs::read(&path).unwrap();
    assert_eq!(crc32fast::hash(&before), crc32fast::hash(&after));
    assert_eq!(before, after);
}
