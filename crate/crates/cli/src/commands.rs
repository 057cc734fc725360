use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tgpt_core::baselines::Forecaster;
use tgpt_core::checkpoint::{load_checkpoint, save_weights, Checkpoint};
use tgpt_core::conformal::detect_anomalies;
use tgpt_core::evaluation::{baseline_by_name, render_report, run_benchmark, BenchModel, BenchOptions, ReportFormat, MODEL_NAMES};
use tgpt_core::model::{ModelConfig, TgptForecaster};
use tgpt_core::pipeline::{forecast_all, write_forecast_csv, ForecastRequest};
use tgpt_core::timeseries::{infer_frequency, ingest_long_csv, Dataset, FillPolicy, Frequency};
use tgpt_core::training::{finetune, pretrain, LossTrace, TrainConfig};
use tgpt_service::{AppState, Limits, ServiceConfig};

use crate::failure::Failure;
use crate::{Cli, Command, DataArgs};

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(cli: Cli) -> Outcome {
    let seed = cli.seed;
    match cli.command {
        Command::Pretrain {
            data,
            model_config,
            train_config,
            out,
        } => {
            let ds = load_data(&data)?;
            let model_cfg = match model_config {
                Some(path) => read_model_config(&path)?,
                None => ModelConfig {
                    n_exo_channels: ds.n_exo(),
                    ..ModelConfig::for_frequency(ds.freq())
                },
            };
            let train_cfg = read_train_config(train_config.as_deref(), seed)?;
            let (weights, trace) = pretrain(&ds, &model_cfg, &train_cfg)?;
            write_checkpoint(&weights, &model_cfg, &trace, &out)
        }
        Command::Finetune {
            model,
            data,
            train_config,
            out,
        } => {
            let ck = load_model(&model)?;
            let ds = load_data(&data)?;
            let train_cfg = read_train_config(train_config.as_deref(), seed)?;
            let (weights, trace) = finetune(&ck.weights, &ck.config, &ds, &train_cfg)?;
            write_checkpoint(&weights, &ck.config, &trace, &out)
        }
        Command::Forecast {
            model,
            data,
            h,
            level,
            calib_windows,
            out,
        } => {
            let ck = load_model(&model)?;
            let ds = load_data(&data)?;
            let forecaster = TgptForecaster::new(ck.weights, ck.config)?;
            let req = ForecastRequest {
                horizon: h,
                levels: level,
                calib_windows,
            };
            let forecasts = forecast_all(&forecaster, ds.series(), &req)?;
            for f in &forecasts {
                if let Some(e) = &f.calibration_error {
                    warn("calibration", format!("series '{}': no intervals: {e}", f.id));
                }
            }
            let mut buf = Vec::new();
            write_forecast_csv(&forecasts, ds.freq(), &req.levels, &mut buf)?;
            write_file(&out, &buf)
        }
        Command::Evaluate {
            data,
            models,
            model,
            train_config,
            h,
            season_length,
            out,
            format,
            timing_runs,
            no_timing,
        } => {
            let format: ReportFormat = format.parse().map_err(|e: tgpt_core::Error| Failure::Usage(e.to_string()))?;
            let ds = with_season(load_data(&data)?, season_length)?;
            let finetune_cfg = train_config.map(|p| read_train_config(Some(&p), seed)).transpose()?;
            let mut checkpoint = None;
            let mut entries = Vec::with_capacity(models.len());
            for name in &models {
                let name = name.trim();
                if name == "tgpt" {
                    let path = model.as_ref().ok_or_else(|| Failure::Usage("--models tgpt requires --model".into()))?;
                    let ck: &Checkpoint = match &checkpoint {
                        Some(ck) => ck,
                        None => checkpoint.insert(load_model(path)?),
                    };
                    entries.push(BenchModel::Tgpt {
                        weights: Arc::new(ck.weights.clone()),
                        config: ck.config.clone(),
                        finetune: finetune_cfg.clone(),
                    });
                } else {
                    entries.push(BenchModel::Baseline(baseline(name, ds.season_length())?));
                }
            }
            let opts = BenchOptions {
                horizon: h,
                timing_runs,
            };
            let mut report = run_benchmark(&ds, &entries, &opts)?;
            if no_timing {
                for m in &mut report.models {
                    m.fit_ms = 0.0;
                    m.predict_ms = 0.0;
                }
            }
            for e in &report.excluded {
                warn("data", format!("series '{}' excluded: {}", e.id, e.reason));
            }
            write_file(&out, render_report(&report, format).as_bytes())
        }
        Command::Anomalies {
            data,
            model,
            forecaster,
            h,
            level,
            windows,
            season_length,
            out,
        } => {
            let ds = with_season(load_data(&data)?, season_length)?;
            let forecaster: Box<dyn Forecaster> = if forecaster == "tgpt" {
                let path = model.ok_or_else(|| Failure::Usage("--forecaster tgpt requires --model".into()))?;
                let ck = load_model(&path)?;
                Box::new(TgptForecaster::new(ck.weights, ck.config)?)
            } else {
                Box::new(baseline(&forecaster, ds.season_length())?)
            };
            let h = h.unwrap_or(ds.freq().default_horizon());
            if h == 0 {
                return Err(Failure::Usage("--h must be positive".into()));
            }
            if windows < 2 {
                return Err(Failure::Usage("--windows must be at least 2".into()));
            }
            write_anomalies(&ds, forecaster.as_ref(), h, level, windows, &out)
        }
        Command::Serve { model, bind, port } => serve(model, bind, port),
    }
}

fn warn(category: &str, message: String) {
    eprintln!("warning[{category}]: {message}");
}

fn baseline(name: &str, season_length: usize) -> Outcome<tgpt_core::baselines::Baseline> {
    baseline_by_name(name, season_length).ok_or_else(|| {
        Failure::Usage(format!("unknown model '{name}'; expected one of {}", MODEL_NAMES.join(",")))
    })
}

fn with_season(ds: Dataset, season_length: Option<usize>) -> Outcome<Dataset> {
    match season_length {
        Some(s) => Ok(ds.with_season_length(s).map_err(|e| Failure::Usage(e.to_string()))?),
        None => Ok(ds),
    }
}

fn load_data(args: &DataArgs) -> Outcome<Dataset> {
    let bytes = fs::read(&args.data).map_err(|e| Failure::Data(format!("cannot read {}: {e}", args.data.display())))?;
    let freq: Frequency = match &args.freq {
        Some(f) => f.parse().map_err(|e: tgpt_core::Error| Failure::Usage(e.to_string()))?,
        None => infer_frequency(bytes.as_slice()).map_err(|e| Failure::Data(e.to_string()))?,
    };
    let fill: FillPolicy = args.fill.parse().map_err(|e: tgpt_core::Error| Failure::Usage(e.to_string()))?;
    ingest_long_csv(bytes.as_slice(), freq, fill).map_err(|e| Failure::Data(format!("{}: {e}", args.data.display())))
}

fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))
}

fn read_model_config(path: &Path) -> Outcome<ModelConfig> {
    let cfg: ModelConfig = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Failure::Config(format!("{}: model config: {e}", path.display())))?;
    cfg.validate().map_err(|e| Failure::from(e).context(path.display()))?;
    Ok(cfg)
}

/// Train config from a file (or defaults), with the seed flag taking precedence.
fn read_train_config(path: Option<&Path>, seed: Option<u64>) -> Outcome<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_json(&read_text(p)?).map_err(|e| Failure::from(e).context(p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_model(path: &Path) -> Outcome<Checkpoint> {
    load_checkpoint(path).map_err(|e| Failure::Config(format!("model {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn loss_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".loss.csv");
    PathBuf::from(name)
}

fn write_checkpoint(weights: &tgpt_core::model::WeightStore, config: &ModelConfig, trace: &LossTrace, out: &Path) -> Outcome {
    save_weights(weights, config, out).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", out.display())))?;
    write_file(&loss_path(out), trace.to_csv().as_bytes())?;
    if let Some(last) = trace.losses.last() {
        println!("wrote {} after {} steps (final loss {last:.6})", out.display(), trace.len());
    } else {
        println!("wrote {} (no training steps)", out.display());
    }
    Ok(())
}

fn write_anomalies(ds: &Dataset, forecaster: &dyn Forecaster, h: usize, level: f64, windows: usize, out: &Path) -> Outcome {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(["unique_id", "ds", "y", "yhat", "lo", "hi"]).map_err(csv_err)?;
    let mut flagged = 0;
    for s in ds.series() {
        let n = windows.min(s.len().saturating_sub(1) / h);
        if n < 2 {
            warn(
                "data",
                format!("series '{}' skipped: {} observations fit fewer than 2 windows of {h}", s.id(), s.len()),
            );
            continue;
        }
        let points = detect_anomalies(forecaster, s, h, level, n).map_err(|e| Failure::from(e).context(format!("series '{}'", s.id())))?;
        for p in points.iter().filter(|p| p.anomaly) {
            flagged += 1;
            w.write_record([
                s.id().to_string(),
                ds.freq().format_ts(p.timestamp),
                p.actual.to_string(),
                p.yhat.to_string(),
                p.lo.to_string(),
                p.hi.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(out, &bytes)?;
    println!("{flagged} anomalies written to {}", out.display());
    Ok(())
}

fn serve(model: Option<PathBuf>, bind: String, port: Option<u16>) -> Outcome {
    let token = std::env::var("TGPT_TOKEN").unwrap_or_default();
    if token.is_empty() {
        return Err(Failure::Config("TGPT_TOKEN must be set to a non-empty token".into()));
    }
    let bind = match port {
        Some(p) => {
            let host = bind.rsplit_once(':').map_or(bind.as_str(), |(h, _)| h);
            format!("{host}:{p}")
        }
        None => bind,
    };
    let config = ServiceConfig {
        model_path: model,
        token,
        bind,
        limits: Limits::default(),
    };
    let state = Arc::new(AppState::new(&config));
    if let Some(e) = state.load_error() {
        warn("config", format!("model not loaded, serving 503: {e}"));
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let (listener, addr) = tgpt_service::bind(&config.bind)
            .await
            .map_err(|e| Failure::Config(format!("cannot bind {}: {e}", config.bind)))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        tgpt_service::serve(listener, state)
            .await
            .map_err(|e| Failure::Runtime(format!("server failed: {e}")))
    })
}
