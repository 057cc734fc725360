//! Last-window benchmark: relative error metrics against SeasonalNaive,
//! per-model timings and report rendering.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{Baseline, Forecaster};
use crate::error::{Error, Result};
use crate::model::{predict_batch, ModelConfig, WeightStore};
use crate::timeseries::{last_window_split, Dataset, Frequency, TimeSeries};
use crate::training::{finetune, TrainConfig};

/// A relative score, or `Undefined` when the base forecaster is perfect on
/// every point. Serialized as a number or `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Score {
    Value(f64),
    Undefined,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Undefined => None,
        }
    }
}

impl From<Option<f64>> for Score {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Score::Undefined, Score::Value)
    }
}

impl From<Score> for Option<f64> {
    fn from(s: Score) -> Self {
        s.value()
    }
}

fn check_aligned(actuals: &[Vec<f64>], forecasts: &[Vec<f64>], base: &[Vec<f64>]) -> Result<()> {
    if actuals.len() != forecasts.len() || actuals.len() != base.len() {
        return Err(Error::shape(
            "metric",
            format!("{} actual, {} forecast and {} base series", actuals.len(), forecasts.len(), base.len()),
        ));
    }
    for (i, ((a, f), b)) in actuals.iter().zip(forecasts).zip(base).enumerate() {
        if a.len() != f.len() || a.len() != b.len() {
            return Err(Error::shape(
                "metric",
                format!("series {i}: lengths {}, {} and {}", a.len(), f.len(), b.len()),
            ));
        }
    }
    Ok(())
}

fn ratio(num: f64, den: f64) -> Score {
    if den > 0.0 {
        Score::Value(num / den)
    } else {
        Score::Undefined
    }
}

/// Total absolute error over all series and steps divided by the same total
/// for the base forecasts.
pub fn rmae(actuals: &[Vec<f64>], forecasts: &[Vec<f64>], base: &[Vec<f64>]) -> Result<Score> {
    check_aligned(actuals, forecasts, base)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((a, f), b) in actuals.iter().zip(forecasts).zip(base) {
        for t in 0..a.len() {
            num += (a[t] - f[t]).abs();
            den += (a[t] - b[t]).abs();
        }
    }
    Ok(ratio(num, den))
}

/// Sum over series of the root of the summed squared errors, divided by the
/// same quantity for the base forecasts.
pub fn rrmse(actuals: &[Vec<f64>], forecasts: &[Vec<f64>], base: &[Vec<f64>]) -> Result<Score> {
    check_aligned(actuals, forecasts, base)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((a, f), b) in actuals.iter().zip(forecasts).zip(base) {
        let (mut sf, mut sb) = (0.0, 0.0);
        for t in 0..a.len() {
            sf += (a[t] - f[t]) * (a[t] - f[t]);
            sb += (a[t] - b[t]) * (a[t] - b[t]);
        }
        num += sf.sqrt();
        den += sb.sqrt();
    }
    Ok(ratio(num, den))
}

/// SeasonalNaive forecasts for every series of `history` at the dataset's
/// season length.
pub fn seasonal_naive_forecasts(history: &Dataset, horizon: usize) -> Result<Vec<Vec<f64>>> {
    let base = Baseline::SeasonalNaive {
        season_length: history.season_length(),
    };
    history
        .series()
        .iter()
        .map(|s| Ok(base.forecast(s, horizon)?.values))
        .collect()
}

/// Registered model names accepted by the command line.
pub const MODEL_NAMES: [&str; 6] = ["zero", "histavg", "snaive", "theta", "croston", "tgpt"];

/// The baseline registered under `name`, if any.
pub fn baseline_by_name(name: &str, season_length: usize) -> Option<Baseline> {
    Some(match name {
        "zero" => Baseline::Zero,
        "histavg" => Baseline::HistoricAverage,
        "snaive" => Baseline::SeasonalNaive { season_length },
        "theta" => Baseline::Theta { season_length },
        "croston" => Baseline::Croston,
        _ => return None,
    })
}

/// A model entered in the benchmark.
#[derive(Clone)]
pub enum BenchModel {
    /// Fitted per series on its training window.
    Baseline(Baseline),
    /// The transformer, zero-shot or fine-tuned on the training windows.
    Tgpt {
        weights: Arc<WeightStore>,
        config: ModelConfig,
        finetune: Option<TrainConfig>,
    },
    /// Any other forecaster; treated as already fitted.
    Other(Arc<dyn Forecaster>),
}

impl BenchModel {
    pub fn name(&self) -> String {
        match self {
            BenchModel::Baseline(b) => b.name().to_string(),
            BenchModel::Tgpt { .. } => "TGPT".to_string(),
            BenchModel::Other(f) => f.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    /// Defaults to the frequency's horizon.
    pub horizon: Option<usize>,
    /// Timings are the median over this many repetitions.
    pub timing_runs: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            horizon: None,
            timing_runs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub rmae: Score,
    pub rrmse: Score,
    pub fit_ms: f64,
    pub predict_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSeries {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frequency: Frequency,
    pub horizon: usize,
    pub n: usize,
    pub models: Vec<ModelScore>,
    pub excluded: Vec<ExcludedSeries>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

type SeriesOutcome = std::result::Result<Vec<f64>, String>;

/// One timed pass of a model over the training windows.
fn run_model(model: &BenchModel, train: &Dataset, h: usize) -> Result<(Vec<SeriesOutcome>, f64, f64)> {
    match model {
        BenchModel::Baseline(b) => {
            let start = Instant::now();
            let fits: Vec<_> = train.series().iter().map(|s| b.fit(s.values())).collect();
            let fit_ms = millis(start);
            let start = Instant::now();
            let out: Vec<SeriesOutcome> = fits
                .into_iter()
                .map(|f| f.map(|f| f.predict(h)).map_err(|e| format!("{}: {e}", b.name())))
                .collect();
            Ok((out, fit_ms, millis(start)))
        }
        BenchModel::Tgpt { weights, config, finetune: tune } => {
            let start = Instant::now();
            let tuned = match tune {
                Some(cfg) => Some(finetune(weights, config, train, cfg)?.0),
                None => None,
            };
            let fit_ms = if tune.is_some() { millis(start) } else { 0.0 };
            let start = Instant::now();
            let preds = predict_batch(tuned.as_ref().unwrap_or(weights), config, train.series(), h)?;
            let predict_ms = millis(start);
            Ok((preds.into_iter().map(|p| Ok(p.values)).collect(), fit_ms, predict_ms))
        }
        BenchModel::Other(f) => {
            let start = Instant::now();
            let preds = f.forecast_batch(train.series(), h)?;
            let predict_ms = millis(start);
            Ok((preds.into_iter().map(|p| Ok(p.values)).collect(), 0.0, predict_ms))
        }
    }
}

/// Hold out the last window of every series, forecast it with each model and
/// score against SeasonalNaive.
///
/// Series shorter than horizon plus one season, or on which some model fails,
/// are listed in `excluded` and left out of every score.
pub fn run_benchmark(ds: &Dataset, models: &[BenchModel], opts: &BenchOptions) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::config("no models to evaluate"));
    }
    let h = opts.horizon.unwrap_or(ds.freq().default_horizon());
    if h == 0 {
        return Err(Error::config("horizon must be positive"));
    }
    let needed = h + ds.season_length();
    let mut excluded = Vec::new();
    let mut eligible: Vec<TimeSeries> = Vec::new();
    for s in ds.series() {
        if s.len() >= needed {
            eligible.push(s.clone());
        } else {
            excluded.push(ExcludedSeries {
                id: s.id().to_string(),
                reason: format!("needs at least {needed} observations, has {}", s.len()),
            });
        }
    }
    if eligible.is_empty() {
        return Err(Error::data(format!("no series has the {needed} observations needed")));
    }
    let (train, test) = last_window_split(&ds.with_series(eligible)?, h)?;
    let base = seasonal_naive_forecasts(&train, h)?;

    let runs = opts.timing_runs.max(1);
    let mut outcomes = Vec::with_capacity(models.len());
    let mut timings = Vec::with_capacity(models.len());
    for model in models {
        let mut fit = Vec::with_capacity(runs);
        let mut predict = Vec::with_capacity(runs);
        let mut first = None;
        for _ in 0..runs {
            let (out, f, p) = run_model(model, &train, h)?;
            fit.push(f);
            predict.push(p);
            first.get_or_insert(out);
        }
        outcomes.push(first.expect("at least one run"));
        timings.push((median(fit), median(predict)));
    }

    let mut keep = Vec::new();
    for (i, s) in train.series().iter().enumerate() {
        match outcomes.iter().find_map(|o| o[i].as_ref().err()) {
            Some(reason) => excluded.push(ExcludedSeries {
                id: s.id().to_string(),
                reason: reason.clone(),
            }),
            None => keep.push(i),
        }
    }
    if keep.is_empty() {
        return Err(Error::data("every series was excluded"));
    }
    let actuals: Vec<Vec<f64>> = keep.iter().map(|&i| test.series()[i].values().to_vec()).collect();
    let base: Vec<Vec<f64>> = keep.iter().map(|&i| base[i].clone()).collect();
    let mut rows = Vec::with_capacity(models.len());
    for ((model, out), (fit_ms, predict_ms)) in models.iter().zip(&outcomes).zip(timings) {
        let forecasts: Vec<Vec<f64>> = keep
            .iter()
            .map(|&i| out[i].clone().expect("kept series succeeded"))
            .collect();
        rows.push(ModelScore {
            model: model.name(),
            rmae: rmae(&actuals, &forecasts, &base)?,
            rrmse: rrmse(&actuals, &forecasts, &base)?,
            fit_ms,
            predict_ms,
        });
    }
    Ok(EvalReport {
        frequency: ds.freq(),
        horizon: h,
        n: keep.len(),
        models: rows,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::config(format!("unknown report format '{other}'"))),
        }
    }
}

/// Index of the best (lowest) defined score; ties go to the smaller name.
fn best_index(rows: &[ModelScore], score: impl Fn(&ModelScore) -> Score) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Some(v) = score(r).value() {
            let better = match best {
                None => true,
                Some((j, b)) => v < b || (v == b && r.model < rows[j].model),
            };
            if better {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("model,rmae,rrmse,fit_ms,predict_ms\n");
            let num = |x: Score| x.value().map(|v| v.to_string()).unwrap_or_default();
            for r in &report.models {
                let _ = writeln!(s, "{},{},{},{},{}", r.model, num(r.rmae), num(r.rrmse), r.fit_ms, r.predict_ms);
            }
            s
        }
        ReportFormat::Text => {
            let best_mae = best_index(&report.models, |r| r.rmae);
            let best_rmse = best_index(&report.models, |r| r.rrmse);
            let cell = |x: Score, best: bool| match x.value() {
                Some(v) => format!("{v:.3}{}", if best { "*" } else { " " }),
                None => "undefined ".to_string(),
            };
            let width = report.models.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
            let mut s = format!(
                "frequency: {}  horizon: {}  series: {}\n",
                report.frequency, report.horizon, report.n
            );
            let _ = writeln!(
                s,
                "{:<width$}  {:>10}  {:>10}  {:>12}  {:>12}",
                "model", "rMAE", "rRMSE", "fit_ms", "predict_ms"
            );
            for (i, r) in report.models.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{:<width$}  {:>10}  {:>10}  {:>12.3}  {:>12.3}",
                    r.model,
                    cell(r.rmae, best_mae == Some(i)),
                    cell(r.rrmse, best_rmse == Some(i)),
                    r.fit_ms,
                    r.predict_ms
                );
            }
            if !report.excluded.is_empty() {
                let _ = writeln!(s, "excluded series: {}", report.excluded.len());
                for e in &report.excluded {
                    let _ = writeln!(s, "  {}: {}", e.id, e.reason);
                }
            }
            s.push_str("* best in column\n");
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::DatasetRole;

    fn v(rows: &[&[f64]]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn hand_examples() {
        let a = v(&[&[1.0, 2.0]]);
        assert_eq!(rmae(&a, &v(&[&[1.0, 1.0]]), &v(&[&[0.0, 0.0]])).unwrap(), Score::Value(1.0 / 3.0));
        assert_eq!(rmae(&a, &a, &v(&[&[0.0, 0.0]])).unwrap(), Score::Value(0.0));
        let f = v(&[&[5.0, 9.0]]);
        assert_eq!(rmae(&a, &f, &f).unwrap(), Score::Value(1.0));
        assert_eq!(rrmse(&a, &f, &f).unwrap(), Score::Value(1.0));
        let zero = v(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let fc = v(&[&[3.0, 4.0], &[0.0, 0.0]]);
        let bs = v(&[&[5.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(rrmse(&zero, &fc, &bs).unwrap(), Score::Value(1.0));
    }

    #[test]
    fn perfect_base_is_undefined() {
        let a = v(&[&[1.0, 2.0]]);
        assert_eq!(rmae(&a, &v(&[&[0.0, 0.0]]), &a).unwrap(), Score::Undefined);
        assert_eq!(rrmse(&a, &v(&[&[0.0, 0.0]]), &a).unwrap(), Score::Undefined);
        assert_eq!(serde_json::to_string(&Score::Undefined).unwrap(), "null");
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let a = v(&[&[1.0, 2.0]]);
        assert!(rmae(&a, &v(&[&[1.0]]), &a).is_err());
        assert!(rrmse(&a, &v(&[]), &v(&[])).is_err());
    }

    fn positive_dataset() -> Dataset {
        let series = (0..6)
            .map(|i| {
                let values = (0..48)
                    .map(|t| 10.0 + i as f64 + ((t * 7 + i * 3) % 5) as f64 + (t as f64 * 0.5).sin())
                    .collect();
                TimeSeries::from_values(format!("s{i}"), Frequency::Monthly, values).unwrap()
            })
            .collect();
        Dataset::new(Frequency::Monthly, series, DatasetRole::Target).unwrap()
    }

    fn baselines() -> Vec<BenchModel> {
        ["snaive", "zero", "histavg", "theta", "croston"]
            .iter()
            .map(|n| BenchModel::Baseline(baseline_by_name(n, 12).unwrap()))
            .collect()
    }

    #[test]
    fn benchmark_orders_zero_below_average() {
        let r = run_benchmark(&positive_dataset(), &baselines(), &BenchOptions { timing_runs: 1, ..Default::default() }).unwrap();
        assert_eq!(r.horizon, 12);
        assert_eq!(r.n, 6);
        assert_eq!(r.models[0].rmae, Score::Value(1.0));
        assert_eq!(r.models[0].rrmse, Score::Value(1.0));
        let score = |name: &str| r.models.iter().find(|m| m.model == name).unwrap().rmae.value().unwrap();
        assert!(score("ZeroModel") > score("HistoricAverage"));
    }

    #[test]
    fn short_and_failing_series_are_excluded_and_counted() {
        let mut series = positive_dataset().series().to_vec();
        series.push(TimeSeries::from_values("short", Frequency::Monthly, vec![1.0; 20]).unwrap());
        let mut zeros = vec![0.0; 36];
        zeros.extend([1.0; 12]);
        series.push(TimeSeries::from_values("zeros", Frequency::Monthly, zeros).unwrap());
        let ds = Dataset::new(Frequency::Monthly, series, DatasetRole::Target).unwrap();
        let r = run_benchmark(&ds, &baselines(), &BenchOptions { timing_runs: 1, ..Default::default() }).unwrap();
        assert_eq!(r.n, 6);
        let ids: Vec<&str> = r.excluded.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["short", "zeros"]);
        assert!(r.excluded[1].reason.starts_with("CrostonClassic"));
    }

    #[test]
    fn renderings() {
        let r = run_benchmark(&positive_dataset(), &baselines(), &BenchOptions { timing_runs: 1, ..Default::default() }).unwrap();
        let text = render_report(&r, ReportFormat::Text);
        let marked_rows = text.lines().filter(|l| l.contains('*') && !l.starts_with('*')).count();
        assert!((1..=2).contains(&marked_rows), "{text}");
        assert_eq!(text.matches('*').count(), 3, "{text}");

        let csv = render_report(&r, ReportFormat::Csv);
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        assert_eq!(
            reader.headers().unwrap().iter().collect::<Vec<_>>(),
            ["model", "rmae", "rrmse", "fit_ms", "predict_ms"]
        );
        for (row, m) in reader.records().zip(&r.models) {
            let row = row.unwrap();
            assert_eq!(&row[0], m.model);
            assert_eq!(row[1].parse::<f64>().unwrap(), m.rmae.value().unwrap());
            assert_eq!(row[4].parse::<f64>().unwrap(), m.predict_ms);
        }

        let json = render_report(&r, ReportFormat::Json);
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn ties_go_to_the_smaller_name() {
        let row = |m: &str, s: f64| ModelScore {
            model: m.into(),
            rmae: Score::Value(s),
            rrmse: Score::Undefined,
            fit_ms: 0.0,
            predict_ms: 0.0,
        };
        let rows = vec![row("b", 0.5), row("a", 0.5), row("c", 0.7)];
        assert_eq!(best_index(&rows, |r| r.rmae), Some(1));
        assert_eq!(best_index(&rows, |r| r.rrmse), None);
    }

    #[test]
    fn scores_are_reproducible() {
        let opts = BenchOptions { timing_runs: 1, ..Default::default() };
        let a = run_benchmark(&positive_dataset(), &baselines(), &opts).unwrap();
        let b = run_benchmark(&positive_dataset(), &baselines(), &opts).unwrap();
        let scores = |r: &EvalReport| r.models.iter().map(|m| (m.rmae, m.rrmse)).collect::<Vec<_>>();
        assert_eq!(scores(&a), scores(&b));
    }
}
