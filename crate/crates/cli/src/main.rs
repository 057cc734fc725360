mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "tgpt", version, about = "Transformer forecasting: train, forecast, evaluate, serve")]
struct Cli {
    /// Random seed; overrides the seed in any train config
    #[arg(long, global = true, env = "TGPT_SEED", hide_env_values = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Long-format CSV with unique_id, ds, y and optional covariate columns
    #[arg(long)]
    data: PathBuf,

    /// hourly, daily, weekly or monthly; inferred from the timestamps when omitted
    #[arg(long)]
    freq: Option<String>,

    /// Gap filling: ffill, zero or error
    #[arg(long, default_value = "ffill")]
    fill: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from scratch
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        /// Model config JSON; defaults to the toy config for the frequency
        #[arg(long)]
        model_config: Option<PathBuf>,
        /// Train config JSON; defaults apply when omitted
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Checkpoint to write; the loss trace goes to <OUT>.loss.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training a checkpoint on new data
    Finetune {
        /// Checkpoint to start from
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Train config JSON; defaults apply when omitted
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Checkpoint to write; the loss trace goes to <OUT>.loss.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Point forecasts with optional conformal intervals
    Forecast {
        /// Checkpoint file
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Forecast horizon
        #[arg(long)]
        h: usize,
        /// Interval coverage percentages, e.g. --level 80 90
        #[arg(long, num_args = 1..)]
        level: Vec<f64>,
        /// Calibration windows per series; as many as fit (up to 10) by default
        #[arg(long)]
        calib_windows: Option<usize>,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark models on the last window of every series
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated subset of zero,histavg,snaive,theta,croston,tgpt
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        /// Checkpoint used for tgpt
        #[arg(long)]
        model: Option<PathBuf>,
        /// Fine-tune tgpt on the training windows with this train config
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Horizon; defaults to the frequency's (24/7/1/12)
        #[arg(long)]
        h: Option<usize>,
        /// Seasonal period for the baselines; defaults to the frequency's
        #[arg(long)]
        season_length: Option<usize>,
        /// Report file
        #[arg(long)]
        out: PathBuf,
        /// text, csv or json
        #[arg(long, default_value = "text")]
        format: String,
        /// Repetitions whose median gives each timing
        #[arg(long, default_value_t = 3)]
        timing_runs: usize,
        /// Report zero timings so the report is reproducible byte for byte
        #[arg(long)]
        no_timing: bool,
    },
    /// Flag observations outside conformal intervals
    Anomalies {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint; required when the forecaster is tgpt
        #[arg(long)]
        model: Option<PathBuf>,
        /// One of zero,histavg,snaive,theta,croston,tgpt
        #[arg(long, default_value = "tgpt")]
        forecaster: String,
        /// Window length; defaults to the frequency's horizon
        #[arg(long)]
        h: Option<usize>,
        /// Interval coverage percentage
        #[arg(long, default_value_t = 99.0)]
        level: f64,
        /// Scored windows per series
        #[arg(long, default_value_t = 10)]
        windows: usize,
        /// Seasonal period for the baselines; defaults to the frequency's
        #[arg(long)]
        season_length: Option<usize>,
        /// CSV of flagged observations
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP forecast service (token from TGPT_TOKEN)
    Serve {
        /// Checkpoint to serve; without a loadable one every forecast gets 503
        #[arg(long, env = "TGPT_MODEL_PATH", hide_env_values = true)]
        model: Option<PathBuf>,
        /// host:port to listen on
        #[arg(long, env = "TGPT_BIND", hide_env_values = true, default_value = tgpt_service::DEFAULT_BIND)]
        bind: String,
        /// Port override; 0 picks a free port
        #[arg(long)]
        port: Option<u16>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::from_clap(&e).report(),
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
