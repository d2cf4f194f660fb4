//! `evtlstm` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::output::{to_json, write_atomic, OutputDir};

/// Exit code and message of a failed invocation.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "invalid_input",
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            kind: "runtime",
            message: message.into(),
        }
    }
}

impl From<evtlstm::Error> for CliError {
    fn from(e: evtlstm::Error) -> Self {
        if e.is_validation() {
            Self::config(e.to_string())
        } else {
            Self::runtime(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "evtlstm", version, about = "LSTM forecasting with extreme-value anomaly thresholds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set train.seed=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact directory; defaults to the config's `output_dir`, then $EVTLSTM_OUT_DIR.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a forecaster or an EVT-LSTM and save model.json and manifest.json.
    Train(RunArgs),
    /// Score the test split with a saved model and the configured rule.
    Detect {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to model.json in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare detections against the dataset labels and write metrics.json.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to detections.csv in the output directory.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Fit a GPD to the tail of a one-column numeric file and print the threshold.
    FitGpd {
        input: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        q: f64,
        /// Quantile level of the initial threshold.
        #[arg(long, default_value_t = evtlstm::evt::DEFAULT_INIT_LEVEL)]
        level: f64,
        /// Run a bootstrap Anderson-Darling test with this many replicates.
        #[arg(long)]
        ad_reps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON result to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run all four rules on one dataset and report precision, recall and F1.
    Benchmark(RunArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, out) = setup(&args)?;
            commands::train(&cfg, &out)
        }
        Command::Detect { run, model } => {
            let (cfg, out) = setup(&run)?;
            let model = model.unwrap_or_else(|| out.path("model.json"));
            commands::detect_cmd(&cfg, &model, &out)
        }
        Command::Evaluate { run, detections } => {
            let (cfg, out) = setup(&run)?;
            let detections = detections.unwrap_or_else(|| out.path("detections.csv"));
            commands::evaluate(&cfg, &detections, &out)
        }
        Command::FitGpd {
            input,
            q,
            level,
            ad_reps,
            seed,
            output,
        } => {
            let report = commands::fit_gpd_cmd(&input, q, level, ad_reps, seed)?;
            let text = to_json(&report)?;
            if let Some(path) = output {
                write_atomic(&path, text.as_bytes())?;
            }
            print!("{text}");
            Ok(())
        }
        Command::Benchmark(args) => {
            let (cfg, out) = setup(&args)?;
            commands::benchmark_cmd(&cfg, &out)
        }
    }
}

fn setup(args: &RunArgs) -> Result<(config::RunConfig, OutputDir), CliError> {
    let cfg = config::load(&args.config, &args.overrides)?;
    let out = OutputDir::new(cfg.output_dir(args.output_dir.as_deref()));
    Ok((cfg, out))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({"error": {"kind": e.kind, "code": e.code, "message": e.message}});
            eprintln!("{body}");
            ExitCode::from(e.code)
        }
    }
}
