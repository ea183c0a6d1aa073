//! `tvpoisson` command-line front end.
//!
//! ```bash
//! tvpoisson ingest access.log access.log.1.gz --out counts.csv
//! tvpoisson fit counts.csv --out-dir fit/
//! tvpoisson forecast counts.csv --fit-previous-day --tz +09:00 --out-dir forecast/
//! tvpoisson sweep counts.csv --out sweep.csv
//! tvpoisson simulate --k 0.8 --theta1 40 --seed 7 --out sim.csv
//! tvpoisson recover --k 0.8 --theta1 40 --out recovery.json
//! ```
//!
//! Exit status is 0 on success, 1 for usage or parameter errors and 2 for
//! unreadable or malformed data. Errors and warnings go to standard error as
//! one JSON object per line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(
    name = "tvpoisson",
    version,
    about = "Time-varying Poisson forecasting of web-request counts"
)]
struct Cli {
    /// Print exactly one JSON document on standard output.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Prior {
    /// Prior shape of the initial rate.
    #[arg(long, default_value_t = tvpoisson::model::DEFAULT_ALPHA1)]
    alpha1: f64,

    /// Prior rate of the initial rate.
    #[arg(long, default_value_t = tvpoisson::model::DEFAULT_BETA1)]
    beta1: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Bin access logs into a counts CSV
    Ingest {
        /// Common Log Format files, optionally gzip-compressed
        #[arg(required = true)]
        logs: Vec<PathBuf>,

        /// Interval length in seconds
        #[arg(long, default_value_t = tvpoisson::ingest::DEFAULT_INTERVAL_SECONDS)]
        interval: u32,

        /// TOML file with `timezone`, `status` and `[[maintenance]]` windows
        #[arg(long)]
        config: Option<PathBuf>,

        /// Count only 2xx responses
        #[arg(long)]
        success_only: bool,

        #[arg(long)]
        out: PathBuf,
    },

    /// Estimate the discount k and compare against the stationary model
    Fit {
        counts: PathBuf,

        /// Number of grid points on (0, 1]
        #[arg(long, default_value_t = tvpoisson::estimation::DEFAULT_GRID_SIZE)]
        grid: usize,

        #[command(flatten)]
        prior: Prior,

        /// Refine the grid maximum by golden-section search
        #[arg(long)]
        refine: bool,

        #[arg(long)]
        out_dir: PathBuf,
    },

    /// Rolling one-step forecasts with upper limits
    #[command(group = clap::ArgGroup::new("discount").required(true).args(["k", "fit_previous_day"]))]
    Forecast {
        counts: PathBuf,

        /// Fixed discount for the whole series
        #[arg(long)]
        k: Option<f64>,

        /// Fit k on each day and forecast the next one
        #[arg(long)]
        fit_previous_day: bool,

        /// Two upper-limit levels
        #[arg(long, value_delimiter = ',', default_values_t = [0.95, 0.99])]
        levels: Vec<f64>,

        /// UTC offset of day boundaries, such as +09:00
        #[arg(long)]
        tz: Option<String>,

        /// TOML file whose `timezone` is used when --tz is absent
        #[arg(long)]
        config: Option<PathBuf>,

        /// Start each day from the previous day's filtered state
        #[arg(long, requires = "fit_previous_day")]
        carry_over: bool,

        #[arg(long, default_value_t = tvpoisson::estimation::DEFAULT_GRID_SIZE)]
        grid: usize,

        #[command(flatten)]
        prior: Prior,

        #[arg(long)]
        out_dir: PathBuf,
    },

    /// Rolling-forecast MSE over a list of discounts
    Sweep {
        counts: PathBuf,

        /// Comma-separated discounts [default: 0.05,0.10,...,1.00]
        #[arg(long, value_delimiter = ',')]
        ks: Vec<f64>,

        #[command(flatten)]
        prior: Prior,

        #[arg(long)]
        out: PathBuf,
    },

    /// Simulate counts from the model
    Simulate {
        #[arg(long)]
        k: f64,

        #[command(flatten)]
        prior: Prior,

        #[arg(long, default_value_t = 288)]
        ticks: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        /// Initial rate; drawn from the prior when absent
        #[arg(long)]
        theta1: Option<f64>,

        #[arg(long, default_value_t = tvpoisson::ingest::DEFAULT_INTERVAL_SECONDS)]
        interval: u32,

        /// First interval start, RFC 3339
        #[arg(long)]
        start: Option<String>,

        #[arg(long)]
        out: PathBuf,

        /// Also write the latent rate path
        #[arg(long)]
        theta_out: Option<PathBuf>,
    },

    /// Parameter-recovery experiment over many seeds
    Recover {
        #[arg(long, default_value_t = 0.8)]
        k: f64,

        #[arg(long, default_value_t = 288)]
        ticks: usize,

        #[arg(long, default_value_t = 20)]
        seeds: usize,

        #[arg(long, default_value_t = 0)]
        base_seed: u64,

        #[command(flatten)]
        prior: Prior,

        #[arg(long)]
        theta1: Option<f64>,

        #[arg(long, default_value_t = tvpoisson::estimation::DEFAULT_GRID_SIZE)]
        grid: usize,

        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Input {
        path: String,
        #[source]
        source: tvpoisson::Error,
    },

    #[error("{path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Lib(#[from] tvpoisson::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input { source, .. } | CliError::Lib(source) if source.is_validation() => 1,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        use tvpoisson::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Output { .. } => "io",
            CliError::Input { source, .. } | CliError::Lib(source) => match source {
                E::InvalidParameter(_) => "invalid_parameter",
                E::Domain(_) => "domain",
                E::EmptyInput(_) => "empty_input",
                E::OutOfRange { .. } => "out_of_range",
                E::Schema { .. } => "schema",
                E::Config(_) => "config",
                E::Io(_) => "io",
                E::Csv(_) => "csv",
                E::Json(_) => "json",
            },
        }
    }
}

/// What a command reports: ordered summary fields plus warnings.
#[derive(Default)]
pub struct Report {
    fields: Map<String, Value>,
    warnings: Vec<String>,
}

impl Report {
    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.fields.insert(key.to_string(), value.into());
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }
}

fn stderr_line(value: Value) {
    eprintln!("{value}");
}

fn print_text(fields: &Map<String, Value>) {
    let width = fields.keys().map(String::len).max().unwrap_or(0);
    for (key, value) in fields {
        let shown = match value {
            Value::String(s) => s.clone(),
            Value::Null => "-".to_string(),
            other => other.to_string(),
        };
        println!("{key:<width$}  {shown}");
    }
}

fn run(cli: Cli) -> Result<(&'static str, Report), CliError> {
    let mut report = Report::default();
    let name = match cli.command {
        Command::Ingest {
            logs,
            interval,
            config,
            success_only,
            out,
        } => {
            commands::ingest(&logs, interval, config.as_deref(), success_only, &out, &mut report)?;
            "ingest"
        }
        Command::Fit {
            counts,
            grid,
            prior,
            refine,
            out_dir,
        } => {
            let opts = tvpoisson::FitOptions {
                grid_size: grid,
                alpha1: prior.alpha1,
                beta1: prior.beta1,
                refine,
            };
            commands::fit(&counts, &opts, &out_dir, &mut report)?;
            "fit"
        }
        Command::Forecast {
            counts,
            k,
            fit_previous_day: _,
            levels,
            tz,
            config,
            carry_over,
            grid,
            prior,
            out_dir,
        } => {
            let levels = match levels[..] {
                [a, b] => tvpoisson::Levels::new(a, b)?,
                _ => {
                    return Err(CliError::Usage(format!(
                        "--levels takes two values, got {}",
                        levels.len()
                    )))
                }
            };
            let fit = tvpoisson::FitOptions {
                grid_size: grid,
                alpha1: prior.alpha1,
                beta1: prior.beta1,
                refine: false,
            };
            let plan = commands::ForecastPlan {
                k,
                levels,
                tz,
                config,
                carry_over,
                fit,
            };
            commands::forecast(&counts, &plan, &out_dir, &mut report)?;
            "forecast"
        }
        Command::Sweep { counts, ks, prior, out } => {
            let ks = if ks.is_empty() {
                (1..=20).map(|i| i as f64 / 20.0).collect()
            } else {
                ks
            };
            commands::sweep(&counts, &ks, prior.alpha1, prior.beta1, &out, &mut report)?;
            "sweep"
        }
        Command::Simulate {
            k,
            prior,
            ticks,
            seed,
            theta1,
            interval,
            start,
            out,
            theta_out,
        } => {
            let mut cfg = tvpoisson::SimConfig::new(k, prior.alpha1, prior.beta1, ticks, seed);
            cfg.theta1 = theta1;
            cfg.interval_seconds = interval;
            if let Some(s) = start {
                cfg.start = chrono::DateTime::parse_from_rfc3339(&s)
                    .map_err(|e| CliError::Usage(format!("--start `{s}`: {e}")))?
                    .with_timezone(&chrono::Utc);
            }
            commands::simulate(&cfg, &out, theta_out.as_deref(), &mut report)?;
            "simulate"
        }
        Command::Recover {
            k,
            ticks,
            seeds,
            base_seed,
            prior,
            theta1,
            grid,
            out,
        } => {
            let cfg = tvpoisson::simulate::RecoveryConfig {
                k_true: k,
                ticks,
                n_seeds: seeds,
                base_seed,
                alpha1: prior.alpha1,
                beta1: prior.beta1,
                theta1,
                grid_size: grid,
            };
            commands::recover(&cfg, &out, &mut report)?;
            "recover"
        }
    };
    Ok((name, report))
}

fn fail(json_mode: bool, code: u8, kind: &str, message: &str) -> ExitCode {
    stderr_line(json!({"level": "error", "code": code, "kind": kind, "message": message}));
    if json_mode {
        println!(
            "{}",
            json!({"status": "error", "code": code, "kind": kind, "message": message})
        );
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let json_mode = std::env::args().skip(1).any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let message = rendered
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .collect::<Vec<_>>()
                .join(" ");
            let message = message.trim_start_matches("error: ");
            return fail(json_mode, 1, "usage", message);
        }
    };
    let json_mode = cli.json;
    match run(cli) {
        Ok((command, report)) => {
            for w in &report.warnings {
                stderr_line(json!({"level": "warning", "command": command, "message": w}));
            }
            if json_mode {
                let mut doc = Map::new();
                doc.insert("status".into(), "ok".into());
                doc.insert("command".into(), command.into());
                doc.extend(report.fields);
                doc.insert("warnings".into(), report.warnings.into());
                println!("{}", Value::Object(doc));
            } else {
                print_text(&report.fields);
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(json_mode, e.exit_code(), e.kind(), &e.to_string()),
    }
}
