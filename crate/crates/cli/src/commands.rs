use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset, Utc};
use serde_json::{json, Value};
use tvpoisson::estimation;
use tvpoisson::evaluation::{self, ProtocolOptions};
use tvpoisson::ingest::{self, IngestConfig, StatusFilter, TrafficSeries};
use tvpoisson::simulate::{self, RecoveryConfig};
use tvpoisson::{EvaluationReport, FitOptions, Levels, SimConfig};

use crate::{CliError, Report};

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

fn input<T>(path: &Path, r: tvpoisson::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| {
        if source.is_validation() {
            CliError::Lib(source)
        } else {
            CliError::Input {
                path: path.display().to_string(),
                source,
            }
        }
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |source| CliError::Output {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(err)?;
    }
    std::fs::write(path, bytes).map_err(err)
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> tvpoisson::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_bytes(path, &buf)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(tvpoisson::Error::from)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn stamp(t: DateTime<Utc>) -> String {
    t.format(TIME_FORMAT).to_string()
}

fn read_series(path: &Path) -> Result<TrafficSeries, CliError> {
    input(path, ingest::read_counts(path))
}

fn observed_or_warn(series: &TrafficSeries, report: &mut Report) -> Vec<u64> {
    let missing = series.missing();
    if missing > 0 {
        report.warn(format!("{missing} missing intervals dropped"));
    }
    series.observed()
}

pub fn ingest(
    logs: &[PathBuf],
    interval: u32,
    config: Option<&Path>,
    success_only: bool,
    out: &Path,
    report: &mut Report,
) -> Result<(), CliError> {
    let cfg = match config {
        Some(p) => input(p, IngestConfig::load(p))?,
        None => IngestConfig::default(),
    };
    let filter = if success_only {
        StatusFilter::Success
    } else {
        cfg.status
    };
    let mut scan = ingest::LogScan::default();
    for path in logs {
        scan.merge(input(path, ingest::scan_log_file(path, filter))?);
    }
    let binned = ingest::bin_counts(&scan.timestamps, interval, None, &cfg.maintenance)?;
    let series = binned.series;
    write_with(out, |buf| ingest::write_counts_to(&series, buf))?;

    if scan.malformed > 0 {
        report.warn(format!("{} malformed lines skipped", scan.malformed));
    }
    if series.is_empty() {
        report.warn("no arrivals parsed; wrote an empty series");
    }
    let nonempty = !series.is_empty();
    report.set("files", logs.len());
    report.set("lines", scan.lines);
    report.set("malformed_lines", scan.malformed);
    report.set("filtered_lines", scan.filtered);
    report.set("total_arrivals", binned.in_window);
    report.set("excluded_arrivals", binned.excluded);
    report.set("start", nonempty.then(|| stamp(series.start)));
    report.set("end", nonempty.then(|| stamp(series.end())));
    report.set("interval_seconds", interval);
    report.set("time_intervals", series.len());
    report.set("missing_intervals", series.missing());
    report.set("log_utc_offset", scan.offset.map(|o| o.to_string()));
    report.set("out", out.display().to_string());
    Ok(())
}

pub fn fit(counts: &Path, opts: &FitOptions, out_dir: &Path, report: &mut Report) -> Result<(), CliError> {
    let series = read_series(counts)?;
    let obs = observed_or_warn(&series, report);
    let fit = input(counts, estimation::mle_k(&obs, opts))?;
    let maxima = fit.curve.local_maxima();
    if maxima > 1 {
        report.warn(format!("log-likelihood has {maxima} local maxima on the grid"));
    }
    let fit_path = out_dir.join("fit.json");
    let curve_path = out_dir.join("loglik.csv");
    write_json(&fit_path, &fit)?;
    write_with(&curve_path, |buf| fit.curve.write_csv(buf))?;

    report.set("intervals", obs.len());
    report.set("k_hat", fit.k_hat);
    report.set("k_refined", fit.k_refined);
    report.set("max_loglik", fit.curve.max_loglik());
    report.set("aic_proposed", fit.aic_proposed);
    report.set("aic_stationary", fit.aic_stationary);
    report.set(
        "selected",
        serde_json::to_value(fit.selected).map_err(tvpoisson::Error::from)?,
    );
    report.set("local_maxima", maxima);
    report.set("fit_json", fit_path.display().to_string());
    report.set("loglik_csv", curve_path.display().to_string());
    Ok(())
}

pub struct ForecastPlan {
    pub k: Option<f64>,
    pub levels: Levels,
    pub tz: Option<String>,
    pub config: Option<PathBuf>,
    pub carry_over: bool,
    pub fit: FitOptions,
}

fn day_offset(plan: &ForecastPlan) -> Result<FixedOffset, CliError> {
    if let Some(tz) = &plan.tz {
        return Ok(ingest::parse_offset(tz)?);
    }
    if let Some(p) = &plan.config {
        let cfg = input(p, IngestConfig::load(p))?;
        if let Some(off) = cfg.offset()? {
            return Ok(off);
        }
    }
    Ok(FixedOffset::east_opt(0).expect("zero offset"))
}

fn summary_of(r: &EvaluationReport) -> Value {
    json!({
        "label": r.label,
        "k_used": r.k_used,
        "intervals": r.records.len(),
        "mse_proposed": r.mse_proposed,
        "mse_stationary": r.mse_stationary,
        "coverage95": r.coverage95,
        "coverage99": r.coverage99,
    })
}

pub fn forecast(counts: &Path, plan: &ForecastPlan, out_dir: &Path, report: &mut Report) -> Result<(), CliError> {
    let series = read_series(counts)?;
    let report_path = out_dir.join("report.json");
    match plan.k {
        Some(k) => {
            let obs = observed_or_warn(&series, report);
            let eval = input(
                counts,
                EvaluationReport::evaluate(&obs, k, plan.fit.alpha1, plan.fit.beta1, plan.levels),
            )?;
            let records_path = out_dir.join("records.csv");
            write_with(&records_path, |buf| eval.write_records_csv(buf))?;
            write_json(&report_path, &eval)?;
            for (key, value) in summary_of(&eval).as_object().expect("object") {
                if key != "label" {
                    report.set(key, value.clone());
                }
            }
            report.set("records_csv", records_path.display().to_string());
        }
        None => {
            let offset = day_offset(plan)?;
            let days = series.split_days(offset);
            let missing = series.missing();
            if missing > 0 {
                report.warn(format!("{missing} missing intervals dropped"));
            }
            let opts = ProtocolOptions {
                fit: plan.fit,
                levels: plan.levels,
                carry_over: plan.carry_over,
            };
            let evals = input(counts, evaluation::daily_protocol(&days, &opts))?;
            let mut files = Vec::new();
            for (i, eval) in evals.iter().enumerate() {
                let path = out_dir.join(format!("records_day{:02}.csv", i + 2));
                write_with(&path, |buf| eval.write_records_csv(buf))?;
                files.push(path.display().to_string());
            }
            write_json(&report_path, &evals)?;
            let better = evals.iter().filter(|r| r.mse_proposed < r.mse_stationary).count();
            report.set("utc_offset", offset.to_string());
            report.set("days", days.len());
            report.set("forecast_days", evals.len());
            report.set("proposed_better_days", better);
            report.set("reports", evals.iter().map(summary_of).collect::<Vec<_>>());
            report.set("records_csv", files);
        }
    }
    report.set("report_json", report_path.display().to_string());
    Ok(())
}

pub fn sweep(
    counts: &Path,
    ks: &[f64],
    alpha1: f64,
    beta1: f64,
    out: &Path,
    report: &mut Report,
) -> Result<(), CliError> {
    let series = read_series(counts)?;
    let obs = observed_or_warn(&series, report);
    let rows = input(counts, evaluation::k_sweep(&obs, ks, alpha1, beta1))?;
    write_with(out, |buf| evaluation::write_sweep_csv(&rows, buf))?;
    let best = rows
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .copied()
        .expect("k list nonempty");
    report.set("points", rows.len());
    report.set("best_k", best.0);
    report.set("min_mse", best.1);
    report.set("out", out.display().to_string());
    Ok(())
}

pub fn simulate(cfg: &SimConfig, out: &Path, theta_out: Option<&Path>, report: &mut Report) -> Result<(), CliError> {
    let sim = simulate::simulate_traffic(cfg)?;
    write_with(out, |buf| ingest::write_counts_to(&sim.series, buf))?;
    if let Some(p) = theta_out {
        write_with(p, |buf| sim.write_theta_csv(buf))?;
    }
    let total = sim.series.total();
    if total == 0 {
        report.warn("simulated series has no arrivals; the initial rate may be too small (see --theta1)");
    }
    report.set("ticks", sim.series.len());
    report.set("total_arrivals", total);
    report.set("mean_count", total as f64 / sim.series.len() as f64);
    report.set("start", stamp(sim.series.start));
    report.set("end", stamp(sim.series.end()));
    report.set("out", out.display().to_string());
    report.set("theta_out", theta_out.map(|p| p.display().to_string()));
    Ok(())
}

pub fn recover(cfg: &RecoveryConfig, out: &Path, report: &mut Report) -> Result<(), CliError> {
    let summary = simulate::recovery_experiment(cfg)?;
    write_json(out, &summary)?;
    let silent = summary.runs.iter().filter(|r| r.total_count == 0).count();
    if silent > 0 {
        report.warn(format!("{silent} of {} runs have no arrivals", summary.runs.len()));
    }
    report.set("runs", summary.runs.len());
    report.set("median_k_hat", summary.median_k_hat);
    report.set("iqr_k_hat", summary.iqr_k_hat);
    report.set("aic_correct_fraction", summary.aic_correct_fraction);
    report.set("mse_proposed_better_fraction", summary.mse_proposed_better_fraction);
    report.set("out", out.display().to_string());
    Ok(())
}
