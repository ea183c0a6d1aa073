//! Rolling one-step-ahead evaluation of the filter.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_k, check_level, Error, Result};
use crate::estimation::{self, FitOptions};
use crate::ingest::TrafficSeries;
use crate::model::{Count, GammaState};

/// Predictive levels for the two upper limits carried by each record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Levels {
    pub primary: f64,
    pub secondary: f64,
}

impl Default for Levels {
    fn default() -> Self {
        Self {
            primary: 0.95,
            secondary: 0.99,
        }
    }
}

impl Levels {
    pub fn new(primary: f64, secondary: f64) -> Result<Self> {
        check_level(primary)?;
        check_level(secondary)?;
        if primary > secondary {
            return Err(Error::InvalidParameter(format!(
                "levels must be ordered, got {primary} > {secondary}"
            )));
        }
        Ok(Self { primary, secondary })
    }
}

/// One-step-ahead forecast for a single interval.
///
/// `upper95` and `upper99` hold the one-sided upper predictive limits at the
/// primary and secondary [`Levels`] (0.95 and 0.99 by default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub index: usize,
    pub point: f64,
    pub upper95: Count,
    pub upper99: Count,
    pub observed: Count,
    pub log_score: f64,
}

impl ForecastRecord {
    fn from_state(index: usize, state: &GammaState, observed: Count, levels: Levels) -> Result<Self> {
        let pred = state.predictive();
        Ok(Self {
            index,
            point: state.point_forecast(),
            upper95: pred.quantile(levels.primary)?,
            upper99: pred.quantile(levels.secondary)?,
            observed,
            log_score: pred.ln_pmf(observed).min(0.0),
        })
    }
}

/// Forecasts each count from the state built on the strictly earlier counts.
pub fn rolling_forecast(
    counts: &[Count],
    k: f64,
    alpha1: f64,
    beta1: f64,
    levels: Levels,
) -> Result<Vec<ForecastRecord>> {
    let state = GammaState::new(alpha1, beta1, k)?;
    rolling_forecast_from(state, counts, levels)
}

/// As [`rolling_forecast`], starting from an arbitrary state.
pub fn rolling_forecast_from(mut state: GammaState, counts: &[Count], levels: Levels) -> Result<Vec<ForecastRecord>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("rolling forecast needs at least one count"));
    }
    let mut out = Vec::with_capacity(counts.len());
    for (i, &x) in counts.iter().enumerate() {
        out.push(ForecastRecord::from_state(i, &state, x, levels)?);
        state = state.discount_step(x);
    }
    Ok(out)
}

/// Mean squared error of the real-valued point forecasts.
pub fn mse(records: &[ForecastRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("mse needs at least one record"));
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            let e = r.point - r.observed as f64;
            e * e
        })
        .sum();
    Ok(sum / records.len() as f64)
}

fn coverage(records: &[ForecastRecord], limit: impl Fn(&ForecastRecord) -> Count) -> f64 {
    let hit = records.iter().filter(|r| r.observed <= limit(r)).count();
    hit as f64 / records.len() as f64
}

/// Proposed-versus-stationary evaluation of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    pub records: Vec<ForecastRecord>,
    pub stationary_records: Vec<ForecastRecord>,
    pub mse_proposed: f64,
    pub mse_stationary: f64,
    pub k_used: f64,
    pub coverage95: f64,
    pub coverage99: f64,
}

impl EvaluationReport {
    pub fn new(
        label: impl Into<String>,
        records: Vec<ForecastRecord>,
        stationary_records: Vec<ForecastRecord>,
        k_used: f64,
    ) -> Result<Self> {
        if records.len() != stationary_records.len() {
            return Err(Error::InvalidParameter("record sequences differ in length".into()));
        }
        Ok(Self {
            label: label.into(),
            mse_proposed: mse(&records)?,
            mse_stationary: mse(&stationary_records)?,
            coverage95: coverage(&records, |r| r.upper95),
            coverage99: coverage(&records, |r| r.upper99),
            records,
            stationary_records,
            k_used,
        })
    }

    /// Runs both arms over `counts` from the prior `(alpha1, beta1)`.
    pub fn evaluate(counts: &[Count], k: f64, alpha1: f64, beta1: f64, levels: Levels) -> Result<Self> {
        let proposed = rolling_forecast(counts, k, alpha1, beta1, levels)?;
        let stationary = rolling_forecast(counts, 1.0, alpha1, beta1, levels)?;
        Self::new("", proposed, stationary, k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Records as CSV: `index,point_proposed,upper95,upper99,point_stationary,observed`.
    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "index",
            "point_proposed",
            "upper95",
            "upper99",
            "point_stationary",
            "observed",
        ])?;
        for (p, s) in self.records.iter().zip(&self.stationary_records) {
            w.write_record([
                p.index.to_string(),
                p.point.to_string(),
                p.upper95.to_string(),
                p.upper99.to_string(),
                s.point.to_string(),
                p.observed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Options for [`daily_protocol`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProtocolOptions {
    pub fit: FitOptions,
    pub levels: Levels,
    /// Start each day from the state filtered over the previous day instead of the prior.
    pub carry_over: bool,
}

/// Fits `k` on day `d - 1`, then forecasts day `d` under the fitted `k` and under `k = 1`.
///
/// Missing intervals are dropped before fitting and forecasting.
pub fn daily_protocol(days: &[TrafficSeries], opts: &ProtocolOptions) -> Result<Vec<EvaluationReport>> {
    if days.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "daily protocol needs at least 2 days, got {}",
            days.len()
        )));
    }
    let observed: Vec<Vec<Count>> = days.iter().map(TrafficSeries::observed).collect();
    if let Some(i) = observed.iter().position(Vec::is_empty) {
        return Err(Error::EmptyInput(if i == 0 {
            "first day has no observed intervals"
        } else {
            "a day has no observed intervals"
        }));
    }
    (1..days.len())
        .into_par_iter()
        .map(|d| {
            let prev = &observed[d - 1];
            let today = &observed[d];
            let fit = estimation::mle_k(prev, &opts.fit)?;
            let k_hat = fit.k_refined.unwrap_or(fit.k_hat);
            let start = |k: f64| -> Result<GammaState> {
                if opts.carry_over {
                    crate::model::state_from_history(prev, opts.fit.alpha1, opts.fit.beta1, k)
                } else {
                    GammaState::new(opts.fit.alpha1, opts.fit.beta1, k)
                }
            };
            let proposed = rolling_forecast_from(start(k_hat)?, today, opts.levels)?;
            let stationary = rolling_forecast_from(start(1.0)?, today, opts.levels)?;
            EvaluationReport::new(days[d].day_label(), proposed, stationary, k_hat)
        })
        .collect()
}

/// MSE of the rolling forecast at each `k`, ordered by `k`.
pub fn k_sweep(counts: &[Count], ks: &[f64], alpha1: f64, beta1: f64) -> Result<Vec<(f64, f64)>> {
    for &k in ks {
        check_k(k)?;
    }
    let mut ks = ks.to_vec();
    ks.sort_by(f64::total_cmp);
    ks.into_par_iter()
        .map(|k| {
            let records = rolling_forecast(counts, k, alpha1, beta1, Levels::default())?;
            Ok((k, mse(&records)?))
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(sweep: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "mse"])?;
    for (k, m) in sweep {
        w.write_record([k.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Point and interval estimates of both models at one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub index: usize,
    pub expected_proposed: f64,
    pub upper95_proposed: Count,
    pub upper99_proposed: Count,
    pub expected_stationary: f64,
    pub upper95_stationary: Count,
    pub upper99_stationary: Count,
    pub observed: Count,
}

pub fn interval_report(report: &EvaluationReport, t_star: usize) -> Result<IntervalRow> {
    let len = report.records.len();
    let (p, s) = match (report.records.get(t_star), report.stationary_records.get(t_star)) {
        (Some(p), Some(s)) => (p, s),
        _ => return Err(Error::OutOfRange { index: t_star, len }),
    };
    Ok(IntervalRow {
        index: p.index,
        expected_proposed: p.point,
        upper95_proposed: p.upper95,
        upper99_proposed: p.upper99,
        expected_stationary: s.point,
        upper95_stationary: s.upper95,
        upper99_stationary: s.upper99,
        observed: p.observed,
    })
}

/// Index of the largest observed count (first on ties).
pub fn argmax_observed(records: &[ForecastRecord]) -> Option<usize> {
    records
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.observed.cmp(&b.1.observed).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}
