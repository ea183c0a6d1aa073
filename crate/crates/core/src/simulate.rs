//! Synthetic traffic drawn from the time-varying Poisson model.
//!
//! Randomness comes from PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`). Every tick
//! gets its own stream: tick `t` (1-based) uses stream `t` of a generator
//! whose 128-bit state is derived from the seed by SplitMix64, and stream 0
//! draws the initial rate. Draws are therefore reproducible regardless of how
//! many uniforms each sampler consumes.
//!
//! The Beta shock of each tick is coupled to the companion filter's
//! pre-decay shape `alpha + x`, which keeps the Gamma posterior exact.

use chrono::{DateTime, TimeZone, Utc};
use rand::Rng;
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_k, check_positive, Error, Result};
use crate::estimation::{self, FitOptions, Model};
use crate::evaluation::{self, Levels};
use crate::ingest::{TrafficSeries, DEFAULT_INTERVAL_SECONDS};
use crate::model::{Count, GammaState};

/// Mean below which Poisson draws use CDF inversion.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> Pcg64 {
    let hi = splitmix64(seed);
    let lo = splitmix64(hi ^ 0x5851_F42D_4C95_7F2D);
    Pcg64::new(((hi as u128) << 64) | lo as u128, stream as u128)
}

// Uniform on (0, 1].
fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Log of a Gamma(shape, 1) draw via Marsaglia–Tsang. Shapes below one use
/// `G(a) = G(a + 1) U^(1/a)`, kept in log space so tiny shapes do not underflow.
fn ln_standard_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let boosted = ln_standard_gamma(shape + 1.0, rng);
        return boosted + open_uniform(rng).ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * z;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_uniform(rng);
        let z2 = z * z;
        if u < 1.0 - 0.0331 * z2 * z2 || u.ln() < 0.5 * z2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma rate", rate)?;
    Ok((ln_standard_gamma(shape, rng) - rate.ln()).exp())
}

/// Beta draw as `X / (X + Y)` with independent Gamma variates, clamped to the
/// open unit interval.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    check_positive("beta a", a)?;
    check_positive("beta b", b)?;
    let lx = ln_standard_gamma(a, rng);
    let ly = ln_standard_gamma(b, rng);
    let u = 1.0 / (1.0 + (ly - lx).exp());
    Ok(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// Poisson draw: sequential CDF inversion below [`POISSON_INVERSION_LIMIT`],
/// Hörmann's transformed rejection (PTRS) above.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<Count> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "poisson mean must be finite and nonnegative, got {mean}"
        )));
    }
    if mean < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.gen();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut x: Count = 0;
        while u > cdf {
            x += 1;
            p *= mean / x as f64;
            cdf += p;
            if p == 0.0 && cdf < u {
                // Rounding left the cdf short of u in the far tail.
                break;
            }
        }
        return Ok(x);
    }
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.gen::<f64>() - 0.5;
        let v: f64 = rng.gen();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return Ok(k as Count);
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -mean + k * loglam - libm::lgamma(k + 1.0) {
            return Ok(k as Count);
        }
    }
}

/// Simulation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub k_true: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub ticks: usize,
    pub seed: u64,
    /// Fixed initial rate; drawn from Gamma(alpha1, beta1) when absent.
    pub theta1: Option<f64>,
    pub start: DateTime<Utc>,
    pub interval_seconds: u32,
}

impl SimConfig {
    pub fn new(k_true: f64, alpha1: f64, beta1: f64, ticks: usize, seed: u64) -> Self {
        Self {
            k_true,
            alpha1,
            beta1,
            ticks,
            seed,
            theta1: None,
            start: Utc.with_ymd_and_hms(2005, 3, 18, 0, 0, 0).unwrap(),
            interval_seconds: DEFAULT_INTERVAL_SECONDS,
        }
    }

    pub fn with_theta1(mut self, theta1: f64) -> Self {
        self.theta1 = Some(theta1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_k(self.k_true)?;
        check_positive("alpha1", self.alpha1)?;
        check_positive("beta1", self.beta1)?;
        if let Some(t) = self.theta1 {
            check_positive("theta1", t)?;
        }
        if self.ticks == 0 {
            return Err(Error::InvalidParameter("ticks must be positive".into()));
        }
        if self.interval_seconds == 0 {
            return Err(Error::InvalidParameter("interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub series: TrafficSeries,
    /// Latent rate of each tick.
    pub theta: Vec<f64>,
}

impl Simulation {
    pub fn counts(&self) -> Vec<Count> {
        self.series.observed()
    }

    /// `timestamp,theta` CSV aligned with the counts file.
    pub fn write_theta_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp", "theta"])?;
        for (i, th) in self.theta.iter().enumerate() {
            let ts = self.series.interval_start(i).format("%Y-%m-%dT%H:%M:%SZ").to_string();
            w.write_record([ts, th.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn simulate_traffic(cfg: &SimConfig) -> Result<Simulation> {
    cfg.validate()?;
    let k = cfg.k_true;
    let mut theta = match cfg.theta1 {
        Some(t) => t,
        None => sample_gamma(cfg.alpha1, cfg.beta1, &mut stream_rng(cfg.seed, 0))?,
    }
    .max(f64::MIN_POSITIVE);
    let mut state = GammaState::new(cfg.alpha1, cfg.beta1, k)?;
    let mut counts = Vec::with_capacity(cfg.ticks);
    let mut path = Vec::with_capacity(cfg.ticks);
    for tick in 0..cfg.ticks {
        let mut rng = stream_rng(cfg.seed, tick as u64 + 1);
        path.push(theta);
        let x = sample_poisson(theta, &mut rng)?;
        counts.push(Some(x));
        let shape = state.alpha() + x as f64;
        state = state.discount_step(x);
        if k < 1.0 {
            let u = sample_beta(k * shape, (1.0 - k) * shape, &mut rng)?;
            theta = (u / k * theta).max(f64::MIN_POSITIVE);
        }
    }
    let source = format!("simulated k={} seed={}", cfg.k_true, cfg.seed);
    Ok(Simulation {
        series: TrafficSeries::new(cfg.start, cfg.interval_seconds, counts, source)?,
        theta: path,
    })
}

/// Parameters for [`recovery_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub k_true: f64,
    pub ticks: usize,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub alpha1: f64,
    pub beta1: f64,
    pub theta1: Option<f64>,
    pub grid_size: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            k_true: 0.8,
            ticks: 288,
            n_seeds: 20,
            base_seed: 0,
            alpha1: crate::model::DEFAULT_ALPHA1,
            beta1: crate::model::DEFAULT_BETA1,
            theta1: None,
            grid_size: estimation::DEFAULT_GRID_SIZE,
        }
    }
}

/// Outcome of one simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRun {
    pub seed: u64,
    /// Total simulated arrivals.
    pub total_count: u64,
    pub k_hat: f64,
    pub aic_proposed: f64,
    pub aic_stationary: f64,
    pub selected: Model,
    pub mse_proposed: f64,
    pub mse_stationary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub config: RecoveryConfig,
    pub runs: Vec<RecoveryRun>,
    pub median_k_hat: f64,
    pub q1_k_hat: f64,
    pub q3_k_hat: f64,
    pub iqr_k_hat: f64,
    /// Fraction of seeds where AIC picks the true regime (stationary iff `k_true == 1`).
    pub aic_correct_fraction: f64,
    /// Fraction of seeds where the fitted-k rolling MSE beats the stationary MSE.
    pub mse_proposed_better_fraction: f64,
}

/// Simulates `n_seeds` runs and fits `k` on each.
pub fn recovery_experiment(cfg: &RecoveryConfig) -> Result<RecoverySummary> {
    if cfg.n_seeds == 0 {
        return Err(Error::InvalidParameter("need at least one seed".into()));
    }
    let fit = FitOptions {
        grid_size: cfg.grid_size,
        alpha1: cfg.alpha1,
        beta1: cfg.beta1,
        refine: false,
    };
    let runs = (0..cfg.n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.base_seed.wrapping_add(i);
            let mut sim_cfg = SimConfig::new(cfg.k_true, cfg.alpha1, cfg.beta1, cfg.ticks, seed);
            sim_cfg.theta1 = cfg.theta1;
            let counts = simulate_traffic(&sim_cfg)?.counts();
            let report = estimation::mle_k(&counts, &fit)?;
            let eval = evaluation::EvaluationReport::evaluate(
                &counts,
                report.k_hat,
                cfg.alpha1,
                cfg.beta1,
                Levels::default(),
            )?;
            Ok(RecoveryRun {
                seed,
                total_count: counts.iter().sum(),
                k_hat: report.k_hat,
                aic_proposed: report.aic_proposed,
                aic_stationary: report.aic_stationary,
                selected: report.selected,
                mse_proposed: eval.mse_proposed,
                mse_stationary: eval.mse_stationary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ks: Vec<f64> = runs.iter().map(|r| r.k_hat).collect();
    ks.sort_by(f64::total_cmp);
    let truth = if cfg.k_true == 1.0 {
        Model::Stationary
    } else {
        Model::Proposed
    };
    let n = runs.len() as f64;
    let (q1, median, q3) = (quantile(&ks, 0.25), quantile(&ks, 0.5), quantile(&ks, 0.75));
    Ok(RecoverySummary {
        config: *cfg,
        median_k_hat: median,
        q1_k_hat: q1,
        q3_k_hat: q3,
        iqr_k_hat: q3 - q1,
        aic_correct_fraction: runs.iter().filter(|r| r.selected == truth).count() as f64 / n,
        mse_proposed_better_fraction: runs.iter().filter(|r| r.mse_proposed < r.mse_stationary).count() as f64 / n,
        runs,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
