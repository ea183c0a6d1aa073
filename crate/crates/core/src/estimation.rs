//! Maximum-likelihood estimation of the discount constant and AIC model selection.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_k, check_positive, Error, Result};
use crate::model::{Count, GammaState};

pub const DEFAULT_GRID_SIZE: usize = 1000;

/// Parameters fitted by maximum likelihood in the discounted model.
pub const PROPOSED_PARAMS: u32 = 1;
/// The stationary model fixes `k = 1`.
pub const STATIONARY_PARAMS: u32 = 0;

/// Sum of one-step predictive log-probabilities of `counts` under discount `k`.
///
/// The first term is the prior predictive under `(alpha1, beta1)` and therefore
/// does not depend on `k`.
pub fn log_likelihood(counts: &[Count], k: f64, alpha1: f64, beta1: f64) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("log-likelihood needs at least one count"));
    }
    let state = GammaState::new(alpha1, beta1, k)?;
    Ok(continue_log_likelihood(state, counts).0)
}

/// Conditional log-likelihood of `counts` starting from `state`; returns the
/// sum and the state after absorbing them.
pub fn continue_log_likelihood(mut state: GammaState, counts: &[Count]) -> (f64, GammaState) {
    let mut total = 0.0;
    for &x in counts {
        total += state.predictive_ln_pmf(x);
        state = state.discount_step(x);
    }
    (total, state)
}

/// Log-likelihood over a grid of discount values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCurve {
    pub grid: Vec<f64>,
    pub loglik: Vec<f64>,
    pub argmax_index: usize,
}

impl LikelihoodCurve {
    /// Evaluates the curve on `grid`, which must be strictly increasing inside `(0, 1]`.
    pub fn evaluate(counts: &[Count], grid: Vec<f64>, alpha1: f64, beta1: f64) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyInput("log-likelihood needs at least one count"));
        }
        if grid.is_empty() {
            return Err(Error::InvalidParameter("empty k grid".into()));
        }
        check_positive("alpha1", alpha1)?;
        check_positive("beta1", beta1)?;
        for &k in &grid {
            check_k(k)?;
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("k grid must be strictly increasing".into()));
        }
        // Order-preserving parallel map; the reduction below is sequential.
        let loglik = grid
            .par_iter()
            .map(|&k| log_likelihood(counts, k, alpha1, beta1))
            .collect::<Result<Vec<_>>>()?;
        let argmax_index = argmax_smallest(&loglik);
        Ok(Self {
            grid,
            loglik,
            argmax_index,
        })
    }

    pub fn k_hat(&self) -> f64 {
        self.grid[self.argmax_index]
    }

    pub fn max_loglik(&self) -> f64 {
        self.loglik[self.argmax_index]
    }

    /// Number of interior strict local maxima; a value above one flags a
    /// multimodal curve.
    pub fn local_maxima(&self) -> usize {
        let l = &self.loglik;
        let n = l.len();
        (0..n)
            .filter(|&i| {
                let left = i == 0 || l[i] > l[i - 1];
                let right = i + 1 == n || l[i] >= l[i + 1];
                left && right
            })
            .count()
    }

    /// Two-column `k,loglik` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "loglik"])?;
        for (k, l) in self.grid.iter().zip(&self.loglik) {
            w.write_record([k.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the maximum; ties resolve to the first (smallest-k) index.
fn argmax_smallest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] || (values[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

/// `k = j / grid_size` for `j = 1..=grid_size`.
pub fn uniform_grid(grid_size: usize) -> Result<Vec<f64>> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid size must be at least 2, got {grid_size}"
        )));
    }
    Ok((1..=grid_size).map(|j| j as f64 / grid_size as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Proposed,
    Stationary,
}

/// Options for [`mle_k`] and [`compare_models`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub grid_size: usize,
    pub alpha1: f64,
    pub beta1: f64,
    /// Golden-section refinement around the best grid point.
    pub refine: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            alpha1: crate::model::DEFAULT_ALPHA1,
            beta1: crate::model::DEFAULT_BETA1,
            refine: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub k_hat: f64,
    /// Golden-section refinement of `k_hat`, when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k_refined: Option<f64>,
    #[serde(flatten)]
    pub curve: LikelihoodCurve,
    pub aic_proposed: f64,
    pub aic_stationary: f64,
    pub selected: Model,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Grid-search MLE of `k`, reported together with both AIC values.
pub fn mle_k(counts: &[Count], opts: &FitOptions) -> Result<FitReport> {
    let grid = uniform_grid(opts.grid_size)?;
    let curve = LikelihoodCurve::evaluate(counts, grid, opts.alpha1, opts.beta1)?;
    let k_hat = curve.k_hat();
    let k_refined = if opts.refine {
        Some(golden_refine(counts, &curve, opts.alpha1, opts.beta1)?)
    } else {
        None
    };
    let aic_proposed = aic_from_loglik(curve.max_loglik(), PROPOSED_PARAMS);
    // k = 1 is the last grid point.
    let stationary_ll = *curve.loglik.last().expect("grid nonempty");
    let aic_stationary = aic_from_loglik(stationary_ll, STATIONARY_PARAMS);
    let selected = if aic_proposed < aic_stationary {
        Model::Proposed
    } else {
        Model::Stationary
    };
    Ok(FitReport {
        k_hat,
        k_refined,
        curve,
        aic_proposed,
        aic_stationary,
        selected,
    })
}

/// Fits `k` and selects between the discounted and stationary models by AIC.
pub fn compare_models(counts: &[Count], opts: &FitOptions) -> Result<FitReport> {
    mle_k(counts, opts)
}

pub fn aic(counts: &[Count], k: f64, alpha1: f64, beta1: f64, n_params: u32) -> Result<f64> {
    Ok(aic_from_loglik(log_likelihood(counts, k, alpha1, beta1)?, n_params))
}

fn aic_from_loglik(loglik: f64, n_params: u32) -> f64 {
    2.0 * n_params as f64 - 2.0 * loglik
}

fn golden_refine(counts: &[Count], curve: &LikelihoodCurve, alpha1: f64, beta1: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let i = curve.argmax_index;
    let mut lo = if i == 0 { curve.grid[0] * 0.5 } else { curve.grid[i - 1] };
    let mut hi = curve.grid[(i + 1).min(curve.grid.len() - 1)];
    let f = |k: f64| log_likelihood(counts, k, alpha1, beta1);
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..60 {
        if hi - lo < 1e-9 {
            break;
        }
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (lo + hi);
    // Never report a point worse than the grid optimum.
    if f(mid)? >= curve.max_loglik() {
        Ok(mid)
    } else {
        Ok(curve.k_hat())
    }
}
