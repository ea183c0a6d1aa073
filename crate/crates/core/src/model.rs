//! The discounted Poisson–Gamma filter.
//!
//! The rate of a Poisson count process drifts as a multiplicative random
//! walk, `theta[t+1] = (u[t] / k) * theta[t]` with a Beta-distributed shock
//! `u[t]`. Under that transition a Gamma posterior stays Gamma: each tick adds
//! the observed count to the shape and one to the rate, then scales both by
//! the discount constant `k`. The one-step predictive of the next count is
//! negative binomial, and its mean `alpha / beta` is an exponentially
//! weighted moving average of the history.

use serde::{Deserialize, Serialize};

use crate::error::{check_k, check_level, check_positive, Error, Result};

/// Arrivals observed in one interval.
pub type Count = u64;

/// Default prior shape. Small shape approximates the improper `1/theta` prior
/// while keeping the first predictive proper.
pub const DEFAULT_ALPHA1: f64 = 0.5;
/// Default prior rate.
pub const DEFAULT_BETA1: f64 = 1.0;

/// Smallest representable shape. Long runs of zero counts under a small `k`
/// shrink the shape geometrically; it is floored here instead of reaching zero.
const ALPHA_FLOOR: f64 = f64::MIN_POSITIVE;

/// `ln Gamma(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(libm::lgamma(x))
    } else {
        Err(Error::Domain(format!(
            "log_gamma requires a positive finite argument, got {x}"
        )))
    }
}

// Internal path for callers that already guarantee a positive argument.
#[inline]
fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Sufficient statistics of the Gamma belief over the current rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaState {
    alpha: f64,
    beta: f64,
    k: f64,
    t: u64,
}

impl GammaState {
    /// A fresh state with no observations absorbed.
    pub fn new(alpha: f64, beta: f64, k: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        check_positive("beta", beta)?;
        check_k(k)?;
        Ok(Self { alpha, beta, k, t: 0 })
    }

    /// The default non-informative prior under discount `k`.
    pub fn prior(k: f64) -> Result<Self> {
        Self::new(DEFAULT_ALPHA1, DEFAULT_BETA1, k)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Number of observations absorbed through [`GammaState::discount_step`].
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Bayes update on one count without the time decay.
    pub fn posterior_update(&self, x: Count) -> Self {
        Self {
            alpha: self.alpha + x as f64,
            beta: self.beta + 1.0,
            ..*self
        }
    }

    /// One tick of the filter: Bayes update followed by power discounting.
    pub fn discount_step(&self, x: Count) -> Self {
        let k = self.k;
        Self {
            alpha: (k * (self.alpha + x as f64)).max(ALPHA_FLOOR),
            beta: k * (self.beta + 1.0),
            k,
            t: self.t + 1,
        }
    }

    /// Bayes-optimal point forecast of the next count under squared-error loss.
    pub fn point_forecast(&self) -> f64 {
        self.alpha / self.beta
    }

    /// Variance of the Beta shock driving the next rate transition.
    pub fn u_variance(&self) -> f64 {
        self.k * (1.0 - self.k) / (self.alpha + 1.0)
    }

    pub fn predictive(&self) -> PredictiveDist {
        PredictiveDist::from_state(self)
    }

    pub fn predictive_pmf(&self, x: Count) -> f64 {
        self.predictive().pmf(x)
    }

    pub fn predictive_ln_pmf(&self, x: Count) -> f64 {
        self.predictive().ln_pmf(x)
    }

    pub fn predictive_quantile(&self, level: f64) -> Result<Count> {
        self.predictive().quantile(level)
    }
}

/// Closed-form filter state after absorbing `counts` from the prior
/// `(alpha1, beta1)`.
///
/// The shape is accumulated in one Horner-style pass; the rate, which never
/// depends on the data, comes from the geometric-series sum
/// `k^t * beta1 + k (1 - k^t) / (1 - k)`.
pub fn state_from_history(counts: &[Count], alpha1: f64, beta1: f64, k: f64) -> Result<GammaState> {
    let prior = GammaState::new(alpha1, beta1, k)?;
    if counts.is_empty() {
        return Ok(prior);
    }
    let mut alpha = alpha1;
    for &x in counts {
        alpha = (k * (alpha + x as f64)).max(ALPHA_FLOOR);
    }
    let t = counts.len() as u64;
    Ok(GammaState {
        alpha,
        beta: discounted_rate(beta1, k, t),
        k,
        t,
    })
}

/// Rate parameter after `t` ticks from `beta1`.
pub fn discounted_rate(beta1: f64, k: f64, t: u64) -> f64 {
    if k == 1.0 {
        return beta1 + t as f64;
    }
    let kt = powu(k, t);
    // k + k^2 + ... + k^t
    let series = k * -(t as f64 * k.ln()).exp_m1() / (1.0 - k);
    kt * beta1 + series
}

fn powu(k: f64, t: u64) -> f64 {
    if t <= i32::MAX as u64 {
        k.powi(t as i32)
    } else {
        (t as f64 * k.ln()).exp()
    }
}

/// Negative-binomial predictive distribution of the next count.
///
/// `r` is the Gamma shape and `p = beta / (beta + 1)` the success probability;
/// the pmf is `Gamma(r + x) / (Gamma(r) x!) * p^r * (1 - p)^x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveDist {
    r: f64,
    p: f64,
    ln_p: f64,
    ln_q: f64,
}

impl PredictiveDist {
    pub fn new(r: f64, p: f64) -> Result<Self> {
        check_positive("r", r)?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("p must lie in (0, 1), got {p}")));
        }
        Ok(Self {
            r,
            p,
            ln_p: p.ln(),
            ln_q: (-p).ln_1p(),
        })
    }

    pub fn from_state(state: &GammaState) -> Self {
        let beta = state.beta;
        Self {
            r: state.alpha,
            p: beta / (beta + 1.0),
            ln_p: -(1.0 / beta).ln_1p(),
            ln_q: -beta.ln_1p(),
        }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mean(&self) -> f64 {
        self.r * (1.0 - self.p) / self.p
    }

    pub fn variance(&self) -> f64 {
        self.r * (1.0 - self.p) / (self.p * self.p)
    }

    pub fn ln_pmf(&self, x: Count) -> f64 {
        let xf = x as f64;
        let rising = if x == 0 {
            0.0
        } else {
            ln_gamma(self.r + xf) - ln_gamma(self.r)
        };
        self.r * self.ln_p + xf * self.ln_q + rising - ln_gamma(xf + 1.0)
    }

    pub fn pmf(&self, x: Count) -> f64 {
        self.ln_pmf(x).exp().min(1.0)
    }

    /// Smallest `q` with `P(X <= q) >= level`: the one-sided upper predictive limit.
    ///
    /// Scans the cumulative pmf from zero, capped at `mean + 50 sd`.
    pub fn quantile(&self, level: f64) -> Result<Count> {
        check_level(level)?;
        let cap = (self.mean() + 50.0 * self.variance().sqrt()).ceil();
        let cap = if cap.is_finite() && cap < u64::MAX as f64 {
            cap as u64
        } else {
            u64::MAX
        };
        let mut cumulative = 0.0;
        let mut x = 0;
        loop {
            cumulative += self.pmf(x);
            if cumulative >= level || x >= cap {
                return Ok(x);
            }
            x += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn log_gamma_identities() {
        assert_eq!(log_gamma(1.0).unwrap(), 0.0);
        assert!(close(log_gamma(5.0).unwrap(), 24f64.ln(), 1e-14));
        assert!(close(log_gamma(0.5).unwrap(), std::f64::consts::PI.sqrt().ln(), 1e-14));
        assert!(close(log_gamma(0.5).unwrap(), 0.5723649429, 1e-10));
        assert!(close(log_gamma(5.0).unwrap(), 3.1780538303, 1e-10));
    }

    #[test]
    fn log_gamma_rejects_nonpositive() {
        assert!(matches!(log_gamma(0.0), Err(Error::Domain(_))));
        assert!(matches!(log_gamma(-2.5), Err(Error::Domain(_))));
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn log_gamma_matches_stirling_series() {
        // Independent route for large arguments: Stirling series with four
        // correction terms.
        for &x in &[50.0f64, 123.25, 1e3, 4.5e4, 1e6] {
            let inv = 1.0 / x;
            let inv2 = inv * inv;
            let series =
                inv / 12.0 - inv * inv2 / 360.0 + inv * inv2 * inv2 / 1260.0 - inv * inv2 * inv2 * inv2 / 1680.0;
            let stirling = (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series;
            let got = log_gamma(x).unwrap();
            assert!(((got - stirling) / stirling).abs() <= 1e-12, "x={x}");
        }
    }

    #[test]
    fn log_gamma_small_arguments_via_recurrence() {
        // Gamma(x) = Gamma(x + 1) / x.
        for &x in &[1e-3, 0.01, 0.3, 0.77] {
            let got = log_gamma(x).unwrap();
            let via = log_gamma(x + 1.0).unwrap() - x.ln();
            assert!(((got - via) / got).abs() <= 1e-12, "x={x}");
        }
    }

    #[test]
    fn constructor_validation() {
        assert!(GammaState::new(0.0, 1.0, 0.5).is_err());
        assert!(GammaState::new(1.0, -1.0, 0.5).is_err());
        assert!(GammaState::new(1.0, 1.0, 0.0).is_err());
        assert!(GammaState::new(1.0, 1.0, 1.01).is_err());
        assert!(GammaState::new(1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn posterior_update_examples() {
        let s = GammaState::new(2.0, 1.0, 0.7).unwrap().posterior_update(3);
        assert_eq!((s.alpha(), s.beta(), s.k(), s.t()), (5.0, 2.0, 0.7, 0));
        let s = GammaState::new(0.5, 1.0, 0.7).unwrap().posterior_update(0);
        assert_eq!((s.alpha(), s.beta()), (0.5, 2.0));
    }

    #[test]
    fn discount_step_examples() {
        let s = GammaState::new(1.0, 1.0, 0.5).unwrap().discount_step(4);
        assert_eq!((s.alpha(), s.beta(), s.t()), (2.5, 1.0, 1));
        let s = GammaState::new(2.0, 1.0, 1.0).unwrap().discount_step(3);
        assert_eq!((s.alpha(), s.beta()), (5.0, 2.0));
    }

    #[test]
    fn discount_step_is_decayed_posterior() {
        let s = GammaState::new(3.3, 1.7, 0.61).unwrap();
        let fused = s.discount_step(9);
        let p = s.posterior_update(9);
        assert_eq!(fused.alpha(), 0.61 * p.alpha());
        assert_eq!(fused.beta(), 0.61 * p.beta());
    }

    #[test]
    fn history_examples() {
        let s = state_from_history(&[], 3.0, 1.0, 0.7).unwrap();
        assert_eq!((s.alpha(), s.beta(), s.t()), (3.0, 1.0, 0));
        let s = state_from_history(&[4], 1.0, 1.0, 0.5).unwrap();
        assert!(close(s.alpha(), 2.5, 1e-15));
        assert!(close(s.beta(), 1.0, 1e-15));
    }

    #[test]
    fn history_matches_fold_short() {
        let counts = [3, 1, 4];
        let closed = state_from_history(&counts, 1.0, 1.0, 0.8).unwrap();
        let folded = counts
            .iter()
            .fold(GammaState::new(1.0, 1.0, 0.8).unwrap(), |s, &x| s.discount_step(x));
        assert!(close(closed.alpha(), folded.alpha(), 1e-12));
        assert!(close(closed.beta(), folded.beta(), 1e-12));
        assert_eq!(closed.t(), 3);
        // alpha_4 = 0.8^3 + 0.8^3*3 + 0.8^2*1 + 0.8*4
        assert!(close(closed.alpha(), 0.512 * 4.0 + 0.64 + 3.2, 1e-12));
    }

    #[test]
    fn alpha_is_floored_not_zero() {
        let mut s = GammaState::new(0.5, 1.0, 0.01).unwrap();
        for _ in 0..500 {
            s = s.discount_step(0);
        }
        assert!(s.alpha() > 0.0);
        assert!(s.predictive_ln_pmf(0).is_finite());
        assert!(s.predictive_ln_pmf(3).is_finite());
    }

    #[test]
    fn point_forecast_examples() {
        assert_eq!(GammaState::new(10.0, 2.0, 1.0).unwrap().point_forecast(), 5.0);
        let s = state_from_history(&[4], 1.0, 1.0, 1.0).unwrap();
        assert_eq!(s.point_forecast(), 2.5);
    }

    #[test]
    fn geometric_pmf() {
        let s = GammaState::new(1.0, 1.0, 0.9).unwrap();
        for (x, want) in [(0, 0.5), (1, 0.25), (2, 0.125)] {
            assert!(close(s.predictive_pmf(x), want, 1e-15));
        }
    }

    #[test]
    fn pmf_normalizes() {
        let s = GammaState::new(2.5, 1.0, 0.9).unwrap();
        let total: f64 = (0..=200).map(|x| s.predictive_pmf(x)).sum();
        assert!((1.0 - 1e-9..=1.0 + 1e-12).contains(&total), "{total}");
    }

    #[test]
    fn pmf_survives_large_counts() {
        let s = GammaState::new(400.0, 2.0, 0.9).unwrap();
        let p = s.predictive_pmf(200);
        assert!(p.is_finite() && p > 0.0 && p < 1.0);
        assert!(s.predictive_ln_pmf(5000).is_finite());
    }

    #[test]
    fn predictive_mean_and_constructor() {
        let s = GammaState::new(3.7, 2.2, 0.9).unwrap();
        let d = s.predictive();
        assert!(close(d.mean(), s.point_forecast(), 1e-12));
        let d2 = PredictiveDist::new(d.r(), d.p()).unwrap();
        assert!(close(d2.pmf(5), d.pmf(5), 1e-14));
        assert!(PredictiveDist::new(1.0, 1.0).is_err());
        assert!(PredictiveDist::new(-1.0, 0.5).is_err());
    }

    #[test]
    fn quantile_examples() {
        let s = GammaState::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(s.predictive_quantile(0.95).unwrap(), 4);
        assert_eq!(s.predictive_quantile(0.99).unwrap(), 6);
        assert_eq!(s.predictive_quantile(0.5).unwrap(), 0);
        assert!(s.predictive_quantile(1.0).is_err());
        assert!(s.predictive_quantile(0.0).is_err());
    }

    #[test]
    fn u_variance_examples() {
        let s = GammaState::new(3.0, 1.0, 0.5).unwrap();
        assert_eq!(s.u_variance(), 0.0625);
        assert_eq!(GammaState::new(7.0, 1.0, 1.0).unwrap().u_variance(), 0.0);
        // k = 0.5 maximizes k (1 - k) for fixed alpha.
        let at = |k: f64| GammaState::new(1e-9, 1.0, k).unwrap().u_variance();
        for k in [0.1, 0.3, 0.49, 0.51, 0.9, 1.0] {
            assert!(at(0.5) > at(k));
        }
    }

    #[test]
    fn discounted_rate_geometric_sum() {
        for &(k, t) in &[(0.5f64, 1u64), (0.8, 3), (0.99, 500), (0.3, 40)] {
            let direct: f64 = 1.7 * k.powi(t as i32) + (1..=t).map(|i| k.powi(i as i32)).sum::<f64>();
            let got = discounted_rate(1.7, k, t);
            assert!(((got - direct) / direct).abs() < 1e-13, "k={k} t={t}");
        }
        assert_eq!(discounted_rate(1.0, 1.0, 7), 8.0);
    }
}
