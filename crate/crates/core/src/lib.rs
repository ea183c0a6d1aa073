//! Forecasting of web-request arrival counts with a time-varying Poisson model.
//!
//! - [`model`]: the discounted Poisson–Gamma filter and its negative-binomial predictive.
//! - [`estimation`]: log-likelihood in the discount `k`, grid-search MLE, AIC.
//! - [`evaluation`]: rolling one-step forecasts, MSE, the previous-day fitting protocol.
//! - [`ingest`]: access-log parsing, binning, and the counts CSV.
//! - [`simulate`]: seeded synthetic traffic from the same generative model.

pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod simulate;

pub use error::{Error, Result};
pub use estimation::{FitOptions, FitReport, LikelihoodCurve, Model};
pub use evaluation::{EvaluationReport, ForecastRecord, Levels};
pub use ingest::TrafficSeries;
pub use model::{Count, GammaState, PredictiveDist};
pub use simulate::SimConfig;
