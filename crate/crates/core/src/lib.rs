//! Suitability filtering for deployed classifiers.
//!
//! Given a labeled test split, a labeled holdout used to fit a per-sample
//! correctness estimator, and an unlabeled batch of user data, decide whether
//! the classifier's accuracy on the user data has dropped by more than a
//! margin `m` relative to the test split. The decision is the outcome of a
//! one-sided Welch non-inferiority test on estimated correctness
//! probabilities, which keeps the false positive rate at the chosen
//! significance level.
//!
//! Pipeline: [`signals`] turn raw logits into twelve per-sample features,
//! [`model`] maps them to correctness probabilities, [`calibration`] fits
//! and audits calibration, [`stats`] hosts the hypothesis tests, and
//! [`pipeline`] ties them into a SUITABLE / INCONCLUSIVE decision.
//! [`harness`] reproduces the evaluation protocol on synthetic or external
//! fold data and [`io`] handles the file formats used by the CLI.

pub mod calibration;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
mod optim;
pub mod pipeline;
pub mod signals;
pub mod stats;

pub use calibration::{CalibrationReport, Calibrator};
pub use error::{Error, Result};
pub use model::{CorrectnessEstimator, TrainConfig};
pub use pipeline::{Decision, SuitabilityReport};
pub use signals::{LogitRecord, SignalMatrix, SignalNormalizer, SignalVector, NUM_SIGNALS};
pub use stats::WelchResult;
