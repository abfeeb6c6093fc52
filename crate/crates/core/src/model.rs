//! Logistic-regression correctness estimator.
//!
//! Maps normalized suitability signals to the probability that the
//! underlying classifier got a sample right, `p_c = σ(wᵀs̃ + b)`, fitted by
//! minimizing L2-regularized binary cross-entropy on a labeled holdout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::Calibrator;
use crate::error::{Error, Result};
use crate::optim::{self, DescentConfig};
use crate::signals::{self, LogitRecord, Signal, SignalMatrix, SignalNormalizer, NUM_SIGNALS};
use crate::stats;

pub const ESTIMATOR_FORMAT_VERSION: u32 = 1;

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^u)` without overflow.
pub(crate) fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Inverse of [`sigmoid`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Cross-entropy of a single prediction given its pre-sigmoid score.
pub(crate) fn bce_term(score: f64, correct: bool) -> f64 {
    if correct {
        softplus(-score)
    } else {
        softplus(score)
    }
}

/// `c_i = 1` iff the classifier's prediction equals the ground-truth label.
///
/// The prediction is the stored `prediction` field when present and the
/// lowest-index argmax of the logits otherwise.
pub fn correctness_labels(records: &[LogitRecord]) -> Result<Vec<bool>> {
    records
        .iter()
        .map(|r| {
            let label = r
                .label
                .ok_or_else(|| Error::invalid(format!("sample {} has no label", r.sample_id)))?;
            Ok(r.predicted_class() == label)
        })
        .collect()
}

/// Fraction of correct predictions.
pub fn accuracy(labels: &[bool]) -> f64 {
    labels.iter().filter(|&&c| c).count() as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// L2 penalty on the weights (the bias is not penalized).
    pub lambda: f64,
    pub max_iters: usize,
    /// Gradient infinity-norm stopping threshold.
    pub tolerance: f64,
    /// Signals the model may use; the rest keep weight zero.
    pub signals: Vec<Signal>,
    /// Fit a z-score normalizer; otherwise raw signals are used.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            max_iters: 10_000,
            tolerance: 1e-8,
            signals: Signal::ALL.to_vec(),
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.signals.is_empty() {
            return Err(Error::Config("at least one signal must be selected".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }

    fn mask(&self) -> [bool; NUM_SIGNALS] {
        let mut mask = [false; NUM_SIGNALS];
        for s in &self.signals {
            mask[s.index()] = true;
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub lambda: f64,
    pub converged: bool,
    pub grad_norm: f64,
    pub n_samples: usize,
    pub positive_rate: f64,
    pub signals: Vec<Signal>,
    /// Set when training data was degenerate, e.g. `"degenerate: single-class"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<String>,
}

/// Fitted correctness estimator, persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessEstimator {
    pub version: u32,
    pub signal_order: Vec<String>,
    pub weights: [f64; NUM_SIGNALS],
    pub bias: f64,
    pub normalizer: SignalNormalizer,
    #[serde(default)]
    pub calibrator: Calibrator,
    pub training_meta: TrainingMeta,
}

/// Regularized BCE and its gradient over normalized rows.
///
/// Returns `(loss, grad)` where `grad` has the weight gradient in the first
/// [`NUM_SIGNALS`] entries and the bias gradient last.
fn objective(
    params: &[f64],
    rows: &[[f64; NUM_SIGNALS]],
    labels: &[bool],
    lambda: f64,
    mask: &[bool; NUM_SIGNALS],
) -> (f64, Vec<f64>) {
    let n = rows.len() as f64;
    let (w, b) = params.split_at(NUM_SIGNALS);
    let b = b[0];
    let mut loss = 0.0;
    let mut grad = vec![0.0; NUM_SIGNALS + 1];
    for (row, &c) in rows.iter().zip(labels) {
        let u = dot(w, row) + b;
        loss += bce_term(u, c);
        let r = sigmoid(u) - if c { 1.0 } else { 0.0 };
        for j in 0..NUM_SIGNALS {
            grad[j] += r * row[j];
        }
        grad[NUM_SIGNALS] += r;
    }
    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    let mut penalty = 0.0;
    for j in 0..NUM_SIGNALS {
        if mask[j] {
            penalty += w[j] * w[j];
            grad[j] += lambda * w[j];
        } else {
            grad[j] = 0.0;
        }
    }
    (loss + 0.5 * lambda * penalty, grad)
}

fn dot(w: &[f64], row: &[f64; NUM_SIGNALS]) -> f64 {
    w.iter().zip(row).map(|(a, b)| a * b).sum()
}

fn check_rows(signals: &SignalMatrix, labels: &[bool]) -> Result<()> {
    if signals.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} signal rows but {} labels",
            signals.len(),
            labels.len()
        )));
    }
    if signals.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    Ok(())
}

impl CorrectnessEstimator {
    /// Estimator with explicit parameters and no calibrator.
    pub fn from_parameters(
        weights: [f64; NUM_SIGNALS],
        bias: f64,
        normalizer: SignalNormalizer,
        lambda: f64,
    ) -> Self {
        CorrectnessEstimator {
            version: ESTIMATOR_FORMAT_VERSION,
            signal_order: Signal::names().into_iter().map(String::from).collect(),
            weights,
            bias,
            normalizer,
            calibrator: Calibrator::None,
            training_meta: TrainingMeta {
                iterations: 0,
                initial_loss: 0.0,
                final_loss: 0.0,
                lambda,
                converged: false,
                grad_norm: 0.0,
                n_samples: 0,
                positive_rate: 0.0,
                signals: Signal::ALL.to_vec(),
                degenerate: None,
            },
        }
    }

    /// Fits the estimator from `w = 0, b = 0`.
    pub fn train(signals: &SignalMatrix, labels: &[bool], config: &TrainConfig) -> Result<Self> {
        Self::train_from(signals, labels, config, None)
    }

    /// Fits the estimator from an explicit starting point `(w, b)`.
    pub fn train_from(
        signals: &SignalMatrix,
        labels: &[bool],
        config: &TrainConfig,
        init: Option<([f64; NUM_SIGNALS], f64)>,
    ) -> Result<Self> {
        config.validate()?;
        check_rows(signals, labels)?;
        // canonical row order makes every sum, and so the fit, independent of input order
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by(|&a, &b| {
            labels[a].cmp(&labels[b]).then_with(|| {
                signals.rows[a]
                    .iter()
                    .zip(&signals.rows[b])
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let signals = &SignalMatrix::new(order.iter().map(|&i| signals.rows[i]).collect());
        let labels: &[bool] = &order.iter().map(|&i| labels[i]).collect::<Vec<_>>();

        let normalizer = if config.normalize {
            SignalNormalizer::fit(signals)?
        } else {
            SignalNormalizer::identity()
        };
        let rows = normalizer.apply(signals).rows;
        let mask = config.mask();

        let mut x0 = vec![0.0; NUM_SIGNALS + 1];
        if let Some((w, b)) = init {
            for j in 0..NUM_SIGNALS {
                x0[j] = if mask[j] { w[j] } else { 0.0 };
            }
            x0[NUM_SIGNALS] = b;
        }
        let descent = DescentConfig {
            max_iters: config.max_iters,
            tolerance: config.tolerance,
            ..DescentConfig::default()
        };
        let outcome = optim::minimize(
            |p| objective(p, &rows, labels, config.lambda, &mask),
            x0,
            &descent,
        );

        let positives = labels.iter().filter(|&&c| c).count();
        let degenerate = (positives == 0 || positives == labels.len())
            .then(|| "degenerate: single-class".to_string());

        let mut weights = [0.0; NUM_SIGNALS];
        weights.copy_from_slice(&outcome.x[..NUM_SIGNALS]);
        let mut est =
            Self::from_parameters(weights, outcome.x[NUM_SIGNALS], normalizer, config.lambda);
        est.training_meta = TrainingMeta {
            iterations: outcome.iterations,
            initial_loss: outcome.initial_loss,
            final_loss: outcome.loss,
            lambda: config.lambda,
            converged: outcome.converged,
            grad_norm: outcome.grad_norm,
            n_samples: labels.len(),
            positive_rate: positives as f64 / labels.len() as f64,
            signals: config.signals.clone(),
            degenerate,
        };
        Ok(est)
    }

    /// Extracts signals from labeled records and trains on them.
    pub fn train_on_records(records: &[LogitRecord], config: &TrainConfig) -> Result<Self> {
        let labels = correctness_labels(records)?;
        let signals = signals::extract_all(records)?;
        Self::train(&signals, &labels, config)
    }

    pub fn with_calibrator(mut self, calibrator: Calibrator) -> Self {
        self.calibrator = calibrator;
        self
    }

    fn mask(&self) -> [bool; NUM_SIGNALS] {
        let mut mask = [false; NUM_SIGNALS];
        for s in &self.training_meta.signals {
            mask[s.index()] = true;
        }
        mask
    }

    /// Pre-sigmoid scores `wᵀs̃ + b` for raw signal rows.
    pub fn scores(&self, signals: &SignalMatrix) -> Vec<f64> {
        signals
            .rows
            .iter()
            .map(|r| dot(&self.weights, &self.normalizer.apply_row(r)) + self.bias)
            .collect()
    }

    /// Uncalibrated `σ(wᵀs̃ + b)`.
    pub fn predict_raw(&self, signals: &SignalMatrix) -> Vec<f64> {
        self.scores(signals).into_iter().map(sigmoid).collect()
    }

    /// Correctness probabilities, passed through the calibrator when one is attached.
    pub fn predict(&self, signals: &SignalMatrix) -> Vec<f64> {
        self.scores(signals)
            .into_iter()
            .map(|s| self.calibrator.apply_score(s))
            .collect()
    }

    pub fn predict_records(&self, records: &[LogitRecord]) -> Result<Vec<f64>> {
        Ok(self.predict(&signals::extract_all(records)?))
    }

    /// Regularized mean BCE of the uncalibrated model.
    pub fn bce_loss(&self, signals: &SignalMatrix, labels: &[bool]) -> Result<f64> {
        check_rows(signals, labels)?;
        let rows = self.normalizer.apply(signals).rows;
        Ok(objective(
            &self.params(),
            &rows,
            labels,
            self.training_meta.lambda,
            &self.mask(),
        )
        .0)
    }

    /// Gradient of [`bce_loss`](Self::bce_loss) with respect to `(w, b)`.
    pub fn bce_gradient(
        &self,
        signals: &SignalMatrix,
        labels: &[bool],
    ) -> Result<([f64; NUM_SIGNALS], f64)> {
        check_rows(signals, labels)?;
        let rows = self.normalizer.apply(signals).rows;
        let (_, g) = objective(
            &self.params(),
            &rows,
            labels,
            self.training_meta.lambda,
            &self.mask(),
        );
        let mut gw = [0.0; NUM_SIGNALS];
        gw.copy_from_slice(&g[..NUM_SIGNALS]);
        Ok((gw, g[NUM_SIGNALS]))
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.weights.to_vec();
        p.push(self.bias);
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != ESTIMATOR_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported estimator version {}",
                self.version
            )));
        }
        let expected = Signal::names();
        if self.signal_order.len() != expected.len()
            || self.signal_order.iter().zip(&expected).any(|(a, b)| a != b)
        {
            return Err(Error::invalid(
                "estimator signal_order does not match this build",
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite()) || !self.bias.is_finite() {
            return Err(Error::invalid("estimator parameters must be finite"));
        }
        self.normalizer.validate()?;
        self.calibrator.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let est: Self = serde_json::from_str(text)?;
        est.validate()?;
        Ok(est)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical (compact) JSON encoding, hex-encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("estimator serializes");
        hex_digest(&bytes)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One-way ANOVA of a signal split by correctness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
}

/// Two-group one-way ANOVA: F on (1, N-2) degrees of freedom.
pub fn anova_f(column: &[f64], labels: &[bool]) -> Result<AnovaResult> {
    if column.len() != labels.len() {
        return Err(Error::invalid("column and labels differ in length"));
    }
    let n = column.len();
    if n < 3 {
        return Err(Error::UndefinedStatistic(format!(
            "ANOVA needs N >= 3, got {n}"
        )));
    }
    let group = |want: bool| -> Vec<f64> {
        column
            .iter()
            .zip(labels)
            .filter(|(_, &c)| c == want)
            .map(|(&v, _)| v)
            .collect()
    };
    let (pos, neg) = (group(true), group(false));
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedStatistic("ANOVA group is empty".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let grand = mean(column);
    let (mp, mn) = (mean(&pos), mean(&neg));
    let between = pos.len() as f64 * (mp - grand).powi(2) + neg.len() as f64 * (mn - grand).powi(2);
    let within = pos.iter().map(|v| (v - mp).powi(2)).sum::<f64>()
        + neg.iter().map(|v| (v - mn).powi(2)).sum::<f64>();
    let df_within = (n - 2) as f64;
    let ms_within = within / df_within;
    if ms_within <= 0.0 {
        return Err(Error::UndefinedStatistic(
            "within-group variance is zero".into(),
        ));
    }
    let f = between / ms_within;
    Ok(AnovaResult {
        f,
        p: stats::f_sf(f, 1.0, df_within)?,
    })
}
