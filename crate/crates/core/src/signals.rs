//! Per-sample suitability signals derived from classifier logits.
//!
//! Every signal is a function of the logit vector `z` and its softmax `p`
//! alone, so the filter works with any classifier that exposes logits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of suitability signals.
pub const NUM_SIGNALS: usize = 12;

/// Additive guard inside logarithms and ratios.
pub const EPS: f64 = 1e-10;

/// Columns whose standard deviation falls below this are treated as constant.
const DEGENERATE_STD: f64 = 1e-12;

/// One sample's raw classifier output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRecord {
    #[serde(rename = "id")]
    pub sample_id: String,
    pub logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    /// Stored prediction of the classifier; overrides the argmax of `logits`
    /// when deriving correctness labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl LogitRecord {
    pub fn new(sample_id: impl Into<String>, logits: Vec<f64>) -> Self {
        LogitRecord {
            sample_id: sample_id.into(),
            logits,
            label: None,
            prediction: None,
            fold: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn num_classes(&self) -> usize {
        self.logits.len()
    }

    /// Checks `k >= 2`, finite logits and in-range label/prediction.
    pub fn validate(&self) -> Result<()> {
        validate_logits(&self.logits)?;
        let k = self.logits.len();
        if let Some(label) = self.label {
            if label >= k {
                return Err(Error::invalid(format!(
                    "sample {}: label {label} out of range for {k} classes",
                    self.sample_id
                )));
            }
        }
        if let Some(pred) = self.prediction {
            if pred >= k {
                return Err(Error::invalid(format!(
                    "sample {}: prediction {pred} out of range for {k} classes",
                    self.sample_id
                )));
            }
        }
        Ok(())
    }

    /// Predicted class: the stored prediction if present, else the argmax of the
    /// logits with ties resolved to the lowest index.
    pub fn predicted_class(&self) -> usize {
        self.prediction.unwrap_or_else(|| argmax(&self.logits))
    }
}

fn validate_logits(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 logits, got {}",
            logits.len()
        )));
    }
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::invalid(format!("logit {i} is not finite")));
    }
    Ok(())
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Largest and second-largest entries (the second may equal the first on ties).
fn top_two(values: &[f64]) -> (f64, f64) {
    let first = argmax(values);
    let second = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != first)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    (values[first], second)
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    validate_logits(logits)?;
    Ok(softmax_unchecked(logits))
}

fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(z_i)` with max extraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// The twelve suitability signals, in feature-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    ConfMax,
    ConfStd,
    ConfEntropy,
    ConfRatio,
    TopKConfSum,
    LogitMean,
    LogitMax,
    LogitStd,
    LogitDiffTop2,
    Loss,
    MarginLoss,
    Energy,
}

impl Signal {
    pub const ALL: [Signal; NUM_SIGNALS] = [
        Signal::ConfMax,
        Signal::ConfStd,
        Signal::ConfEntropy,
        Signal::ConfRatio,
        Signal::TopKConfSum,
        Signal::LogitMean,
        Signal::LogitMax,
        Signal::LogitStd,
        Signal::LogitDiffTop2,
        Signal::Loss,
        Signal::MarginLoss,
        Signal::Energy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Signal::ConfMax => "conf_max",
            Signal::ConfStd => "conf_std",
            Signal::ConfEntropy => "conf_entropy",
            Signal::ConfRatio => "conf_ratio",
            Signal::TopKConfSum => "top_k_conf_sum",
            Signal::LogitMean => "logit_mean",
            Signal::LogitMax => "logit_max",
            Signal::LogitStd => "logit_std",
            Signal::LogitDiffTop2 => "logit_diff_top2",
            Signal::Loss => "loss",
            Signal::MarginLoss => "margin_loss",
            Signal::Energy => "energy",
        }
    }

    /// Signal names in feature order.
    pub fn names() -> Vec<&'static str> {
        Signal::ALL.iter().map(|s| s.name()).collect()
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Signal::ALL
            .iter()
            .copied()
            .find(|sig| sig.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown signal '{s}'")))
    }
}

/// Signal values for one sample, ordered as [`Signal::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalVector {
    pub values: [f64; NUM_SIGNALS],
}

impl SignalVector {
    pub fn get(&self, signal: Signal) -> f64 {
        self.values[signal.index()]
    }
}

/// Row-major matrix of signal vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalMatrix {
    pub rows: Vec<[f64; NUM_SIGNALS]>,
}

impl SignalMatrix {
    pub fn new(rows: Vec<[f64; NUM_SIGNALS]>) -> Self {
        SignalMatrix { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

impl FromIterator<SignalVector> for SignalMatrix {
    fn from_iter<I: IntoIterator<Item = SignalVector>>(iter: I) -> Self {
        SignalMatrix {
            rows: iter.into_iter().map(|v| v.values).collect(),
        }
    }
}

/// Computes all twelve signals for one record.
pub fn extract_signals(record: &LogitRecord) -> Result<SignalVector> {
    signals_from_logits(&record.logits)
}

/// Computes all twelve signals from a raw logit vector.
pub fn signals_from_logits(z: &[f64]) -> Result<SignalVector> {
    validate_logits(z)?;
    let k = z.len();
    let p = softmax_unchecked(z);

    let (p1, p2) = top_two(&p);
    let (z1, z2) = top_two(z);

    let conf_entropy = -p.iter().map(|&pi| pi * (pi + EPS).ln()).sum::<f64>();

    let top_count = k.div_ceil(10).max(1);
    let mut sorted = p.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top_k_conf_sum = sorted[..top_count].iter().sum::<f64>();

    let loss = -(p1 + EPS).ln();
    let values = [
        p1,
        population_std(&p),
        conf_entropy,
        p1 / (p2 + EPS),
        top_k_conf_sum,
        z.iter().sum::<f64>() / k as f64,
        z1,
        population_std(z),
        z1 - z2,
        loss,
        loss + (p2 + EPS).ln(),
        -log_sum_exp(z),
    ];
    Ok(SignalVector { values })
}

/// Extracts signals for every record, in order.
pub fn extract_all(records: &[LogitRecord]) -> Result<SignalMatrix> {
    records.iter().map(extract_signals).collect()
}

/// Per-signal z-score statistics fitted on the estimator's training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalNormalizer {
    pub mean: [f64; NUM_SIGNALS],
    pub std: [f64; NUM_SIGNALS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_on: Option<String>,
}

impl SignalNormalizer {
    /// Pass-through normalizer (mean 0, std 1).
    pub fn identity() -> Self {
        SignalNormalizer {
            mean: [0.0; NUM_SIGNALS],
            std: [1.0; NUM_SIGNALS],
            fitted_on: None,
        }
    }

    /// Population mean and std per column; near-constant columns get `std = 1`.
    pub fn fit(signals: &SignalMatrix) -> Result<Self> {
        if signals.len() < 2 {
            return Err(Error::invalid(format!(
                "normalizer needs at least 2 rows, got {}",
                signals.len()
            )));
        }
        let n = signals.len() as f64;
        let mut mean = [0.0; NUM_SIGNALS];
        let mut std = [0.0; NUM_SIGNALS];
        for j in 0..NUM_SIGNALS {
            let m = signals.rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = signals.rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = if var.sqrt() < DEGENERATE_STD {
                1.0
            } else {
                var.sqrt()
            };
        }
        Ok(SignalNormalizer {
            mean,
            std,
            fitted_on: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("normalizer mean must be finite"));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("normalizer std must be finite and positive"));
        }
        Ok(())
    }

    pub fn apply_row(&self, row: &[f64; NUM_SIGNALS]) -> [f64; NUM_SIGNALS] {
        std::array::from_fn(|j| (row[j] - self.mean[j]) / self.std[j])
    }

    pub fn apply(&self, signals: &SignalMatrix) -> SignalMatrix {
        SignalMatrix {
            rows: signals.rows.iter().map(|r| self.apply_row(r)).collect(),
        }
    }

    /// Normalizes rows of arbitrary width, rejecting anything other than
    /// [`NUM_SIGNALS`] columns.
    pub fn apply_dynamic(&self, rows: &[Vec<f64>]) -> Result<SignalMatrix> {
        let rows = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let fixed: [f64; NUM_SIGNALS] = r.as_slice().try_into().map_err(|_| {
                    Error::invalid(format!(
                        "row {i} has {} columns, expected {NUM_SIGNALS}",
                        r.len()
                    ))
                })?;
                Ok(self.apply_row(&fixed))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SignalMatrix { rows })
    }
}
