//! Calibration of correctness probabilities and accuracy-estimation error.
//!
//! Platt and temperature scaling act on the estimator's pre-sigmoid score.
//! Binned calibration metrics and the signed estimation error `Δ` are used
//! for diagnostics and for margin adjustment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bce_term, sigmoid, CorrectnessEstimator};
use crate::optim::{self, DescentConfig};
use crate::signals::SignalMatrix;

/// Default number of equal-width bins for calibration metrics.
pub const DEFAULT_BINS: usize = 10;

/// L2 penalty on the Platt slope.
const PLATT_LAMBDA: f64 = 1e-4;

/// Search interval for `ln T` in temperature scaling.
const LOG_T_RANGE: (f64, f64) = (-9.0, 9.0);

/// Post-hoc map applied to the estimator's pre-sigmoid score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum Calibrator {
    #[default]
    None,
    /// `σ(a·score + c)`.
    Platt { a: f64, c: f64 },
    /// `σ(score / t)`, `t > 0`.
    Temperature { t: f64 },
}

impl Calibrator {
    pub fn kind(&self) -> CalibrationKind {
        match self {
            Calibrator::None => CalibrationKind::None,
            Calibrator::Platt { .. } => CalibrationKind::Platt,
            Calibrator::Temperature { .. } => CalibrationKind::Temperature,
        }
    }

    /// Calibrated score before the sigmoid.
    pub fn transform_score(&self, score: f64) -> f64 {
        match *self {
            Calibrator::None => score,
            Calibrator::Platt { a, c } => a * score + c,
            Calibrator::Temperature { t } => score / t,
        }
    }

    pub fn apply_score(&self, score: f64) -> f64 {
        sigmoid(self.transform_score(score))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Calibrator::None => Ok(()),
            Calibrator::Platt { a, c } if a.is_finite() && c.is_finite() => Ok(()),
            Calibrator::Temperature { t } if t.is_finite() && t > 0.0 => Ok(()),
            other => Err(Error::invalid(format!(
                "invalid calibrator parameters {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationKind {
    None,
    Platt,
    Temperature,
}

impl fmt::Display for CalibrationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibrationKind::None => "none",
            CalibrationKind::Platt => "platt",
            CalibrationKind::Temperature => "temperature",
        })
    }
}

impl FromStr for CalibrationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CalibrationKind::None),
            "platt" => Ok(CalibrationKind::Platt),
            "temperature" => Ok(CalibrationKind::Temperature),
            other => Err(Error::invalid(format!(
                "unknown calibration kind '{other}'"
            ))),
        }
    }
}

fn check_pair(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

fn require_both_classes(labels: &[bool]) -> Result<()> {
    let positives = labels.iter().filter(|&&c| c).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateFit(
            "calibration needs both classes".into(),
        ));
    }
    Ok(())
}

/// Fits `σ(a·score + c)` by regularized BCE minimization.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<Calibrator> {
    check_pair(scores, labels)?;
    require_both_classes(labels)?;
    let n = scores.len() as f64;
    let objective = |p: &[f64]| {
        let (a, c) = (p[0], p[1]);
        let mut loss = 0.0;
        let (mut ga, mut gc) = (0.0, 0.0);
        for (&s, &y) in scores.iter().zip(labels) {
            let u = a * s + c;
            loss += bce_term(u, y);
            let r = sigmoid(u) - if y { 1.0 } else { 0.0 };
            ga += r * s;
            gc += r;
        }
        (
            loss / n + 0.5 * PLATT_LAMBDA * a * a,
            vec![ga / n + PLATT_LAMBDA * a, gc / n],
        )
    };
    let out = optim::minimize(objective, vec![1.0, 0.0], &DescentConfig::default());
    let cal = Calibrator::Platt {
        a: out.x[0],
        c: out.x[1],
    };
    cal.validate()?;
    Ok(cal)
}

fn temperature_loss(scores: &[f64], labels: &[bool], log_t: f64) -> f64 {
    let inv_t = (-log_t).exp();
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| bce_term(s * inv_t, y))
        .sum::<f64>()
        / scores.len() as f64
}

/// Fits `σ(score / T)` by golden-section search over `ln T`.
///
/// The loss is convex in `1/T`, hence unimodal in `ln T`.
pub fn fit_temperature(scores: &[f64], labels: &[bool]) -> Result<Calibrator> {
    check_pair(scores, labels)?;
    require_both_classes(labels)?;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = LOG_T_RANGE;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = temperature_loss(scores, labels, x1);
    let mut f2 = temperature_loss(scores, labels, x2);
    while hi - lo > 1e-10 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = temperature_loss(scores, labels, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = temperature_loss(scores, labels, x2);
        }
    }
    Ok(Calibrator::Temperature {
        t: (0.5 * (lo + hi)).exp(),
    })
}

/// Fits a calibrator of the requested kind.
pub fn fit(kind: CalibrationKind, scores: &[f64], labels: &[bool]) -> Result<Calibrator> {
    match kind {
        CalibrationKind::None => Ok(Calibrator::None),
        CalibrationKind::Platt => fit_platt(scores, labels),
        CalibrationKind::Temperature => fit_temperature(scores, labels),
    }
}

/// Fits a calibrator on the estimator's raw scores and attaches it.
pub fn calibrate_estimator(
    estimator: CorrectnessEstimator,
    kind: CalibrationKind,
    signals: &SignalMatrix,
    labels: &[bool],
) -> Result<CorrectnessEstimator> {
    let cal = fit(kind, &estimator.scores(signals), labels)?;
    Ok(estimator.with_calibrator(cal))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub mce: f64,
    pub rmsce: f64,
    pub bins: Vec<CalibrationBin>,
    /// `mean(p_c) - accuracy`; positive means accuracy is overestimated.
    pub delta: f64,
}

/// Equal-width binned ECE, MCE and RMSCE over `[0, 1]`.
pub fn ece_mce_rmsce(p_c: &[f64], correctness: &[bool], bins: usize) -> Result<CalibrationReport> {
    if p_c.len() != correctness.len() {
        return Err(Error::invalid("p_c and correctness differ in length"));
    }
    if p_c.is_empty() {
        return Err(Error::invalid(
            "calibration metrics need at least one sample",
        ));
    }
    if bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    if p_c.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("probabilities must lie in [0, 1]"));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    for (&p, &c) in p_c.iter().zip(correctness) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += p;
        correct[b] += c as usize;
    }

    let n = p_c.len() as f64;
    let (mut ece, mut mce, mut ms) = (0.0f64, 0.0f64, 0.0f64);
    let bins: Vec<CalibrationBin> = (0..bins)
        .map(|b| {
            let (mean_confidence, accuracy) = if count[b] > 0 {
                let nb = count[b] as f64;
                let conf = conf_sum[b] / nb;
                let acc = correct[b] as f64 / nb;
                let gap = (acc - conf).abs();
                ece += nb / n * gap;
                ms += nb / n * gap * gap;
                mce = mce.max(gap);
                (conf, acc)
            } else {
                (0.0, 0.0)
            };
            CalibrationBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count: count[b],
                mean_confidence,
                accuracy,
            }
        })
        .collect();

    Ok(CalibrationReport {
        ece,
        mce,
        rmsce: ms.sqrt(),
        bins,
        delta: estimate_delta(p_c, correctness)?,
    })
}

/// Signed accuracy-estimation error `Δ = mean(p_c - 1{correct})`.
pub fn estimate_delta(p_c: &[f64], correctness: &[bool]) -> Result<f64> {
    if p_c.len() != correctness.len() {
        return Err(Error::invalid("p_c and correctness differ in length"));
    }
    if p_c.is_empty() {
        return Err(Error::invalid("delta needs at least one labeled sample"));
    }
    let sum: f64 = p_c
        .iter()
        .zip(correctness)
        .map(|(&p, &c)| p - if c { 1.0 } else { 0.0 })
        .sum();
    Ok(sum / p_c.len() as f64)
}

/// Margin corrected for estimation error on both sides: `m + Δ_test - Δ_u`.
pub fn adjusted_margin(m: f64, delta_test: f64, delta_u: f64) -> f64 {
    m + delta_test - delta_u
}
