//! End-to-end suitability decision and sequential monitoring.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::adjusted_margin;
use crate::error::{Error, Result};
use crate::model::{hex_digest, CorrectnessEstimator};
use crate::signals::LogitRecord;
use crate::stats::{self, benjamini_hochberg, AlphaSchedule, ScheduleKind, WelchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Suitable,
    Inconclusive,
}

impl Decision {
    fn from_p(p: f64, threshold: f64) -> Self {
        if p <= threshold {
            Decision::Suitable
        } else {
            Decision::Inconclusive
        }
    }

    pub fn is_suitable(self) -> bool {
        self == Decision::Suitable
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Suitable => "SUITABLE",
            Decision::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// Correction applied to p-values when monitoring a stream of batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    Bh,
    Obf,
    Pocock,
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correction::None => "none",
            Correction::Bh => "bh",
            Correction::Obf => "obf",
            Correction::Pocock => "pocock",
        })
    }
}

impl FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Correction::None),
            "bh" => Ok(Correction::Bh),
            "obf" | "obrien_fleming" => Ok(Correction::Obf),
            "pocock" => Ok(Correction::Pocock),
            other => Err(Error::invalid(format!("unknown correction '{other}'"))),
        }
    }
}

/// Estimation errors on labeled test and user batches used to shift the margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaAdjustment {
    pub delta_test: f64,
    pub delta_u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub margin: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_adjustment: Option<DeltaAdjustment>,
}

impl DecisionConfig {
    pub fn new(margin: f64, alpha: f64) -> Self {
        DecisionConfig {
            margin,
            alpha,
            delta_adjustment: None,
        }
    }

    pub fn with_adjustment(mut self, delta_test: f64, delta_u: f64) -> Self {
        self.delta_adjustment = Some(DeltaAdjustment {
            delta_test,
            delta_u,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.margin.is_finite() {
            return Err(Error::invalid("margin must be finite"));
        }
        if let Some(adj) = self.delta_adjustment {
            if !(adj.delta_test.is_finite() && adj.delta_u.is_finite()) {
                return Err(Error::invalid("delta adjustment must be finite"));
            }
        }
        Ok(())
    }

    /// Margin passed to the test: `m'` when an adjustment is supplied, else `m`.
    pub fn margin_used(&self) -> f64 {
        match self.delta_adjustment {
            Some(adj) => adjusted_margin(self.margin, adj.delta_test, adj.delta_u),
            None => self.margin,
        }
    }

    fn digest(&self, estimator_id: &str, correction: Correction) -> String {
        let value = serde_json::json!({
            "estimator": estimator_id,
            "config": self,
            "correction": correction,
        });
        hex_digest(value.to_string().as_bytes())
    }
}

/// Outcome of one suitability decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuitabilityReport {
    pub decision: Decision,
    pub p_value: f64,
    pub t: f64,
    pub df: f64,
    pub alpha: f64,
    pub m: f64,
    pub m_prime: f64,
    pub mean_pc_test: f64,
    pub mean_pc_user: f64,
    pub var_pc_test: f64,
    pub var_pc_user: f64,
    pub n_test: usize,
    pub n_user: usize,
    pub correction: Correction,
    #[serde(default)]
    pub stage: Option<usize>,
    /// Per-test decision before any multiple-testing correction.
    pub raw_decision: Decision,
    /// Significance threshold the (possibly corrected) decision was made at.
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_test: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_u: Option<f64>,
    pub estimator_id: String,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
}

impl SuitabilityReport {
    fn from_welch(w: &WelchResult, config: &DecisionConfig, estimator_id: &str) -> Self {
        let decision = Decision::from_p(w.p_one_sided, config.alpha);
        let m_prime = config.margin_used();
        SuitabilityReport {
            decision,
            p_value: w.p_one_sided,
            t: w.t,
            df: w.df,
            alpha: config.alpha,
            m: config.margin,
            m_prime,
            mean_pc_test: w.mean_test,
            mean_pc_user: w.mean_user_adjusted - m_prime,
            var_pc_test: w.var_test,
            var_pc_user: w.var_user,
            n_test: w.n_test,
            n_user: w.n_user,
            correction: Correction::None,
            stage: None,
            raw_decision: decision,
            threshold: config.alpha,
            delta_test: config.delta_adjustment.map(|a| a.delta_test),
            delta_u: config.delta_adjustment.map(|a| a.delta_u),
            estimator_id: estimator_id.to_string(),
            config_digest: config.digest(estimator_id, Correction::None),
            timestamp_unix: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Decision from precomputed correctness probabilities.
pub fn decide_scores(
    pc_test: &[f64],
    pc_user: &[f64],
    config: &DecisionConfig,
    estimator_id: &str,
) -> Result<SuitabilityReport> {
    config.validate()?;
    let welch = stats::welch_noninferiority(pc_test, pc_user, config.margin_used()).map_err(
        |e| match e {
            Error::DegenerateTest(msg) => Error::DegenerateTest(format!(
                "suitability test on {} test / {} user samples: {msg}",
                pc_test.len(),
                pc_user.len()
            )),
            other => other,
        },
    )?;
    Ok(SuitabilityReport::from_welch(&welch, config, estimator_id))
}

fn check_sizes(test: &[LogitRecord], user: &[LogitRecord]) -> Result<()> {
    if test.len() < 2 || user.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 test and 2 user samples, got {} and {}",
            test.len(),
            user.len()
        )));
    }
    Ok(())
}

/// Suitability decision for a user batch against the labeled test split.
///
/// Only logits are read from either set; user labels are never consulted.
pub fn decide(
    estimator: &CorrectnessEstimator,
    test_records: &[LogitRecord],
    user_records: &[LogitRecord],
    config: &DecisionConfig,
) -> Result<SuitabilityReport> {
    check_sizes(test_records, user_records)?;
    let pc_test = estimator.predict_records(test_records)?;
    let pc_user = estimator.predict_records(user_records)?;
    decide_scores(&pc_test, &pc_user, config, &estimator.digest())
}

/// Ground-truth suitability: `acc_user >= acc_test - m`.
pub fn ground_truth_suitability(acc_user: f64, acc_test: f64, m: f64) -> bool {
    acc_user >= acc_test - m
}

/// Test-split correctness probabilities keyed by estimator and test-set digest.
///
/// Any change to the estimator (including its calibrator) or the test
/// records yields a new key, so stale entries are never returned.
#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: HashMap<(String, String), Arc<Vec<f64>>>,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get_or_compute(
        &mut self,
        estimator: &CorrectnessEstimator,
        records: &[LogitRecord],
    ) -> Result<Arc<Vec<f64>>> {
        let key = (estimator.digest(), records_digest(records)?);
        if let Some(hit) = self.entries.get(&key) {
            return Ok(Arc::clone(hit));
        }
        let scores = Arc::new(estimator.predict_records(records)?);
        self.entries.insert(key, Arc::clone(&scores));
        Ok(scores)
    }
}

fn records_digest(records: &[LogitRecord]) -> Result<String> {
    let logits: Vec<(&str, &[f64])> = records
        .iter()
        .map(|r| (r.sample_id.as_str(), r.logits.as_slice()))
        .collect();
    Ok(hex_digest(&serde_json::to_vec(&logits)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub decision: DecisionConfig,
    pub correction: Correction,
    /// Required for the alpha-spending corrections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_stages: Option<usize>,
    /// Rolling window length for BH; `None` uses every batch seen so far.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

/// Stateful monitoring session; owns the stage counter and p-value history.
#[derive(Debug, Clone)]
pub struct MonitorSession {
    config: MonitorConfig,
    schedule: Option<AlphaSchedule>,
    p_history: Vec<f64>,
}

impl MonitorSession {
    pub fn new(config: MonitorConfig) -> Result<Self> {
        config.decision.validate()?;
        let alpha = config.decision.alpha;
        let schedule = match config.correction {
            Correction::Obf | Correction::Pocock => {
                let n = config.n_stages.ok_or_else(|| {
                    Error::Config(format!(
                        "correction {} needs a fixed number of stages",
                        config.correction
                    ))
                })?;
                let kind = if config.correction == Correction::Obf {
                    ScheduleKind::ObrienFleming
                } else {
                    ScheduleKind::Pocock
                };
                Some(AlphaSchedule::new(kind, n, alpha)?)
            }
            _ => None,
        };
        if config.window == Some(0) {
            return Err(Error::Config("BH window must be at least 1".into()));
        }
        Ok(MonitorSession {
            config,
            schedule,
            p_history: Vec::new(),
        })
    }

    pub fn stage(&self) -> usize {
        self.p_history.len()
    }

    /// Applies the session's correction to a per-batch report.
    pub fn observe(&mut self, mut report: SuitabilityReport) -> Result<SuitabilityReport> {
        let stage = self.p_history.len() + 1;
        let alpha = self.config.decision.alpha;
        let p = report.p_value;
        let (suitable, threshold) = match self.config.correction {
            Correction::None => (p <= alpha, alpha),
            Correction::Bh => {
                let mut window = self.p_history.clone();
                window.push(p);
                if let Some(w) = self.config.window {
                    let start = window.len().saturating_sub(w);
                    window.drain(..start);
                }
                let rejected = benjamini_hochberg(&window, alpha);
                (*rejected.last().expect("window holds current batch"), alpha)
            }
            Correction::Obf | Correction::Pocock => {
                let schedule = self.schedule.as_ref().expect("schedule built in new");
                let threshold = schedule.threshold(stage)?;
                (p <= threshold, threshold)
            }
        };
        self.p_history.push(p);
        report.raw_decision = Decision::from_p(p, alpha);
        report.decision = if suitable {
            Decision::Suitable
        } else {
            Decision::Inconclusive
        };
        report.threshold = threshold;
        report.correction = self.config.correction;
        report.stage = Some(stage);
        report.config_digest = self
            .config
            .decision
            .digest(&report.estimator_id, self.config.correction);
        Ok(report)
    }
}

/// Runs a monitoring session over a sequence of user batches.
pub fn monitor<'a, I>(
    estimator: &CorrectnessEstimator,
    test_records: &[LogitRecord],
    batches: I,
    config: &MonitorConfig,
) -> Result<Vec<SuitabilityReport>>
where
    I: IntoIterator<Item = &'a [LogitRecord]>,
{
    let mut session = MonitorSession::new(*config)?;
    let mut cache = ScoreCache::new();
    let pc_test = cache.get_or_compute(estimator, test_records)?;
    let estimator_id = estimator.digest();
    let mut reports = Vec::new();
    for batch in batches {
        check_sizes(test_records, batch)?;
        let pc_user = estimator.predict_records(batch)?;
        let report = decide_scores(&pc_test, &pc_user, &config.decision, &estimator_id)?;
        reports.push(session.observe(report)?);
    }
    Ok(reports)
}
