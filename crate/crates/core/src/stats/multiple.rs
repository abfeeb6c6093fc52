//! Multiple and sequential testing corrections.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Benjamini-Hochberg step-up procedure.
///
/// Sorts p-values ascending (stable), finds the largest rank `i` with
/// `p_(i) <= i/m * alpha` and rejects ranks `1..=i`. Output is in input order.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));

    let cutoff = order
        .iter()
        .enumerate()
        .rev()
        .find(|&(rank, &idx)| p_values[idx] <= (rank + 1) as f64 / m as f64 * alpha)
        .map(|(rank, _)| rank + 1)
        .unwrap_or(0);

    let mut reject = vec![false; m];
    for &idx in &order[..cutoff] {
        reject[idx] = true;
    }
    reject
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    ObrienFleming,
    Pocock,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::ObrienFleming => "obrien_fleming",
            ScheduleKind::Pocock => "pocock",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obf" | "obrien_fleming" | "obrien-fleming" => Ok(ScheduleKind::ObrienFleming),
            "pocock" => Ok(ScheduleKind::Pocock),
            other => Err(Error::invalid(format!("unknown schedule '{other}'"))),
        }
    }
}

/// Per-stage significance thresholds for sequential testing.
///
/// The O'Brien-Fleming variant here is the closed form
/// `α_k = 1 - (1 - α)^{1/(n-k+1)}`, not the classical Z-boundary design.
/// It starts strict and reaches `α` at the last stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub kind: ScheduleKind,
    pub n_stages: usize,
    pub alpha: f64,
    pub thresholds: Vec<f64>,
}

impl AlphaSchedule {
    pub fn new(kind: ScheduleKind, n_stages: usize, alpha: f64) -> Result<Self> {
        if n_stages == 0 {
            return Err(Error::invalid("schedule needs at least one stage"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        let n = n_stages as f64;
        let thresholds = (1..=n_stages)
            .map(|k| match kind {
                ScheduleKind::Pocock => alpha / n,
                // exponent 1 at the last stage; return alpha itself rather than 1 - (1 - alpha)
                ScheduleKind::ObrienFleming if k == n_stages => alpha,
                ScheduleKind::ObrienFleming => {
                    let exponent = 1.0 / (n_stages - k + 1) as f64;
                    -(exponent * (-alpha).ln_1p()).exp_m1()
                }
            })
            .collect();
        Ok(AlphaSchedule {
            kind,
            n_stages,
            alpha,
            thresholds,
        })
    }

    /// Threshold for 1-based `stage`.
    pub fn threshold(&self, stage: usize) -> Result<f64> {
        if stage == 0 || stage > self.n_stages {
            return Err(Error::ScheduleExhausted {
                stages: self.n_stages,
            });
        }
        Ok(self.thresholds[stage - 1])
    }
}
