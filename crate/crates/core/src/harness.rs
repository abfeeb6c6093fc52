//! Evaluation harness: synthetic covariate-shift domains, fold grids,
//! detection metrics and sensitivity curves.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{self, CalibrationKind};
use crate::error::{Error, Result};
use crate::model::{
    self, correctness_labels, logit, sigmoid, softplus, CorrectnessEstimator, TrainConfig,
};
use crate::pipeline::{decide_scores, ground_truth_suitability, DecisionConfig};
use crate::signals::{self, LogitRecord};

/// Slope of the log-odds of correctness in the top-2 logit gap.
const CORRECTNESS_SLOPE: f64 = 1.5;

/// Smallest top-2 gap emitted, so the predicted class is a strict argmax.
const MIN_GAP: f64 = 1e-6;

/// One domain of a synthetic shift experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// Target accuracy of the classifier on this domain, in `(1/k, 1]`.
    pub accuracy: f64,
    pub n_samples: usize,
}

/// Generator settings for synthetic logit dumps.
///
/// Each sample draws a latent difficulty `s ~ N(μ, spread²)`; the top-2 logit
/// gap is `softplus(s)` and the sample is classified correctly with
/// probability `σ(logit(1/k) + 1.5·gap)`. Correctness therefore depends on
/// the logits only, so domains differ by covariate shift: `μ` is solved per
/// domain to hit the accuracy target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShiftConfig {
    pub n_classes: usize,
    pub domains: Vec<DomainSpec>,
    /// Standard deviation of the Gaussian noise on every logit.
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    /// Logits are divided by this after generation (> 1 flattens, < 1 sharpens).
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Standard deviation of the latent difficulty.
    #[serde(default = "default_spread")]
    pub latent_spread: f64,
    pub seed: u64,
}

fn default_noise() -> f64 {
    1.0
}
fn default_temperature() -> f64 {
    1.0
}
fn default_spread() -> f64 {
    1.5
}

impl SyntheticShiftConfig {
    pub fn single(n_classes: usize, accuracy: f64, n_samples: usize, seed: u64) -> Self {
        SyntheticShiftConfig {
            n_classes,
            domains: vec![DomainSpec {
                name: "domain".into(),
                accuracy,
                n_samples,
            }],
            noise_scale: default_noise(),
            temperature: default_temperature(),
            latent_spread: default_spread(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise_scale must be finite and >= 0".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.latent_spread > 0.0 && self.latent_spread.is_finite()) {
            return Err(Error::Config("latent_spread must be positive".into()));
        }
        let floor = 1.0 / self.n_classes as f64;
        for d in &self.domains {
            if !(d.accuracy > floor && d.accuracy <= 1.0) {
                return Err(Error::Config(format!(
                    "domain {}: accuracy target {} unreachable, must lie in ({floor}, 1]",
                    d.name, d.accuracy
                )));
            }
            if d.n_samples == 0 {
                return Err(Error::Config(format!("domain {} has no samples", d.name)));
            }
        }
        Ok(())
    }

    fn base_log_odds(&self) -> f64 {
        logit(1.0 / self.n_classes as f64)
    }

    /// `E[σ(β0 + β·softplus(s))]` for `s ~ N(mu, spread²)` by trapezoid rule.
    fn expected_accuracy(&self, mu: f64) -> f64 {
        const POINTS: usize = 4001;
        let half = 10.0;
        let h = 2.0 * half / (POINTS - 1) as f64;
        let b0 = self.base_log_odds();
        let mut acc = 0.0;
        let mut mass = 0.0;
        for i in 0..POINTS {
            let z = -half + i as f64 * h;
            let w = if i == 0 || i == POINTS - 1 { 0.5 } else { 1.0 } * (-0.5 * z * z).exp();
            let gap = softplus(mu + self.latent_spread * z);
            acc += w * sigmoid(b0 + CORRECTNESS_SLOPE * gap);
            mass += w;
        }
        acc / mass
    }

    /// Latent mean giving the requested expected accuracy.
    fn latent_mean(&self, accuracy: f64) -> Result<f64> {
        let (mut lo, mut hi) = (-60.0, 60.0);
        if self.expected_accuracy(hi) < accuracy || self.expected_accuracy(lo) > accuracy {
            return Err(Error::Config(format!(
                "accuracy target {accuracy} unreachable for latent spread {}",
                self.latent_spread
            )));
        }
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.expected_accuracy(mid) < accuracy {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates the labeled records of domain `index`.
///
/// Every domain draws from its own ChaCha stream of the config seed, so the
/// output depends only on `(config, index)`.
pub fn generate_synthetic_domain(
    config: &SyntheticShiftConfig,
    index: usize,
) -> Result<Vec<LogitRecord>> {
    config.validate()?;
    let spec = config
        .domains
        .get(index)
        .ok_or_else(|| Error::Config(format!("no domain with index {index}")))?;
    let k = config.n_classes;
    let always_correct = spec.accuracy >= 1.0;
    let mu = if always_correct {
        // any location works; keep gaps comfortably positive
        4.0
    } else {
        config.latent_mean(spec.accuracy)?
    };
    let b0 = config.base_log_odds();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let classes: Vec<usize> = (0..k).collect();

    let mut records = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let label = rng.random_range(0..k);
        let s = mu + config.latent_spread * standard_normal(&mut rng);
        let gap = softplus(s).max(MIN_GAP);
        let correct = always_correct || rng.random::<f64>() < sigmoid(b0 + CORRECTNESS_SLOPE * gap);
        let predicted = if correct {
            label
        } else {
            let others: Vec<usize> = classes.iter().copied().filter(|&c| c != label).collect();
            *others.choose(&mut rng).expect("k >= 2")
        };

        let mut logits: Vec<f64> = (0..k)
            .map(|_| config.noise_scale * standard_normal(&mut rng))
            .collect();
        let runner_up = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != predicted)
            .map(|(_, &z)| z)
            .fold(f64::NEG_INFINITY, f64::max);
        logits[predicted] = runner_up + gap;
        for z in logits.iter_mut() {
            *z /= config.temperature;
        }

        let mut rec = LogitRecord::new(format!("{}-{i}", spec.name), logits).with_label(label);
        rec.fold = Some(spec.name.clone());
        records.push(rec);
    }
    Ok(records)
}

/// Generates every configured domain as a named fold.
pub fn generate_all(config: &SyntheticShiftConfig) -> Result<Vec<Fold>> {
    (0..config.domains.len())
        .map(|i| {
            Ok(Fold {
                name: config.domains[i].name.clone(),
                records: generate_synthetic_domain(config, i)?,
            })
        })
        .collect()
}

/// Named set of labeled records.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub name: String,
    pub records: Vec<LogitRecord>,
}

/// One cell of the evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub user_fold: String,
    pub test_fold: String,
    pub sf_fold: String,
    pub acc_user: f64,
    pub acc_test: f64,
    pub ground_truth_suitable: bool,
    pub p_value: f64,
    pub suitable: bool,
    pub delta_u: f64,
    pub delta_test: f64,
    pub accuracy_difference: f64,
    pub mean_pc_user: f64,
    pub mean_pc_test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub margin: f64,
    pub alpha: f64,
    pub train: TrainConfig,
    pub calibration: CalibrationKind,
}

impl GridConfig {
    pub fn new(margin: f64, alpha: f64) -> Self {
        GridConfig {
            margin,
            alpha,
            train: TrainConfig::default(),
            calibration: CalibrationKind::None,
        }
    }
}

struct FoldStats {
    correct: Vec<bool>,
    accuracy: f64,
}

/// Evaluates every ordered `(user, test, sf)` triple of distinct folds.
pub fn run_grid(folds: &[Fold], config: &GridConfig) -> Result<Vec<ExperimentRecord>> {
    let users: Vec<usize> = (0..folds.len()).collect();
    run_grid_for_users(folds, &users, config)
}

/// Grid restricted to the given user folds; test and sf range over the rest.
pub fn run_grid_for_users(
    folds: &[Fold],
    users: &[usize],
    config: &GridConfig,
) -> Result<Vec<ExperimentRecord>> {
    if folds.len() < 3 {
        return Err(Error::invalid(format!(
            "grid needs at least 3 folds, got {}",
            folds.len()
        )));
    }
    if let Some(f) = folds.iter().find(|f| f.records.is_empty()) {
        return Err(Error::invalid(format!("fold {} is empty", f.name)));
    }
    if let Some(&u) = users.iter().find(|&&u| u >= folds.len()) {
        return Err(Error::invalid(format!("user fold index {u} out of range")));
    }
    DecisionConfig::new(config.margin, config.alpha).validate()?;

    let stats: Vec<FoldStats> = folds
        .iter()
        .map(|f| {
            let correct = correctness_labels(&f.records)?;
            Ok(FoldStats {
                accuracy: model::accuracy(&correct),
                correct,
            })
        })
        .collect::<Result<_>>()?;
    let fold_signals = folds
        .iter()
        .map(|f| signals::extract_all(&f.records))
        .collect::<Result<Vec<_>>>()?;

    // The estimator depends only on the sf fold: fit one per fold and score
    // every fold with it.
    let pc: Vec<Vec<Vec<f64>>> = (0..folds.len())
        .into_par_iter()
        .map(|sf| {
            let est =
                CorrectnessEstimator::train(&fold_signals[sf], &stats[sf].correct, &config.train)?;
            let est = calibration::calibrate_estimator(
                est,
                config.calibration,
                &fold_signals[sf],
                &stats[sf].correct,
            )?;
            Ok(fold_signals.iter().map(|s| est.predict(s)).collect())
        })
        .collect::<Result<_>>()?;

    let decision = DecisionConfig::new(config.margin, config.alpha);
    let n = folds.len();
    let cells: Vec<(usize, usize, usize)> = users
        .iter()
        .flat_map(|&u| {
            (0..n).filter(move |&t| t != u).flat_map(move |t| {
                (0..n)
                    .filter(move |&sf| sf != u && sf != t)
                    .map(move |sf| (u, t, sf))
            })
        })
        .collect();

    cells
        .into_par_iter()
        .map(|(u, t, sf)| {
            let (pc_user, pc_test) = (&pc[sf][u], &pc[sf][t]);
            let report = decide_scores(pc_test, pc_user, &decision, "grid")?;
            let (acc_user, acc_test) = (stats[u].accuracy, stats[t].accuracy);
            Ok(ExperimentRecord {
                user_fold: folds[u].name.clone(),
                test_fold: folds[t].name.clone(),
                sf_fold: folds[sf].name.clone(),
                acc_user,
                acc_test,
                ground_truth_suitable: ground_truth_suitability(acc_user, acc_test, config.margin),
                p_value: report.p_value,
                suitable: report.decision.is_suitable(),
                delta_u: calibration::estimate_delta(pc_user, &stats[u].correct)?,
                delta_test: calibration::estimate_delta(pc_test, &stats[t].correct)?,
                accuracy_difference: acc_user - acc_test,
                mean_pc_user: report.mean_pc_user,
                mean_pc_test: report.mean_pc_test,
            })
        })
        .collect()
}

/// Detection metrics over a set of experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub alpha: f64,
    /// Fraction of experiments whose decision at `alpha` matches ground truth.
    pub accuracy: f64,
    /// SUITABLE rate among ground-truth-unsuitable experiments.
    pub fpr: Option<f64>,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

/// Accuracy and FPR at `alpha`; ROC/PR AUC ranking by `1 - p_value`.
///
/// AUCs are `None` when only one ground-truth class is present.
pub fn summarize(records: &[ExperimentRecord], alpha: f64) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::invalid("no experiment records to summarize"));
    }
    let predicted = |r: &ExperimentRecord| r.p_value <= alpha;
    let correct = records
        .iter()
        .filter(|r| predicted(r) == r.ground_truth_suitable)
        .count();
    let negatives: Vec<&ExperimentRecord> = records
        .iter()
        .filter(|r| !r.ground_truth_suitable)
        .collect();
    let fpr = (!negatives.is_empty())
        .then(|| negatives.iter().filter(|r| predicted(r)).count() as f64 / negatives.len() as f64);

    let scored: Vec<(f64, bool)> = records
        .iter()
        .map(|r| (1.0 - r.p_value, r.ground_truth_suitable))
        .collect();
    let (roc_auc, pr_auc) = match curves(&scored) {
        Some((roc, pr)) => (Some(roc), Some(pr)),
        None => (None, None),
    };
    Ok(Summary {
        n: records.len(),
        alpha,
        accuracy: correct as f64 / records.len() as f64,
        fpr,
        roc_auc,
        pr_auc,
    })
}

/// Trapezoidal ROC and PR areas, sweeping thresholds from the highest
/// score down and treating tied scores as one step.
fn curves(scored: &[(f64, bool)]) -> Option<(f64, f64)> {
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut roc, mut pr) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let (mut prev_recall, mut prev_precision) = (0.0, 1.0);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        roc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        let precision = tp as f64 / (tp + fp) as f64;
        pr += (tpr - prev_recall) * (precision + prev_precision) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
        prev_recall = tpr;
        prev_precision = precision;
    }
    Some((roc, pr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub suitable_fraction: f64,
}

/// Fraction of SUITABLE decisions at `alpha` per accuracy-difference bin of
/// width `bin_width`. Empty bins are omitted; output is sorted by `lower`.
pub fn sensitivity_bins(
    records: &[ExperimentRecord],
    alpha: f64,
    bin_width: f64,
) -> Result<Vec<SensitivityBin>> {
    if records.is_empty() {
        return Err(Error::invalid("no experiment records"));
    }
    if bin_width.is_nan() || bin_width <= 0.0 {
        return Err(Error::invalid("bin width must be positive"));
    }
    let mut bins: std::collections::BTreeMap<i64, (usize, usize)> = Default::default();
    for r in records {
        // nudge so values sitting on a bin edge are not split by rounding
        let idx = (r.accuracy_difference / bin_width + 1e-9).floor() as i64;
        let entry = bins.entry(idx).or_default();
        entry.0 += 1;
        entry.1 += (r.p_value <= alpha) as usize;
    }
    Ok(bins
        .into_iter()
        .map(|(idx, (count, suitable))| SensitivityBin {
            lower: idx as f64 * bin_width,
            upper: (idx + 1) as f64 * bin_width,
            count,
            suitable_fraction: suitable as f64 / count as f64,
        })
        .collect())
}
