//! Statistical kernel: distribution functions, the Welch non-inferiority
//! test, TOST equivalence and multiple-testing corrections.

mod multiple;
pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use multiple::{benjamini_hochberg, AlphaSchedule, ScheduleKind};

/// CDF of Student's t distribution with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> Result<f64> {
    if df.is_nan() || df <= 0.0 {
        return Err(Error::invalid(format!(
            "degrees of freedom must be positive, got {df}"
        )));
    }
    if t.is_nan() {
        return Err(Error::invalid("t is NaN"));
    }
    if t == f64::INFINITY {
        return Ok(1.0);
    }
    if t == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let t2 = t * t;
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    let tail = 0.5 * special::beta_reg_complement(0.5 * df, 0.5, x, y);
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

/// Survival function `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> Result<f64> {
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(Error::invalid("F degrees of freedom must be positive"));
    }
    if f.is_nan() {
        return Err(Error::invalid("F is NaN"));
    }
    if f <= 0.0 {
        return Ok(1.0);
    }
    if f == f64::INFINITY {
        return Ok(0.0);
    }
    let denom = d2 + d1 * f;
    Ok(special::beta_reg_complement(
        0.5 * d2,
        0.5 * d1,
        d2 / denom,
        d1 * f / denom,
    ))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased (n - 1) sample variance.
fn sample_variance(v: &[f64], mean: f64) -> f64 {
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Outcome of the one-sided Welch non-inferiority test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_one_sided: f64,
    pub mean_test: f64,
    /// User-side mean plus the margin.
    pub mean_user_adjusted: f64,
    pub var_test: f64,
    pub var_user: f64,
    pub n_test: usize,
    pub n_user: usize,
}

/// One-sided Welch test of `H0: μ_user + m ≤ μ_test` against `H1: μ_user + m > μ_test`.
///
/// `t = (mean(test) - (mean(user) + m)) / sqrt(s²_test/n_test + s²_user/n_user)`
/// with Welch-Satterthwaite degrees of freedom and `p = F_t(t; df)`. A small
/// p-value is evidence that accuracy on the user data has not dropped by
/// more than `m`.
///
/// When both sample variances are zero the statistic is ±∞ and p is 0 or 1;
/// exactly equal adjusted means are rejected as a degenerate test.
pub fn welch_noninferiority(pc_test: &[f64], pc_user: &[f64], margin: f64) -> Result<WelchResult> {
    let (n_test, n_user) = (pc_test.len(), pc_user.len());
    if n_test < 2 || n_user < 2 {
        return Err(Error::invalid(format!(
            "Welch test needs at least 2 samples per side, got {n_test} test and {n_user} user"
        )));
    }
    if !margin.is_finite() {
        return Err(Error::invalid("margin must be finite"));
    }
    if pc_test.iter().chain(pc_user).any(|v| !v.is_finite()) {
        return Err(Error::invalid("correctness probabilities must be finite"));
    }

    let mean_test = mean(pc_test);
    let mean_user_adjusted = mean(pc_user) + margin;
    let var_test = sample_variance(pc_test, mean_test);
    let var_user = sample_variance(pc_user, mean(pc_user));
    let se_test = var_test / n_test as f64;
    let se_user = var_user / n_user as f64;
    let se2 = se_test + se_user;
    let diff = mean_test - mean_user_adjusted;

    let (t, df, p) = if se2 > 0.0 {
        let df = se2 * se2
            / (se_test * se_test / (n_test - 1) as f64 + se_user * se_user / (n_user - 1) as f64);
        let t = diff / se2.sqrt();
        (t, df, t_cdf(t, df)?)
    } else {
        let df = (n_test + n_user - 2) as f64;
        if diff < 0.0 {
            (f64::NEG_INFINITY, df, 0.0)
        } else if diff > 0.0 {
            (f64::INFINITY, df, 1.0)
        } else {
            return Err(Error::DegenerateTest(
                "both samples have zero variance and equal margin-adjusted means".into(),
            ));
        }
    };

    Ok(WelchResult {
        t,
        df,
        p_one_sided: p,
        mean_test,
        mean_user_adjusted,
        var_test,
        var_user,
        n_test,
        n_user,
    })
}

/// Two one-sided tests for `|μ_b - μ_a| < m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TostResult {
    /// Tests `μ_b - μ_a > -m`.
    pub lower: WelchResult,
    /// Tests `μ_b - μ_a < m`.
    pub upper: WelchResult,
    pub p_lower: f64,
    pub p_upper: f64,
    pub p: f64,
}

impl TostResult {
    pub fn equivalent(&self, alpha: f64) -> bool {
        self.p <= alpha
    }
}

/// Equivalence of two samples within `±margin` via two Welch tests.
pub fn tost_equivalence(pc_a: &[f64], pc_b: &[f64], margin: f64) -> Result<TostResult> {
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::invalid(format!(
            "TOST margin must be positive, got {margin}"
        )));
    }
    let lower = welch_noninferiority(pc_a, pc_b, margin)?;
    let upper = welch_noninferiority(pc_b, pc_a, margin)?;
    Ok(TostResult {
        lower,
        upper,
        p_lower: lower.p_one_sided,
        p_upper: upper.p_one_sided,
        p: lower.p_one_sided.max(upper.p_one_sided),
    })
}
