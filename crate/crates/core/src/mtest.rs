//! Two-sided tests of zero skill and Benjamini-Hochberg FDR control.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::{Category, CategoryFit, Error, Result, SkillPosterior};

/// Upper tail `1 - Phi(z)` of the standard normal.
///
/// Uses the complementary error function, which keeps full relative
/// precision in the far tail where `1 - cdf` would cancel.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

/// Two-sided p-value `2 * Phi(-|z|)`.
pub fn two_sided_p(z: f64) -> f64 {
    // 2 * Phi(-|z|) = erfc(|z| / sqrt 2); exactly 1 at z = 0.
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Which variance the test statistic divides by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// The posterior variance alone.
    PlugIn,
    /// Posterior variance plus the share of `Var(mu_hat)` that reaches the
    /// golfer through shrinkage: `post_var + B^2 * mu_var` with
    /// `B = post_var / tau2` (1 when `tau2 = 0`). Stays positive when the
    /// between-golfer variance is fitted at zero.
    #[default]
    MeanAdjusted,
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceMode::PlugIn => "plug-in",
            VarianceMode::MeanAdjusted => "mean-adjusted",
        })
    }
}

impl FromStr for VarianceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plug-in" => Ok(VarianceMode::PlugIn),
            "mean-adjusted" => Ok(VarianceMode::MeanAdjusted),
            other => Err(format!("unknown variance mode `{other}` (plug-in | mean-adjusted)")),
        }
    }
}

/// Variance used to standardise `post.eb_mean` under `mode`.
pub fn test_variance(post: &SkillPosterior, fit: &CategoryFit, mode: VarianceMode) -> f64 {
    match mode {
        VarianceMode::PlugIn => post.post_var,
        VarianceMode::MeanAdjusted => {
            let shrink = if fit.tau2 > 0.0 { post.post_var / fit.tau2 } else { 1.0 };
            post.post_var + shrink * shrink * fit.mu_var
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub golfer_season_id: String,
    pub category: Category,
    pub eb_mean: f64,
    /// Variance the statistic was standardised by.
    pub post_var: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Tests `skill = 0` with the posterior variance of `post`.
pub fn p_value(post: &SkillPosterior) -> Result<TestResult> {
    p_value_with_variance(post, post.post_var)
}

pub fn p_value_with_variance(post: &SkillPosterior, variance: f64) -> Result<TestResult> {
    if variance.is_nan() || variance <= 0.0 {
        return Err(Error::NonPositiveVariance {
            golfer: post.golfer_season_id.clone(),
            category: post.category,
            variance,
        });
    }
    let z = post.eb_mean.abs() / variance.sqrt();
    Ok(TestResult {
        golfer_season_id: post.golfer_season_id.clone(),
        category: post.category,
        eb_mean: post.eb_mean,
        post_var: variance,
        z,
        p_value: two_sided_p(z),
    })
}

/// Tests every posterior of one category against its fit.
pub fn test_all(posteriors: &[SkillPosterior], fit: &CategoryFit, mode: VarianceMode) -> Result<Vec<TestResult>> {
    posteriors
        .iter()
        .map(|p| p_value_with_variance(p, test_variance(p, fit, mode)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhOutcome {
    pub category: Category,
    pub alpha: f64,
    pub m_discoveries: usize,
    /// `(1 - alpha) * m_discoveries`.
    pub expected_true: f64,
    /// Rejected golfers by ascending p-value, ties by id.
    pub rejected_ids: Vec<String>,
}

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

fn by_p_then_id(a: &TestResult, b: &TestResult) -> Ordering {
    a.p_value
        .total_cmp(&b.p_value)
        .then_with(|| a.golfer_season_id.cmp(&b.golfer_season_id))
}

/// Number of rejections of the BH step-up rule on ascending p-values:
/// the largest `k` with `p(k) <= k * alpha / n`, or 0.
pub fn step_up_count(sorted_p: &[f64], alpha: f64) -> usize {
    let n = sorted_p.len() as f64;
    sorted_p
        .iter()
        .enumerate()
        .rev()
        .find(|&(i, &p)| p <= (i + 1) as f64 * alpha / n)
        .map_or(0, |(i, _)| i + 1)
}

/// Benjamini-Hochberg step-up procedure at level `alpha`.
pub fn bh_reject(tests: &[TestResult], alpha: f64) -> Result<BhOutcome> {
    validate_alpha(alpha)?;
    let first = tests.first().ok_or(Error::EmptyInput("no tests to adjust"))?;
    let mut sorted: Vec<&TestResult> = tests.iter().collect();
    sorted.sort_by(|a, b| by_p_then_id(a, b));
    let ps: Vec<f64> = sorted.iter().map(|t| t.p_value).collect();
    let k = step_up_count(&ps, alpha);
    Ok(BhOutcome {
        category: first.category,
        alpha,
        m_discoveries: k,
        expected_true: (1.0 - alpha) * k as f64,
        rejected_ids: sorted[..k].iter().map(|t| t.golfer_season_id.clone()).collect(),
    })
}

/// [`bh_reject`] at each level, in the given order.
pub fn bh_sweep(tests: &[TestResult], alphas: &[f64]) -> Result<Vec<BhOutcome>> {
    alphas.iter().map(|&a| bh_reject(tests, a)).collect()
}
