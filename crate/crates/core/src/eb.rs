//! Two-level Gaussian model and its empirical Bayes fit.
//!
//! Hole outcomes of golfer `i` are modelled as `Normal(mu_i, sigma2_i)`, and
//! the latent skills as `mu_i ~ Normal(mu, tau2)` within one category. The
//! per-golfer noise variance is plugged in as the divisor-N sample variance.
//! The population parameters `(mu, tau2)` maximise the marginal likelihood of
//! the sample means, `mean_i ~ Normal(mu, tau2 + sigma2_i / n_i)`, and are
//! found by EM with the skills as missing data. Each iteration also tries a
//! Fisher-scoring step and the `tau2 = 0` boundary point and keeps whichever
//! candidate has the highest likelihood, so the likelihood never decreases.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Category, Error, HoleOutcome, Result};

/// Sufficient statistics of one golfer-season in one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GolferAggregate {
    pub golfer_season_id: String,
    pub category: Category,
    pub n_holes: usize,
    pub mean: f64,
    /// Divisor-N sample variance of the hole outcomes.
    pub var_mle: f64,
}

impl GolferAggregate {
    /// Returns `None` for an empty slice.
    pub fn from_values(golfer_season_id: impl Into<String>, category: Category, values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var_mle = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Self {
            golfer_season_id: golfer_season_id.into(),
            category,
            n_holes: values.len(),
            mean,
            var_mle,
        })
    }
}

/// One aggregate per (golfer-season, category), sorted by golfer then category.
pub fn summarize(outcomes: &[HoleOutcome]) -> Vec<GolferAggregate> {
    let mut groups: BTreeMap<(&str, Category), Vec<f64>> = BTreeMap::new();
    for o in outcomes {
        groups
            .entry((o.golfer_season_id.as_str(), o.category))
            .or_default()
            .push(o.x);
    }
    groups
        .into_iter()
        .filter_map(|((golfer, category), xs)| GolferAggregate::from_values(golfer, category, &xs))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative change of `(mu, tau2)` below which EM stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fitted population parameters of one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryFit {
    pub category: Category,
    pub mu: f64,
    pub tau2: f64,
    pub n_golfers: usize,
    pub iterations: usize,
    pub final_loglik: f64,
    pub converged: bool,
    /// `tau2` was fitted at the zero boundary.
    pub boundary: bool,
    /// Sampling variance of `mu` at the fitted `tau2`: `1 / sum(1 / (tau2 + v_i))`.
    pub mu_var: f64,
    /// Noise variance substituted for golfers whose sample variance is zero.
    pub variance_floor: f64,
    pub floored_golfers: Vec<String>,
}

impl CategoryFit {
    /// Plug-in noise variance for a golfer, applying the zero-variance floor.
    pub fn noise_var(&self, agg: &GolferAggregate) -> f64 {
        if agg.var_mle > 0.0 {
            agg.var_mle
        } else {
            self.variance_floor
        }
    }
}

/// Marginal log-likelihood after every EM iteration; entry 0 is the start point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub category: Category,
    pub loglik: Vec<f64>,
}

const VARIANCE_FLOOR_FACTOR: f64 = 1e-3;
// Both in units of the mean sampling variance.
const TAU2_START_FLOOR: f64 = 1e-8;
const TAU2_BOUNDARY: f64 = 1e-12;
const MAX_STEP_HALVINGS: i32 = 40;

/// Sample means and their sampling variances `v_i = sigma2_i / n_i`.
#[derive(Debug, Clone)]
pub struct MarginalData {
    pub means: Vec<f64>,
    pub sampling_vars: Vec<f64>,
}

impl MarginalData {
    /// Returns the data together with the zero-variance floor that was used.
    pub fn from_aggregates(aggs: &[GolferAggregate]) -> (Self, f64) {
        let total: f64 = aggs.iter().map(|a| a.n_holes as f64).sum();
        let pooled = aggs.iter().map(|a| a.n_holes as f64 * a.var_mle).sum::<f64>() / total;
        let floor = if pooled.is_finite() {
            pooled * VARIANCE_FLOOR_FACTOR
        } else {
            0.0
        };
        let data = Self {
            means: aggs.iter().map(|a| a.mean).collect(),
            sampling_vars: aggs
                .iter()
                .map(|a| {
                    let s2 = if a.var_mle > 0.0 { a.var_mle } else { floor };
                    s2 / a.n_holes as f64
                })
                .collect(),
        };
        (data, floor)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn loglik(&self, mu: f64, tau2: f64) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.means
            .iter()
            .zip(&self.sampling_vars)
            .map(|(&x, &v)| {
                let s = tau2 + v;
                -0.5 * (ln_2pi + s.ln() + (x - mu) * (x - mu) / s)
            })
            .sum()
    }

    /// One EM update of `(mu, tau2)`. Requires `tau2 > 0`.
    fn em_step(&self, mu: f64, tau2: f64) -> (f64, f64) {
        let n = self.len() as f64;
        let (post_means, post_vars): (Vec<f64>, Vec<f64>) = self
            .means
            .iter()
            .zip(&self.sampling_vars)
            .map(|(&x, &v)| {
                if v > 0.0 {
                    let precision = 1.0 / v + 1.0 / tau2;
                    ((x / v + mu / tau2) / precision, 1.0 / precision)
                } else {
                    (x, 0.0)
                }
            })
            .unzip();
        let mu_new = post_means.iter().sum::<f64>() / n;
        let tau2_new = post_means
            .iter()
            .zip(&post_vars)
            .map(|(m, v)| v + (m - mu_new) * (m - mu_new))
            .sum::<f64>()
            / n;
        (mu_new, tau2_new)
    }

    /// Precision-weighted mean at `tau2`, which maximises the likelihood in
    /// `mu` for that `tau2`.
    fn profile_mu(&self, tau2: f64) -> f64 {
        let (num, den) = self
            .means
            .iter()
            .zip(&self.sampling_vars)
            .fold((0.0, 0.0), |(num, den), (&x, &v)| {
                let w = 1.0 / (tau2 + v);
                (num + w * x, den + w)
            });
        num / den
    }

    /// Fisher-scoring direction for `tau2` on the profile likelihood at
    /// `tau2`: the score divided by the expected information.
    fn scoring_direction(&self, tau2: f64) -> f64 {
        let mu = self.profile_mu(tau2);
        let (score, info) = self
            .means
            .iter()
            .zip(&self.sampling_vars)
            .fold((0.0, 0.0), |(score, info), (&x, &v)| {
                let s = tau2 + v;
                let w2 = 1.0 / (s * s);
                (score + w2 * ((x - mu) * (x - mu) - s), info + w2)
            });
        score / info
    }

    /// A Fisher-scoring step from `tau2`, halved until it stays positive and
    /// beats `ll_to_beat`. Converges in a handful of steps where EM crawls
    /// (`tau2` small next to the sampling variances).
    fn scoring_step(&self, tau2: f64, ll_to_beat: f64) -> Option<(f64, f64, f64)> {
        let step = self.scoring_direction(tau2);
        if !step.is_finite() {
            return None;
        }
        (0..MAX_STEP_HALVINGS).find_map(|k| {
            let next = tau2 + step * 0.5f64.powi(k);
            if next.is_nan() || next <= 0.0 {
                return None;
            }
            let mu = self.profile_mu(next);
            let ll = self.loglik(mu, next);
            (ll > ll_to_beat).then_some((mu, next, ll))
        })
    }

    /// Scale of the sampling variances, for thresholds on `tau2` that do not
    /// depend on the units of the data.
    fn variance_scale(&self) -> f64 {
        let n = self.len() as f64;
        let mean_v = self.sampling_vars.iter().sum::<f64>() / n;
        if mean_v > 0.0 {
            return mean_v;
        }
        let mean_x = self.means.iter().sum::<f64>() / n;
        let spread = self.means.iter().map(|x| (x - mean_x) * (x - mean_x)).sum::<f64>() / n;
        if spread > 0.0 {
            spread
        } else {
            1.0
        }
    }

    /// `(mu, loglik)` at `tau2 = 0` when that point satisfies the boundary
    /// optimality condition (non-positive `tau2` score).
    fn boundary_candidate(&self) -> Option<(f64, f64)> {
        if self.sampling_vars.iter().any(|&v| v <= 0.0) {
            return None;
        }
        let weight: f64 = self.sampling_vars.iter().map(|v| 1.0 / v).sum();
        let mu = self
            .means
            .iter()
            .zip(&self.sampling_vars)
            .map(|(x, v)| x / v)
            .sum::<f64>()
            / weight;
        let score: f64 = self
            .means
            .iter()
            .zip(&self.sampling_vars)
            .map(|(&x, &v)| ((x - mu) * (x - mu) / v - 1.0) / v)
            .sum();
        (score <= 0.0).then(|| (mu, self.loglik(mu, 0.0)))
    }

    fn mu_var(&self, tau2: f64) -> f64 {
        let info: f64 = self.sampling_vars.iter().map(|v| 1.0 / (v + tau2)).sum();
        if info.is_finite() && info > 0.0 {
            1.0 / info
        } else {
            0.0
        }
    }
}

fn relative_change(mu_old: f64, tau2_old: f64, mu: f64, tau2: f64) -> f64 {
    fn ratio(num: f64, den: f64) -> f64 {
        if num == 0.0 {
            0.0
        } else if den > 0.0 {
            num / den
        } else {
            f64::INFINITY
        }
    }
    ratio((mu - mu_old).abs(), mu.abs() + tau2.sqrt()).max(ratio((tau2 - tau2_old).abs(), tau2))
}

/// Fits `(mu, tau2)` for one category by marginal maximum likelihood.
///
/// All aggregates must share one category. Running out of iterations is not
/// an error; the result carries `converged = false`.
pub fn fit_category(aggs: &[GolferAggregate], opts: &FitOptions) -> Result<CategoryFit> {
    fit_category_traced(aggs, opts).map(|(fit, _)| fit)
}

/// [`fit_category`] plus the per-iteration log-likelihood trace.
pub fn fit_category_traced(aggs: &[GolferAggregate], opts: &FitOptions) -> Result<(CategoryFit, FitTrace)> {
    opts.validate()?;
    let category = match aggs.first() {
        Some(a) => a.category,
        None => return Err(Error::EmptyInput("no golfers to fit")),
    };
    if let Some(other) = aggs.iter().find(|a| a.category != category) {
        return Err(Error::MixedCategories {
            first: category,
            other: other.category,
        });
    }
    if aggs.len() < 2 {
        return Err(Error::TooFewGolfers {
            category,
            found: aggs.len(),
        });
    }

    let (data, variance_floor) = MarginalData::from_aggregates(aggs);
    let n = data.len() as f64;

    // Method-of-moments start.
    let mut mu = data.means.iter().sum::<f64>() / n;
    let spread = data.means.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    let noise = data.sampling_vars.iter().sum::<f64>() / n;
    let scale = data.variance_scale();
    let mut tau2 = (spread - noise).max(TAU2_START_FLOOR * scale);

    let boundary_point = data.boundary_candidate();
    let mut trace = vec![data.loglik(mu, tau2)];
    let mut iterations = 0;
    let mut converged = false;
    let mut boundary = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let (mut mu_new, mut tau2_new) = data.em_step(mu, tau2);
        let mut ll = data.loglik(mu_new, tau2_new);
        if let Some(better) = data.scoring_step(tau2_new, ll) {
            (mu_new, tau2_new, ll) = better;
        }
        if let Some((mu_b, ll_b)) = boundary_point {
            if ll_b >= ll {
                mu_new = mu_b;
                tau2_new = 0.0;
                ll = ll_b;
                boundary = true;
            }
        }
        if !boundary && tau2_new < TAU2_BOUNDARY * scale {
            // Zero-variance data has no boundary candidate; stop at zero anyway.
            let ll0 = data.loglik(mu_new, 0.0);
            if ll0 >= ll || !ll.is_finite() {
                tau2_new = 0.0;
                ll = ll0;
                boundary = true;
            }
        }
        let change = relative_change(mu, tau2, mu_new, tau2_new);
        mu = mu_new;
        tau2 = tau2_new;
        trace.push(ll);
        if boundary || change < opts.tol {
            converged = true;
            break;
        }
    }

    let floored_golfers = aggs
        .iter()
        .filter(|a| a.var_mle <= 0.0)
        .map(|a| a.golfer_season_id.clone())
        .collect();
    let fit = CategoryFit {
        category,
        mu,
        tau2,
        n_golfers: aggs.len(),
        iterations,
        final_loglik: *trace.last().unwrap(),
        converged,
        boundary,
        mu_var: data.mu_var(tau2),
        variance_floor,
        floored_golfers,
    };
    Ok((
        fit,
        FitTrace {
            category,
            loglik: trace,
        },
    ))
}

/// Fits every category present in `aggs`, in category order.
pub fn fit_all(aggs: &[GolferAggregate], opts: &FitOptions) -> Result<Vec<(CategoryFit, FitTrace)>> {
    Category::ALL
        .iter()
        .filter_map(|&c| {
            let subset: Vec<GolferAggregate> = aggs.iter().filter(|a| a.category == c).cloned().collect();
            (!subset.is_empty()).then(|| fit_category_traced(&subset, opts))
        })
        .collect()
}

/// Posterior of one golfer's skill under the fitted prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillPosterior {
    pub golfer_season_id: String,
    pub category: Category,
    pub n_holes: usize,
    /// Sample mean of the hole outcomes (the unpooled estimate).
    pub mle_mean: f64,
    pub eb_mean: f64,
    pub post_var: f64,
}

/// Closed-form Normal-Normal posterior with plug-in parameters.
///
/// The posterior mean is computed as `mu + w * (mean - mu)` with
/// `w = 1 / (1 + sigma2 / (n * tau2))`, which is algebraically the
/// precision-weighted average and keeps the result between `mu` and the
/// sample mean.
pub fn posterior(agg: &GolferAggregate, fit: &CategoryFit) -> Result<SkillPosterior> {
    let sigma2 = fit.noise_var(agg);
    let tau2 = fit.tau2;
    let n = agg.n_holes as f64;
    let (eb_mean, post_var) = match (sigma2 > 0.0, tau2 > 0.0) {
        (false, false) => {
            return Err(Error::DegenerateModel {
                golfer: agg.golfer_season_id.clone(),
                category: agg.category,
            })
        }
        (true, false) => (fit.mu, 0.0),
        (false, true) => (agg.mean, 0.0),
        (true, true) => {
            let w = 1.0 / (1.0 + sigma2 / (n * tau2));
            let (lo, hi) = if fit.mu <= agg.mean {
                (fit.mu, agg.mean)
            } else {
                (agg.mean, fit.mu)
            };
            let eb = (fit.mu + w * (agg.mean - fit.mu)).clamp(lo, hi);
            (eb, 1.0 / (n / sigma2 + 1.0 / tau2))
        }
    };
    Ok(SkillPosterior {
        golfer_season_id: agg.golfer_season_id.clone(),
        category: agg.category,
        n_holes: agg.n_holes,
        mle_mean: agg.mean,
        eb_mean,
        post_var,
    })
}

pub fn posterior_all(aggs: &[GolferAggregate], fit: &CategoryFit) -> Result<Vec<SkillPosterior>> {
    aggs.iter().map(|a| posterior(a, fit)).collect()
}
