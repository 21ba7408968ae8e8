//! Synthetic cohorts with known skills, and Monte Carlo studies of the
//! estimation and testing pipeline.
//!
//! Every replication draws from its own ChaCha8 stream: the generator is
//! seeded with the master seed and its stream id is set to the replication
//! index. Replications can therefore run in any order or in parallel and
//! produce the same numbers. Normal variates come from `rand_distr`'s
//! ziggurat sampler, so no platform entropy is involved.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::eb::{self, FitOptions, GolferAggregate};
use crate::mtest::{self, VarianceMode};
use crate::quantile::quantile_gap;
use crate::{Category, Error, HoleKey, HoleOutcome, Result, ShotRecord};

/// Holes played per golfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HolesSpec {
    Fixed {
        holes: usize,
    },
    /// Uniform on the inclusive range.
    Uniform {
        min: usize,
        max: usize,
    },
}

impl HolesSpec {
    fn mean(&self) -> f64 {
        match *self {
            HolesSpec::Fixed { holes } => holes as f64,
            HolesSpec::Uniform { min, max } => (min + max) as f64 / 2.0,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        match *self {
            HolesSpec::Fixed { holes } => holes,
            HolesSpec::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

/// Per-hole noise variance of a golfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    Fixed {
        sigma2: f64,
    },
    /// Uniform on `[min, max]`.
    Uniform {
        min: f64,
        max: f64,
    },
}

impl NoiseSpec {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Fixed { sigma2 } => sigma2,
            NoiseSpec::Uniform { min, max } if min == max => min,
            NoiseSpec::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Label carried into the generated records.
    #[serde(default = "default_category")]
    pub category: Category,
    pub n_golfers: usize,
    pub holes: HolesSpec,
    pub mu_s: f64,
    pub tau2_s: f64,
    pub sigma2: NoiseSpec,
    /// Share of golfers whose skill is exactly zero.
    pub null_fraction: f64,
    pub seed: u64,
}

fn default_category() -> Category {
    Category::Putting
}

/// z such that Phi(z) = 0.95; the 5th-95th percentile gap of a normal is
/// `2 * Z95 * sd`.
const Z95: f64 = 1.644_853_626_951_472_2;

/// Between-golfer variance whose posterior means have a 5th-95th percentile
/// gap of `gap` when every golfer has noise `sigma2` and `mean_holes` holes.
///
/// Posterior means of such a cohort are normal with standard deviation
/// `tau2 / sqrt(tau2 + v)`, `v = sigma2 / mean_holes`; solving
/// `2 * Z95 * tau2 / sqrt(tau2 + v) = gap` gives a quadratic in `tau2`.
pub fn calibrate_tau2(gap: f64, sigma2: f64, mean_holes: f64) -> f64 {
    let c = gap / (2.0 * Z95);
    let v = sigma2 / mean_holes;
    let c2 = c * c;
    0.5 * (c2 + (c2 * c2 + 4.0 * c2 * v).sqrt())
}

/// Per-hole noise variance shared by the built-in category analogues.
pub const ANALOGUE_SIGMA2: f64 = 0.3;

/// Target 5th-95th percentile gaps of estimated skill, strokes per hole.
pub fn reference_gap(category: Category) -> f64 {
    match category {
        Category::Driving => 0.115,
        Category::Approaching => 0.081,
        Category::Putting => 0.043,
    }
}

impl SyntheticConfig {
    /// A cohort shaped like the real one: 553 golfer-seasons, 400-1600
    /// holes each, noise variance [`ANALOGUE_SIGMA2`] and a between-golfer
    /// variance calibrated to the category's reference gap. No null golfers.
    pub fn category_analogue(category: Category, seed: u64) -> Self {
        let holes = HolesSpec::Uniform { min: 400, max: 1600 };
        Self {
            category,
            n_golfers: 553,
            holes,
            mu_s: 0.0,
            tau2_s: calibrate_tau2(reference_gap(category), ANALOGUE_SIGMA2, holes.mean()),
            sigma2: NoiseSpec::Fixed {
                sigma2: ANALOGUE_SIGMA2,
            },
            null_fraction: 0.0,
            seed,
        }
    }

    /// Default FDR study: approach-like cohort with 80% null golfers.
    pub fn default_study(seed: u64) -> Self {
        Self {
            null_fraction: 0.8,
            ..Self::category_analogue(Category::Approaching, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_golfers == 0 {
            return bad("n_golfers must be positive".into());
        }
        match self.holes {
            HolesSpec::Fixed { holes: 0 } => return bad("holes must be positive".into()),
            HolesSpec::Uniform { min, max } if min == 0 || min > max => {
                return bad(format!("hole range [{min}, {max}] is empty or includes 0"))
            }
            _ => {}
        }
        match self.sigma2 {
            NoiseSpec::Fixed { sigma2 } if !(sigma2 >= 0.0 && sigma2.is_finite()) => {
                return bad(format!("sigma2 {sigma2} must be a finite non-negative number"))
            }
            NoiseSpec::Uniform { min, max } if !(min >= 0.0 && min <= max && max.is_finite()) => {
                return bad(format!("sigma2 range [{min}, {max}] is invalid"))
            }
            _ => {}
        }
        if !(self.tau2_s >= 0.0 && self.tau2_s.is_finite()) {
            return bad(format!("tau2_s {} must be a finite non-negative number", self.tau2_s));
        }
        if !self.mu_s.is_finite() {
            return bad("mu_s must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.null_fraction) {
            return bad(format!("null_fraction {} is outside [0, 1]", self.null_fraction));
        }
        Ok(())
    }

    pub fn n_null(&self) -> usize {
        (self.null_fraction * self.n_golfers as f64).round() as usize
    }

    fn rng(&self, replication: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication);
        rng
    }

    /// Draws one replication, handing each golfer's outcomes to `visit` in
    /// golfer order. `buf` is reused between golfers.
    fn draw_with<F>(&self, replication: u64, mut visit: F)
    where
        F: FnMut(usize, bool, f64, f64, &[f64]),
    {
        let mut rng = self.rng(replication);
        let mut is_null = vec![false; self.n_golfers];
        for i in index::sample(&mut rng, self.n_golfers, self.n_null()) {
            is_null[i] = true;
        }
        let tau = self.tau2_s.sqrt();
        let mut buf = Vec::new();
        for (i, &null) in is_null.iter().enumerate() {
            let holes = self.holes.draw(&mut rng);
            let sigma2 = self.sigma2.draw(&mut rng);
            let skill = if null {
                0.0
            } else {
                let z: f64 = rng.sample(StandardNormal);
                self.mu_s + tau * z
            };
            let sd = sigma2.sqrt();
            buf.clear();
            buf.extend((0..holes).map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                skill + sd * z
            }));
            visit(i, null, skill, sigma2, &buf);
        }
    }
}

pub fn golfer_id(index: usize) -> String {
    format!("sim{index:05}")
}

fn synthetic_hole_key(j: usize) -> HoleKey {
    HoleKey {
        tournament_id: format!("sim{:04}", j / 72),
        round: (j % 72 / 18 + 1) as u32,
        hole: (j % 18 + 1) as u8,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGolfer {
    pub id: String,
    pub skill: f64,
    pub noise_var: f64,
    pub outcomes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub category: Category,
    pub golfers: Vec<SyntheticGolfer>,
}

impl SyntheticCohort {
    /// One outcome per synthetic hole; holes are numbered as consecutive
    /// 72-hole tournaments.
    pub fn hole_outcomes(&self) -> Vec<HoleOutcome> {
        self.golfers
            .iter()
            .flat_map(|g| {
                g.outcomes.iter().enumerate().map(move |(j, &x)| HoleOutcome {
                    golfer_season_id: g.id.clone(),
                    category: self.category,
                    hole_key: synthetic_hole_key(j),
                    x,
                })
            })
            .collect()
    }

    /// One shot per hole outcome, carrying the outcome as its strokes gained.
    pub fn shots(&self) -> Vec<ShotRecord> {
        self.hole_outcomes()
            .into_iter()
            .map(|o| ShotRecord {
                golfer_season_id: o.golfer_season_id,
                tournament_id: o.hole_key.tournament_id,
                round: o.hole_key.round,
                hole: o.hole_key.hole,
                category: o.category,
                strokes_gained: o.x,
            })
            .collect()
    }

    pub fn aggregates(&self) -> Vec<GolferAggregate> {
        self.golfers
            .iter()
            .filter_map(|g| GolferAggregate::from_values(g.id.clone(), self.category, &g.outcomes))
            .collect()
    }

    pub fn ground_truth(&self) -> BTreeMap<String, f64> {
        self.golfers.iter().map(|g| (g.id.clone(), g.skill)).collect()
    }
}

/// Draws replication `replication` of `cfg`.
pub fn generate_cohort(cfg: &SyntheticConfig, replication: u64) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let mut golfers = Vec::with_capacity(cfg.n_golfers);
    cfg.draw_with(replication, |i, _, skill, noise_var, xs| {
        golfers.push(SyntheticGolfer {
            id: golfer_id(i),
            skill,
            noise_var,
            outcomes: xs.to_vec(),
        })
    });
    Ok(SyntheticCohort {
        category: cfg.category,
        golfers,
    })
}

/// Hole outcomes and true skills for replication 0 of `cfg`.
pub fn generate(cfg: &SyntheticConfig) -> Result<(Vec<HoleOutcome>, BTreeMap<String, f64>)> {
    let cohort = generate_cohort(cfg, 0)?;
    Ok((cohort.hole_outcomes(), cohort.ground_truth()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyOptions {
    pub fit: FitOptions,
    pub variance: VarianceMode,
}

/// One (replication, alpha) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: u64,
    pub alpha: f64,
    pub discoveries: usize,
    pub false_discoveries: usize,
    pub false_discovery_proportion: f64,
    /// Share of non-null golfers discovered; empty when there are none.
    pub power: Option<f64>,
    /// Null golfers with a one-sample t-test p-value at or below alpha.
    pub naive_false_positives: usize,
    /// Null golfers with an empirical Bayes p-value at or below alpha.
    pub naive_false_positives_eb: usize,
    pub mu_hat: f64,
    pub tau2_hat: f64,
    pub boundary: bool,
    pub converged: bool,
    pub eb_gap: f64,
    pub shrinkage_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    /// Mean false discovery proportion over replications.
    pub empirical_fdr: f64,
    /// Binomial standard error `sqrt(alpha (1 - alpha) / R)`.
    pub fdr_binomial_se: f64,
    pub empirical_power: Option<f64>,
    pub mean_discoveries: f64,
    pub mean_expected_true: f64,
    pub mean_naive_false_positives: f64,
    /// `n_null * alpha`, the uncorrected expectation.
    pub naive_expected: f64,
    /// `sqrt(n_null * alpha (1 - alpha) / R)`.
    pub naive_se: f64,
    pub mean_naive_false_positives_eb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryErrors {
    pub mean_mu_hat: f64,
    pub mean_tau2_hat: f64,
    pub bias_mu: f64,
    pub bias_tau2: f64,
    pub rmse_mu: f64,
    pub rmse_tau2: f64,
    /// Standard deviations of the estimates across replications.
    pub sd_mu: f64,
    pub sd_tau2: f64,
}

impl RecoveryErrors {
    /// Monte Carlo standard errors of the mean estimates.
    pub fn mc_se(&self, replications: u64) -> (f64, f64) {
        let r = (replications as f64).sqrt();
        (self.sd_mu / r, self.sd_tau2 / r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SyntheticConfig,
    pub variance_mode: VarianceMode,
    pub replications: u64,
    pub n_null: usize,
    pub alphas: Vec<AlphaSummary>,
    /// Against the generator's `(mu_s, tau2_s)`.
    pub recovery: RecoveryErrors,
    pub mean_eb_gap: f64,
    pub boundary_fits: usize,
    pub nonconverged_fits: usize,
    pub shrinkage_violations: usize,
    #[serde(skip)]
    pub rows: Vec<ReplicationRecord>,
}

impl SimulationReport {
    pub fn alpha(&self, alpha: f64) -> Option<&AlphaSummary> {
        self.alphas.iter().find(|a| a.alpha == alpha)
    }

    pub fn write_rows_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn t_test_p(agg: &GolferAggregate) -> f64 {
    let n = agg.n_holes as f64;
    if agg.n_holes < 2 || agg.var_mle <= 0.0 {
        return 1.0;
    }
    let se = (agg.var_mle / (n - 1.0)).sqrt();
    let t = agg.mean.abs() / se;
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("df >= 1");
    (2.0 * dist.sf(t)).min(1.0)
}

fn shrinkage_violations(posts: &[eb::SkillPosterior], fit: &eb::CategoryFit, aggs: &[GolferAggregate]) -> usize {
    posts
        .iter()
        .zip(aggs)
        .filter(|(p, a)| {
            let (lo, hi) = (fit.mu.min(p.mle_mean), fit.mu.max(p.mle_mean));
            let between = lo <= p.eb_mean && p.eb_mean <= hi;
            let s2 = fit.noise_var(a);
            let bounded = p.post_var <= fit.tau2 + 1e-12 && p.post_var <= s2 / a.n_holes as f64 + 1e-12;
            !(between && bounded)
        })
        .count()
}

fn replicate(
    cfg: &SyntheticConfig,
    alphas: &[f64],
    opts: &StudyOptions,
    replication: u64,
) -> Result<Vec<ReplicationRecord>> {
    let mut aggs = Vec::with_capacity(cfg.n_golfers);
    let mut null_flags = Vec::with_capacity(cfg.n_golfers);
    cfg.draw_with(replication, |i, null, _, _, xs| {
        if let Some(a) = GolferAggregate::from_values(golfer_id(i), cfg.category, xs) {
            aggs.push(a);
            null_flags.push(null);
        }
    });
    let fit = eb::fit_category(&aggs, &opts.fit)?;
    let posts = eb::posterior_all(&aggs, &fit)?;
    let tests = mtest::test_all(&posts, &fit, opts.variance)?;
    let t_p: Vec<f64> = aggs.iter().map(t_test_p).collect();
    let eb_means: Vec<f64> = posts.iter().map(|p| p.eb_mean).collect();
    let eb_gap = quantile_gap(&eb_means, 0.05, 0.95);
    let violations = shrinkage_violations(&posts, &fit, &aggs);
    let null_by_id: BTreeMap<&str, bool> = aggs
        .iter()
        .zip(&null_flags)
        .map(|(a, &n)| (a.golfer_season_id.as_str(), n))
        .collect();
    let n_alt = null_flags.iter().filter(|n| !**n).count();

    alphas
        .iter()
        .map(|&alpha| {
            let bh = mtest::bh_reject(&tests, alpha)?;
            let false_discoveries = bh.rejected_ids.iter().filter(|id| null_by_id[id.as_str()]).count();
            let true_discoveries = bh.m_discoveries - false_discoveries;
            let naive = |ps: &mut dyn Iterator<Item = f64>| {
                ps.zip(&null_flags).filter(|(p, &null)| null && *p <= alpha).count()
            };
            Ok(ReplicationRecord {
                replication,
                alpha,
                discoveries: bh.m_discoveries,
                false_discoveries,
                false_discovery_proportion: false_discoveries as f64 / bh.m_discoveries.max(1) as f64,
                power: (n_alt > 0).then(|| true_discoveries as f64 / n_alt as f64),
                naive_false_positives: naive(&mut t_p.iter().copied()),
                naive_false_positives_eb: naive(&mut tests.iter().map(|t| t.p_value)),
                mu_hat: fit.mu,
                tau2_hat: fit.tau2,
                boundary: fit.boundary,
                converged: fit.converged,
                eb_gap,
                shrinkage_violations: violations,
            })
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn summarize_study(
    cfg: &SyntheticConfig,
    opts: &StudyOptions,
    alphas: &[f64],
    replications: u64,
    rows: Vec<ReplicationRecord>,
) -> SimulationReport {
    let r = replications as f64;
    let n_null = cfg.n_null();
    let summaries = alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let cell = || rows.iter().skip(k).step_by(alphas.len());
            let power = if cfg.n_golfers > n_null {
                Some(mean(cell().map(|row| row.power.unwrap_or(0.0))))
            } else {
                None
            };
            let mean_discoveries = mean(cell().map(|row| row.discoveries as f64));
            AlphaSummary {
                alpha,
                empirical_fdr: mean(cell().map(|row| row.false_discovery_proportion)),
                fdr_binomial_se: (alpha * (1.0 - alpha) / r).sqrt(),
                empirical_power: power,
                mean_discoveries,
                mean_expected_true: (1.0 - alpha) * mean_discoveries,
                mean_naive_false_positives: mean(cell().map(|row| row.naive_false_positives as f64)),
                naive_expected: n_null as f64 * alpha,
                naive_se: (n_null as f64 * alpha * (1.0 - alpha) / r).sqrt(),
                mean_naive_false_positives_eb: mean(cell().map(|row| row.naive_false_positives_eb as f64)),
            }
        })
        .collect();

    let per_rep: Vec<&ReplicationRecord> = rows.iter().step_by(alphas.len().max(1)).collect();
    let mu_hats = || per_rep.iter().map(|row| row.mu_hat);
    let tau_hats = || per_rep.iter().map(|row| row.tau2_hat);
    let mean_mu = mean(mu_hats());
    let mean_tau2 = mean(tau_hats());
    let sd = |xs: &mut dyn Iterator<Item = f64>, m: f64| {
        let (ss, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + (x - m) * (x - m), n + 1));
        if n > 1 {
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        }
    };
    let recovery = RecoveryErrors {
        mean_mu_hat: mean_mu,
        mean_tau2_hat: mean_tau2,
        bias_mu: mean_mu - cfg.mu_s,
        bias_tau2: mean_tau2 - cfg.tau2_s,
        rmse_mu: mean(mu_hats().map(|m| (m - cfg.mu_s).powi(2))).sqrt(),
        rmse_tau2: mean(tau_hats().map(|t| (t - cfg.tau2_s).powi(2))).sqrt(),
        sd_mu: sd(&mut mu_hats(), mean_mu),
        sd_tau2: sd(&mut tau_hats(), mean_tau2),
    };

    SimulationReport {
        config: cfg.clone(),
        variance_mode: opts.variance,
        replications,
        n_null,
        alphas: summaries,
        recovery,
        mean_eb_gap: mean(per_rep.iter().map(|row| row.eb_gap)),
        boundary_fits: per_rep.iter().filter(|row| row.boundary).count(),
        nonconverged_fits: per_rep.iter().filter(|row| !row.converged).count(),
        shrinkage_violations: per_rep.iter().map(|row| row.shrinkage_violations).sum(),
        rows,
    }
}

/// Runs `replications` independent generate-fit-test cycles and summarises
/// FDR, power, the uncorrected false-positive counts and hyperparameter
/// recovery.
///
/// A BH discovery is false when the golfer's true skill is exactly zero.
pub fn run_fdr_study(
    cfg: &SyntheticConfig,
    alphas: &[f64],
    replications: u64,
    opts: &StudyOptions,
) -> Result<SimulationReport> {
    cfg.validate()?;
    opts.fit.validate()?;
    if replications == 0 {
        return Err(Error::InvalidConfig("replications must be at least 1".into()));
    }
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("at least one alpha is required".into()));
    }
    for &a in alphas {
        mtest::validate_alpha(a)?;
    }
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            replicate(cfg, alphas, opts, r).map_err(|e| Error::Replication {
                index: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let rows = per_rep.into_iter().flatten().collect();
    Ok(summarize_study(cfg, opts, alphas, replications, rows))
}

/// Runs the same study on a low- and a high-dispersion cohort.
pub fn run_contrast_study(
    putting_like: &SyntheticConfig,
    driving_like: &SyntheticConfig,
    alphas: &[f64],
    replications: u64,
    opts: &StudyOptions,
) -> Result<(SimulationReport, SimulationReport)> {
    Ok((
        run_fdr_study(putting_like, alphas, replications, opts)?,
        run_fdr_study(driving_like, alphas, replications, opts)?,
    ))
}

/// Whether mean discoveries at `alpha` strictly increase along `reports`.
pub fn discoveries_increasing(reports: &[SimulationReport], alpha: f64) -> bool {
    let counts: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.alpha(alpha).map(|a| a.mean_discoveries))
        .collect();
    counts.len() == reports.len() && counts.windows(2).all(|w| w[0] < w[1])
}
