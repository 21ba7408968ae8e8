//! Summary artifacts: effect sizes, skill histograms, shrinkage scatter
//! rows, leaderboards and Benjamini-Hochberg plot geometry.
//!
//! [`write_report`] lays them out as
//! `<dir>/<category>/{skill_hist.csv, shrinkage.csv, top_k.csv,
//! bh_points.csv, bh_lines.csv, effects.json}` plus `<dir>/manifest.json`.
//! Rendering is left to external tools.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::ShotCount;
use crate::io::{read_csv, read_json, write_csv, write_json};
use crate::mtest::{self, step_up_count};
use crate::quantile::{quantile_gap, QuantileMethod};
use crate::{Category, Error, GolferAggregate, Result, SkillPosterior, TestResult};

pub const DEFAULT_HOLES_PER_TOURNAMENT: f64 = 72.0;
pub const MIN_GOLFERS_FOR_PERCENTILES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeSummary {
    pub category: Category,
    pub n_golfers: usize,
    /// 95th minus 5th percentile of the posterior means, strokes per hole.
    pub delta_p95_p5: f64,
    /// `holes_per_tournament * delta_p95_p5`.
    pub per_tournament: f64,
    pub holes_per_tournament: f64,
    pub percentile_method: QuantileMethod,
    /// Same gap on the unpooled sample means, for comparison.
    pub mle_delta_p95_p5: f64,
}

fn by_category(posteriors: &[SkillPosterior]) -> BTreeMap<Category, Vec<&SkillPosterior>> {
    let mut groups: BTreeMap<Category, Vec<&SkillPosterior>> = BTreeMap::new();
    for p in posteriors {
        groups.entry(p.category).or_default().push(p);
    }
    groups
}

fn effect_size(category: Category, posts: &[&SkillPosterior], holes_per_tournament: f64) -> Result<EffectSizeSummary> {
    if posts.len() < MIN_GOLFERS_FOR_PERCENTILES {
        return Err(Error::TooFewForPercentiles {
            category,
            found: posts.len(),
            required: MIN_GOLFERS_FOR_PERCENTILES,
        });
    }
    let eb: Vec<f64> = posts.iter().map(|p| p.eb_mean).collect();
    let mle: Vec<f64> = posts.iter().map(|p| p.mle_mean).collect();
    let delta = quantile_gap(&eb, 0.05, 0.95);
    Ok(EffectSizeSummary {
        category,
        n_golfers: posts.len(),
        delta_p95_p5: delta,
        per_tournament: holes_per_tournament * delta,
        holes_per_tournament,
        percentile_method: QuantileMethod::Linear,
        mle_delta_p95_p5: quantile_gap(&mle, 0.05, 0.95),
    })
}

/// Percentile gap of estimated skill for every category present.
pub fn effect_sizes(posteriors: &[SkillPosterior], holes_per_tournament: f64) -> Result<Vec<EffectSizeSummary>> {
    by_category(posteriors)
        .into_iter()
        .map(|(c, posts)| effect_size(c, &posts, holes_per_tournament))
        .collect()
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub category: Category,
    /// `counts.len() + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl Histogram {
    pub fn rows(&self) -> Vec<HistogramRow> {
        self.counts
            .iter()
            .enumerate()
            .map(|(bin, &count)| HistogramRow {
                bin,
                lower: self.edges[bin],
                upper: self.edges[bin + 1],
                count,
            })
            .collect()
    }

    pub fn from_rows(category: Category, rows: &[HistogramRow]) -> Self {
        let mut edges: Vec<f64> = rows.iter().map(|r| r.lower).collect();
        edges.extend(rows.last().map(|r| r.upper));
        Self {
            category,
            edges,
            counts: rows.iter().map(|r| r.count).collect(),
        }
    }
}

pub fn histogram(category: Category, values: &[f64], bins: usize) -> Histogram {
    let mut counts = vec![0; bins];
    let (lo, hi) = values
        .iter()
        .fold(None, |acc: Option<(f64, f64)>, &x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        })
        .unwrap_or((0.0, 0.0));
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);
    for &x in values {
        let bin = if width > 0.0 {
            (((x - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Histogram {
        category,
        edges,
        counts,
    }
}

/// Histogram of posterior means for each of the three categories (all-zero
/// counts for a category without golfers).
pub fn skill_histogram(posteriors: &[SkillPosterior], bins: usize) -> Result<Vec<Histogram>> {
    if bins == 0 {
        return Err(Error::InvalidConfig("bins must be at least 1".into()));
    }
    let groups = by_category(posteriors);
    Ok(Category::ALL
        .iter()
        .map(|&c| {
            let values: Vec<f64> = groups
                .get(&c)
                .map_or_else(Vec::new, |ps| ps.iter().map(|p| p.eb_mean).collect());
            histogram(c, &values, bins)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageRow {
    pub golfer_season: String,
    pub category: Category,
    pub n_holes: usize,
    pub mle_mean: f64,
    pub eb_mean: f64,
    /// Distance from the identity line, `eb_mean - mle_mean`.
    pub residual: f64,
}

/// Posterior mean against sample mean for each aggregate.
pub fn shrinkage_scatter(aggs: &[GolferAggregate], posteriors: &[SkillPosterior]) -> Result<Vec<ShrinkageRow>> {
    let index: HashMap<(&str, Category), &SkillPosterior> = posteriors
        .iter()
        .map(|p| ((p.golfer_season_id.as_str(), p.category), p))
        .collect();
    if index.len() != aggs.len() {
        if let Some(extra) = posteriors.iter().find(|p| {
            !aggs
                .iter()
                .any(|a| a.golfer_season_id == p.golfer_season_id && a.category == p.category)
        }) {
            return Err(Error::Misaligned {
                golfer: extra.golfer_season_id.clone(),
                category: extra.category,
            });
        }
    }
    aggs.iter()
        .map(|a| {
            let p = index
                .get(&(a.golfer_season_id.as_str(), a.category))
                .ok_or_else(|| Error::Misaligned {
                    golfer: a.golfer_season_id.clone(),
                    category: a.category,
                })?;
            Ok(ShrinkageRow {
                golfer_season: a.golfer_season_id.clone(),
                category: a.category,
                n_holes: a.n_holes,
                mle_mean: a.mean,
                eb_mean: p.eb_mean,
                residual: p.eb_mean - a.mean,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderRow {
    pub rank: usize,
    pub golfer_season: String,
    pub eb_mean: f64,
    pub mle_mean: f64,
    pub n_holes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub category: Category,
    pub rows: Vec<LeaderRow>,
}

fn leaderboard(category: Category, posts: &[&SkillPosterior], k: usize) -> Result<Leaderboard> {
    if k > posts.len() {
        return Err(Error::KTooLarge {
            category,
            k,
            available: posts.len(),
        });
    }
    let mut sorted = posts.to_vec();
    sorted.sort_by(|a, b| {
        b.eb_mean
            .total_cmp(&a.eb_mean)
            .then_with(|| a.golfer_season_id.cmp(&b.golfer_season_id))
    });
    Ok(Leaderboard {
        category,
        rows: sorted
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, p)| LeaderRow {
                rank: i + 1,
                golfer_season: p.golfer_season_id.clone(),
                eb_mean: p.eb_mean,
                mle_mean: p.mle_mean,
                n_holes: p.n_holes,
            })
            .collect(),
    })
}

/// The `k` highest posterior means per category, ties broken by golfer id.
pub fn top_k(posteriors: &[SkillPosterior], k: usize) -> Result<Vec<Leaderboard>> {
    by_category(posteriors)
        .into_iter()
        .map(|(c, posts)| leaderboard(c, &posts, k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhPoint {
    pub rank: usize,
    pub p_value: f64,
    pub golfer_season: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhLine {
    pub alpha: f64,
    /// `alpha / n`; the line passes through the origin.
    pub slope: f64,
    pub k_star: usize,
    pub expected_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhPlotData {
    pub category: Category,
    pub n: usize,
    pub points: Vec<BhPoint>,
    pub lines: Vec<BhLine>,
}

/// Ranked p-values and BH threshold lines, one plot per category.
pub fn bh_plot_data(tests: &[TestResult], alphas: &[f64]) -> Result<Vec<BhPlotData>> {
    for &a in alphas {
        mtest::validate_alpha(a)?;
    }
    let mut groups: BTreeMap<Category, Vec<&TestResult>> = BTreeMap::new();
    for t in tests {
        groups.entry(t.category).or_default().push(t);
    }
    Ok(groups
        .into_iter()
        .map(|(category, mut ts)| {
            ts.sort_by(|a, b| {
                a.p_value
                    .total_cmp(&b.p_value)
                    .then_with(|| a.golfer_season_id.cmp(&b.golfer_season_id))
            });
            let ps: Vec<f64> = ts.iter().map(|t| t.p_value).collect();
            let n = ts.len();
            BhPlotData {
                category,
                n,
                points: ts
                    .iter()
                    .enumerate()
                    .map(|(i, t)| BhPoint {
                        rank: i + 1,
                        p_value: t.p_value,
                        golfer_season: t.golfer_season_id.clone(),
                    })
                    .collect(),
                lines: alphas
                    .iter()
                    .map(|&alpha| {
                        let k_star = step_up_count(&ps, alpha);
                        BhLine {
                            alpha,
                            slope: alpha / n as f64,
                            k_star,
                            expected_true: (1.0 - alpha) * k_star as f64,
                        }
                    })
                    .collect(),
            }
        })
        .collect())
}

/// Contents of `effects.json`. Categories with too few golfers for stable
/// percentiles get a reason instead of a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsFile {
    pub summary: Option<EffectSizeSummary>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryReport {
    pub category: Category,
    pub histogram: Histogram,
    pub shrinkage: Vec<ShrinkageRow>,
    pub leaderboard: Leaderboard,
    pub bh: BhPlotData,
    pub effects: EffectsFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub bins: usize,
    pub top_k: usize,
    pub alphas: Vec<f64>,
    pub holes_per_tournament: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            bins: 30,
            top_k: 7,
            alphas: vec![0.01, 0.05, 0.10, 0.15],
            holes_per_tournament: DEFAULT_HOLES_PER_TOURNAMENT,
        }
    }
}

pub struct ReportInputs<'a> {
    pub aggregates: &'a [GolferAggregate],
    pub posteriors: &'a [SkillPosterior],
    pub tests: &'a [TestResult],
    /// Distinct holes per golfer-season, for the holes-played histogram.
    pub holes_played: Option<&'a BTreeMap<String, usize>>,
    pub shot_counts: Option<&'a [ShotCount]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub categories: Vec<Category>,
    /// Paths relative to the report directory, sorted.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolesPlayedRow {
    pub golfer_season: String,
    pub holes: usize,
}

const SKILL_HIST: &str = "skill_hist.csv";
const SHRINKAGE: &str = "shrinkage.csv";
const TOP_K: &str = "top_k.csv";
const BH_POINTS: &str = "bh_points.csv";
const BH_LINES: &str = "bh_lines.csv";
const EFFECTS: &str = "effects.json";
const STROKES_PER_HOLE: &str = "strokes_per_hole.csv";
const HOLES_PLAYED: &str = "holes_played.csv";

/// Builds the per-category artifacts in memory.
pub fn build_report(inputs: &ReportInputs<'_>, opts: &ReportOptions) -> Result<Vec<CategoryReport>> {
    let hists = skill_histogram(inputs.posteriors, opts.bins)?;
    let shrink = shrinkage_scatter(inputs.aggregates, inputs.posteriors)?;
    let bh = bh_plot_data(inputs.tests, &opts.alphas)?;
    let groups = by_category(inputs.posteriors);
    groups
        .iter()
        .map(|(&category, posts)| {
            let effects = match effect_size(category, posts, opts.holes_per_tournament) {
                Ok(s) => EffectsFile {
                    summary: Some(s),
                    skipped: None,
                },
                Err(e @ Error::TooFewForPercentiles { .. }) => EffectsFile {
                    summary: None,
                    skipped: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            Ok(CategoryReport {
                category,
                histogram: hists.iter().find(|h| h.category == category).cloned().unwrap(),
                shrinkage: shrink.iter().filter(|r| r.category == category).cloned().collect(),
                leaderboard: leaderboard(category, posts, opts.top_k.min(posts.len()))?,
                bh: bh
                    .iter()
                    .find(|b| b.category == category)
                    .cloned()
                    .unwrap_or(BhPlotData {
                        category,
                        n: 0,
                        points: vec![],
                        lines: vec![],
                    }),
                effects,
            })
        })
        .collect()
}

/// Writes every artifact under `dir` and returns the manifest it wrote.
pub fn write_report(
    dir: &Path,
    inputs: &ReportInputs<'_>,
    opts: &ReportOptions,
    provenance: &Provenance,
) -> Result<Manifest> {
    let reports = build_report(inputs, opts)?;
    let mut files = Vec::new();
    for r in &reports {
        let cat_dir = dir.join(r.category.as_str());
        let mut put = |name: &str| {
            files.push(format!("{}/{}", r.category, name));
            cat_dir.join(name)
        };
        write_csv(
            &put(SKILL_HIST),
            &r.histogram.rows(),
            Some(&["bin", "lower", "upper", "count"]),
        )?;
        write_csv(
            &put(SHRINKAGE),
            &r.shrinkage,
            Some(&[
                "golfer_season",
                "category",
                "n_holes",
                "mle_mean",
                "eb_mean",
                "residual",
            ]),
        )?;
        write_csv(
            &put(TOP_K),
            &r.leaderboard.rows,
            Some(&["rank", "golfer_season", "eb_mean", "mle_mean", "n_holes"]),
        )?;
        write_csv(
            &put(BH_POINTS),
            &r.bh.points,
            Some(&["rank", "p_value", "golfer_season"]),
        )?;
        write_csv(
            &put(BH_LINES),
            &r.bh.lines,
            Some(&["alpha", "slope", "k_star", "expected_true"]),
        )?;
        write_json(&put(EFFECTS), &r.effects)?;
        if let Some(counts) = inputs.shot_counts {
            let rows: Vec<&ShotCount> = counts.iter().filter(|c| c.category == r.category).collect();
            write_csv(&put(STROKES_PER_HOLE), &rows, Some(&["category", "shots", "holes"]))?;
        }
    }
    if let Some(played) = inputs.holes_played {
        let rows: Vec<HolesPlayedRow> = played
            .iter()
            .map(|(g, &holes)| HolesPlayedRow {
                golfer_season: g.clone(),
                holes,
            })
            .collect();
        write_csv(&dir.join(HOLES_PLAYED), &rows, Some(&["golfer_season", "holes"]))?;
        files.push(HOLES_PLAYED.to_string());
    }
    files.sort();
    let manifest = Manifest {
        tool_version: provenance.tool_version.clone(),
        config_hash: provenance.config_hash.clone(),
        config: provenance.config.clone(),
        categories: reports.iter().map(|r| r.category).collect(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reads back the artifacts of one category written by [`write_report`].
pub fn read_category_report(dir: &Path, category: Category) -> Result<CategoryReport> {
    let cat_dir = dir.join(category.as_str());
    let hist_rows: Vec<HistogramRow> = read_csv(&cat_dir.join(SKILL_HIST))?;
    let points: Vec<BhPoint> = read_csv(&cat_dir.join(BH_POINTS))?;
    Ok(CategoryReport {
        category,
        histogram: Histogram::from_rows(category, &hist_rows),
        shrinkage: read_csv(&cat_dir.join(SHRINKAGE))?,
        leaderboard: Leaderboard {
            category,
            rows: read_csv(&cat_dir.join(TOP_K))?,
        },
        bh: BhPlotData {
            category,
            n: points.len(),
            points,
            lines: read_csv(&cat_dir.join(BH_LINES))?,
        },
        effects: read_json(&cat_dir.join(EFFECTS))?,
    })
}
