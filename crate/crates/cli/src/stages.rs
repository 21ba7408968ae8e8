//! The `fit`, `test`, `report` and `simulate` stages. Each reads its inputs
//! from disk and writes its artifacts under the output directory, so stages
//! can run separately or chained by `all`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ebgolf::eb::{self, FitTrace};
use ebgolf::ingest::{self, RowError, ShotCount};
use ebgolf::io::{read_csv, read_json, write_csv, write_json};
use ebgolf::report::{self, HolesPlayedRow, ReportInputs};
use ebgolf::simlab::{self, StudyOptions, SyntheticConfig};
use ebgolf::{mtest, BhOutcome, Category, CategoryFit, CohortConfig, GolferAggregate, SkillPosterior, TestResult};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::failure::{CliResult, Context, Failure};

pub const FIT_DIR: &str = "fit";
pub const TEST_DIR: &str = "test";
pub const REPORT_DIR: &str = "report";
pub const SIMULATE_DIR: &str = "simulate";

#[derive(Debug, Serialize, Deserialize)]
struct AggregateRow {
    golfer_season: String,
    category: Category,
    n_holes: usize,
    mean: f64,
    var_mle: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PosteriorRow {
    golfer_season: String,
    category: Category,
    n_holes: usize,
    mle_mean: f64,
    eb_mean: f64,
    post_var: f64,
}

#[derive(Debug, Serialize)]
struct ParseErrorRow<'a> {
    file: String,
    line: u64,
    message: &'a str,
}

#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    category: Category,
    iterations: usize,
    converged: bool,
    boundary: bool,
    variance_floor: f64,
    floored_golfers: &'a [String],
    loglik: &'a [f64],
}

/// The machine-readable fields of `test/results.json`.
#[derive(Debug, Deserialize)]
struct ResultRow {
    golfer_season: String,
    category: Category,
    eb_mean: f64,
    post_var: f64,
    z: f64,
    p_value: f64,
}

fn write_provenance(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    write_json(&dir.join("config.json"), &cfg.provenance()).context("writing config.json")
}

/// Row errors tagged with the file they came from.
type FileRowErrors = Vec<(PathBuf, RowError)>;

fn read_shots(cfg: &RunConfig) -> CliResult<(Vec<ebgolf::ShotRecord>, FileRowErrors)> {
    if cfg.input.is_empty() {
        return Err(Failure::usage("no input files given (use --input)"));
    }
    let mut shots = Vec::new();
    let mut errors = Vec::new();
    for path in &cfg.input {
        let file = File::open(path).with_context(|| format!("cannot open input {}", path.display()))?;
        let parsed = ingest::parse_shots(BufReader::new(file), &cfg.schema)
            .with_context(|| format!("reading {}", path.display()))?;
        info!(
            "{}: {} shots, {} rejected rows",
            path.display(),
            parsed.records.len(),
            parsed.errors.len()
        );
        if cfg.strict {
            if let Some(e) = parsed.errors.first() {
                return Err(Failure::data(format!(
                    "{}: line {}: {}",
                    path.display(),
                    e.line,
                    e.message
                )));
            }
        }
        shots.extend(parsed.records);
        errors.extend(parsed.errors.into_iter().map(|e| (path.clone(), e)));
    }
    if !errors.is_empty() {
        warn!("{} rows rejected; see {}/parse_errors.csv", errors.len(), FIT_DIR);
    }
    Ok((shots, errors))
}

/// Ingests shots, fits every category and writes posteriors under `fit/`.
pub fn fit(cfg: &RunConfig) -> CliResult<()> {
    let dir = cfg.out.join(FIT_DIR);
    let (shots, errors) = read_shots(cfg)?;
    let outcomes = ingest::aggregate_holes(&shots);
    let cohort = ingest::filter_cohort(&outcomes, &CohortConfig::new(cfg.min_holes)?);
    if cohort.is_empty() {
        return Err(Failure::data(format!(
            "no golfer-season in the input played at least {} holes",
            cfg.min_holes
        )));
    }
    let played = ingest::holes_played(&cohort);
    info!(
        "{} of {} golfer-seasons kept",
        played.len(),
        ingest::holes_played(&outcomes).len()
    );

    let aggs = eb::summarize(&cohort);
    let fitted = eb::fit_all(&aggs, &cfg.fit_options())?;
    let mut posteriors = Vec::new();
    for (fit, _) in &fitted {
        info!(
            "{}: {} golfers, mu = {:.6}, tau2 = {:.6e}, {} iterations{}",
            fit.category,
            fit.n_golfers,
            fit.mu,
            fit.tau2,
            fit.iterations,
            if fit.boundary { " (boundary)" } else { "" }
        );
        if !fit.converged {
            let msg = format!("{}: EM did not converge in {} iterations", fit.category, fit.iterations);
            if cfg.strict {
                return Err(Failure::data(msg));
            }
            warn!("{msg}");
        }
        if !fit.floored_golfers.is_empty() {
            warn!(
                "{}: {} golfers with zero sample variance",
                fit.category,
                fit.floored_golfers.len()
            );
        }
        let subset: Vec<GolferAggregate> = aggs.iter().filter(|a| a.category == fit.category).cloned().collect();
        posteriors.extend(eb::posterior_all(&subset, fit)?);
    }
    let fits: Vec<&CategoryFit> = fitted.iter().map(|(f, _)| f).collect();

    let agg_rows: Vec<AggregateRow> = aggs
        .iter()
        .map(|a| AggregateRow {
            golfer_season: a.golfer_season_id.clone(),
            category: a.category,
            n_holes: a.n_holes,
            mean: a.mean,
            var_mle: a.var_mle,
        })
        .collect();
    write_csv(
        &dir.join("aggregates.csv"),
        &agg_rows,
        Some(&["golfer_season", "category", "n_holes", "mean", "var_mle"]),
    )?;
    write_json(&dir.join("fits.json"), &fits)?;
    write_csv(
        &dir.join("posteriors.csv"),
        &posterior_rows(&posteriors),
        Some(&[
            "golfer_season",
            "category",
            "n_holes",
            "mle_mean",
            "eb_mean",
            "post_var",
        ]),
    )?;
    write_json(&dir.join("posteriors.json"), &posteriors)?;
    let played_rows: Vec<HolesPlayedRow> = played
        .iter()
        .map(|(g, &holes)| HolesPlayedRow {
            golfer_season: g.clone(),
            holes,
        })
        .collect();
    write_csv(
        &dir.join("holes_played.csv"),
        &played_rows,
        Some(&["golfer_season", "holes"]),
    )?;
    let kept: Vec<ebgolf::ShotRecord> = shots
        .into_iter()
        .filter(|s| played.contains_key(&s.golfer_season_id))
        .collect();
    write_csv(
        &dir.join("shots_per_hole.csv"),
        &ingest::shots_per_hole(&kept),
        Some(&["category", "shots", "holes"]),
    )?;
    let error_rows: Vec<ParseErrorRow> = errors
        .iter()
        .map(|(p, e)| ParseErrorRow {
            file: p.display().to_string(),
            line: e.line,
            message: &e.message,
        })
        .collect();
    write_csv(
        &dir.join("parse_errors.csv"),
        &error_rows,
        Some(&["file", "line", "message"]),
    )?;
    if cfg.diagnostics {
        let diags: Vec<Diagnostics> = fitted
            .iter()
            .map(|(f, FitTrace { loglik, .. })| Diagnostics {
                category: f.category,
                iterations: f.iterations,
                converged: f.converged,
                boundary: f.boundary,
                variance_floor: f.variance_floor,
                floored_golfers: &f.floored_golfers,
                loglik,
            })
            .collect();
        write_json(&dir.join("diagnostics.json"), &diags)?;
    }
    write_provenance(&dir, cfg)
}

fn posterior_rows(posteriors: &[SkillPosterior]) -> Vec<PosteriorRow> {
    posteriors
        .iter()
        .map(|p| PosteriorRow {
            golfer_season: p.golfer_season_id.clone(),
            category: p.category,
            n_holes: p.n_holes,
            mle_mean: p.mle_mean,
            eb_mean: p.eb_mean,
            post_var: p.post_var,
        })
        .collect()
}

fn read_stage<T: serde::de::DeserializeOwned>(path: &Path, stage: &str) -> CliResult<T> {
    if !path.exists() {
        return Err(Failure::data(format!(
            "{} not found; run `ebgolf {stage}` with the same --out first",
            path.display()
        )));
    }
    read_json(path).with_context(|| format!("reading {}", path.display()))
}

fn read_stage_csv<T: serde::de::DeserializeOwned>(path: &Path, stage: &str) -> CliResult<Vec<T>> {
    if !path.exists() {
        return Err(Failure::data(format!(
            "{} not found; run `ebgolf {stage}` with the same --out first",
            path.display()
        )));
    }
    read_csv(path).with_context(|| format!("reading {}", path.display()))
}

/// Tests every posterior against zero and applies BH at each alpha.
pub fn test(cfg: &RunConfig) -> CliResult<()> {
    let fit_dir = cfg.out.join(FIT_DIR);
    let fits: Vec<CategoryFit> = read_stage(&fit_dir.join("fits.json"), "fit")?;
    let posteriors: Vec<SkillPosterior> = read_stage(&fit_dir.join("posteriors.json"), "fit")?;

    let mut tests: Vec<TestResult> = Vec::new();
    let mut outcomes: Vec<BhOutcome> = Vec::new();
    for fit in &fits {
        let posts: Vec<SkillPosterior> = posteriors
            .iter()
            .filter(|p| p.category == fit.category)
            .cloned()
            .collect();
        let cat_tests = mtest::test_all(&posts, fit, cfg.variance).map_err(|e| {
            let hint =
                matches!(e, ebgolf::Error::NonPositiveVariance { .. }) && cfg.variance == ebgolf::VarianceMode::PlugIn;
            let f = Failure::from(e);
            if hint {
                Failure {
                    kind: f.kind,
                    error: f.error.context(format!(
                        "{}: between-golfer variance fitted at zero; use --variance mean-adjusted",
                        fit.category
                    )),
                }
            } else {
                f
            }
        })?;
        let sweep = mtest::bh_sweep(&cat_tests, &cfg.alphas)?;
        for o in &sweep {
            info!("{}: alpha = {}: {} discoveries", o.category, o.alpha, o.m_discoveries);
        }
        tests.extend(cat_tests);
        outcomes.extend(sweep);
    }

    let dir = cfg.out.join(TEST_DIR);
    write_results(&dir, &tests, &outcomes, &cfg.alphas)?;
    write_json(&dir.join("bh.json"), &outcomes)?;
    write_provenance(&dir, cfg)
}

fn alpha_column(alpha: f64) -> String {
    format!("rejected_at_alpha_{alpha}")
}

fn write_results(dir: &Path, tests: &[TestResult], outcomes: &[BhOutcome], alphas: &[f64]) -> CliResult<()> {
    let rejected: Vec<Vec<bool>> = tests
        .iter()
        .map(|t| {
            alphas
                .iter()
                .map(|&a| {
                    outcomes
                        .iter()
                        .find(|o| o.category == t.category && o.alpha == a)
                        .is_some_and(|o| o.rejected_ids.contains(&t.golfer_season_id))
                })
                .collect()
        })
        .collect();

    let mut header: Vec<String> = ["golfer_season", "category", "eb_mean", "post_var", "z", "p_value"]
        .map(String::from)
        .to_vec();
    header.extend(alphas.iter().map(|&a| alpha_column(a)));

    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv")).map_err(ebgolf::Error::from)?;
    w.write_record(&header).map_err(ebgolf::Error::from)?;
    let mut json = Vec::with_capacity(tests.len());
    for (t, rej) in tests.iter().zip(&rejected) {
        let mut record = vec![
            t.golfer_season_id.clone(),
            t.category.to_string(),
            t.eb_mean.to_string(),
            t.post_var.to_string(),
            t.z.to_string(),
            t.p_value.to_string(),
        ];
        record.extend(rej.iter().map(bool::to_string));
        w.write_record(&record).map_err(ebgolf::Error::from)?;

        let mut obj = serde_json::Map::new();
        obj.insert("golfer_season".into(), t.golfer_season_id.clone().into());
        obj.insert("category".into(), t.category.as_str().into());
        obj.insert("eb_mean".into(), t.eb_mean.into());
        obj.insert("post_var".into(), t.post_var.into());
        obj.insert("z".into(), t.z.into());
        obj.insert("p_value".into(), t.p_value.into());
        for (&a, &r) in alphas.iter().zip(rej) {
            obj.insert(alpha_column(a), r.into());
        }
        json.push(serde_json::Value::Object(obj));
    }
    w.flush()?;
    write_json(&dir.join("results.json"), &json)?;
    Ok(())
}

/// Writes the summary artifacts under `report/`, replacing an earlier report.
pub fn report(cfg: &RunConfig) -> CliResult<()> {
    let fit_dir = cfg.out.join(FIT_DIR);
    let agg_rows: Vec<AggregateRow> = read_stage_csv(&fit_dir.join("aggregates.csv"), "fit")?;
    let aggregates: Vec<GolferAggregate> = agg_rows
        .into_iter()
        .map(|r| GolferAggregate {
            golfer_season_id: r.golfer_season,
            category: r.category,
            n_holes: r.n_holes,
            mean: r.mean,
            var_mle: r.var_mle,
        })
        .collect();
    let posteriors: Vec<SkillPosterior> = read_stage(&fit_dir.join("posteriors.json"), "fit")?;
    let result_rows: Vec<ResultRow> = read_stage(&cfg.out.join(TEST_DIR).join("results.json"), "test")?;
    let tests: Vec<TestResult> = result_rows
        .into_iter()
        .map(|r| TestResult {
            golfer_season_id: r.golfer_season,
            category: r.category,
            eb_mean: r.eb_mean,
            post_var: r.post_var,
            z: r.z,
            p_value: r.p_value,
        })
        .collect();
    let played_path = fit_dir.join("holes_played.csv");
    let played: Option<BTreeMap<String, usize>> = if played_path.exists() {
        let rows: Vec<HolesPlayedRow> = read_csv(&played_path)?;
        Some(rows.into_iter().map(|r| (r.golfer_season, r.holes)).collect())
    } else {
        None
    };
    let counts_path = fit_dir.join("shots_per_hole.csv");
    let counts: Option<Vec<ShotCount>> = if counts_path.exists() {
        Some(read_csv(&counts_path)?)
    } else {
        None
    };

    let dir = cfg.out.join(REPORT_DIR);
    if dir.join("manifest.json").exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    let inputs = ReportInputs {
        aggregates: &aggregates,
        posteriors: &posteriors,
        tests: &tests,
        holes_played: played.as_ref(),
        shot_counts: counts.as_deref(),
    };
    let manifest = report::write_report(&dir, &inputs, &cfg.report_options(), &cfg.provenance())?;
    for c in &manifest.categories {
        if let Ok(e) = report::read_category_report(&dir, *c) {
            match (&e.effects.summary, &e.effects.skipped) {
                (Some(s), _) => info!(
                    "{c}: 95th-5th percentile gap {:.4} strokes per hole, {:.2} per {} holes",
                    s.delta_p95_p5, s.per_tournament, s.holes_per_tournament
                ),
                (None, Some(reason)) => warn!("{c}: effect size skipped: {reason}"),
                (None, None) => {}
            }
        }
    }
    info!("wrote {} files to {}", manifest.files.len() + 1, dir.display());
    Ok(())
}

fn load_study(path: &Path) -> CliResult<SyntheticConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read study file {}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed = if is_toml {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::usage(format!("invalid study file {}: {e}", path.display())))
}

/// Resolves the study configuration and the seed that actually gets used:
/// an explicit seed wins over the study file's, and a fresh random seed is
/// drawn when neither names one.
pub fn study_config(cfg: &mut RunConfig) -> CliResult<SyntheticConfig> {
    let mut study = match &cfg.study {
        Some(path) => Some(load_study(path)?),
        None => None,
    };
    let seed = match (cfg.seed, &study) {
        (Some(s), _) => s,
        (None, Some(st)) => st.seed,
        (None, None) => {
            let s: u64 = rand::random();
            eprintln!("no seed given; using --seed {s}");
            s
        }
    };
    cfg.seed = Some(seed);
    let mut synthetic = study.take().unwrap_or_else(|| cfg.preset.config(seed));
    synthetic.seed = seed;
    synthetic.validate()?;
    Ok(synthetic)
}

/// Runs a synthetic FDR study and writes `simulate/report.json` plus the
/// per-replication rows.
pub fn simulate(cfg: &RunConfig, synthetic: &SyntheticConfig) -> CliResult<()> {
    let opts = StudyOptions {
        fit: cfg.fit_options(),
        variance: cfg.variance,
    };
    info!(
        "simulating {} replications of {} golfers (seed {})",
        cfg.replications, synthetic.n_golfers, synthetic.seed
    );
    let result = simlab::run_fdr_study(synthetic, &cfg.alphas, cfg.replications, &opts)?;
    for a in &result.alphas {
        info!(
            "alpha = {}: FDR {:.4} (se {:.4}), {:.2} discoveries, {:.2} uncorrected false positives (expected {:.2})",
            a.alpha,
            a.empirical_fdr,
            a.fdr_binomial_se,
            a.mean_discoveries,
            a.mean_naive_false_positives,
            a.naive_expected
        );
    }
    let dir = cfg.out.join(SIMULATE_DIR);
    write_json(&dir.join("report.json"), &result)?;
    fs::create_dir_all(&dir)?;
    let file = File::create(dir.join("replications.csv"))?;
    result.write_rows_csv(std::io::BufWriter::new(file))?;
    if cfg.emit_shots {
        let cohort = simlab::generate_cohort(synthetic, 0)?;
        let file = File::create(dir.join("shots.csv"))?;
        ingest::write_shots_csv(std::io::BufWriter::new(file), &cohort.shots())?;
    }
    write_provenance(&dir, cfg)
}
