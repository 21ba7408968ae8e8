//! Empirical Bayes skill estimation for strokes-gained data.
//!
//! The pipeline runs in four stages, one module each:
//!
//! 1. [`ingest`]: parse shot-level CSV exports, sum strokes gained into
//!    per-hole outcomes for each stroke category and drop golfer-seasons
//!    with too few holes.
//! 2. [`eb`]: collapse hole outcomes into per-golfer sufficient statistics,
//!    fit the population mean and between-golfer variance of each category
//!    by marginal maximum likelihood (EM), and compute closed-form
//!    posterior means and variances.
//! 3. [`mtest`]: two-sided p-values for "skill differs from zero" and the
//!    Benjamini-Hochberg step-up procedure.
//! 4. [`report`]: effect sizes, histograms, shrinkage scatter rows,
//!    leaderboards and BH plot geometry written as CSV/JSON.
//!
//! [`simlab`] generates synthetic cohorts with known skills and checks the
//! whole pipeline (FDR control, hyperparameter recovery, discovery counts).
//!
//! The [`eb`] and [`mtest`] modules only see golfer ids and numbers. Nothing
//! in them is golf-specific apart from the [`Category`] label.

pub mod category;
pub mod eb;
pub mod error;
pub mod ingest;
pub mod io;
pub mod mtest;
pub mod quantile;
pub mod report;
pub mod simlab;

pub use category::Category;
pub use eb::{CategoryFit, FitOptions, GolferAggregate, SkillPosterior};
pub use error::{Error, Result};
pub use ingest::{CohortConfig, ColumnMapping, HoleKey, HoleOutcome, ShotRecord};
pub use mtest::{BhOutcome, TestResult, VarianceMode};
