//! Run configuration: built-in defaults, overlaid by an optional TOML file,
//! overlaid by command-line flags and `EBGOLF_*` environment variables.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use ebgolf::simlab::SyntheticConfig;
use ebgolf::{Category, CohortConfig, ColumnMapping, VarianceMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{CliResult, Failure};

/// Built-in synthetic study shapes for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Approach-like cohort, 80% of golfers with zero skill.
    #[default]
    Study,
    /// Approach-like cohort in which every golfer has zero skill.
    AllNull,
    Putting,
    Approaching,
    Driving,
}

impl Preset {
    pub fn config(self, seed: u64) -> SyntheticConfig {
        match self {
            Preset::Study => SyntheticConfig::default_study(seed),
            Preset::AllNull => SyntheticConfig {
                null_fraction: 1.0,
                ..SyntheticConfig::default_study(seed)
            },
            Preset::Putting => SyntheticConfig::category_analogue(Category::Putting, seed),
            Preset::Approaching => SyntheticConfig::category_analogue(Category::Approaching, seed),
            Preset::Driving => SyntheticConfig::category_analogue(Category::Driving, seed),
        }
    }
}

/// One configuration source. Unset fields fall through to the layer below.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub input: Option<Vec<PathBuf>>,
    pub schema: Option<ColumnMapping>,
    pub min_holes: Option<usize>,
    pub alphas: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub strict: Option<bool>,
    pub diagnostics: Option<bool>,
    pub variance: Option<VarianceMode>,
    pub bins: Option<usize>,
    pub top_k: Option<usize>,
    pub holes_per_tournament: Option<f64>,
    pub replications: Option<u64>,
    pub study: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub emit_shots: Option<bool>,
}

macro_rules! overlay {
    ($top:ident, $bottom:ident, $($field:ident),*) => {
        Layer { $($field: $top.$field.or($bottom.$field)),* }
    };
}

impl Layer {
    /// Fields set in `self` win over `below`.
    pub fn over(self, below: Layer) -> Layer {
        overlay!(
            self,
            below,
            input,
            schema,
            min_holes,
            alphas,
            tol,
            max_iter,
            seed,
            out,
            strict,
            diagnostics,
            variance,
            bins,
            top_k,
            holes_per_tournament,
            replications,
            study,
            preset,
            emit_shots
        )
    }

    /// Reads a TOML file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> CliResult<Layer> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut layer: Layer = toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("invalid config file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        layer.input = layer.input.map(|v| v.into_iter().map(rebase).collect());
        layer.study = layer.study.map(rebase);
        layer.out = layer.out.map(rebase);
        Ok(layer)
    }
}

/// Effective configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: Vec<PathBuf>,
    pub schema: ColumnMapping,
    pub min_holes: usize,
    pub alphas: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub strict: bool,
    pub diagnostics: bool,
    pub variance: VarianceMode,
    pub bins: usize,
    pub top_k: usize,
    pub holes_per_tournament: f64,
    pub replications: u64,
    pub study: Option<PathBuf>,
    pub preset: Preset,
    pub emit_shots: bool,
}

pub const DEFAULT_ALPHAS: [f64; 4] = [0.01, 0.05, 0.10, 0.15];

impl RunConfig {
    pub fn resolve(layer: Layer) -> CliResult<RunConfig> {
        let report = ebgolf::report::ReportOptions::default();
        let fit = ebgolf::FitOptions::default();
        let cfg = RunConfig {
            input: layer.input.unwrap_or_default(),
            schema: layer.schema.unwrap_or_default(),
            min_holes: layer.min_holes.unwrap_or(CohortConfig::DEFAULT_MIN_HOLES),
            alphas: layer.alphas.unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
            tol: layer.tol.unwrap_or(fit.tol),
            max_iter: layer.max_iter.unwrap_or(fit.max_iter),
            seed: layer.seed,
            out: layer.out.unwrap_or_else(|| PathBuf::from("out")),
            strict: layer.strict.unwrap_or(false),
            diagnostics: layer.diagnostics.unwrap_or(false),
            variance: layer.variance.unwrap_or_default(),
            bins: layer.bins.unwrap_or(report.bins),
            top_k: layer.top_k.unwrap_or(report.top_k),
            holes_per_tournament: layer.holes_per_tournament.unwrap_or(report.holes_per_tournament),
            replications: layer.replications.unwrap_or(200),
            study: layer.study,
            preset: layer.preset.unwrap_or_default(),
            emit_shots: layer.emit_shots.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        for &a in &self.alphas {
            ebgolf::mtest::validate_alpha(a)?;
        }
        CohortConfig::new(self.min_holes)?;
        self.fit_options().validate()?;
        if self.bins == 0 {
            return Err(Failure::usage("bins must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(Failure::usage("top_k must be at least 1"));
        }
        if !(self.holes_per_tournament > 0.0 && self.holes_per_tournament.is_finite()) {
            return Err(Failure::usage("holes_per_tournament must be positive"));
        }
        if self.replications == 0 {
            return Err(Failure::usage("replications must be at least 1"));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> ebgolf::FitOptions {
        ebgolf::FitOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn report_options(&self) -> ebgolf::report::ReportOptions {
        ebgolf::report::ReportOptions {
            bins: self.bins,
            top_k: self.top_k,
            alphas: self.alphas.clone(),
            holes_per_tournament: self.holes_per_tournament,
        }
    }

    /// The configuration echoed into outputs. The output directory is left
    /// out so that identical runs into different directories agree.
    pub fn provenance(&self) -> ebgolf::report::Provenance {
        let mut config = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = config.as_object_mut() {
            map.remove("out");
        }
        let canonical = serde_json::to_vec(&config).expect("config serializes");
        ebgolf::report::Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hex::encode(Sha256::digest(&canonical)),
            config,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: Layer = toml::from_str("min_holes = 100\nalphas = [0.2]\nbins = 12").unwrap();
        let flags = Layer {
            min_holes: Some(80),
            ..Layer::default()
        };
        let cfg = RunConfig::resolve(flags.over(file)).unwrap();
        assert_eq!(cfg.min_holes, 80);
        assert_eq!(cfg.alphas, vec![0.2]);
        assert_eq!(cfg.bins, 12);
        assert_eq!(cfg.top_k, 7);
        assert_eq!(cfg.tol, 1e-10);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<Layer>("min_hole = 3").is_err());
        let bad = Layer {
            alphas: Some(vec![1.0]),
            ..Layer::default()
        };
        assert!(RunConfig::resolve(bad).is_err());
    }

    #[test]
    fn schema_table_keeps_unlisted_defaults() {
        let file: Layer = toml::from_str("[schema]\nstrokes_gained = \"sg\"").unwrap();
        let cfg = RunConfig::resolve(file).unwrap();
        assert_eq!(cfg.schema.strokes_gained, "sg");
        assert_eq!(cfg.schema.golfer_season, "golfer_season");
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::resolve(Layer::default()).unwrap();
        let b = RunConfig {
            out: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.provenance().config_hash, b.provenance().config_hash);
        let c = RunConfig {
            min_holes: 3,
            ..a.clone()
        };
        assert_ne!(a.provenance().config_hash, c.provenance().config_hash);
        assert_eq!(a.provenance().config_hash.len(), 64);
    }
}
