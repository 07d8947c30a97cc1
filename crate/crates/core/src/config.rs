//! TOML run configuration for analyses and simulations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataError, PropensityMode, Role, Schema, VarianceSpec};
use crate::elastic_net::TuningPlan;
use crate::forest::ForestParams;
use crate::inference::{AnalysisSpec, ClanMode};
use crate::learner::LearnerKind;
use crate::synth::DgpSpec;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "HTE_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Schema(#[from] DataError),
}

/// Schema given inline or as a path to a separate TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSource {
    Path(PathBuf),
    Inline(Schema),
}

fn default_learners() -> Vec<LearnerKind> {
    vec![LearnerKind::ElasticNet, LearnerKind::RandomForest]
}

fn default_splits() -> usize {
    50
}

fn default_alpha() -> f64 {
    0.05
}

fn default_clan_count() -> usize {
    5
}

fn default_true() -> bool {
    true
}

fn default_threshold() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub data: PathBuf,
    pub schema: SchemaSource,
    pub outcomes: Vec<String>,
    #[serde(default = "default_learners")]
    pub learners: Vec<LearnerKind>,
    #[serde(default = "default_splits")]
    pub splits: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub variance: VarianceSpec,
    #[serde(default)]
    pub propensity: PropensityMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clan: ClanMode,
    #[serde(default = "default_clan_count")]
    pub clan_count: usize,
    #[serde(default = "default_true")]
    pub hh_vs_agg: bool,
    #[serde(default = "default_threshold")]
    pub failure_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub elastic_net: TuningPlan,
    #[serde(default)]
    pub random_forest: ForestParams,
}

impl AnalysisConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })
    }

    /// Read a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data = base.join(&cfg.data);
        if let SchemaSource::Path(p) = &cfg.schema {
            cfg.schema = SchemaSource::Path(base.join(p));
        }
        if let Some(out) = &cfg.output_dir {
            cfg.output_dir = Some(base.join(out));
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    /// The schema, read from disk when given as a path.
    pub fn resolve_schema(&self) -> Result<Schema, ConfigError> {
        match &self.schema {
            SchemaSource::Inline(s) => Ok(s.clone()),
            SchemaSource::Path(p) => {
                Schema::from_toml_str(&read(p)?).map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn analysis_spec(&self) -> AnalysisSpec {
        AnalysisSpec {
            splits: self.splits,
            alpha: self.alpha,
            seed: self.seed,
            variance: self.variance,
            propensity: self.propensity,
            groups: 4,
            clan: self.clan,
            clan_count: self.clan_count,
            hh_vs_agg: self.hh_vs_agg,
            failure_threshold: self.failure_threshold,
            threads: self.threads,
        }
    }

    /// Check every setting and every column the configuration refers to.
    pub fn validate(&self, schema: &Schema) -> Result<(), ConfigError> {
        schema.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.outcomes.is_empty() {
            return Err(ConfigError::Invalid("no outcomes listed".into()));
        }
        for o in &self.outcomes {
            match schema.columns.get(o) {
                Some(Role::Outcome) => {}
                Some(r) => return Err(ConfigError::Invalid(format!("outcome `{o}` has role {r:?} in the schema"))),
                None => return Err(ConfigError::Invalid(format!("outcome `{o}` is not a schema column"))),
            }
        }
        let mut seen = self.learners.clone();
        seen.sort();
        seen.dedup();
        if self.learners.is_empty() || seen.len() != self.learners.len() {
            return Err(ConfigError::Invalid("learners must be a non-empty list without repeats".into()));
        }
        if self.variance == VarianceSpec::Cluster && schema.column_with(Role::Cluster).is_none() {
            return Err(ConfigError::Invalid("cluster variance requested but the schema has no cluster column".into()));
        }
        if self.propensity == PropensityMode::PerStratum && schema.column_with(Role::Strata).is_none() {
            return Err(ConfigError::Invalid("per-stratum propensity requested but the schema has no strata column".into()));
        }
        if self.random_forest.trees == 0 || self.random_forest.min_leaf == 0 || self.random_forest.mtry == Some(0) {
            return Err(ConfigError::Invalid("random forest trees, mtry and min_leaf must be positive".into()));
        }
        self.analysis_spec().validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Output directory: the configured one, else the environment default,
    /// else `./hte-output`.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("hte-output"))
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}

pub fn load_dgp(path: &Path) -> Result<DgpSpec, ConfigError> {
    let text = read(path)?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })
}
