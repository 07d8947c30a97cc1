//! The `analyze`, `simulate` and `validate` commands. Everything is
//! computed and checked before the first file is written.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{load_dgp, AnalysisConfig, ConfigError};
use crate::dataset::{balance_table, dummify_missing, estimate_propensity, read_csv, BalanceRow, DataError, Dataset};
use crate::inference::{run_analysis, AnalysisError, AnalysisResult, ClanMode};
use crate::learner::{LearnerKind, ProxyLearner};
use crate::report::outcome_tables;
use crate::synth::{generate, SynthError, Truth};

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    /// Process exit status: 2 configuration, 3 data validation, 4 too many
    /// failed splits, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Synth(SynthError::Invalid(_)) => 2,
            AppError::Data(_) => 3,
            AppError::Analysis(AnalysisError::InvalidSpec(_)) => 2,
            AppError::Analysis(AnalysisError::Data(_)) => 3,
            AppError::Analysis(AnalysisError::TooManyFailures { .. }) => 4,
            _ => 1,
        }
    }
}

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub splits: Option<usize>,
    pub alpha: Option<f64>,
    pub learners: Option<Vec<LearnerKind>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub clan: Option<ClanMode>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut AnalysisConfig) {
        if let Some(v) = self.splits {
            cfg.splits = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = &self.learners {
            cfg.learners = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = Some(v.clone());
        }
        if let Some(v) = self.clan {
            cfg.clan = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = Some(v);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LearnerRunSummary {
    pub learner: String,
    pub splits_ok: usize,
    pub splits_failed: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeRunSummary {
    pub outcome: String,
    pub n_obs: usize,
    pub dropped_rows: usize,
    pub learners: Vec<LearnerRunSummary>,
}

/// Everything needed to rerun an analysis: the effective configuration
/// (without output directory or thread count, neither of which affects
/// results) and the per-split failure counts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub seed: u64,
    pub splits: usize,
    pub config: String,
    pub outcomes: Vec<OutcomeRunSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeReport {
    pub analysis: AnalysisResult,
    pub balance: Vec<BalanceRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultsDocument {
    pub outcomes: Vec<OutcomeReport>,
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutput {
    pub output_dir: PathBuf,
    pub written: Vec<PathBuf>,
    pub results: ResultsDocument,
    pub manifest: RunManifest,
}

/// Load, override and validate a configuration and its schema.
pub fn prepare(config: &Path, overrides: &Overrides) -> Result<AnalysisConfig, AppError> {
    let mut cfg = AnalysisConfig::load(config)?;
    overrides.apply(&mut cfg);
    let schema = cfg.resolve_schema()?;
    cfg.validate(&schema)?;
    Ok(cfg)
}

/// One prepared dataset per configured outcome.
fn load_outcomes(cfg: &AnalysisConfig) -> Result<Vec<Dataset>, AppError> {
    let schema = cfg.resolve_schema()?;
    let bytes = std::fs::read(&cfg.data)
        .map_err(|source| DataError::Io { path: cfg.data.display().to_string(), source })?;
    cfg.outcomes
        .iter()
        .map(|o| {
            let d = dummify_missing(&read_csv(bytes.as_slice(), &schema.for_outcome(o)?)?);
            d.validate()?;
            Ok(d)
        })
        .collect()
}

pub fn analyze(config: &Path, overrides: &Overrides) -> Result<AnalyzeOutput, AppError> {
    let cfg = prepare(config, overrides)?;
    let datasets = load_outcomes(&cfg)?;
    let spec = cfg.analysis_spec();
    let built: Vec<Box<dyn ProxyLearner>> =
        cfg.learners.iter().map(|k| k.build(&cfg.elastic_net, &cfg.random_forest)).collect();
    let learners: Vec<&dyn ProxyLearner> = built.iter().map(|b| b.as_ref()).collect();

    let mut reports = Vec::with_capacity(datasets.len());
    for d in &datasets {
        log::info!("analyzing `{}` ({} rows, {} splits)", d.outcome_name(), d.n_obs(), spec.splits);
        let analysis = run_analysis(d, &spec, &learners)?;
        let balance = balance_table(d, cfg.variance)?;
        reports.push(OutcomeReport { analysis, balance });
    }

    let mut echo = cfg.clone();
    echo.threads = None;
    echo.output_dir = None;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        splits: cfg.splits,
        config: echo.to_toml_string(),
        outcomes: reports
            .iter()
            .map(|r| OutcomeRunSummary {
                outcome: r.analysis.outcome.clone(),
                n_obs: r.analysis.n_obs,
                dropped_rows: r.analysis.dropped_rows,
                learners: r
                    .analysis
                    .learners
                    .iter()
                    .map(|l| LearnerRunSummary {
                        learner: l.learner.clone(),
                        splits_ok: l.splits_ok,
                        splits_failed: l.splits_failed,
                        failures: l.failures.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let results = ResultsDocument { outcomes: reports };

    let out = cfg.output_dir();
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    for r in &results.outcomes {
        let dir = out.join(&r.analysis.outcome);
        for (name, body) in outcome_tables(&r.analysis, &r.balance) {
            files.push((dir.join(name), body));
        }
    }
    files.push((out.join("results.json"), to_json(&results)));
    files.push((out.join("run_manifest.json"), to_json(&manifest)));
    let written = write_all(&files)?;
    Ok(AnalyzeOutput { output_dir: out, written, results, manifest })
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeValidation {
    pub outcome: String,
    pub n_obs: usize,
    pub n_treated: usize,
    pub dropped_rows: usize,
    pub propensity: f64,
    pub balance: Vec<BalanceRow>,
}

/// Dataset checks, propensity and balance only; writes `balance.csv` per
/// outcome.
pub fn validate(config: &Path, overrides: &Overrides) -> Result<(Vec<OutcomeValidation>, Vec<PathBuf>), AppError> {
    let cfg = prepare(config, overrides)?;
    let datasets = load_outcomes(&cfg)?;
    let mut report = Vec::new();
    for d in &datasets {
        let p = estimate_propensity(d, cfg.propensity)?;
        report.push(OutcomeValidation {
            outcome: d.outcome_name().to_string(),
            n_obs: d.n_obs(),
            n_treated: d.n_treated(),
            dropped_rows: d.dropped_rows(),
            propensity: p.global,
            balance: balance_table(d, cfg.variance)?,
        });
    }
    let out = cfg.output_dir();
    let files: Vec<(PathBuf, String)> = report
        .iter()
        .map(|r| (out.join(&r.outcome).join("balance.csv"), crate::report::balance_csv(&r.balance)))
        .collect();
    let written = write_all(&files)?;
    Ok((report, written))
}

/// Generate a synthetic trial; the ground truth goes to `<out>.truth.json`.
pub fn simulate(config: &Path, out: &Path) -> Result<(PathBuf, PathBuf), AppError> {
    let spec = load_dgp(config)?;
    let synth = generate(&spec)?;
    let mut csv = Vec::new();
    synth.write_csv(&mut csv)?;
    let truth_path = out.with_extension("truth.json");
    let truth = to_json(&Truth::from(&synth));
    write_all(&[(out.to_path_buf(), String::from_utf8(csv).expect("CSV output is UTF-8")), (truth_path.clone(), truth)])?;
    Ok((out.to_path_buf(), truth_path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialize to JSON");
    s.push('\n');
    s
}

fn write_all(files: &[(PathBuf, String)]) -> Result<Vec<PathBuf>, AppError> {
    fn io(p: &Path) -> impl Fn(std::io::Error) -> AppError + '_ {
        move |source| AppError::Io { path: p.display().to_string(), source }
    }
    for (path, body) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io(dir))?;
        }
        std::fs::write(path, body).map_err(io(path))?;
    }
    Ok(files.iter().map(|(p, _)| p.clone()).collect())
}
