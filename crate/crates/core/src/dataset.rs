//! Role-tagged trial data: ingestion, missingness handling, scaling,
//! propensity and covariate balance.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regression::{fit_wls, DesignSpec, RegressionError, VarianceEstimator};
use crate::stats::{mean, sample_variance};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("column `{0}` named in the schema is absent from the data")]
    MissingColumn(String),
    #[error("column `{0}` has no role in the schema")]
    UnassignedColumn(String),
    #[error("treatment column holds `{value}` at data row {row}; expected 0, 1 or empty")]
    InvalidTreatment { row: usize, value: String },
    #[error("column `{column}` holds non-numeric `{value}` at data row {row}")]
    InvalidNumber { column: String, row: usize, value: String },
    #[error("overlap violated: {0}")]
    OverlapViolated(String),
    #[error("covariate `{0}` still has missing values; dummify first")]
    UnpreparedCovariate(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Outcome,
    Treatment,
    Covariate,
    Cluster,
    Strata,
    Ignore,
}

/// Column → role assignment, plus the covariates measured at aggregate level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub columns: BTreeMap<String, Role>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aggregate: Vec<String>,
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    fn columns_with(&self, role: Role) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    pub fn outcome(&self) -> Option<&str> {
        self.columns_with(Role::Outcome).first().copied()
    }

    pub fn column_with(&self, role: Role) -> Option<&str> {
        self.columns_with(role).first().copied()
    }

    /// A copy in which `outcome` is the sole outcome column; any other
    /// outcome-tagged column is ignored.
    pub fn for_outcome(&self, outcome: &str) -> Result<Self, DataError> {
        match self.columns.get(outcome) {
            Some(Role::Outcome) => {}
            Some(other) => {
                return Err(DataError::Schema(format!(
                    "`{outcome}` has role {other:?}, not outcome"
                )))
            }
            None => return Err(DataError::Schema(format!("outcome `{outcome}` is not in the schema"))),
        }
        let mut s = self.clone();
        for (name, role) in s.columns.iter_mut() {
            if *role == Role::Outcome && name != outcome {
                *role = Role::Ignore;
            }
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let count = |r| self.columns_with(r).len();
        if count(Role::Outcome) != 1 {
            return Err(DataError::Schema(format!(
                "expected exactly one outcome column, found {}",
                count(Role::Outcome)
            )));
        }
        if count(Role::Treatment) != 1 {
            return Err(DataError::Schema(format!(
                "expected exactly one treatment column, found {}",
                count(Role::Treatment)
            )));
        }
        for role in [Role::Cluster, Role::Strata] {
            if count(role) > 1 {
                return Err(DataError::Schema(format!("at most one {role:?} column allowed")));
            }
        }
        for a in &self.aggregate {
            if self.columns.get(a) != Some(&Role::Covariate) {
                return Err(DataError::Schema(format!(
                    "aggregate column `{a}` must be a covariate"
                )));
            }
        }
        Ok(())
    }
}

/// Categorical labels encoded as codes into a sorted level list.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub name: String,
    pub levels: Vec<String>,
    pub codes: Vec<usize>,
}

impl Labels {
    pub fn from_strings(name: impl Into<String>, raw: &[String]) -> Self {
        let levels: Vec<String> = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let index: BTreeMap<&str, usize> =
            levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let codes = raw.iter().map(|r| index[r.as_str()]).collect();
        Self { name: name.into(), levels, codes }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    fn subset(&self, rows: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            levels: self.levels.clone(),
            codes: rows.iter().map(|&r| self.codes[r]).collect(),
        }
    }
}

/// Observations `(Y, D, Z)` with optional cluster and strata labels.
///
/// Covariate gaps are stored as NaN until [`dummify_missing`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    outcome_name: String,
    outcome: Vec<f64>,
    treatment: Vec<bool>,
    covariate_names: Vec<String>,
    covariates: DMatrix<f64>,
    cluster: Option<Labels>,
    strata: Option<Labels>,
    missing_indicators: BTreeSet<String>,
    aggregate: BTreeSet<String>,
    dropped_rows: usize,
}

impl Dataset {
    pub fn new(
        outcome_name: impl Into<String>,
        outcome: Vec<f64>,
        treatment: Vec<bool>,
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
    ) -> Result<Self, DataError> {
        let n = outcome.len();
        if treatment.len() != n || covariates.nrows() != n {
            return Err(DataError::Invalid(format!(
                "row counts disagree: outcome {n}, treatment {}, covariates {}",
                treatment.len(),
                covariates.nrows()
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(DataError::Invalid("covariate names do not match columns".into()));
        }
        Ok(Self {
            outcome_name: outcome_name.into(),
            outcome,
            treatment,
            covariate_names,
            covariates,
            cluster: None,
            strata: None,
            missing_indicators: BTreeSet::new(),
            aggregate: BTreeSet::new(),
            dropped_rows: 0,
        })
    }

    pub fn with_cluster(mut self, labels: Labels) -> Result<Self, DataError> {
        self.check_labels(&labels)?;
        self.cluster = Some(labels);
        Ok(self)
    }

    pub fn with_strata(mut self, labels: Labels) -> Result<Self, DataError> {
        self.check_labels(&labels)?;
        self.strata = Some(labels);
        Ok(self)
    }

    pub fn with_aggregate(mut self, names: impl IntoIterator<Item = String>) -> Result<Self, DataError> {
        for name in names {
            if !self.covariate_names.contains(&name) {
                return Err(DataError::MissingColumn(name));
            }
            self.aggregate.insert(name);
        }
        Ok(self)
    }

    fn check_labels(&self, labels: &Labels) -> Result<(), DataError> {
        if labels.codes.len() != self.n_obs() {
            return Err(DataError::Invalid(format!(
                "label column `{}` has {} rows, expected {}",
                labels.name,
                labels.codes.len(),
                self.n_obs()
            )));
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment.iter().map(|&d| f64::from(u8::from(d))).collect()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    /// Contiguous column `j` of the covariate matrix.
    pub fn covariate(&self, j: usize) -> &[f64] {
        let n = self.n_obs();
        &self.covariates.as_slice()[j * n..(j + 1) * n]
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn cluster(&self) -> Option<&Labels> {
        self.cluster.as_ref()
    }

    pub fn strata(&self) -> Option<&Labels> {
        self.strata.as_ref()
    }

    pub fn missing_indicators(&self) -> &BTreeSet<String> {
        &self.missing_indicators
    }

    pub fn aggregate_covariates(&self) -> &BTreeSet<String> {
        &self.aggregate
    }

    /// Rows dropped at load time for a missing outcome, treatment or label.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&d| d).count()
    }

    /// Stratum code per row, or all zeros without strata.
    pub fn stratum_codes(&self) -> Vec<usize> {
        match &self.strata {
            Some(s) => s.codes.clone(),
            None => vec![0; self.n_obs()],
        }
    }

    /// Rows `rows` (in that order) as a new dataset.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            outcome_name: self.outcome_name.clone(),
            outcome: rows.iter().map(|&r| self.outcome[r]).collect(),
            treatment: rows.iter().map(|&r| self.treatment[r]).collect(),
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.select_rows(rows),
            cluster: self.cluster.as_ref().map(|c| c.subset(rows)),
            strata: self.strata.as_ref().map(|s| s.subset(rows)),
            missing_indicators: self.missing_indicators.clone(),
            aggregate: self.aggregate.clone(),
            dropped_rows: self.dropped_rows,
        }
    }

    /// Same dataset with the outcome replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self, DataError> {
        if outcome.len() != self.n_obs() {
            return Err(DataError::Invalid("replacement outcome has the wrong length".into()));
        }
        let mut d = self.clone();
        d.outcome = outcome;
        Ok(d)
    }

    /// Check the invariants required before estimation.
    pub fn validate(&self) -> Result<(), DataError> {
        let treated = self.n_treated();
        if treated == 0 || treated == self.n_obs() {
            return Err(DataError::OverlapViolated(
                "every unit needs positive probability of assignment to both arms; one arm is empty"
                    .into(),
            ));
        }
        for (j, name) in self.covariate_names.iter().enumerate() {
            if self.covariate(j).iter().any(|v| v.is_nan()) {
                return Err(DataError::UnpreparedCovariate(name.clone()));
            }
        }
        if let Some(strata) = &self.strata {
            let mut counts = vec![[0usize; 2]; strata.n_levels()];
            for (&c, &d) in strata.codes.iter().zip(&self.treatment) {
                counts[c][usize::from(d)] += 1;
            }
            for (level, c) in strata.levels.iter().zip(&counts) {
                if c[0] + c[1] > 0 && (c[0] == 0 || c[1] == 0) {
                    return Err(DataError::OverlapViolated(format!(
                        "stratum `{level}` lacks a treated or a control unit"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Read a CSV file with a header row; empty cells are missing.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset, DataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for h in &headers {
        if !schema.columns.contains_key(h) {
            return Err(DataError::UnassignedColumn(h.clone()));
        }
    }
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    for name in schema.columns.keys() {
        position(name)?;
    }
    let outcome_name = schema.outcome().expect("validated").to_string();
    let y_col = position(&outcome_name)?;
    let d_col = position(schema.column_with(Role::Treatment).expect("validated"))?;
    let cluster_col = schema.column_with(Role::Cluster).map(position).transpose()?;
    let strata_col = schema.column_with(Role::Strata).map(position).transpose()?;
    let cov_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| schema.columns.get(*h) == Some(&Role::Covariate))
        .map(|(i, _)| i)
        .collect();

    let mut outcome = Vec::new();
    let mut treatment = Vec::new();
    let mut cov_rows: Vec<f64> = Vec::new();
    let mut clusters = Vec::new();
    let mut strata = Vec::new();
    let mut dropped = 0;

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let d = match cell(d_col) {
            "" => None,
            "1" | "1.0" => Some(true),
            "0" | "0.0" => Some(false),
            other => {
                return Err(DataError::InvalidTreatment { row: row + 1, value: other.to_string() })
            }
        };
        let y = parse_cell(cell(y_col), &headers[y_col], row)?;
        let cl = cluster_col.map(|i| cell(i).to_string());
        let st = strata_col.map(|i| cell(i).to_string());
        let label_missing = cl.as_deref() == Some("") || st.as_deref() == Some("");
        let (Some(y), Some(d)) = (y, d) else {
            dropped += 1;
            continue;
        };
        if label_missing {
            dropped += 1;
            continue;
        }
        outcome.push(y);
        treatment.push(d);
        for &c in &cov_cols {
            cov_rows.push(parse_cell(cell(c), &headers[c], row)?.unwrap_or(f64::NAN));
        }
        if let Some(c) = cl {
            clusters.push(c);
        }
        if let Some(s) = st {
            strata.push(s);
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with a missing outcome, treatment or label");
    }

    let n = outcome.len();
    let p = cov_cols.len();
    let covariates = DMatrix::from_row_slice(n, p, &cov_rows);
    let names = cov_cols.iter().map(|&c| headers[c].clone()).collect();
    let mut d = Dataset::new(outcome_name, outcome, treatment, names, covariates)?;
    d.dropped_rows = dropped;
    if let Some(i) = cluster_col {
        d = d.with_cluster(Labels::from_strings(headers[i].clone(), &clusters))?;
    }
    if let Some(i) = strata_col {
        d = d.with_strata(Labels::from_strings(headers[i].clone(), &strata))?;
    }
    d.with_aggregate(schema.aggregate.iter().cloned())
}

fn parse_cell(raw: &str, column: &str, row: usize) -> Result<Option<f64>, DataError> {
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| DataError::InvalidNumber {
            column: column.to_string(),
            row: row + 1,
            value: raw.to_string(),
        })
}

/// Zero-fill covariate gaps, adding a `<name>_missing` indicator next to
/// every column that had at least one gap.
pub fn dummify_missing(raw: &Dataset) -> Dataset {
    let n = raw.n_obs();
    let mut names = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut indicators = raw.missing_indicators.clone();
    for (j, name) in raw.covariate_names.iter().enumerate() {
        let col = raw.covariate(j);
        let has_gap = col.iter().any(|v| v.is_nan());
        names.push(name.clone());
        data.extend(col.iter().map(|&v| if v.is_nan() { 0.0 } else { v }));
        if has_gap {
            let mut ind_name = format!("{name}_missing");
            while raw.covariate_names.contains(&ind_name) || names.contains(&ind_name) {
                ind_name.push('_');
            }
            data.extend(col.iter().map(|v| f64::from(u8::from(v.is_nan()))));
            indicators.insert(ind_name.clone());
            names.push(ind_name);
        }
    }
    let mut out = raw.clone();
    out.covariates = DMatrix::from_column_slice(n, names.len(), &data);
    out.covariate_names = names;
    out.missing_indicators = indicators;
    out
}

/// Min and max of one column; constant columns scale to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    pub fn fit(values: &[f64]) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values.iter().filter(|v| !v.is_nan()) {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() {
            (min, max) = (0.0, 0.0);
        }
        Self { min, max }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn scale(&self, v: f64) -> f64 {
        let span = self.span();
        if span > 0.0 {
            (v - self.min) / span
        } else {
            0.0
        }
    }

    pub fn invert(&self, s: f64) -> f64 {
        self.min + s * self.span()
    }
}

/// Per-column min-max maps for covariates and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingMap {
    pub covariates: Vec<ColumnRange>,
    pub outcome: ColumnRange,
}

impl ScalingMap {
    pub fn fit(covariates: &DMatrix<f64>, outcome: &[f64]) -> Self {
        let n = covariates.nrows();
        let data = covariates.as_slice();
        Self {
            covariates: (0..covariates.ncols())
                .map(|j| ColumnRange::fit(&data[j * n..(j + 1) * n]))
                .collect(),
            outcome: ColumnRange::fit(outcome),
        }
    }

    /// Scale covariates; values outside the fitted range map outside [0, 1].
    pub fn scale_covariates(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| self.covariates[j].scale(x[(i, j)]))
    }

    pub fn invert_covariates(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| self.covariates[j].invert(s[(i, j)]))
    }

    pub fn scale_outcome(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|&v| self.outcome.scale(v)).collect()
    }

    pub fn invert_outcome(&self, s: &[f64]) -> Vec<f64> {
        s.iter().map(|&v| self.outcome.invert(v)).collect()
    }
}

/// Min-max scale every covariate and the outcome to [0, 1].
pub fn rescale_unit_interval(d: &Dataset) -> (Dataset, ScalingMap) {
    let map = ScalingMap::fit(&d.covariates, &d.outcome);
    let mut out = d.clone();
    out.covariates = map.scale_covariates(&d.covariates);
    out.outcome = map.scale_outcome(&d.outcome);
    (out, map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityMode {
    #[default]
    Global,
    PerStratum,
}

/// Treatment probability estimated by treated proportions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityModel {
    pub mode: PropensityMode,
    pub global: f64,
    /// Indexed by stratum code; empty in global mode.
    pub by_stratum: Vec<f64>,
}

impl PropensityModel {
    pub fn p_hat(&self, stratum: usize) -> f64 {
        match self.mode {
            PropensityMode::Global => self.global,
            PropensityMode::PerStratum => self.by_stratum[stratum],
        }
    }

    /// Propensity of each listed row of `d`.
    pub fn for_rows(&self, d: &Dataset, rows: &[usize]) -> Vec<f64> {
        let strata = d.stratum_codes();
        rows.iter().map(|&r| self.p_hat(strata[r])).collect()
    }
}

pub fn estimate_propensity(d: &Dataset, mode: PropensityMode) -> Result<PropensityModel, DataError> {
    let n = d.n_obs();
    let treated = d.n_treated();
    if n == 0 || treated == 0 || treated == n {
        return Err(DataError::OverlapViolated(format!(
            "{treated} of {n} units treated; every unit needs positive probability of both arms"
        )));
    }
    let global = treated as f64 / n as f64;
    let by_stratum = match mode {
        PropensityMode::Global => Vec::new(),
        PropensityMode::PerStratum => {
            let strata = d
                .strata()
                .ok_or_else(|| DataError::Invalid("per-stratum propensity needs a strata column".into()))?;
            let mut counts = vec![(0usize, 0usize); strata.n_levels()];
            for (&c, &t) in strata.codes.iter().zip(d.treatment()) {
                counts[c].0 += usize::from(t);
                counts[c].1 += 1;
            }
            counts
                .iter()
                .zip(&strata.levels)
                .map(|(&(t, m), level)| {
                    if t == 0 || t == m {
                        Err(DataError::OverlapViolated(format!(
                            "stratum `{level}` has {t} of {m} units treated"
                        )))
                    } else {
                        Ok(t as f64 / m as f64)
                    }
                })
                .collect::<Result<_, _>>()?
        }
    };
    Ok(PropensityModel { mode, global, by_stratum })
}

/// Which sandwich estimator to use, resolved against a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceSpec {
    #[default]
    Robust,
    Cluster,
}

impl VarianceSpec {
    pub fn estimator(&self, d: &Dataset, rows: &[usize]) -> Result<VarianceEstimator, DataError> {
        match self {
            VarianceSpec::Robust => Ok(VarianceEstimator::Hc1),
            VarianceSpec::Cluster => {
                let c = d.cluster().ok_or_else(|| {
                    DataError::Invalid("cluster-robust variance requested but no cluster column".into())
                })?;
                Ok(VarianceEstimator::Cr1(rows.iter().map(|&r| c.codes[r]).collect()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub n_total: usize,
    pub n_control: usize,
    pub control_mean: f64,
    pub control_sd: f64,
    pub coefficient: f64,
    pub se: f64,
    pub p_value: f64,
}

/// Regress every covariate on the treatment dummy.
pub fn balance_table(d: &Dataset, variance: VarianceSpec) -> Result<Vec<BalanceRow>, DataError> {
    let rows: Vec<usize> = (0..d.n_obs()).collect();
    let estimator = variance.estimator(d, &rows)?;
    let dvec = d.treatment_f64();
    let control: Vec<usize> = rows.iter().copied().filter(|&i| !d.treatment()[i]).collect();
    let mut out = Vec::with_capacity(d.n_covariates());
    for (j, name) in d.covariate_names().iter().enumerate() {
        let z = d.covariate(j);
        let zc: Vec<f64> = control.iter().map(|&i| z[i]).collect();
        let design = DesignSpec::new()
            .intercept(true)
            .column("treatment", dvec.clone())
            .variance(estimator.clone());
        let fit = fit_wls(z, &design)?;
        let inf = fit.inference("treatment").expect("treatment regressor present");
        out.push(BalanceRow {
            covariate: name.clone(),
            n_total: d.n_obs(),
            n_control: control.len(),
            control_mean: mean(&zc),
            control_sd: sample_variance(&zc).sqrt(),
            coefficient: inf.estimate,
            se: inf.se,
            p_value: inf.p_value,
        });
    }
    Ok(out)
}
