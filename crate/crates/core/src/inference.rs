//! Repeated sample splitting: per-split estimation, median aggregation and
//! learner comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{estimate_propensity, DataError, Dataset, PropensityMode, VarianceSpec};
use crate::features::{
    estimate_blp, estimate_clan, estimate_gates, hh_vs_agg_r2, rank_by_effect_correlation, BlpEstimate,
    ClanEstimate, GatesEstimate, HhAggR2, MainSample,
};
use crate::learner::ProxyLearner;
use crate::proxy::{assign_groups, build_proxies, make_split, GroupAssignment};
use crate::regression::Inference;
use crate::stats::{derive_seed, median, population_variance};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid analysis settings: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("learner `{learner}`: {failed} of {total} splits failed (threshold {threshold}); first error: {first}")]
    TooManyFailures { learner: String, failed: usize, total: usize, threshold: f64, first: String },
    #[error("cannot start worker pool: {0}")]
    ThreadPool(String),
}

/// One split's point estimate, confidence bounds and p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitValue {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub p: f64,
}

impl From<&Inference> for SplitValue {
    fn from(i: &Inference) -> Self {
        Self { point: i.estimate, lower: i.ci_lower, upper: i.ci_upper, p: i.p_value }
    }
}

/// Median over splits, with doubled-median p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatedEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub p_adj: f64,
    /// Confidence level of each per-split interval.
    pub split_level: f64,
    /// Level at which the aggregated band is reported.
    pub reported_level: f64,
    pub n_splits: usize,
}

pub fn aggregate_splits(values: &[SplitValue], alpha: f64) -> AggregatedEstimate {
    assert!(!values.is_empty(), "aggregation needs at least one split");
    let col = |f: fn(&SplitValue) -> f64| median(&values.iter().map(f).collect::<Vec<_>>());
    AggregatedEstimate {
        point: col(|v| v.point),
        lower: col(|v| v.lower),
        upper: col(|v| v.upper),
        p_adj: (2.0 * col(|v| v.p)).min(1.0),
        split_level: 1.0 - alpha,
        reported_level: 1.0 - 2.0 * alpha,
        n_splits: values.len(),
    }
}

/// `β2² · Var(S)`, variance with divisor `n`.
pub fn lambda_blp(beta2: f64, effect: &[f64]) -> f64 {
    beta2 * beta2 * population_variance(effect)
}

/// Mean of squared group effects.
pub fn lambda_gates(gamma: &[f64]) -> f64 {
    gamma.iter().map(|g| g * g).sum::<f64>() / gamma.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Winner(String),
    Tie,
    /// Fewer than two learners to compare.
    None,
}

/// Learner with the largest value; exact ties have no winner.
pub fn select_learner(values: &[(String, f64)]) -> Verdict {
    if values.len() < 2 {
        return Verdict::None;
    }
    let best = values.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let top: Vec<&String> = values.iter().filter(|(_, v)| *v == best).map(|(n, _)| n).collect();
    match top.as_slice() {
        [one] => Verdict::Winner((*one).clone()),
        _ => Verdict::Tie,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClanMode {
    /// Run only when the aggregated BLP or GATES results show heterogeneity.
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub splits: usize,
    pub alpha: f64,
    pub seed: u64,
    pub variance: VarianceSpec,
    pub propensity: PropensityMode,
    pub groups: usize,
    pub clan: ClanMode,
    pub clan_count: usize,
    pub hh_vs_agg: bool,
    /// Largest tolerated share of failed splits per learner.
    pub failure_threshold: f64,
    /// Worker threads; `None` uses every available core. Not serialized:
    /// results do not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            splits: 50,
            alpha: 0.05,
            seed: 0,
            variance: VarianceSpec::Robust,
            propensity: PropensityMode::Global,
            groups: 4,
            clan: ClanMode::Auto,
            clan_count: 5,
            hh_vs_agg: true,
            failure_threshold: 0.2,
            threads: None,
        }
    }
}

impl AnalysisSpec {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidSpec(m.to_string()));
        if self.splits == 0 {
            return bad("at least one split is required");
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.25) {
            return bad("alpha must lie in (0, 0.25]");
        }
        if self.groups < 2 {
            return bad("at least two groups are required");
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad("failure threshold must lie in [0, 1]");
        }
        if self.threads == Some(0) {
            return bad("thread count must be positive");
        }
        Ok(())
    }
}

/// Everything estimated on one split for one learner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitResult {
    pub split: usize,
    pub learner: String,
    pub main: Vec<usize>,
    pub effect: Vec<f64>,
    pub groups: GroupAssignment,
    pub blp: BlpEstimate,
    pub gates: GatesEstimate,
    pub lambda: f64,
    pub lambda_bar: f64,
    pub clan: Vec<ClanEstimate>,
    pub hh_vs_agg: Option<HhAggR2>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClanAggregate {
    pub covariate: String,
    pub median_abs_correlation: f64,
    pub least: AggregatedEstimate,
    pub most: AggregatedEstimate,
    pub difference: AggregatedEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerResult {
    pub learner: String,
    pub splits_ok: usize,
    pub splits_failed: usize,
    pub failures: Vec<String>,
    pub degenerate_splits: usize,
    pub ate: AggregatedEstimate,
    /// `None` when the effect proxy was constant on every split.
    pub het: Option<AggregatedEstimate>,
    pub gates: Vec<AggregatedEstimate>,
    pub gates_difference: AggregatedEstimate,
    pub lambda: f64,
    pub lambda_bar: f64,
    pub clan: Option<Vec<ClanAggregate>>,
    pub hh_vs_agg: Option<HhAggR2>,
    #[serde(skip)]
    pub splits: Vec<SplitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub blp: Verdict,
    pub gates: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisResult {
    pub outcome: String,
    pub n_obs: usize,
    pub n_treated: usize,
    pub dropped_rows: usize,
    pub propensity: f64,
    pub spec: AnalysisSpec,
    pub learners: Vec<LearnerResult>,
    pub selection: Selection,
}

impl AnalysisResult {
    pub fn learner(&self, name: &str) -> Option<&LearnerResult> {
        self.learners.iter().find(|l| l.learner == name)
    }
}

fn map_indexed<T: Send, F>(n: usize, threads: Option<usize>, f: F) -> Result<Vec<T>, AnalysisError>
where
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.unwrap_or(0))
            .build()
            .map_err(|e| AnalysisError::ThreadPool(e.to_string()))?;
        Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok((0..n).map(f).collect())
    }
}

fn run_split(
    d: &Dataset,
    spec: &AnalysisSpec,
    propensity: &crate::dataset::PropensityModel,
    split_index: usize,
    learners: &[&dyn ProxyLearner],
) -> Vec<Result<SplitResult, String>> {
    let split = make_split(d, split_index, spec.seed);
    let main = match MainSample::new(d, &split.main, propensity, spec.variance, spec.alpha) {
        Ok(m) => m,
        Err(e) => return learners.iter().map(|_| Err(e.to_string())).collect(),
    };
    learners
        .iter()
        .enumerate()
        .map(|(l, learner)| {
            let s = split_index as u64;
            let proxies = build_proxies(d, &split, *learner, derive_seed(spec.seed, &[2, s, l as u64]))
                .map_err(|e| e.to_string())?;
            if main.len() < spec.groups {
                return Err(format!("split {split_index}: main sample smaller than the group count"));
            }
            let groups = assign_groups(&proxies.effect, spec.groups, derive_seed(spec.seed, &[3, s, l as u64]));
            let err = |e: crate::features::FeatureError| format!("split {split_index}: {e}");
            let blp = estimate_blp(&main, &proxies).map_err(err)?;
            let gates = estimate_gates(&main, &proxies, &groups).map_err(err)?;
            let lambda = blp.beta2.map_or(0.0, |b| lambda_blp(b.estimate, &proxies.effect));
            let gamma: Vec<f64> = gates.gamma.iter().map(|g| g.estimate).collect();
            Ok(SplitResult {
                split: split_index,
                learner: learner.name().to_string(),
                main: split.main.clone(),
                lambda_bar: lambda_gates(&gamma),
                effect: proxies.effect,
                groups,
                blp,
                gates,
                lambda,
                clan: Vec::new(),
                hh_vs_agg: None,
            })
        })
        .collect()
}

/// Run every split for every learner and aggregate.
pub fn run_analysis(
    d: &Dataset,
    spec: &AnalysisSpec,
    learners: &[&dyn ProxyLearner],
) -> Result<AnalysisResult, AnalysisError> {
    spec.validate()?;
    if learners.is_empty() {
        return Err(AnalysisError::InvalidSpec("at least one learner is required".into()));
    }
    d.validate()?;
    let propensity = estimate_propensity(d, spec.propensity)?;
    let per_split = map_indexed(spec.splits, spec.threads, |s| run_split(d, spec, &propensity, s, learners))?;

    let mut results = Vec::with_capacity(learners.len());
    for (l, learner) in learners.iter().enumerate() {
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for split in &per_split {
            match &split[l] {
                Ok(r) => ok.push(r.clone()),
                Err(e) => failures.push(e.clone()),
            }
        }
        let failed = failures.len();
        if ok.is_empty() || failed as f64 > spec.failure_threshold * spec.splits as f64 {
            return Err(AnalysisError::TooManyFailures {
                learner: learner.name().to_string(),
                failed,
                total: spec.splits,
                threshold: spec.failure_threshold,
                first: failures.first().cloned().unwrap_or_default(),
            });
        }
        for f in &failures {
            log::warn!("{}: {f}", learner.name());
        }
        results.push(aggregate_learner(d, spec, learner.name(), ok, failures)?);
    }

    let by = |f: fn(&LearnerResult) -> f64| -> Vec<(String, f64)> {
        results.iter().map(|r| (r.learner.clone(), f(r))).collect()
    };
    let selection = Selection { blp: select_learner(&by(|r| r.lambda)), gates: select_learner(&by(|r| r.lambda_bar)) };
    Ok(AnalysisResult {
        outcome: d.outcome_name().to_string(),
        n_obs: d.n_obs(),
        n_treated: d.n_treated(),
        dropped_rows: d.dropped_rows(),
        propensity: propensity.global,
        spec: spec.clone(),
        learners: results,
        selection,
    })
}

fn aggregate_learner(
    d: &Dataset,
    spec: &AnalysisSpec,
    name: &str,
    mut splits: Vec<SplitResult>,
    failures: Vec<String>,
) -> Result<LearnerResult, AnalysisError> {
    let alpha = spec.alpha;
    let agg = |v: Vec<SplitValue>| aggregate_splits(&v, alpha);
    let ate = agg(splits.iter().map(|s| SplitValue::from(&s.blp.beta1)).collect());
    let het_values: Vec<SplitValue> = splits.iter().filter_map(|s| s.blp.beta2.as_ref().map(SplitValue::from)).collect();
    let het = (!het_values.is_empty()).then(|| agg(het_values));
    let degenerate_splits = splits.iter().filter(|s| s.blp.degenerate).count();
    let gates: Vec<AggregatedEstimate> = (0..spec.groups)
        .map(|k| agg(splits.iter().map(|s| SplitValue::from(&s.gates.gamma[k])).collect()))
        .collect();
    let gates_difference = agg(splits.iter().map(|s| SplitValue::from(&s.gates.difference)).collect());
    let lambda = median(&splits.iter().map(|s| s.lambda).collect::<Vec<_>>());
    let lambda_bar = median(&splits.iter().map(|s| s.lambda_bar).collect::<Vec<_>>());

    let heterogeneous = het.is_some_and(|h| h.p_adj < 2.0 * alpha) || gates_difference.p_adj < 2.0 * alpha;
    let run_clan = match spec.clan {
        ClanMode::On => true,
        ClanMode::Off => false,
        ClanMode::Auto => heterogeneous,
    };
    let mut clan = None;
    if run_clan && spec.clan_count > 0 {
        clan = Some(clan_over_splits(d, spec, &mut splits));
    }
    let mut hh_vs_agg = None;
    if spec.hh_vs_agg {
        let propensity = estimate_propensity(d, spec.propensity)?;
        let mut values = Vec::new();
        for s in splits.iter_mut() {
            let main = MainSample::new(d, &s.main, &propensity, spec.variance, alpha)
                .map_err(|e| AnalysisError::InvalidSpec(e.to_string()))?;
            match hh_vs_agg_r2(d, &main, &s.groups) {
                Ok(r) => {
                    s.hh_vs_agg = Some(r);
                    values.push(r);
                }
                Err(e) => log::warn!("split {}: membership regressions skipped: {e}", s.split),
            }
        }
        if !values.is_empty() {
            let m = |f: fn(&HhAggR2) -> f64| median(&values.iter().map(f).collect::<Vec<_>>());
            hh_vs_agg = Some(HhAggR2 { aggregate: m(|r| r.aggregate), household: m(|r| r.household), all: m(|r| r.all) });
        }
    }
    Ok(LearnerResult {
        learner: name.to_string(),
        splits_ok: splits.len(),
        splits_failed: failures.len(),
        failures,
        degenerate_splits,
        ate,
        het,
        gates,
        gates_difference,
        lambda,
        lambda_bar,
        clan,
        hh_vs_agg,
        splits,
    })
}

/// Covariates with the largest median `|corr(z, S)|` over splits, then the
/// group-mean regressions for each on every split.
fn clan_over_splits(d: &Dataset, spec: &AnalysisSpec, splits: &mut [SplitResult]) -> Vec<ClanAggregate> {
    let mut corr: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in splits.iter() {
        for (j, c) in rank_by_effect_correlation(d, &s.main, &s.effect) {
            corr.entry(j).or_default().push(c);
        }
    }
    let mut ranked: Vec<(usize, f64)> = corr
        .into_iter()
        .map(|(j, mut v)| {
            v.resize(splits.len(), 0.0);
            (j, median(&v))
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(spec.clan_count);

    let propensity = match estimate_propensity(d, spec.propensity) {
        Ok(p) => p,
        Err(_) => return Vec::new(),
    };
    for s in splits.iter_mut() {
        let Ok(main) = MainSample::new(d, &s.main, &propensity, spec.variance, spec.alpha) else {
            continue;
        };
        for &(j, _) in &ranked {
            let col = d.covariate(j);
            let z: Vec<f64> = s.main.iter().map(|&r| col[r]).collect();
            match estimate_clan(&main, &d.covariate_names()[j], &z, &s.groups) {
                Ok(c) => s.clan.push(c),
                Err(e) => log::warn!("split {}: CLAN for `{}` skipped: {e}", s.split, d.covariate_names()[j]),
            }
        }
    }
    ranked
        .iter()
        .filter_map(|&(j, c)| {
            let name = &d.covariate_names()[j];
            let per: Vec<&ClanEstimate> =
                splits.iter().flat_map(|s| s.clan.iter().filter(|e| &e.covariate == name)).collect();
            if per.is_empty() {
                return None;
            }
            let agg = |f: fn(&ClanEstimate) -> &Inference| {
                aggregate_splits(&per.iter().map(|e| SplitValue::from(f(e))).collect::<Vec<_>>(), spec.alpha)
            };
            Some(ClanAggregate {
                covariate: name.clone(),
                median_abs_correlation: c,
                least: agg(|e| &e.least),
                most: agg(|e| &e.most),
                difference: agg(|e| &e.difference),
            })
        })
        .collect()
}
