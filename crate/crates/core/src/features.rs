//! Per-split target features: BLP, GATES and CLAN regressions, the simple
//! interaction model and the household-versus-aggregate fit comparison.

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{DataError, Dataset, PropensityModel, VarianceSpec};
use crate::proxy::{GroupAssignment, ProxyPair};
use crate::regression::{
    adjusted_r_squared_from, fit_wls, independent_columns, linear_combination_test, DesignSpec,
    FixedEffectsMode, Inference, RegressionError, VarianceEstimator, WlsFit, RANK_TOLERANCE,
};
use crate::stats::{correlation, mean, population_variance};

/// Proxy variance below this counts as constant.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("{0}")]
    Data(String),
    #[error("covariate `{0}` is constant on the rows used")]
    ConstantCovariate(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("proxies cover {got} rows, main sample has {expected}")]
    ProxyLength { expected: usize, got: usize },
}

impl From<DataError> for FeatureError {
    fn from(e: DataError) -> Self {
        FeatureError::Data(e.to_string())
    }
}

/// Main-sample quantities shared by every regression on one split.
#[derive(Debug, Clone)]
pub struct MainSample {
    pub rows: Vec<usize>,
    pub outcome: Vec<f64>,
    pub treatment: Vec<f64>,
    pub propensity: Vec<f64>,
    pub strata: Option<Vec<usize>>,
    clusters: Option<Vec<usize>>,
    pub variance: VarianceSpec,
    pub alpha: f64,
}

impl MainSample {
    pub fn new(
        d: &Dataset,
        rows: &[usize],
        propensity: &PropensityModel,
        variance: VarianceSpec,
        alpha: f64,
    ) -> Result<Self, FeatureError> {
        let clusters = match variance {
            VarianceSpec::Cluster => {
                let c = d.cluster().ok_or_else(|| {
                    FeatureError::Data("cluster-robust variance requested but no cluster column".into())
                })?;
                Some(rows.iter().map(|&r| c.codes[r]).collect())
            }
            VarianceSpec::Robust => None,
        };
        Ok(Self {
            rows: rows.to_vec(),
            outcome: rows.iter().map(|&r| d.outcome()[r]).collect(),
            treatment: rows.iter().map(|&r| f64::from(u8::from(d.treatment()[r]))).collect(),
            propensity: propensity.for_rows(d, rows),
            strata: d.strata().map(|s| rows.iter().map(|&r| s.codes[r]).collect()),
            clusters,
            variance,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `1 / (p (1 − p))` per row.
    pub fn weights(&self) -> Vec<f64> {
        self.propensity.iter().map(|p| 1.0 / (p * (1.0 - p))).collect()
    }

    /// `D − p` per row.
    pub fn centered_treatment(&self) -> Vec<f64> {
        self.treatment.iter().zip(&self.propensity).map(|(d, p)| d - p).collect()
    }

    /// Variance estimator restricted to positions `idx` of the main sample.
    pub fn estimator(&self, idx: Option<&[usize]>) -> VarianceEstimator {
        match (&self.clusters, idx) {
            (None, _) => VarianceEstimator::Hc1,
            (Some(c), None) => VarianceEstimator::Cr1(c.clone()),
            (Some(c), Some(idx)) => VarianceEstimator::Cr1(idx.iter().map(|&i| c[i]).collect()),
        }
    }

    fn nuisance_design(&self, proxies: &ProxyPair, include_effect: bool) -> DesignSpec {
        let mut design = DesignSpec::new()
            .intercept(true)
            .weights(self.weights())
            .variance(self.estimator(None))
            .alpha(self.alpha);
        if let Some(s) = &self.strata {
            design = design.fixed_effects(s.clone(), FixedEffectsMode::Auto);
        }
        let mut candidates: Vec<(&str, &Vec<f64>)> = Vec::new();
        if population_variance(&proxies.baseline) >= DEGENERATE_VARIANCE {
            candidates.push(("B", &proxies.baseline));
        }
        if include_effect {
            candidates.push(("S", &proxies.effect));
        }
        // S can be an affine function of B, e.g. when one arm's model is flat.
        let cols: Vec<Vec<f64>> = candidates.iter().map(|(_, c)| (*c).clone()).collect();
        for j in independent_columns(&cols, true, RANK_TOLERANCE) {
            design = design.column(candidates[j].0, candidates[j].1.clone());
        }
        design
    }

    fn check_proxies(&self, proxies: &ProxyPair) -> Result<(), FeatureError> {
        if proxies.effect.len() != self.len() || proxies.baseline.len() != self.len() {
            return Err(FeatureError::ProxyLength { expected: self.len(), got: proxies.effect.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlpEstimate {
    pub beta1: Inference,
    /// Absent when the effect proxy is constant on the main sample.
    pub beta2: Option<Inference>,
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub degenerate: bool,
}

pub fn is_degenerate(proxies: &ProxyPair) -> bool {
    population_variance(&proxies.effect) < DEGENERATE_VARIANCE
}

pub fn blp_fit(main: &MainSample, proxies: &ProxyPair) -> Result<WlsFit, FeatureError> {
    main.check_proxies(proxies)?;
    let degenerate = is_degenerate(proxies);
    let dp = main.centered_treatment();
    let mut design = main.nuisance_design(proxies, !degenerate).column("D-p", dp.clone());
    if !degenerate {
        let inter = dp.iter().zip(&proxies.effect).map(|(d, s)| d * (s - proxies.effect_mean)).collect();
        design = design.column("(D-p)(S-Sbar)", inter);
    }
    Ok(fit_wls(&main.outcome, &design)?)
}

pub fn estimate_blp(main: &MainSample, proxies: &ProxyPair) -> Result<BlpEstimate, FeatureError> {
    let fit = blp_fit(main, proxies)?;
    let degenerate = is_degenerate(proxies);
    Ok(BlpEstimate {
        beta1: fit.inference("D-p").expect("treatment term present"),
        beta2: fit.inference("(D-p)(S-Sbar)"),
        alpha0: fit.coefficient("(intercept)"),
        alpha1: fit.coefficient("B"),
        alpha2: fit.coefficient("S"),
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatesEstimate {
    pub gamma: Vec<Inference>,
    /// Most minus least affected group.
    pub difference: Inference,
}

pub fn gates_fit(main: &MainSample, proxies: &ProxyPair, groups: &GroupAssignment) -> Result<WlsFit, FeatureError> {
    main.check_proxies(proxies)?;
    if groups.labels.len() != main.len() {
        return Err(FeatureError::ProxyLength { expected: main.len(), got: groups.labels.len() });
    }
    let dp = main.centered_treatment();
    let mut design = main.nuisance_design(proxies, !is_degenerate(proxies));
    for g in 1..=groups.k {
        if !groups.labels.contains(&g) {
            return Err(FeatureError::EmptyGroup(g));
        }
        let col = dp
            .iter()
            .zip(&groups.labels)
            .map(|(d, &l)| if l == g { *d } else { 0.0 })
            .collect();
        design = design.column(format!("(D-p)G{g}"), col);
    }
    Ok(fit_wls(&main.outcome, &design)?)
}

pub fn estimate_gates(
    main: &MainSample,
    proxies: &ProxyPair,
    groups: &GroupAssignment,
) -> Result<GatesEstimate, FeatureError> {
    let fit = gates_fit(main, proxies, groups)?;
    let idx: Vec<usize> = (1..=groups.k)
        .map(|g| fit.index_of(&format!("(D-p)G{g}")).expect("group term present"))
        .collect();
    let mut contrast = vec![0.0; fit.coefficients.len()];
    contrast[idx[0]] = -1.0;
    contrast[idx[groups.k - 1]] = 1.0;
    Ok(GatesEstimate {
        gamma: idx.iter().map(|&i| fit.inference_at(i)).collect(),
        difference: linear_combination_test(&fit, &contrast)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClanEstimate {
    pub covariate: String,
    pub least: Inference,
    pub most: Inference,
    pub difference: Inference,
}

/// Regress one covariate on the least- and most-affected group dummies,
/// without intercept, over the rows of those two groups.
pub fn estimate_clan(
    main: &MainSample,
    name: &str,
    z: &[f64],
    groups: &GroupAssignment,
) -> Result<ClanEstimate, FeatureError> {
    let (lo, hi) = (1, groups.k);
    let idx: Vec<usize> = (0..main.len()).filter(|&i| groups.labels[i] == lo || groups.labels[i] == hi).collect();
    let y: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
    let dummy = |g: usize| idx.iter().map(|&i| f64::from(u8::from(groups.labels[i] == g))).collect();
    let design = DesignSpec::new()
        .intercept(false)
        .column("G1", dummy(lo))
        .column("G4", dummy(hi))
        .variance(main.estimator(Some(&idx)))
        .alpha(main.alpha);
    let fit = fit_wls(&y, &design)?;
    Ok(ClanEstimate {
        covariate: name.to_string(),
        least: fit.inference_at(0),
        most: fit.inference_at(1),
        difference: linear_combination_test(&fit, &[-1.0, 1.0])?,
    })
}

/// Covariates ranked by `|corr(z, S)|` on the main rows, largest first.
///
/// Missingness indicators and constant columns are never ranked.
pub fn rank_by_effect_correlation(d: &Dataset, rows: &[usize], effect: &[f64]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = d
        .covariate_names()
        .iter()
        .enumerate()
        .filter(|(_, name)| !d.missing_indicators().contains(*name))
        .filter_map(|(j, _)| {
            let col = d.covariate(j);
            let z: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
            if population_variance(&z) < DEGENERATE_VARIANCE {
                return None;
            }
            Some((j, correlation(&z, effect).abs()))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Fit `Y = ρ0 + ρ1 D + ρ2 X + ρ3 D·X` on the whole dataset.
pub fn baseline_interaction_model(d: &Dataset, covariate: &str, variance: VarianceSpec) -> Result<WlsFit, FeatureError> {
    let j = d.covariate_index(covariate).ok_or_else(|| FeatureError::UnknownCovariate(covariate.to_string()))?;
    let x = d.covariate(j).to_vec();
    if population_variance(&x) < DEGENERATE_VARIANCE {
        return Err(FeatureError::ConstantCovariate(covariate.to_string()));
    }
    let dv = d.treatment_f64();
    let dx = dv.iter().zip(&x).map(|(a, b)| a * b).collect();
    let rows: Vec<usize> = (0..d.n_obs()).collect();
    let design = DesignSpec::new()
        .intercept(true)
        .column("D", dv)
        .column("X", x)
        .column("D*X", dx)
        .variance(variance.estimator(d, &rows)?);
    Ok(fit_wls(d.outcome(), &design)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HhAggR2 {
    pub aggregate: f64,
    pub household: f64,
    pub all: f64,
}

/// Adjusted R² of most-affected membership on aggregate-level covariates
/// (strata dummies plus aggregate-tagged columns), on household covariates,
/// and on both, over the least- and most-affected rows.
pub fn hh_vs_agg_r2(d: &Dataset, main: &MainSample, groups: &GroupAssignment) -> Result<HhAggR2, FeatureError> {
    let idx: Vec<usize> = (0..main.len())
        .filter(|&i| groups.labels[i] == 1 || groups.labels[i] == groups.k)
        .collect();
    let y: Vec<f64> = idx.iter().map(|&i| f64::from(u8::from(groups.labels[i] == groups.k))).collect();
    let mut aggregate: Vec<Vec<f64>> = Vec::new();
    if let Some(strata) = &main.strata {
        let mut levels: Vec<usize> = idx.iter().map(|&i| strata[i]).collect();
        levels.sort_unstable();
        levels.dedup();
        for &level in levels.iter().skip(1) {
            aggregate.push(idx.iter().map(|&i| f64::from(u8::from(strata[i] == level))).collect());
        }
    }
    let mut household = Vec::new();
    for (j, name) in d.covariate_names().iter().enumerate() {
        let col = d.covariate(j);
        let values: Vec<f64> = idx.iter().map(|&i| col[main.rows[i]]).collect();
        if d.aggregate_covariates().contains(name) {
            aggregate.push(values);
        } else {
            household.push(values);
        }
    }
    let mut all = aggregate.clone();
    all.extend(household.iter().cloned());
    let r2 = |cols: &[Vec<f64>]| -> Result<f64, FeatureError> {
        let keep = independent_columns(cols, true, RANK_TOLERANCE);
        if keep.len() < cols.len() {
            log::warn!("dropped {} collinear columns from a membership regression", cols.len() - keep.len());
        }
        let mut design = DesignSpec::new().intercept(true);
        for &k in &keep {
            design = design.column(format!("c{k}"), cols[k].clone());
        }
        let fit = fit_wls(&y, &design)?;
        Ok(adjusted_r_squared_from(fit.r_squared, y.len(), keep.len())?)
    };
    Ok(HhAggR2 { aggregate: r2(&aggregate)?, household: r2(&household)?, all: r2(&all)? })
}

/// Weighted mean of `D − p` times each nuisance regressor, centered; the
/// sample analogue of the orthogonality conditions.
pub fn orthogonality_gaps(main: &MainSample, proxies: &ProxyPair) -> Vec<(String, f64)> {
    let w = main.weights();
    let dp = main.centered_treatment();
    let wsum: f64 = w.iter().sum();
    let cov = |x: &[f64]| {
        let xm = x.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / wsum;
        let dm = dp.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / wsum;
        x.iter().zip(&dp).zip(&w).map(|((x, d), w)| w * (x - xm) * (d - dm)).sum::<f64>() / wsum
    };
    let mut out = vec![("(weighted mean)".to_string(), mean(&dp))];
    out.push(("B".into(), cov(&proxies.baseline)));
    out.push(("S".into(), cov(&proxies.effect)));
    out
}
