//! Weighted least squares with strata fixed effects and sandwich covariance.
//!
//! Coefficients minimize `Σ w_i (y_i − x_i'b)²`. The covariance is the
//! sandwich `B M B` with bread `B = (X'WX)⁻¹` and meat assembled from the
//! per-observation scores `w_i e_i x_i`:
//!
//! * HC1: `M = N/(N−K) · Σ_i s_i s_i'`
//! * CR1: `M = G/(G−1) · (N−1)/(N−K) · Σ_g (Σ_{i∈g} s_i)(Σ_{i∈g} s_i)'`
//!
//! `K` counts every estimated parameter including absorbed fixed-effect
//! levels, so absorbing and expanding fixed effects give the same standard
//! errors. Inference uses the normal reference distribution.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::stats::{normal_quantile, normal_two_sided_p};

/// Relative tolerance of the pivoted rank check.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Fixed effects with more levels than this are absorbed by within-demeaning
/// when the mode is [`FixedEffectsMode::Auto`].
pub const ABSORB_THRESHOLD: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("design has {rows} rows but {name} has length {len}")]
    LengthMismatch { name: String, rows: usize, len: usize },
    #[error("weights must be finite and strictly positive (row {row}: {value})")]
    InvalidWeight { row: usize, value: f64 },
    #[error("non-finite value in {name} at row {row}")]
    NonFinite { name: String, row: usize },
    #[error("design matrix is rank deficient (rank {rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },
    #[error("need more observations than parameters (n = {n}, k = {k})")]
    TooFewObservations { n: usize, k: usize },
    #[error("cluster-robust variance needs at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("contrast has length {got}, fit has {expected} coefficients")]
    ContrastDimension { expected: usize, got: usize },
    #[error("adjusted R² requires an intercept")]
    NoIntercept,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarianceEstimator {
    Hc1,
    /// Cluster label per observation.
    Cr1(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FixedEffectsMode {
    #[default]
    Auto,
    Dummies,
    Absorb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffects {
    pub codes: Vec<usize>,
    pub mode: FixedEffectsMode,
}

/// A regression design. Build with the chained setters.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    intercept: bool,
    fixed_effects: Option<FixedEffects>,
    weights: Option<Vec<f64>>,
    variance: VarianceEstimator,
    alpha: f64,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self::new()
    }
}

impl DesignSpec {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            columns: Vec::new(),
            intercept: false,
            fixed_effects: None,
            weights: None,
            variance: VarianceEstimator::Hc1,
            alpha: 0.05,
        }
    }

    pub fn intercept(mut self, yes: bool) -> Self {
        self.intercept = yes;
        self
    }

    pub fn column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.names.push(name.into());
        self.columns.push(values);
        self
    }

    pub fn fixed_effects(mut self, codes: Vec<usize>, mode: FixedEffectsMode) -> Self {
        self.fixed_effects = Some(FixedEffects { codes, mode });
        self
    }

    pub fn weights(mut self, w: Vec<f64>) -> Self {
        self.weights = Some(w);
        self
    }

    pub fn variance(mut self, v: VarianceEstimator) -> Self {
        self.variance = v;
        self
    }

    /// Per-coefficient confidence intervals are at level `1 − alpha`.
    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.names
    }
}

/// Point estimate with normal-reference inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inference {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl Inference {
    pub fn new(estimate: f64, se: f64, alpha: f64) -> Self {
        let crit = normal_quantile(1.0 - alpha / 2.0);
        let z = estimate / se;
        Self {
            estimate,
            se,
            z,
            p_value: normal_two_sided_p(z),
            ci_lower: estimate - crit * se,
            ci_upper: estimate + crit * se,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WlsFit {
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub r_squared: f64,
    pub n_obs: usize,
    /// Estimated parameters including absorbed fixed-effect levels.
    pub n_params: usize,
    /// True when the model contains a constant (explicit or absorbed).
    pub has_constant: bool,
    pub absorbed_levels: usize,
    pub alpha: f64,
}

impl WlsFit {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn inference_at(&self, idx: usize) -> Inference {
        Inference::new(
            self.coefficients[idx],
            self.covariance[(idx, idx)].max(0.0).sqrt(),
            self.alpha,
        )
    }

    pub fn inference(&self, name: &str) -> Option<Inference> {
        self.index_of(name).map(|i| self.inference_at(i))
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.coefficients[i])
    }

    pub fn adjusted_r_squared(&self) -> Result<f64, RegressionError> {
        adjusted_r_squared(self)
    }
}

/// Fit `y` on the design by weighted least squares.
pub fn fit_wls(y: &[f64], design: &DesignSpec) -> Result<WlsFit, RegressionError> {
    let n = y.len();
    check_len("weights", n, design.weights.as_ref().map(Vec::len))?;
    for (name, col) in design.names.iter().zip(&design.columns) {
        check_len(name, n, Some(col.len()))?;
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(RegressionError::NonFinite { name: name.clone(), row });
        }
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(RegressionError::NonFinite { name: "outcome".into(), row });
    }
    let weights = match &design.weights {
        Some(w) => {
            if let Some(row) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(RegressionError::InvalidWeight { row, value: w[row] });
            }
            w.clone()
        }
        None => vec![1.0; n],
    };

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut y_work = y.to_vec();
    let mut absorbed_levels = 0;
    let mut has_constant = design.intercept;

    let absorb_codes = match &design.fixed_effects {
        Some(fe) => {
            check_len("fixed effects", n, Some(fe.codes.len()))?;
            let (codes, levels) = compact_codes(&fe.codes);
            let absorb = match fe.mode {
                FixedEffectsMode::Absorb => true,
                FixedEffectsMode::Dummies => false,
                FixedEffectsMode::Auto => levels > ABSORB_THRESHOLD,
            };
            if absorb {
                absorbed_levels = levels;
                has_constant = true;
                Some((codes, levels))
            } else {
                if design.intercept {
                    names.push("(intercept)".to_string());
                    columns.push(vec![1.0; n]);
                }
                let first = usize::from(design.intercept);
                for level in first..levels {
                    names.push(format!("fe[{level}]"));
                    columns.push(codes.iter().map(|&c| f64::from(u8::from(c == level))).collect());
                }
                has_constant = has_constant || levels > 0;
                None
            }
        }
        None => {
            if design.intercept {
                names.push("(intercept)".to_string());
                columns.push(vec![1.0; n]);
            }
            None
        }
    };
    let n_fe_columns = names.len();
    // FE dummies and intercept sit in front; user regressors follow.
    for (name, col) in design.names.iter().zip(&design.columns) {
        names.push(name.clone());
        columns.push(col.clone());
    }
    if let Some((codes, levels)) = &absorb_codes {
        demean_within(&mut y_work, codes, *levels, &weights);
        for col in columns.iter_mut() {
            demean_within(col, codes, *levels, &weights);
        }
    }
    debug_assert!(n_fe_columns <= names.len());

    let k = columns.len();
    let n_params = k + absorbed_levels;
    if n <= n_params {
        return Err(RegressionError::TooFewObservations { n, k: n_params });
    }

    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let xw = DMatrix::from_fn(n, k, |i, j| columns[j][i] * sqrt_w[i]);
    let yw = DVector::from_fn(n, |i, _| y_work[i] * sqrt_w[i]);

    let rank = pivoted_rank(&xw, RANK_TOLERANCE);
    if rank < k {
        return Err(RegressionError::RankDeficient { rank, columns: k });
    }

    let (coefficients, bread) = if k == 0 {
        (DVector::zeros(0), DMatrix::zeros(0, 0))
    } else {
        let qr = xw.clone().qr();
        let r = qr.r();
        let identity = DMatrix::<f64>::identity(k, k);
        let r_inv = r
            .solve_upper_triangular(&identity)
            .ok_or(RegressionError::RankDeficient { rank: k - 1, columns: k })?;
        let mut qty = yw.clone();
        qr.q_tr_mul(&mut qty);
        let beta = &r_inv * qty.rows(0, k);
        (beta, &r_inv * r_inv.transpose())
    };

    let mut residuals = vec![0.0; n];
    for (i, res) in residuals.iter_mut().enumerate() {
        let xb: f64 = (0..k).map(|j| columns[j][i] * coefficients[j]).sum();
        *res = y_work[i] - xb;
    }
    let fitted: Vec<f64> = y.iter().zip(&residuals).map(|(y, e)| y - e).collect();

    let meat = sandwich_meat(&columns, &weights, &residuals, &design.variance, n, n_params)?;
    let mut covariance = &bread * meat * &bread;
    symmetrize(&mut covariance);

    let ssr: f64 = residuals.iter().zip(&weights).map(|(e, w)| w * e * e).sum();
    let sst: f64 = if has_constant {
        let wsum: f64 = weights.iter().sum();
        let ybar = y.iter().zip(&weights).map(|(y, w)| w * y).sum::<f64>() / wsum;
        y.iter().zip(&weights).map(|(y, w)| w * (y - ybar) * (y - ybar)).sum()
    } else {
        y.iter().zip(&weights).map(|(y, w)| w * y * y).sum()
    };
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };

    Ok(WlsFit {
        names,
        coefficients,
        covariance,
        residuals,
        fitted,
        r_squared,
        n_obs: n,
        n_params,
        has_constant,
        absorbed_levels,
        alpha: design.alpha,
    })
}

fn check_len(name: &str, rows: usize, len: Option<usize>) -> Result<(), RegressionError> {
    match len {
        Some(len) if len != rows => Err(RegressionError::LengthMismatch {
            name: name.to_string(),
            rows,
            len,
        }),
        _ => Ok(()),
    }
}

/// Map arbitrary labels onto `0..levels` in ascending label order.
pub fn compact_codes(codes: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &c in codes {
        map.entry(c).or_insert(0usize);
    }
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    (codes.iter().map(|c| map[c]).collect(), map.len())
}

fn demean_within(values: &mut [f64], codes: &[usize], levels: usize, weights: &[f64]) {
    let mut sums = vec![0.0; levels];
    let mut wsums = vec![0.0; levels];
    for ((v, &c), w) in values.iter().zip(codes).zip(weights) {
        sums[c] += w * v;
        wsums[c] += w;
    }
    for (v, &c) in values.iter_mut().zip(codes) {
        *v -= sums[c] / wsums[c];
    }
}

fn sandwich_meat(
    columns: &[Vec<f64>],
    weights: &[f64],
    residuals: &[f64],
    variance: &VarianceEstimator,
    n: usize,
    n_params: usize,
) -> Result<DMatrix<f64>, RegressionError> {
    let k = columns.len();
    // row i holds the score w_i e_i x_i
    let scores = DMatrix::from_fn(n, k, |i, j| weights[i] * residuals[i] * columns[j][i]);
    let nf = n as f64;
    let kf = n_params as f64;
    match variance {
        VarianceEstimator::Hc1 => Ok(scores.tr_mul(&scores) * (nf / (nf - kf))),
        VarianceEstimator::Cr1(clusters) => {
            check_len("clusters", n, Some(clusters.len()))?;
            let (codes, g) = compact_codes(clusters);
            if g < 2 {
                return Err(RegressionError::TooFewClusters(g));
            }
            let mut sums = DMatrix::<f64>::zeros(g, k);
            for i in 0..n {
                for j in 0..k {
                    sums[(codes[i], j)] += scores[(i, j)];
                }
            }
            let gf = g as f64;
            Ok(sums.tr_mul(&sums) * (gf / (gf - 1.0) * (nf - 1.0) / (nf - kf)))
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Numerical rank via Gram–Schmidt with column pivoting on the largest
/// remaining relative norm. A column counts once its residual norm exceeds
/// `tol` times its own initial norm, so the result does not depend on
/// column scaling.
pub fn pivoted_rank(x: &DMatrix<f64>, tol: f64) -> usize {
    let (n, k) = x.shape();
    if k == 0 || n == 0 {
        return 0;
    }
    let mut work: Vec<DVector<f64>> = (0..k).map(|j| x.column(j).into_owned()).collect();
    let initial: Vec<f64> = work.iter().map(|c| c.norm()).collect();
    let mut remaining: Vec<usize> = (0..k).filter(|&j| initial[j] > 0.0).collect();
    let mut rank = 0;
    while !remaining.is_empty() {
        let (pos, rel) = remaining
            .iter()
            .enumerate()
            .map(|(pos, &j)| (pos, work[j].norm() / initial[j]))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if rel <= tol {
            break;
        }
        let j = remaining.swap_remove(pos);
        let q = &work[j] / work[j].norm();
        for &other in &remaining {
            // Two passes keep the projection accurate for nearly dependent columns.
            for _ in 0..2 {
                let proj = q.dot(&work[other]);
                work[other].axpy(-proj, &q, 1.0);
            }
        }
        rank += 1;
    }
    rank
}

/// Indices of columns kept by a sequential scan that drops any column lying
/// in the span of the columns kept before it (and of the intercept when
/// `intercept` is set).
pub fn independent_columns(columns: &[Vec<f64>], intercept: bool, tol: f64) -> Vec<usize> {
    let n = columns.first().map_or(0, Vec::len);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    if intercept && n > 0 {
        basis.push(DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    }
    let mut kept = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let mut v = DVector::from_column_slice(col);
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > tol * norm0 {
            basis.push(v / norm);
            kept.push(j);
        }
    }
    kept
}

/// Test `c'b` using the fit's sandwich covariance.
pub fn linear_combination_test(fit: &WlsFit, contrast: &[f64]) -> Result<Inference, RegressionError> {
    let k = fit.coefficients.len();
    if contrast.len() != k {
        return Err(RegressionError::ContrastDimension { expected: k, got: contrast.len() });
    }
    let c = DVector::from_column_slice(contrast);
    let estimate = c.dot(&fit.coefficients);
    let var = (c.transpose() * &fit.covariance * &c)[(0, 0)];
    Ok(Inference::new(estimate, var.max(0.0).sqrt(), fit.alpha))
}

/// `1 − (1 − R²)(n − 1)/(n − k − 1)` with `k` the non-intercept parameter count.
pub fn adjusted_r_squared(fit: &WlsFit) -> Result<f64, RegressionError> {
    if !fit.has_constant {
        return Err(RegressionError::NoIntercept);
    }
    adjusted_r_squared_from(fit.r_squared, fit.n_obs, fit.n_params - 1)
}

pub fn adjusted_r_squared_from(r2: f64, n: usize, k: usize) -> Result<f64, RegressionError> {
    if n <= k + 1 {
        return Err(RegressionError::TooFewObservations { n, k: k + 1 });
    }
    Ok(1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - k as f64 - 1.0))
}
