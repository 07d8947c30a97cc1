//! Elastic net by cyclic coordinate descent, with randomized cross-validated
//! tuning of the two penalties.
//!
//! The objective is `‖y − b0 − Xθ‖² + λ2‖θ‖² + λ1‖θ‖₁` with an unpenalized
//! intercept and no `1/(2n)` normalization. Covariates are expected on a
//! comparable scale already; nothing is standardized here.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::derive_seed;

pub const TOLERANCE: f64 = 1e-7;
pub const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElasticNetError {
    #[error("design has {x} rows but outcome has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("non-finite value in the design or outcome")]
    NonFinite,
    #[error("penalties must be finite and non-negative (λ1 = {0}, λ2 = {1})")]
    InvalidPenalty(f64, f64),
    #[error("no observations")]
    Empty,
    #[error("coordinate descent stopped after {iterations} sweeps with max change {max_change:e}")]
    NotConverged { iterations: usize, max_change: f64 },
    #[error("{n} rows cannot fill {folds} folds of at least two rows")]
    TooFewRows { n: usize, folds: usize },
    #[error("invalid tuning plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetModel {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub debias: bool,
    pub iterations: usize,
    pub max_change: f64,
}

impl ElasticNetModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(x.ncols(), self.coefficients.len(), "column count differs from training");
        let mut out = x * &self.coefficients;
        out.add_scalar_mut(self.intercept);
        out.iter().copied().collect()
    }

    pub fn n_nonzero(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c != 0.0).count()
    }
}

/// Value of the penalized least-squares objective.
pub fn objective(x: &DMatrix<f64>, y: &[f64], intercept: f64, theta: &DVector<f64>, l1: f64, l2: f64) -> f64 {
    let fitted = x * theta;
    let rss: f64 = y.iter().zip(fitted.iter()).map(|(yi, fi)| (yi - intercept - fi).powi(2)).sum();
    rss + l2 * theta.norm_squared() + l1 * theta.lp_norm(1)
}

/// Centered Gram matrix and cross-products, reused across penalty values.
#[derive(Debug, Clone)]
pub struct Gram {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    x_mean: DVector<f64>,
    y_mean: f64,
}

impl Gram {
    pub fn new(x: &DMatrix<f64>, y: &[f64]) -> Result<Self, ElasticNetError> {
        let n = x.nrows();
        if n != y.len() {
            return Err(ElasticNetError::LengthMismatch { x: n, y: y.len() });
        }
        if n == 0 {
            return Err(ElasticNetError::Empty);
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(ElasticNetError::NonFinite);
        }
        let x_mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()));
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let mut xc = x.clone();
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-x_mean[j]);
        }
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let mut gram = xc.tr_mul(&xc);
        let mut xty = xc.tr_mul(&yc);
        // constant columns: centering leaves only round-off
        for j in 0..gram.ncols() {
            if gram[(j, j)] <= 1e-12 {
                gram.row_mut(j).fill(0.0);
                gram.column_mut(j).fill(0.0);
                xty[j] = 0.0;
            }
        }
        Ok(Self { gram, xty, x_mean, y_mean })
    }

    pub fn n_features(&self) -> usize {
        self.xty.len()
    }

    /// Solve for one `(λ1, λ2)` pair, optionally warm-started.
    pub fn solve(
        &self,
        lambda1: f64,
        lambda2: f64,
        debias: bool,
        warm: Option<&DVector<f64>>,
    ) -> Result<ElasticNetModel, ElasticNetError> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
            return Err(ElasticNetError::InvalidPenalty(lambda1, lambda2));
        }
        let p = self.n_features();
        let mut theta = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
        // gradient-like residual correlation c - Gθ
        let mut g = &self.xty - &self.gram * &theta;
        let half = 0.5 * lambda1;
        let mut iterations = 0;
        let mut max_change = f64::INFINITY;
        while iterations < MAX_SWEEPS {
            iterations += 1;
            max_change = 0.0;
            for j in 0..p {
                let gjj = self.gram[(j, j)];
                let denom = gjj + lambda2;
                let old = theta[j];
                let new = if denom > 0.0 {
                    soft_threshold(g[j] + gjj * old, half) / denom
                } else {
                    0.0
                };
                let delta = new - old;
                if delta != 0.0 {
                    theta[j] = new;
                    g.axpy(-delta, &self.gram.column(j), 1.0);
                    max_change = f64::max(max_change, delta.abs());
                }
            }
            if max_change < TOLERANCE {
                break;
            }
        }
        if max_change >= TOLERANCE {
            return Err(ElasticNetError::NotConverged { iterations, max_change });
        }
        if debias {
            theta *= 1.0 + lambda2;
        }
        let intercept = self.y_mean - self.x_mean.dot(&theta);
        Ok(ElasticNetModel { coefficients: theta, intercept, lambda1, lambda2, debias, iterations, max_change })
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

pub fn fit_elastic_net(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda1: f64,
    lambda2: f64,
    debias: bool,
) -> Result<ElasticNetModel, ElasticNetError> {
    Gram::new(x, y)?.solve(lambda1, lambda2, debias, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningPlan {
    pub folds: usize,
    pub repeats: usize,
    pub candidates: usize,
    pub lambda1_range: (f64, f64),
    pub lambda2_range: (f64, f64),
    pub debias: bool,
    pub seed: u64,
}

impl Default for TuningPlan {
    fn default() -> Self {
        Self {
            folds: 2,
            repeats: 2,
            candidates: 20,
            lambda1_range: (1e-4, 10.0),
            lambda2_range: (1e-4, 10.0),
            debias: true,
            seed: 0,
        }
    }
}

impl TuningPlan {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<(), ElasticNetError> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if self.folds < 2 || self.repeats == 0 || self.candidates == 0 {
            return Err(ElasticNetError::InvalidPlan(
                "need at least two folds, one repeat and one candidate".into(),
            ));
        }
        if !range_ok(self.lambda1_range) || !range_ok(self.lambda2_range) {
            return Err(ElasticNetError::InvalidPlan("penalty ranges must be positive and ordered".into()));
        }
        Ok(())
    }

    /// Candidate `(λ1, λ2)` pairs, log-uniform within the configured ranges.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[0]));
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            let (a, b) = (lo.ln(), hi.ln());
            (a + (b - a) * rng.random::<f64>()).exp()
        };
        (0..self.candidates)
            .map(|_| {
                let l1 = draw(&mut rng, self.lambda1_range);
                let l2 = draw(&mut rng, self.lambda2_range);
                (l1, l2)
            })
            .collect()
    }

    /// Fold label per row for repeat `r`.
    pub fn fold_labels(&self, n: usize, r: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[1, r as u64]));
        order.shuffle(&mut rng);
        let mut labels = vec![0; n];
        for (pos, &row) in order.iter().enumerate() {
            labels[row] = pos % self.folds;
        }
        labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Mean out-of-fold squared error per grid candidate; NaN when never scored.
    pub cv_mse: Vec<f64>,
    pub grid: Vec<(f64, f64)>,
    pub model: ElasticNetModel,
}

pub fn tune_elastic_net(x: &DMatrix<f64>, y: &[f64], plan: &TuningPlan) -> Result<TuningResult, ElasticNetError> {
    plan.validate()?;
    let n = x.nrows();
    if n != y.len() {
        return Err(ElasticNetError::LengthMismatch { x: n, y: y.len() });
    }
    if n < 2 * plan.folds {
        return Err(ElasticNetError::TooFewRows { n, folds: plan.folds });
    }
    let grid = plan.grid();
    // candidates visited from most to least penalized so warm starts move little
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].0.total_cmp(&grid[a].0).then(grid[b].1.total_cmp(&grid[a].1)));

    let mut sse = vec![0.0; grid.len()];
    let mut count = vec![0usize; grid.len()];
    for r in 0..plan.repeats {
        let labels = plan.fold_labels(n, r);
        for k in 0..plan.folds {
            let train: Vec<usize> = (0..n).filter(|&i| labels[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            if y_train.iter().all(|&v| v == y_train[0]) {
                log::warn!("repeat {r} fold {k}: training outcome is constant, fold skipped");
                continue;
            }
            let gram = Gram::new(&x.select_rows(&train), &y_train)?;
            let x_test = x.select_rows(&test);
            let mut warm: Option<DVector<f64>> = None;
            for &c in &order {
                let (l1, l2) = grid[c];
                match gram.solve(l1, l2, plan.debias, warm.as_ref()) {
                    Ok(m) => {
                        let pred = m.predict(&x_test);
                        sse[c] += test.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>()
                            / test.len() as f64;
                        count[c] += 1;
                        let raw = if plan.debias { &m.coefficients / (1.0 + l2) } else { m.coefficients };
                        warm = Some(raw);
                    }
                    Err(e) => log::warn!("candidate ({l1:.3e}, {l2:.3e}) skipped on repeat {r} fold {k}: {e}"),
                }
            }
        }
    }
    let cv_mse: Vec<f64> = sse
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    let best = (0..grid.len())
        .filter(|&c| count[c] > 0)
        .min_by(|&a, &b| cv_mse[a].total_cmp(&cv_mse[b]).then(a.cmp(&b)))
        .unwrap_or_else(|| {
            log::warn!("no tuning candidate could be scored; using the most penalized one");
            order[0]
        });
    let (lambda1, lambda2) = grid[best];
    let model = fit_elastic_net(x, y, lambda1, lambda2, plan.debias)?;
    Ok(TuningResult { lambda1, lambda2, cv_mse, grid, model })
}
