//! Synthetic randomized trials with known baseline and effect functions.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Labels, Role, Schema};
use crate::learner::{Arm, LearnerError, ProxyLearner};
use crate::stats::{derive_seed, mean};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid data-generating process: {0}")]
    Invalid(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// `z1 + z2` (or `z1` with a single covariate).
    #[default]
    Linear,
    /// `1{z1 > 0.5}`.
    Step,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Cate {
    Constant { value: f64 },
    /// `intercept + slope · z1`.
    Linear { intercept: f64, slope: f64 },
    /// `effects[q]` where `q` is the quartile bin of `z1`.
    GroupStep { effects: [f64; 4] },
}

impl Default for Cate {
    fn default() -> Self {
        Cate::Linear { intercept: 0.0, slope: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Noise {
    #[default]
    Gaussian,
    /// Student-t rescaled to unit variance when `df > 2`.
    StudentT { df: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpSpec {
    pub n: usize,
    pub p: usize,
    pub treat_prob: f64,
    pub baseline: Baseline,
    pub cate: Cate,
    pub noise_sd: f64,
    pub noise: Noise,
    /// Zero means no cluster column.
    pub clusters: usize,
    /// Zero means no strata column.
    pub strata: usize,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            p: 5,
            treat_prob: 0.5,
            baseline: Baseline::Linear,
            cate: Cate::default(),
            noise_sd: 1.0,
            noise: Noise::Gaussian,
            clusters: 0,
            strata: 0,
            seed: 0,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.p == 0 {
            return bad("at least one covariate is required".into());
        }
        if !(self.treat_prob > 0.0 && self.treat_prob < 1.0) {
            return bad(format!("treatment probability {} must lie strictly between 0 and 1", self.treat_prob));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and non-negative".into());
        }
        if let Noise::StudentT { df } = self.noise {
            if !(df > 0.0) {
                return bad("Student-t degrees of freedom must be positive".into());
            }
        }
        if self.clusters > 0 && self.strata > self.clusters {
            return bad("cannot have more strata than clusters".into());
        }
        let cells = if self.strata > 0 { self.strata } else { 1 };
        if self.n < 2 * cells {
            return bad(format!("n = {} is too small for {cells} strata with both arms", self.n));
        }
        Ok(())
    }

    pub fn b0(&self, z: &[f64]) -> f64 {
        match self.baseline {
            Baseline::Linear => z[0] + z.get(1).copied().unwrap_or(0.0),
            Baseline::Step => f64::from(u8::from(z[0] > 0.5)),
            Baseline::Constant => 0.0,
        }
    }

    pub fn s0(&self, z: &[f64]) -> f64 {
        match &self.cate {
            Cate::Constant { value } => *value,
            Cate::Linear { intercept, slope } => intercept + slope * z[0],
            Cate::GroupStep { effects } => effects[quartile_bin(z[0])],
        }
    }

    /// Expected effect under the uniform covariate distribution.
    pub fn population_ate(&self) -> f64 {
        match &self.cate {
            Cate::Constant { value } => *value,
            Cate::Linear { intercept, slope } => intercept + 0.5 * slope,
            Cate::GroupStep { effects } => effects.iter().sum::<f64>() / 4.0,
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.p).map(|j| format!("z{j}")).collect()
    }
}

/// Bin index in `0..4` of a value in [0, 1].
pub fn quartile_bin(v: f64) -> usize {
    ((v * 4.0).floor().max(0.0) as usize).min(3)
}

/// A generated trial with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub data: Dataset,
    pub b0: Vec<f64>,
    pub s0: Vec<f64>,
    /// Untreated potential outcome.
    pub y0: Vec<f64>,
    /// Mean of `s0` over the generated rows.
    pub ate: f64,
    pub population_ate: f64,
}

pub fn generate(spec: &DgpSpec) -> Result<Synthetic, SynthError> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0]));
    let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>());

    let cluster: Option<Vec<usize>> = (spec.clusters > 0).then(|| (0..n).map(|i| i % spec.clusters).collect());
    let stratum: Option<Vec<usize>> = (spec.strata > 0).then(|| match &cluster {
        Some(c) => c.iter().map(|c| c % spec.strata).collect(),
        None => (0..n).map(|i| i % spec.strata).collect(),
    });

    // complete randomization within strata, independent of outcomes
    let mut treat = vec![false; n];
    let mut trng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    let levels = spec.strata.max(1);
    for level in 0..levels {
        let mut rows: Vec<usize> = (0..n).filter(|&i| stratum.as_ref().map_or(0, |s| s[i]) == level).collect();
        let m = rows.len();
        if m == 0 {
            continue;
        }
        let k = ((m as f64 * spec.treat_prob).round() as usize).clamp(1, m.saturating_sub(1).max(1));
        rows.shuffle(&mut trng);
        for &r in &rows[..k] {
            treat[r] = true;
        }
    }

    let mut nrng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2]));
    let noise: Vec<f64> = match spec.noise {
        Noise::Gaussian => (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut nrng)).collect(),
        Noise::StudentT { df } => {
            let t = StudentT::new(df).map_err(|e| SynthError::Invalid(e.to_string()))?;
            let scale = if df > 2.0 { ((df - 2.0) / df).sqrt() } else { 1.0 };
            (0..n).map(|_| scale * t.sample(&mut nrng)).collect()
        }
    };

    let mut b0 = Vec::with_capacity(n);
    let mut s0 = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        let (b, s) = (spec.b0(&row), spec.s0(&row));
        let untreated = b + spec.noise_sd * noise[i];
        b0.push(b);
        s0.push(s);
        y0.push(untreated);
        y.push(untreated + if treat[i] { s } else { 0.0 });
    }

    let mut data = Dataset::new("y", y, treat, spec.covariate_names(), x).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let labels = |prefix: &str, codes: &[usize]| {
        let raw: Vec<String> = codes.iter().map(|c| format!("{prefix}{c:04}")).collect();
        Labels::from_strings(prefix, &raw)
    };
    if let Some(c) = &cluster {
        data = data.with_cluster(labels("c", c)).map_err(|e| SynthError::Invalid(e.to_string()))?;
    }
    if let Some(s) = &stratum {
        data = data.with_strata(labels("s", s)).map_err(|e| SynthError::Invalid(e.to_string()))?;
    }
    let ate = mean(&s0);
    Ok(Synthetic { data, b0, s0, y0, ate, population_ate: spec.population_ate() })
}

impl Synthetic {
    /// Column roles matching [`Synthetic::write_csv`].
    pub fn schema(&self) -> Schema {
        let mut columns = std::collections::BTreeMap::new();
        columns.insert("y".to_string(), Role::Outcome);
        columns.insert("d".to_string(), Role::Treatment);
        for name in self.data.covariate_names() {
            columns.insert(name.clone(), Role::Covariate);
        }
        if self.data.cluster().is_some() {
            columns.insert("cluster".to_string(), Role::Cluster);
        }
        if self.data.strata().is_some() {
            columns.insert("strata".to_string(), Role::Strata);
        }
        Schema { columns, aggregate: Vec::new() }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SynthError> {
        let d = &self.data;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string(), "d".to_string()];
        header.extend(d.covariate_names().iter().cloned());
        if d.cluster().is_some() {
            header.push("cluster".into());
        }
        if d.strata().is_some() {
            header.push("strata".into());
        }
        w.write_record(&header)?;
        for i in 0..d.n_obs() {
            let mut rec = vec![format!("{}", d.outcome()[i]), if d.treatment()[i] { "1" } else { "0" }.to_string()];
            rec.extend((0..d.n_covariates()).map(|j| format!("{}", d.covariates()[(i, j)])));
            if let Some(c) = d.cluster() {
                rec.push(c.levels[c.codes[i]].clone());
            }
            if let Some(s) = d.strata() {
                rec.push(s.levels[s.codes[i]].clone());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ground truth written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub ate: f64,
    pub population_ate: f64,
    pub s0: Vec<f64>,
}

impl From<&Synthetic> for Truth {
    fn from(s: &Synthetic) -> Self {
        Self { ate: s.ate, population_ate: s.population_ate, s0: s.s0.clone() }
    }
}

/// Predicts the true conditional means from raw covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfectProxyLearner {
    pub spec: DgpSpec,
}

impl ProxyLearner for PerfectProxyLearner {
    fn name(&self) -> &str {
        "perfect"
    }

    fn uses_scaling(&self) -> bool {
        false
    }

    fn fit_predict(
        &self,
        arm: Arm,
        _x_train: &DMatrix<f64>,
        _y_train: &[f64],
        x_predict: &DMatrix<f64>,
        _seed: u64,
    ) -> Result<Vec<f64>, LearnerError> {
        Ok((0..x_predict.nrows())
            .map(|i| {
                let row: Vec<f64> = x_predict.row(i).iter().copied().collect();
                self.spec.b0(&row) + if arm == Arm::Treated { self.spec.s0(&row) } else { 0.0 }
            })
            .collect())
    }
}

/// Effect proxy made of independent Gaussian draws.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProxyLearner {
    pub sd: f64,
}

impl ProxyLearner for NoiseProxyLearner {
    fn name(&self) -> &str {
        "noise"
    }

    fn uses_scaling(&self) -> bool {
        false
    }

    fn fit_predict(
        &self,
        arm: Arm,
        _x_train: &DMatrix<f64>,
        _y_train: &[f64],
        x_predict: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Vec<f64>, LearnerError> {
        let n = x_predict.nrows();
        if arm == Arm::Control {
            return Ok(vec![0.0; n]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| self.sd * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
    }
}
