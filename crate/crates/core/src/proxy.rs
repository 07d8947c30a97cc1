//! One split of the data: main/auxiliary partition, arm-wise learner fits,
//! proxy predictions on the main sample and quartile grouping.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Dataset, ScalingMap};
use crate::learner::{Arm, LearnerError, ProxyLearner};
use crate::stats::{derive_seed, mean};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxyError {
    #[error("split {split}: auxiliary sample has no {arm:?} rows")]
    EmptyArm { split: usize, arm: Arm },
    #[error("split {split}: learner `{learner}` failed: {source}")]
    Learner {
        split: usize,
        learner: String,
        #[source]
        source: LearnerError,
    },
    #[error("split {split}: learner `{learner}` produced non-finite predictions")]
    NonFinite { split: usize, learner: String },
}

/// Main and auxiliary row indices for split `index`, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitAssignment {
    pub index: usize,
    pub seed: u64,
    pub main: Vec<usize>,
    pub aux: Vec<usize>,
}

/// Stratified half split: every (stratum, arm) cell is halved; odd leftovers
/// alternate between the two halves.
pub fn make_split(d: &Dataset, index: usize, master_seed: u64) -> SplitAssignment {
    let seed = derive_seed(master_seed, &[0x5350_4c49_54, index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata = d.stratum_codes();
    let mut cells: BTreeMap<(usize, bool), Vec<usize>> = BTreeMap::new();
    for (i, (&s, &t)) in strata.iter().zip(d.treatment()).enumerate() {
        cells.entry((s, t)).or_default().push(i);
    }
    let mut main = Vec::with_capacity(d.n_obs() / 2 + 1);
    let mut aux = Vec::with_capacity(d.n_obs() / 2 + 1);
    let mut extra_to_main = index % 2 == 0;
    for ((stratum, treated), mut rows) in cells {
        if rows.len() < 2 {
            log::warn!(
                "split {index}: stratum {stratum} {} cell has a single row",
                if treated { "treated" } else { "control" }
            );
        }
        rows.shuffle(&mut rng);
        let half = rows.len() / 2;
        main.extend_from_slice(&rows[..half]);
        aux.extend_from_slice(&rows[half..2 * half]);
        if rows.len() % 2 == 1 {
            let last = rows[rows.len() - 1];
            if extra_to_main {
                main.push(last);
            } else {
                aux.push(last);
            }
            extra_to_main = !extra_to_main;
        }
    }
    main.sort_unstable();
    aux.sort_unstable();
    SplitAssignment { index, seed, main, aux }
}

/// Baseline and effect proxies on the main rows of a split, in outcome units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxyPair {
    pub learner: String,
    pub baseline: Vec<f64>,
    pub effect: Vec<f64>,
    pub effect_mean: f64,
}

pub fn build_proxies(
    d: &Dataset,
    split: &SplitAssignment,
    learner: &dyn ProxyLearner,
    seed: u64,
) -> Result<ProxyPair, ProxyError> {
    let (treated, control): (Vec<usize>, Vec<usize>) =
        split.aux.iter().partition(|&&i| d.treatment()[i]);
    for (rows, arm) in [(&treated, Arm::Treated), (&control, Arm::Control)] {
        if rows.is_empty() {
            return Err(ProxyError::EmptyArm { split: split.index, arm });
        }
    }
    let y = d.outcome();
    let x_aux = d.covariates().select_rows(&split.aux);
    let y_aux: Vec<f64> = split.aux.iter().map(|&i| y[i]).collect();
    let x_main = d.covariates().select_rows(&split.main);
    let scaling = learner.uses_scaling().then(|| ScalingMap::fit(&x_aux, &y_aux));
    let (x_all, x_main) = match &scaling {
        Some(map) => (map.scale_covariates(d.covariates()), map.scale_covariates(&x_main)),
        None => (d.covariates().clone(), x_main),
    };

    let fit_arm = |rows: &[usize], arm: Arm, tag: u64| -> Result<Vec<f64>, ProxyError> {
        let x = x_all.select_rows(rows);
        let raw_y: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let y_train = match &scaling {
            Some(map) => map.scale_outcome(&raw_y),
            None => raw_y,
        };
        let pred = learner
            .fit_predict(arm, &x, &y_train, &x_main, derive_seed(seed, &[tag]))
            .map_err(|source| ProxyError::Learner {
                split: split.index,
                learner: learner.name().to_string(),
                source,
            })?;
        let pred = match &scaling {
            Some(map) => map.invert_outcome(&pred),
            None => pred,
        };
        if pred.len() != split.main.len() || pred.iter().any(|v| !v.is_finite()) {
            return Err(ProxyError::NonFinite { split: split.index, learner: learner.name().to_string() });
        }
        Ok(pred)
    };
    let baseline = fit_arm(&control, Arm::Control, 0)?;
    let treated_pred = fit_arm(&treated, Arm::Treated, 1)?;
    let effect: Vec<f64> = treated_pred.iter().zip(&baseline).map(|(t, c)| t - c).collect();
    let effect_mean = mean(&effect);
    Ok(ProxyPair { learner: learner.name().to_string(), baseline, effect, effect_mean })
}

/// Quantile group labels `1..=k` per main row, plus the `k − 1` cut values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    /// Largest proxy value in groups `1..k`.
    pub cuts: Vec<f64>,
}

impl GroupAssignment {
    pub fn members(&self, group: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &g)| g == group).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        (1..=self.k).map(|g| self.labels.iter().filter(|&&l| l == g).count()).collect()
    }
}

/// Rank by proxy value and cut into `k` groups of near-equal size.
///
/// Ties are broken by a seeded uniform draw per row, acting as an
/// infinitesimal jitter that never reorders distinct values.
pub fn assign_groups(effect: &[f64], k: usize, seed: u64) -> GroupAssignment {
    let n = effect.len();
    assert!(k >= 1 && n >= k, "need at least {k} rows to form {k} groups, got {n}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| effect[a].total_cmp(&effect[b]).then(jitter[a].total_cmp(&jitter[b])));
    let mut labels = vec![0; n];
    let mut cuts = vec![f64::NEG_INFINITY; k - 1];
    for (rank, &i) in order.iter().enumerate() {
        let g = rank * k / n + 1;
        labels[i] = g;
        if g < k {
            cuts[g - 1] = effect[i];
        }
    }
    GroupAssignment { k, labels, cuts }
}
