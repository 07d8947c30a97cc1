//! Proxy learners fit separately on each treatment arm.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elastic_net::{tune_elastic_net, ElasticNetError, TuningPlan};
use crate::forest::{fit_forest, ForestError, ForestParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error(transparent)]
    ElasticNet(#[from] ElasticNetError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Treated,
}

/// A regression learner used to build the baseline and effect proxies.
///
/// `fit_predict` trains on one arm of the auxiliary sample and predicts on
/// the main sample.
pub trait ProxyLearner: Send + Sync {
    fn name(&self) -> &str;

    /// Whether covariates and outcome are min-max scaled around the fit.
    fn uses_scaling(&self) -> bool {
        true
    }

    fn fit_predict(
        &self,
        arm: Arm,
        x_train: &DMatrix<f64>,
        y_train: &[f64],
        x_predict: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Vec<f64>, LearnerError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetLearner {
    pub plan: TuningPlan,
}

impl ProxyLearner for ElasticNetLearner {
    fn name(&self) -> &str {
        "elastic-net"
    }

    fn fit_predict(
        &self,
        _arm: Arm,
        x_train: &DMatrix<f64>,
        y_train: &[f64],
        x_predict: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Vec<f64>, LearnerError> {
        let plan = self.plan.clone().with_seed(seed);
        let tuned = tune_elastic_net(x_train, y_train, &plan)?;
        Ok(tuned.model.predict(x_predict))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestLearner {
    pub params: ForestParams,
}

impl ProxyLearner for ForestLearner {
    fn name(&self) -> &str {
        "random-forest"
    }

    fn fit_predict(
        &self,
        _arm: Arm,
        x_train: &DMatrix<f64>,
        y_train: &[f64],
        x_predict: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Vec<f64>, LearnerError> {
        let model = fit_forest(x_train, y_train, &self.params.with_seed(seed))?;
        Ok(model.predict(x_predict)?)
    }
}

/// Predicts the training mean everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmMeanLearner {
    pub scaled: bool,
}

impl ProxyLearner for ArmMeanLearner {
    fn name(&self) -> &str {
        "arm-mean"
    }

    fn uses_scaling(&self) -> bool {
        self.scaled
    }

    fn fit_predict(
        &self,
        _arm: Arm,
        _x_train: &DMatrix<f64>,
        y_train: &[f64],
        x_predict: &DMatrix<f64>,
        _seed: u64,
    ) -> Result<Vec<f64>, LearnerError> {
        if y_train.is_empty() {
            return Err(LearnerError::Other("empty training arm".into()));
        }
        let m = y_train.iter().sum::<f64>() / y_train.len() as f64;
        Ok(vec![m; x_predict.nrows()])
    }
}

/// Learner choice as written in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LearnerKind {
    #[serde(rename = "elastic-net", alias = "en")]
    ElasticNet,
    #[serde(rename = "random-forest", alias = "rf")]
    RandomForest,
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::ElasticNet => "elastic-net",
            LearnerKind::RandomForest => "random-forest",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" | "elastic-net" | "elasticnet" => Some(LearnerKind::ElasticNet),
            "rf" | "random-forest" | "randomforest" => Some(LearnerKind::RandomForest),
            _ => None,
        }
    }

    pub fn build(&self, plan: &TuningPlan, forest: &ForestParams) -> Box<dyn ProxyLearner> {
        match self {
            LearnerKind::ElasticNet => Box::new(ElasticNetLearner { plan: plan.clone() }),
            LearnerKind::RandomForest => Box::new(ForestLearner { params: *forest }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        assert_eq!(LearnerKind::parse("EN"), Some(LearnerKind::ElasticNet));
        assert_eq!(LearnerKind::parse("random-forest"), Some(LearnerKind::RandomForest));
        assert_eq!(LearnerKind::parse("svm"), None);
    }

    #[test]
    fn arm_mean_predicts_mean() {
        let x = DMatrix::zeros(3, 1);
        let out = ArmMeanLearner { scaled: false }.fit_predict(Arm::Control, &x, &[1.0, 2.0, 6.0], &x, 0).unwrap();
        assert_eq!(out, vec![3.0; 3]);
    }
}
