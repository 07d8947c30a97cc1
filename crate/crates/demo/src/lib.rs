//! WebAssembly bindings for the browser demo in `www/`. Each export takes
//! and returns JSON; the plain functions behind them are usable natively.

use hte_core::elastic_net::fit_elastic_net;
use hte_core::forest::ForestParams;
use hte_core::inference::{aggregate_splits, run_analysis, AggregatedEstimate, AnalysisSpec, ClanMode, SplitValue};
use hte_core::learner::{ElasticNetLearner, ForestLearner, ProxyLearner};
use hte_core::synth::{generate, Cate, DgpSpec};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct GatesRequest {
    pub n: usize,
    pub effects: [f64; 4],
    /// `en` or `rf`.
    pub learner: String,
    pub splits: usize,
    pub seed: u64,
}

impl Default for GatesRequest {
    fn default() -> Self {
        Self { n: 1000, effects: [1.0, 2.0, 3.0, 4.0], learner: "en".into(), splits: 5, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GatesResponse {
    pub learner: String,
    pub truth: [f64; 4],
    pub groups: Vec<AggregatedEstimate>,
    pub ate: AggregatedEstimate,
    pub het: Option<AggregatedEstimate>,
    pub true_ate: f64,
}

/// Simulate a four-group trial and estimate sorted group effects.
pub fn simulate_gates(req: &GatesRequest) -> Result<GatesResponse, String> {
    let dgp = DgpSpec { n: req.n, cate: Cate::GroupStep { effects: req.effects }, seed: req.seed, ..DgpSpec::default() };
    let synth = generate(&dgp).map_err(|e| e.to_string())?;
    let learner: Box<dyn ProxyLearner> = match req.learner.as_str() {
        "rf" => Box::new(ForestLearner { params: ForestParams { trees: 100, ..ForestParams::default() } }),
        "en" => Box::new(ElasticNetLearner { plan: Default::default() }),
        other => return Err(format!("unknown learner `{other}`")),
    };
    let spec = AnalysisSpec {
        splits: req.splits,
        seed: req.seed,
        clan: ClanMode::Off,
        hh_vs_agg: false,
        threads: Some(1),
        ..AnalysisSpec::default()
    };
    let result = run_analysis(&synth.data, &spec, &[learner.as_ref()]).map_err(|e| e.to_string())?;
    let l = &result.learners[0];
    Ok(GatesResponse {
        learner: l.learner.clone(),
        truth: req.effects,
        groups: l.gates.clone(),
        ate: l.ate,
        het: l.het,
        true_ate: synth.ate,
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct PathRequest {
    pub n: usize,
    pub p: usize,
    pub lambda2: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for PathRequest {
    fn default() -> Self {
        Self { n: 300, p: 8, lambda2: 0.01, points: 30, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PathResponse {
    pub names: Vec<String>,
    pub lambda1: Vec<f64>,
    /// `coefficients[k][j]`: covariate `j` at the `k`-th penalty.
    pub coefficients: Vec<Vec<f64>>,
}

/// Elastic Net coefficients over a log grid of L1 penalties, fit to the
/// untreated outcome `z1 + z2 + noise`.
pub fn elastic_net_path(req: &PathRequest) -> Result<PathResponse, String> {
    if req.points < 2 {
        return Err("need at least two grid points".into());
    }
    let dgp = DgpSpec { n: req.n, p: req.p, cate: Cate::Constant { value: 0.0 }, seed: req.seed, ..DgpSpec::default() };
    let synth = generate(&dgp).map_err(|e| e.to_string())?;
    let x = synth.data.covariates();
    let (lo, hi) = (1e-2f64.ln(), 1e3f64.ln());
    let lambda1: Vec<f64> =
        (0..req.points).map(|k| (lo + (hi - lo) * k as f64 / (req.points - 1) as f64).exp()).collect();
    let coefficients = lambda1
        .iter()
        .map(|&l1| {
            fit_elastic_net(x, synth.data.outcome(), l1, req.lambda2, false)
                .map(|m| m.coefficients.iter().copied().collect())
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok(PathResponse { names: synth.data.covariate_names().to_vec(), lambda1, coefficients })
}

#[derive(Debug, Clone, Deserialize)]
pub struct AggregateRequest {
    pub values: Vec<SplitValue>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

/// Median aggregation of per-split estimates.
pub fn aggregate(req: &AggregateRequest) -> Result<AggregatedEstimate, String> {
    if req.values.is_empty() {
        return Err("no split values given".into());
    }
    if !(req.alpha > 0.0 && req.alpha < 0.5) {
        return Err("alpha must lie in (0, 0.5)".into());
    }
    Ok(aggregate_splits(&req.values, req.alpha))
}

fn call<Q, R, F>(request: &str, f: F) -> Result<String, JsError>
where
    Q: for<'de> Deserialize<'de>,
    R: Serialize,
    F: FnOnce(&Q) -> Result<R, String>,
{
    let q: Q = serde_json::from_str(request).map_err(|e| JsError::new(&e.to_string()))?;
    let r = f(&q).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&r).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = simulateGates)]
pub fn simulate_gates_js(request: &str) -> Result<String, JsError> {
    call(request, simulate_gates)
}

#[wasm_bindgen(js_name = elasticNetPath)]
pub fn elastic_net_path_js(request: &str) -> Result<String, JsError> {
    call(request, elastic_net_path)
}

#[wasm_bindgen(js_name = aggregateSplits)]
pub fn aggregate_js(request: &str) -> Result<String, JsError> {
    call(request, aggregate)
}
