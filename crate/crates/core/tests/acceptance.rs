//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Positional arguments select criteria by number:
//!
//! ```text
//! cargo test -p hte-core --test acceptance -- 4 7
//! ```

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hte_core::app::{analyze, simulate, Overrides};
use hte_core::dataset::{estimate_propensity, PropensityMode};
use hte_core::elastic_net::{fit_elastic_net, soft_threshold};
use hte_core::features::HhAggR2;
use hte_core::forest::{fit_forest, fit_tree, ForestParams, TreeParams};
use hte_core::inference::{
    aggregate_splits, run_analysis, select_learner, AggregatedEstimate, AnalysisSpec, ClanMode, LearnerResult,
    SplitValue,
};
use hte_core::learner::{ArmMeanLearner, ElasticNetLearner, ForestLearner, ProxyLearner};
use hte_core::oracle::{oracle_best_split, oracle_wls};
use hte_core::proxy::{build_proxies, make_split};
use hte_core::regression::{fit_wls, DesignSpec, FixedEffectsMode, VarianceEstimator};
use hte_core::report::{blp_table, gates_table, hh_vs_agg_table, learner_comparison_table, BlpRow, GatesRow, LambdaRow};
use hte_core::stats::mean;
use hte_core::synth::{generate, Cate, DgpSpec, NoiseProxyLearner, PerfectProxyLearner, Synthetic};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Result<String, String>,
}

fn main() -> ExitCode {
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "WLS oracle equivalence", limit: secs(10), run: c1_wls_oracle },
        Criterion { id: 2, name: "Elastic Net identities", limit: secs(30), run: c2_elastic_net },
        Criterion { id: 3, name: "forest identities", limit: secs(60), run: c3_forest },
        Criterion { id: 4, name: "BLP consistency", limit: secs(15 * 60), run: c4_blp },
        Criterion { id: 5, name: "GATES recovery", limit: secs(10 * 60), run: c5_gates },
        Criterion { id: 6, name: "size under the null", limit: secs(20 * 60), run: c6_size },
        Criterion { id: 7, name: "learner selection ordering", limit: secs(20 * 60), run: c7_selection },
        Criterion { id: 8, name: "aggregation arithmetic", limit: secs(1), run: c8_aggregation },
        Criterion { id: 9, name: "CLAN means and selection", limit: secs(5 * 60), run: c9_clan },
        Criterion { id: 10, name: "no leakage and determinism", limit: secs(5 * 60), run: c10_leakage },
        Criterion { id: 11, name: "report layout", limit: secs(1), run: c11_layout },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| picked.is_empty() || picked.contains(&c.id)) {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > c.limit => Err(format!("{d}; over the {:.0?} limit", c.limit)),
            other => other,
        };
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} ({}): {status} [{:.2?}] {detail}", c.id, c.name, took);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn check(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn spec(splits: usize, seed: u64) -> AnalysisSpec {
    AnalysisSpec { splits, seed, clan: ClanMode::Off, hh_vs_agg: false, threads: Some(1), ..AnalysisSpec::default() }
}

fn synth(dgp: &DgpSpec) -> Synthetic {
    generate(dgp).expect("valid DGP")
}

fn en() -> ElasticNetLearner {
    ElasticNetLearner { plan: Default::default() }
}

fn rf(trees: usize) -> ForestLearner {
    ForestLearner { params: ForestParams { trees, ..ForestParams::default() } }
}

fn c1_wls_oracle() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(40..=200);
        let p = rng.random_range(1..=4);
        let n_strata = rng.random_range(2..=4);
        let g = rng.random_range(3..=8);
        let x: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let strata: Vec<usize> = (0..n).map(|i| i % n_strata).collect();
        let clusters: Vec<usize> = (0..n).map(|i| (i / n_strata) % g).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..4.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                1.0 + x.iter().enumerate().map(|(j, c)| (j as f64 + 0.5) * c[i]).sum::<f64>()
                    + 0.3 * strata[i] as f64
                    + e * (1.0 + x[0][i].abs())
            })
            .collect();
        let mut cols = vec![vec![1.0; n]];
        for s in 1..n_strata {
            cols.push(strata.iter().map(|&v| f64::from(u8::from(v == s))).collect());
        }
        cols.extend(x.iter().cloned());
        for cluster in [false, true] {
            let variance = if cluster { VarianceEstimator::Cr1(clusters.clone()) } else { VarianceEstimator::Hc1 };
            let mut design = DesignSpec::new()
                .intercept(true)
                .fixed_effects(strata.clone(), FixedEffectsMode::Dummies)
                .weights(w.clone())
                .variance(variance);
            for (j, c) in x.iter().enumerate() {
                design = design.column(format!("x{j}"), c.clone());
            }
            let fit = fit_wls(&y, &design).map_err(|e| format!("instance {seed}: {e}"))?;
            let oracle = oracle_wls(&cols, &y, &w, cluster.then_some(clusters.as_slice()))
                .map_err(|e| format!("instance {seed}: oracle {e:?}"))?;
            if fit.coefficients.len() != cols.len() {
                return Err(format!("instance {seed}: {} coefficients, oracle {}", fit.coefficients.len(), cols.len()));
            }
            for j in 0..cols.len() {
                worst = worst.max((fit.coefficients[j] - oracle.coefficients[j]).abs());
                worst = worst.max((fit.covariance[(j, j)].sqrt() - oracle.se(j)).abs());
            }
        }
    }
    check(worst <= 1e-10, format!("200 fits (HC1 and CR1), max abs difference {worst:.2e}"))
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

fn c2_elastic_net() -> Result<String, String> {
    let (mut ols_err, mut ridge_err, mut soft_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut monotone = true;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, p) = (rng.random_range(60..200), rng.random_range(2..8));
        let x = normal_matrix(&mut rng, n, p);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                1.5 + (0..p).map(|j| (j as f64 - 1.0) * x[(i, j)]).sum::<f64>() + e
            })
            .collect();

        let m = fit_elastic_net(&x, &y, 0.0, 0.0, false).map_err(|e| e.to_string())?;
        let mut design = DesignSpec::new().intercept(true);
        for j in 0..p {
            design = design.column(format!("x{j}"), x.column(j).iter().copied().collect());
        }
        let ols = fit_wls(&y, &design).map_err(|e| e.to_string())?;
        ols_err = ols_err.max((m.intercept - ols.coefficients[0]).abs());
        for j in 0..p {
            ols_err = ols_err.max((m.coefficients[j] - ols.coefficients[j + 1]).abs());
        }

        let l2 = rng.random_range(0.1..20.0);
        let mut xc = x.clone();
        for mut c in xc.column_iter_mut() {
            let mu = c.mean();
            c.add_scalar_mut(-mu);
        }
        let ym = mean(&y);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
        let theta = (xc.tr_mul(&xc) + DMatrix::identity(p, p) * l2).lu().solve(&xc.tr_mul(&yc)).ok_or("singular")?;
        let r = fit_elastic_net(&x, &y, 0.0, l2, false).map_err(|e| e.to_string())?;
        for j in 0..p {
            ridge_err = ridge_err.max((r.coefficients[j] - theta[j]).abs());
        }

        // columns orthogonal to the constant and to each other, unit norm
        let mut m = normal_matrix(&mut rng, n, p + 1);
        m.column_mut(0).fill(1.0);
        let q = m.qr().q().columns(1, p).into_owned();
        let yq: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                4.0 * q[(i, 0)] - 2.0 * q[(i, 1)] + 0.3 * e
            })
            .collect();
        let qty = q.tr_mul(&DVector::from_column_slice(&yq));
        for (l1, l2) in [(0.0, 0.0), (0.5, 0.0), (2.0, 0.5), (6.0, 1.0)] {
            let f = fit_elastic_net(&q, &yq, l1, l2, false).map_err(|e| e.to_string())?;
            for j in 0..p {
                soft_err = soft_err.max((f.coefficients[j] - soft_threshold(qty[j], l1 / 2.0) / (1.0 + l2)).abs());
            }
        }

        let grid: Vec<f64> = (0..20).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 19.0)).collect();
        let norms: Vec<f64> = grid
            .iter()
            .map(|&l1| fit_elastic_net(&x, &y, l1, 0.1, false).map(|f| f.coefficients.lp_norm(1)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        monotone &= norms.windows(2).all(|w| w[1] <= w[0]);
    }
    let worst = ols_err.max(ridge_err).max(soft_err);
    check(
        worst <= 1e-6 && monotone,
        format!(
            "10 instances: OLS {ols_err:.1e}, ridge {ridge_err:.1e}, soft-threshold {soft_err:.1e}, L1 path monotone {monotone}"
        ),
    )
}

fn c3_forest() -> Result<String, String> {
    let columns = |x: &DMatrix<f64>| -> Vec<Vec<f64>> { x.column_iter().map(|c| c.iter().copied().collect()).collect() };
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, p) = (rng.random_range(20..200), rng.random_range(1..6));
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let params = ForestParams { trees: 1, mtry: Some(p), min_leaf: 1, bootstrap: false, ..ForestParams::default() };
        let f = fit_forest(&x, &y, &params).map_err(|e| e.to_string())?;
        if f.predict(&x).map_err(|e| e.to_string())? != y {
            return Err(format!("instance {seed}: single tree does not interpolate"));
        }
    }
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(10..=100);
        let p = rng.random_range(1..=4);
        let x = DMatrix::from_fn(n, p, |_, _| f64::from(rng.random_range(0..6u8)));
        let y: Vec<f64> = (0..n).map(|i| 0.5 * x[(i, 0)] + f64::from(rng.random_range(0..3u8))).collect();
        let min_leaf = rng.random_range(1..=5);
        let tree = fit_tree(&x, &y, &TreeParams { mtry: p, min_leaf, max_depth: Some(1) }, &mut rng)
            .map_err(|e| e.to_string())?;
        let ok = match (tree.root_split(), oracle_best_split(&columns(&x), &y, min_leaf)) {
            (None, None) => true,
            (Some((f, t)), Some((of, ot, _))) => f == of && (t - ot).abs() <= 1e-12,
            _ => false,
        };
        if !ok {
            return Err(format!("root split {seed} disagrees with the oracle"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = DMatrix::from_fn(300, 5, |_, _| rng.random::<f64>());
    let y: Vec<f64> = (0..300).map(|i| 3.0 * x[(i, 0)] + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    let f = fit_forest(&x, &y, &ForestParams { trees: 100, seed: 3, ..ForestParams::default() }).map_err(|e| e.to_string())?;
    let q = DMatrix::from_fn(10_000, 5, |_, _| rng.random_range(-1.0..2.0));
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let outside = f.predict(&q).map_err(|e| e.to_string())?.iter().filter(|&&v| v < lo || v > hi).count();
    check(outside == 0, format!("5 interpolating trees, 50 root splits match, {outside} of 10000 queries out of range"))
}

fn c4_blp() -> Result<String, String> {
    let (mut ate_hits, mut het_hits) = (0, 0);
    for r in 0..100u64 {
        let dgp = DgpSpec { n: 2000, seed: 10_000 + r, ..DgpSpec::default() };
        let s = synth(&dgp);
        let res = run_analysis(&s.data, &spec(25, r), &[&en()]).map_err(|e| e.to_string())?;
        let a = res.learners[0].ate;
        ate_hits += usize::from(a.lower <= dgp.population_ate() && dgp.population_ate() <= a.upper);
        let res = run_analysis(&s.data, &spec(25, r), &[&PerfectProxyLearner { spec: dgp.clone() }])
            .map_err(|e| e.to_string())?;
        het_hits += usize::from(res.learners[0].het.is_some_and(|h| h.lower <= 1.0 && 1.0 <= h.upper));
    }
    check(
        ate_hits >= 90 && het_hits >= 90,
        format!("true ATE covered in {ate_hits}/100 runs, perfect-proxy HET covers 1 in {het_hits}/100"),
    )
}

fn c5_gates() -> Result<String, String> {
    let mut hits = 0;
    for r in 0..50u64 {
        let dgp = DgpSpec { n: 2000, cate: Cate::GroupStep { effects: [1.0, 2.0, 3.0, 4.0] }, seed: 20_000 + r, ..DgpSpec::default() };
        let res = run_analysis(&synth(&dgp).data, &spec(25, r), &[&en()]).map_err(|e| e.to_string())?;
        let g: Vec<f64> = res.learners[0].gates.iter().map(|e| e.point).collect();
        let diff = g[3] - g[0];
        hits += usize::from(g.windows(2).all(|w| w[0] <= w[1]) && (2.0..=4.0).contains(&diff));
    }
    check(hits >= 45, format!("monotone with gamma4 - gamma1 in [2, 4] in {hits}/50 runs"))
}

fn c6_size() -> Result<String, String> {
    let (mut rejections, mut no_het) = (0, 0);
    for r in 0..200u64 {
        let dgp = DgpSpec { n: 1000, p: 50, cate: Cate::Constant { value: 0.0 }, seed: 30_000 + r, ..DgpSpec::default() };
        let res = run_analysis(&synth(&dgp).data, &spec(25, r), &[&en()]).map_err(|e| e.to_string())?;
        match res.learners[0].het {
            Some(h) => rejections += usize::from(h.p_adj < 0.05),
            None => no_het += 1,
        }
    }
    check(
        rejections <= 20,
        format!("HET rejected in {rejections}/200 runs ({no_het} runs had a flat proxy on every split)"),
    )
}

fn lambda_bars(s: &Synthetic, seed: u64) -> Result<(f64, f64), String> {
    let res = run_analysis(&s.data, &spec(10, seed), &[&en(), &rf(200)]).map_err(|e| e.to_string())?;
    Ok((res.learners[0].lambda_bar, res.learners[1].lambda_bar))
}

fn c7_selection() -> Result<String, String> {
    let mut stub_hits = 0;
    for r in 0..100u64 {
        let dgp = DgpSpec { n: 1000, seed: 40_000 + r, ..DgpSpec::default() };
        let s = synth(&dgp);
        let perfect = PerfectProxyLearner { spec: dgp.clone() };
        let noise = NoiseProxyLearner { sd: 1.0 };
        let res = run_analysis(&s.data, &spec(10, r), &[&perfect, &noise]).map_err(|e| e.to_string())?;
        stub_hits += usize::from(res.learners[0].lambda > res.learners[1].lambda);
    }
    let (mut rf_wins, mut en_wins) = (0, 0);
    for r in 0..50u64 {
        let step = DgpSpec { n: 1000, cate: Cate::GroupStep { effects: [3.0, 0.0, 0.0, 3.0] }, seed: 41_000 + r, ..DgpSpec::default() };
        let (e, f) = lambda_bars(&synth(&step), r)?;
        rf_wins += usize::from(f > e);
        let linear = DgpSpec { n: 1000, cate: Cate::Linear { intercept: 0.0, slope: 4.0 }, seed: 42_000 + r, ..DgpSpec::default() };
        let (e, f) = lambda_bars(&synth(&linear), r)?;
        en_wins += usize::from(e > f);
    }
    check(
        stub_hits >= 95 && rf_wins >= 40 && en_wins >= 40,
        format!(
            "perfect beats noise on Lambda in {stub_hits}/100; forest wins Lambda bar on step effects in {rf_wins}/50, elastic net on linear effects in {en_wins}/50"
        ),
    )
}

fn sv(point: f64, lower: f64, upper: f64, p: f64) -> SplitValue {
    SplitValue { point, lower, upper, p }
}

fn c8_aggregation() -> Result<String, String> {
    let mut bad = Vec::new();
    let mut expect = |name: &str, got: AggregatedEstimate, want: (f64, f64, f64, f64)| {
        if (got.point, got.lower, got.upper, got.p_adj) != want {
            bad.push(format!("{name}: {got:?}"));
        }
    };
    // bounds are medians of their own columns, not the bounds of the median split
    let v = [sv(1.0, -4.0, 2.0, 0.02), sv(3.0, 1.0, 9.0, 0.04), sv(2.0, -1.0, 3.0, 0.01)];
    expect("doubling", aggregate_splits(&v, 0.05), (2.0, -1.0, 3.0, 0.04));
    expect("clipping", aggregate_splits(&[sv(0.0, -1.0, 1.0, 0.6), sv(0.0, -1.0, 1.0, 0.9)], 0.05), (0.0, -1.0, 1.0, 1.0));
    expect("single split", aggregate_splits(&[sv(26.959, -25.386, 77.802, 0.25)], 0.05), (26.959, -25.386, 77.802, 0.5));
    expect("even count", aggregate_splits(&[sv(1.0, 0.0, 2.0, 0.125), sv(4.0, 3.0, 6.0, 0.375)], 0.05), (2.5, 1.5, 4.0, 0.5));
    let a = aggregate_splits(&v, 0.1);
    if (a.split_level, a.reported_level, a.n_splits) != (0.9, 0.8, 3) {
        bad.push(format!("levels: {a:?}"));
    }
    check(bad.is_empty(), if bad.is_empty() { "5 hand-built cases exact".into() } else { bad.join("; ") })
}

fn c9_clan() -> Result<String, String> {
    let dgp = DgpSpec { n: 1000, p: 20, cate: Cate::Linear { intercept: 0.0, slope: 2.0 }, seed: 50_000, ..DgpSpec::default() };
    let s = synth(&dgp);
    let full = AnalysisSpec { clan: ClanMode::On, clan_count: 5, ..spec(10, 1) };
    let res = run_analysis(&s.data, &full, &[&en(), &rf(50)]).map_err(|e| e.to_string())?;
    let names = s.data.covariate_names();
    let (mut worst, mut checked) = (0.0f64, 0);
    for l in &res.learners {
        for split in &l.splits {
            for c in &split.clan {
                let j = names.iter().position(|n| *n == c.covariate).ok_or("unknown covariate")?;
                let z: Vec<f64> = split.main.iter().map(|&r| s.data.covariate(j)[r]).collect();
                let group_mean = |g| mean(&split.groups.members(g).iter().map(|&i| z[i]).collect::<Vec<_>>());
                let (lo, hi) = (group_mean(1), group_mean(4));
                worst = worst.max((c.least.estimate - lo).abs());
                worst = worst.max((c.most.estimate - hi).abs());
                worst = worst.max((c.difference.estimate - (hi - lo)).abs());
                checked += 1;
            }
        }
    }
    let mut picked = 0;
    for r in 0..50u64 {
        let dgp = DgpSpec { seed: 51_000 + r, ..dgp.clone() };
        let res = run_analysis(&synth(&dgp).data, &AnalysisSpec { seed: r, ..full.clone() }, &[&en()])
            .map_err(|e| e.to_string())?;
        picked += usize::from(selected(&res.learners[0]).iter().any(|c| c == "z1"));
    }
    check(
        checked == 2 * 10 * 5 && worst <= 1e-10 && picked >= 48,
        format!("{checked} split CLAN fits, max gap to group means {worst:.1e}; z1 selected in {picked}/50 runs"),
    )
}

fn selected(l: &LearnerResult) -> Vec<String> {
    l.clan.iter().flatten().map(|c| c.covariate.clone()).collect()
}

const DGP: &str = r#"
n = 1200
p = 6
strata = 3
seed = 8
[cate]
kind = "group-step"
effects = [0.0, 1.0, 1.0, 3.0]
"#;

const CONFIG: &str = r#"
data = "trial.csv"
outcomes = ["y"]
learners = ["en", "rf"]
splits = 10
seed = 2024
clan = "on"
clan_count = 3
[schema.columns]
y = "outcome"
d = "treatment"
z1 = "covariate"
z2 = "covariate"
z3 = "covariate"
z4 = "covariate"
z5 = "covariate"
z6 = "covariate"
strata = "strata"
[random_forest]
trees = 60
"#;

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("readable output dir") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).expect("readable artifact");
                files.push((path.strip_prefix(root).expect("inside root").to_path_buf(), bytes));
            }
        }
    }
    files.sort();
    files
}

fn c10_leakage() -> Result<String, String> {
    let dgp = DgpSpec { n: 600, strata: 4, seed: 60_000, ..DgpSpec::default() };
    let s = synth(&dgp);
    let learners: Vec<Box<dyn ProxyLearner>> = vec![
        Box::new(en()),
        Box::new(rf(40)),
        Box::new(ArmMeanLearner { scaled: true }),
        Box::new(PerfectProxyLearner { spec: dgp.clone() }),
    ];
    let mut compared = 0;
    for index in 0..3 {
        let split = make_split(&s.data, index, 17);
        let mut y = s.data.outcome().to_vec();
        for &i in &split.main {
            y[i] = 1e9 * (i as f64 + 1.0);
        }
        let poisoned = s.data.with_outcome(y).map_err(|e| e.to_string())?;
        for l in &learners {
            let a = build_proxies(&s.data, &split, l.as_ref(), 5).map_err(|e| e.to_string())?;
            let b = build_proxies(&poisoned, &split, l.as_ref(), 5).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("split {index}: {} proxies changed after poisoning", l.name()));
            }
            compared += 1;
        }
    }
    // propensity is estimated without outcomes, so poisoning cannot reach it
    estimate_propensity(&s.data, PropensityMode::Global).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::write(dir.path().join("dgp.toml"), DGP).map_err(|e| e.to_string())?;
    simulate(&dir.path().join("dgp.toml"), &dir.path().join("trial.csv")).map_err(|e| e.to_string())?;
    let cfg = dir.path().join("analysis.toml");
    fs::write(&cfg, CONFIG).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (k, threads) in [1, 1, 8, 8].into_iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let o = Overrides { out: Some(out.clone()), threads: Some(threads), ..Overrides::default() };
        analyze(&cfg, &o).map_err(|e| e.to_string())?;
        trees.push(read_tree(&out));
    }
    let identical = trees.windows(2).all(|w| w[0] == w[1]);
    check(
        identical && trees[0].len() == 9,
        format!(
            "{compared} proxy pairs bit-identical; {} artifacts byte-identical across 4 runs at 1 and 8 threads: {identical}",
            trees[0].len()
        ),
    )
}

fn est(point: f64, lower: f64, upper: f64, p_adj: f64) -> AggregatedEstimate {
    AggregatedEstimate { point, lower, upper, p_adj, split_level: 0.95, reported_level: 0.90, n_splits: 100 }
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn c11_layout() -> Result<String, String> {
    let blp = blp_table(
        "Profits",
        &[BlpRow {
            learner: "elastic-net".into(),
            ate: est(26.959, -25.386, 77.802, 0.607),
            het: Some(est(0.260, 0.104, 0.423, 0.002)),
        }],
    );
    let gates = gates_table(
        "Profits",
        &[GatesRow {
            learner: "elastic-net".into(),
            most: est(171.739, 31.203, 302.328, 0.030),
            least: est(-57.724, -155.692, 49.026, 0.591),
            difference: est(226.847, 49.537, 409.779, 0.028),
        }],
    );
    let lambdas = [
        LambdaRow { learner: "elastic-net".into(), lambda: 105.035, lambda_bar: 8680.990 },
        LambdaRow { learner: "random-forest".into(), lambda: 65.109, lambda_bar: 4793.797 },
    ];
    let verdict = |f: fn(&LambdaRow) -> f64| select_learner(&lambdas.iter().map(|r| (r.learner.clone(), f(r))).collect::<Vec<_>>());
    let comparison = learner_comparison_table("Profit", &lambdas, &verdict(|r| r.lambda), &verdict(|r| r.lambda_bar));
    let hh = hh_vs_agg_table(&[
        ("Morocco".into(), Some(HhAggR2 { aggregate: 0.87, household: 0.49, all: 0.94 })),
        ("Mongolia".into(), Some(HhAggR2 { aggregate: 0.67, household: 0.81, all: 0.91 })),
    ]);
    let mut bad = Vec::new();
    for (name, rendered) in
        [("blp.csv", blp), ("gates.csv", gates), ("learner_comparison.csv", comparison), ("hh_vs_agg.csv", hh)]
    {
        if rendered != golden(name) {
            bad.push(format!("{name} differs:\n{rendered}"));
        }
    }
    check(bad.is_empty(), if bad.is_empty() { "4 tables match their golden files".into() } else { bad.join("\n") })
}
