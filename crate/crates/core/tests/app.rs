use std::fs;
use std::path::{Path, PathBuf};

use hte_core::app::{analyze, simulate, validate, AnalyzeOutput, Overrides};
use hte_core::config::AnalysisConfig;
use hte_core::synth::Truth;

const DGP: &str = r#"
n = 1200
p = 4
strata = 3
clusters = 60
seed = 5
[cate]
kind = "group-step"
effects = [1.0, 2.0, 3.0, 4.0]
"#;

fn config(extra: &str) -> String {
    format!(
        r#"
data = "trial.csv"
outcomes = ["y"]
learners = ["en", "rf"]
splits = 4
seed = 9
variance = "cluster"
clan = "on"
clan_count = 2
{extra}
[schema]
aggregate = ["z4"]
[schema.columns]
y = "outcome"
d = "treatment"
z1 = "covariate"
z2 = "covariate"
z3 = "covariate"
z4 = "covariate"
cluster = "cluster"
strata = "strata"

[random_forest]
trees = 40
"#
    )
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("dgp.toml"), DGP).unwrap();
    simulate(&dir.path().join("dgp.toml"), &dir.path().join("trial.csv")).unwrap();
    let cfg = dir.path().join("analysis.toml");
    fs::write(&cfg, config(extra)).unwrap();
    (dir, cfg)
}

fn run(cfg: &Path, out: &Path) -> AnalyzeOutput {
    analyze(cfg, &Overrides { out: Some(out.to_path_buf()), threads: Some(1), ..Overrides::default() }).unwrap()
}

fn cells(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn analyze_writes_every_artifact() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("out");
    let done = run(&cfg, &out);
    for f in ["blp.csv", "gates.csv", "clan.csv", "learner_comparison.csv", "balance.csv", "hh_vs_agg.csv", "gates_plot.csv"] {
        assert!(out.join("y").join(f).is_file(), "{f}");
    }
    assert!(out.join("results.json").is_file() && out.join("run_manifest.json").is_file());
    assert_eq!(done.written.len(), 9);

    // gates_plot rows run G1..G4 with increasing points on the step design
    let plot = cells(&out.join("y/gates_plot.csv"));
    for learner in ["elastic-net", "random-forest"] {
        let rows: Vec<&Vec<String>> = plot.iter().filter(|r| r[0] == learner).collect();
        let groups: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
        assert_eq!(groups, ["G1", "G2", "G3", "G4"]);
        let points: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
        assert!(points.windows(2).all(|w| w[0] < w[1]), "{learner}: {points:?}");
    }

    // no empty numeric cells anywhere
    for f in fs::read_dir(out.join("y")).unwrap() {
        let path = f.unwrap().path();
        for row in cells(&path) {
            for cell in row {
                assert!(!cell.is_empty(), "{}", path.display());
            }
        }
    }

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(json["outcomes"][0]["analysis"]["learners"].as_array().unwrap().len(), 2);
    let clan = cells(&out.join("y/clan.csv"));
    assert_eq!(clan[0][2], "z1");
}

#[test]
fn manifest_reproduces_the_run() {
    let (dir, cfg) = setup("");
    let first = run(&cfg, &dir.path().join("a"));
    let echoed = dir.path().join("echo.toml");
    fs::write(&echoed, &first.manifest.config).unwrap();
    let again = AnalysisConfig::load(&echoed).unwrap();
    assert_eq!(again.seed, 9);
    let second = run(&echoed, &dir.path().join("b"));
    for name in ["y/blp.csv", "y/gates.csv", "y/clan.csv", "results.json", "run_manifest.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(second.manifest.outcomes[0].learners[0].splits_failed, 0);
}

#[test]
fn overrides_take_precedence() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("o");
    let done = analyze(
        &cfg,
        &Overrides {
            splits: Some(2),
            learners: Some(vec![hte_core::learner::LearnerKind::ElasticNet]),
            clan: Some(hte_core::inference::ClanMode::Off),
            out: Some(out.clone()),
            ..Overrides::default()
        },
    )
    .unwrap();
    let r = &done.results.outcomes[0].analysis;
    assert_eq!(r.spec.splits, 2);
    assert_eq!(r.learners.len(), 1);
    assert!(r.learners[0].clan.is_none());
    assert_eq!(fs::read_to_string(out.join("y/clan.csv")).unwrap().lines().count(), 1);
}

#[test]
fn config_error_leaves_no_artifacts() {
    let (dir, _) = setup("");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, config("").replace(r#"outcomes = ["y"]"#, r#"outcomes = ["income"]"#)).unwrap();
    let out = dir.path().join("out");
    let err = analyze(&cfg, &Overrides { out: Some(out.clone()), ..Overrides::default() }).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());
}

#[test]
fn cluster_variance_without_cluster_column_is_config_error() {
    let (dir, _) = setup("");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, config("").replace(r#"cluster = "cluster""#, r#"cluster = "ignore""#)).unwrap();
    let err = validate(&cfg, &Overrides::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn all_treated_is_data_error() {
    let (dir, cfg) = setup("");
    let data = dir.path().join("trial.csv");
    let text = fs::read_to_string(&data).unwrap();
    let mut lines = text.lines();
    let mut out = vec![lines.next().unwrap().to_string()];
    for l in lines {
        let mut f: Vec<&str> = l.split(',').collect();
        f[1] = "1";
        out.push(f.join(","));
    }
    fs::write(&data, out.join("\n")).unwrap();
    let target = dir.path().join("out");
    let err = validate(&cfg, &Overrides { out: Some(target.clone()), ..Overrides::default() }).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("overlap"));
    assert!(!target.exists());
}

#[test]
fn validate_writes_balance_only() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("v");
    let (report, written) = validate(&cfg, &Overrides { out: Some(out.clone()), ..Overrides::default() }).unwrap();
    assert_eq!(written, vec![out.join("y/balance.csv")]);
    assert_eq!(report[0].n_obs, 1200);
    assert_eq!(report[0].balance.len(), 4);
}

#[test]
fn simulate_writes_truth_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("dgp.toml");
    fs::write(&spec, "n = 1000\n[cate]\nkind = \"constant\"\nvalue = 0.7\n").unwrap();
    let (data, truth) = simulate(&spec, &dir.path().join("sim.csv")).unwrap();
    assert_eq!(truth, dir.path().join("sim.truth.json"));
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 1001);
    let t: Truth = serde_json::from_str(&fs::read_to_string(&truth).unwrap()).unwrap();
    assert_eq!(t.ate, 0.7);
    assert_eq!(t.s0.len(), 1000);
    let first = fs::read(&data).unwrap();
    simulate(&spec, &dir.path().join("sim.csv")).unwrap();
    assert_eq!(first, fs::read(&data).unwrap());
}
