use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hte(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hte"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HTE_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

const ANALYSIS: &str = r#"
data = "trial.csv"
outcomes = ["y"]
learners = ["en", "rf"]
splits = 3
seed = 4
[schema.columns]
y = "outcome"
d = "treatment"
z1 = "covariate"
z2 = "covariate"
z3 = "covariate"
[random_forest]
trees = 30
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("dgp.toml"), "n = 600\np = 3\nseed = 2\n").unwrap();
    let out = hte(&["simulate", "--config", "dgp.toml", "--out", "trial.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(dir.path().join("analysis.toml"), ANALYSIS).unwrap();
    dir
}

#[test]
fn simulate_writes_rows_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("dgp.toml"), "n = 1000\n").unwrap();
    let out = hte(&["simulate", "--config", "dgp.toml", "--out", "a.csv"], dir.path());
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("a.csv")).unwrap().lines().count(), 1001);
    assert!(dir.path().join("a.truth.json").is_file());
    hte(&["simulate", "--config", "dgp.toml", "--out", "b.csv"], dir.path());
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
}

#[test]
fn analyze_twice_gives_identical_bytes() {
    let dir = workspace();
    for (out, threads) in [("one", "1"), ("two", "1"), ("three", "2")] {
        let o = hte(&["analyze", "--config", "analysis.toml", "--out", out, "--splits", "1", "--threads", threads], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["y/blp.csv", "y/gates.csv", "y/gates_plot.csv", "y/learner_comparison.csv", "results.json", "run_manifest.json"] {
        let a = fs::read(dir.path().join("one").join(name)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("two").join(name)).unwrap(), "{name}");
        assert_eq!(a, fs::read(dir.path().join("three").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn flags_override_config() {
    let dir = workspace();
    let o = hte(
        &["analyze", "--config", "analysis.toml", "--out", "o", "--ml", "en", "--alpha", "0.1", "--seed", "3", "--clan", "off"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let blp = fs::read_to_string(dir.path().join("o/y/blp.csv")).unwrap();
    assert!(blp.contains("80% CI"));
    assert!(!blp.contains("random-forest"));
    let manifest = fs::read_to_string(dir.path().join("o/run_manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"));
}

#[test]
fn output_directory_from_environment() {
    let dir = workspace();
    let o = Command::new(env!("CARGO_BIN_EXE_hte"))
        .args(["analyze", "--config", "analysis.toml", "--ml", "en"])
        .current_dir(dir.path())
        .env("HTE_OUTPUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("from-env/y/blp.csv").is_file());
}

#[test]
fn missing_outcome_exits_with_config_code() {
    let dir = workspace();
    fs::write(dir.path().join("bad.toml"), ANALYSIS.replace(r#"outcomes = ["y"]"#, r#"outcomes = ["profit"]"#)).unwrap();
    let o = hte(&["analyze", "--config", "bad.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
    assert_eq!(hte(&["analyze", "--config", "nope.toml"], dir.path()).status.code(), Some(2));
}

#[test]
fn all_treated_exits_with_data_code() {
    let dir = workspace();
    let text = fs::read_to_string(dir.path().join("trial.csv")).unwrap();
    let rewritten: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return l.to_string();
            }
            let mut f: Vec<&str> = l.split(',').collect();
            f[1] = "1";
            f.join(",")
        })
        .collect();
    fs::write(dir.path().join("trial.csv"), rewritten.join("\n")).unwrap();
    let o = hte(&["validate", "--config", "analysis.toml", "--out", "v"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("overlap"));
    assert_eq!(hte(&["analyze", "--config", "analysis.toml", "--out", "v"], dir.path()).status.code(), Some(3));
    assert!(!dir.path().join("v").exists());
}

#[test]
fn too_many_failed_splits_exits_with_estimation_code() {
    // a single treated unit leaves the auxiliary half without treated rows
    // on every split where it lands in the main half
    let dir = workspace();
    let text = fs::read_to_string(dir.path().join("trial.csv")).unwrap();
    let rewritten: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return l.to_string();
            }
            let mut f: Vec<&str> = l.split(',').collect();
            f[1] = if i == 1 { "1" } else { "0" };
            f.join(",")
        })
        .collect();
    fs::write(dir.path().join("trial.csv"), rewritten.join("\n")).unwrap();
    let o = hte(&["analyze", "--config", "analysis.toml", "--out", "f", "--splits", "10", "--ml", "en"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("f").exists());
}

#[test]
fn unknown_learner_is_rejected_by_the_parser() {
    let dir = workspace();
    let o = hte(&["analyze", "--config", "analysis.toml", "--ml", "svm"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("svm"));
}
