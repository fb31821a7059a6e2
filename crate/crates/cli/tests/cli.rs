use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pdeeg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdeeg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn pdeeg")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(
        &p,
        r#"seed = 11

[output]
dir = "out"

[harmonize]
bootstrap_B = 5

[select]
m = 20

[models]
kinds = ["logreg", "knn"]

[eval]
n_boot = 10

[synth]
n_centers = 2
subjects_per_center_per_class = 5
epochs_per_subject = 6
"#,
    )
    .unwrap();
    p
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_manifest_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = pdeeg(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "input.manifest=\"/nonexistent/manifest.csv\"",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let out = pdeeg(&["pipeline", "--set", "select.mm=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("select.mm"));
}

#[test]
fn unreadable_features_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "nonsense\n1,2\n").unwrap();
    let out = pdeeg(&["select", "--features", bad.to_str().unwrap(), "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn standalone_stages_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let c = cfg.to_str().unwrap();
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();

    ok(&pdeeg(&["synth", "--config", c, "--out", &p("data")]));
    ok(&pdeeg(&["extract", "--config", c, "--manifest", &p("data/manifest.csv"), "--out", &p("features.csv")]));
    ok(&pdeeg(&[
        "harmonize", "--config", c, "--features", &p("features.csv"), "--out", &p("harmonized.csv"),
        "--model-out", &p("combat.json"),
    ]));
    ok(&pdeeg(&[
        "harmonize", "--config", c, "--features", &p("features.csv"), "--out", &p("reapplied.csv"),
        "--apply", &p("combat.json"),
    ]));
    assert_eq!(
        std::fs::read(d.join("harmonized.csv")).unwrap(),
        std::fs::read(d.join("reapplied.csv")).unwrap()
    );
    ok(&pdeeg(&["select", "--config", c, "--features", &p("harmonized.csv"), "--out", &p("mask.json")]));
    ok(&pdeeg(&[
        "train", "--config", c, "--features", &p("harmonized.csv"), "--mask", &p("mask.json"), "--model", "svm",
        "--out", &p("model.json"),
    ]));
    let out = pdeeg(&[
        "evaluate", "--config", c, "--features", &p("harmonized.csv"), "--model", &p("model.json"), "--out",
        &p("report.csv"),
    ]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Accuracy"));
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(report.lines().next().unwrap().starts_with("scope"));
    assert!(d.join("report.txt").is_file());
}

#[test]
fn pipeline_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let c = cfg.to_str().unwrap();
    let data = d.join("data");
    ok(&pdeeg(&["synth", "--config", c, "--out", data.to_str().unwrap()]));
    let manifest = format!("input.manifest=\"{}\"", data.join("manifest.csv").display());
    let out_dir = format!("output.dir=\"{}\"", d.join("out").display());
    let out = pdeeg(&[
        "pipeline", "--config", c, "--set", &manifest, "--set", &out_dir, "--set", "run_id=\"r1\"", "--threads", "2",
    ]);
    ok(&out);
    let run = d.join("out/r1");
    for f in ["features.csv", "masks.json", "cv_result.json", "eval_report.csv", "run.log"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("run.log")).unwrap();
    assert!(!log.contains("disjoint = false"));
}
