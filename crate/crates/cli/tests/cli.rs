use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cepc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cepc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = cepc(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small benchmark plus a fast config in a fresh directory.
fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("spec.json"),
        r#"{"domains":[{},{"shift":1.0,"rotation":0.3},{"adversarial":true},{"shift":0.5}],
            "docs_per_domain":200,"dim":6,"seed":3}"#,
    )
    .unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"train":{"epochs":1},"coordination":{"repeats":2}}"#).unwrap();
    ok(&["gen-synth", "--spec", "spec.json", "--out", "data"], dir.path());
    let manifest = dir.path().join("data/manifest.json");
    (dir, manifest)
}

#[test]
fn end_to_end_flow() {
    let (dir, _) = setup();
    let d = dir.path();
    let exp = ["--manifest", "data/manifest.json", "--config", "cfg.json"];
    ok(&[&["coordinate"][..], &exp, &["--out", "plan.json"]].concat(), d);
    ok(&[&["train"][..], &exp, &["--plan", "plan.json", "--out", "run"]].concat(), d);
    for f in ["model.ckpt", "reliability.csv", "trace.csv", "plan.json", "predictions.csv", "metrics.json"] {
        assert!(d.join("run").join(f).exists(), "missing {f}");
    }

    ok(&["predict", "--model", "run/model.ckpt", "--target", "data/domain3.bin", "--out", "preds.csv"], d);
    assert_eq!(fs::read(d.join("preds.csv")).unwrap(), fs::read(d.join("run/predictions.csv")).unwrap());
    let scored = ok(&["eval", "--gold", "data/domain3.gold.bin", "--pred", "preds.csv"], d);
    assert_eq!(scored, fs::read_to_string(d.join("run/metrics.json")).unwrap());

    ok(
        &[&["train"][..], &exp, &["--plan", "plan.json", "--reliability", "run/reliability.csv", "--out", "again"]].concat(),
        d,
    );
    assert_eq!(fs::read(d.join("run/model.ckpt")).unwrap(), fs::read(d.join("again/model.ckpt")).unwrap());
}

#[test]
fn bench_reports_are_byte_identical() {
    let (dir, _) = setup();
    let d = dir.path();
    let bench = |out: &str, seed: &str| {
        ok(
            &[
                "bench", "--manifest", "data/manifest.json", "--config", "cfg.json", "--seeds", "1", "--baselines",
                "--ablations", "--seed", seed, "--out", out,
            ],
            d,
        )
    };
    let table = bench("a", "4");
    bench("b", "4");
    let a = fs::read(d.join("a/report.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b/report.json")).unwrap());
    assert_eq!(table, fs::read_to_string(d.join("a/report.txt")).unwrap());
    for row in ["cepc", "source-combined", "meta-target", "fixed-lambda:0.001", "ablation:w/o-paired"] {
        assert!(table.contains(row), "table lacks {row}");
    }

    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["seeds"], serde_json::json!([4]));
    bench("c", "5");
    let other: serde_json::Value = serde_json::from_slice(&fs::read(d.join("c/report.json")).unwrap()).unwrap();
    assert_eq!(other["seeds"], serde_json::json!([5]));
}

#[test]
fn exit_codes() {
    let (dir, _) = setup();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{"train":{"batch_size":3}}"#).unwrap();
    fs::write(d.join("unknown.json"), r#"{"trian":{}}"#).unwrap();
    let code = |args: &[&str]| cepc(args, d).status.code().unwrap();

    assert_eq!(code(&["coordinate", "--manifest", "data/manifest.json", "--config", "bad.json", "--out", "p.json"]), 2);
    assert_eq!(code(&["coordinate", "--manifest", "data/manifest.json", "--config", "unknown.json", "--out", "p.json"]), 2);
    assert_eq!(
        code(&["coordinate", "--manifest", "data/manifest.json", "--target", "nope", "--out", "p.json"]),
        2
    );
    assert_eq!(code(&["eval", "--gold", "missing.bin", "--pred", "p.csv"]), 1);
    assert_eq!(code(&["predict", "--model", "data/domain0.bin", "--target", "data/domain3.bin", "--out", "x.csv"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
}
