use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use odis::jsonl;
use odis::pipeline::SELECTION_MANIFEST;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn odis(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odis"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = odis(out, args);
    assert!(
        o.status.success(),
        "odis {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("odis.toml");
    let text = format!(
        "paths.reference = {:?}\npaths.target = {:?}\nscorer.n_buckets = 65536\n{extra}",
        fixture("reference.jsonl"),
        fixture("reference.jsonl"),
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn mock_labeling_reproduces_fixture_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let mock = fixture("mock_replies.jsonl");
    ok(
        &out,
        &["label", "--config", cfg.to_str().unwrap(), "--mock-replies", mock.to_str().unwrap(), "--strict-mock"],
    );
    let got = jsonl::read_scores(&out.join("reference_scores.jsonl")).unwrap();
    let want = jsonl::read_scores(&fixture("reference_scores.jsonl")).unwrap();
    assert_eq!(got, want);
    assert_eq!(std::fs::read_to_string(out.join("label_failures.jsonl")).unwrap(), "");
    assert_eq!(
        std::fs::read_to_string(out.join("label_cache.jsonl")).unwrap().lines().count(),
        460 * 11
    );
}

#[test]
fn full_pipeline_on_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "selection.budget_tokens = 20000\n");
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("out");
    let mock = fixture("mock_replies.jsonl");
    ok(&out, &["label", "--config", cfg, "--mock-replies", mock.to_str().unwrap()]);
    ok(&out, &["fit-pca", "--config", cfg, "--k", "4"]);
    ok(&out, &["train-scorer", "--config", cfg]);
    ok(&out, &["score", "--config", cfg]);
    ok(&out, &["select", "--config", cfg]);
    ok(&out, &["report", "--config", cfg]);

    for f in [
        "pca_model.json",
        "scorer_k1.json",
        "scorer_k4.json",
        "scores_pc1.jsonl",
        "scores_pc4.jsonl",
        "selected.jsonl",
        "report/upset_cells.csv",
        "report/dimension_correlations.csv",
        "report/structure_loadings.csv",
        "report/score_distribution.csv",
        "manifests/select.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join(SELECTION_MANIFEST)).unwrap()).unwrap();
    let per_dim = manifest["per_dim_token_totals"].as_array().unwrap();
    let budgets = manifest["budgets"].as_array().unwrap();
    assert_eq!(per_dim.len(), 4);
    for (t, b) in per_dim.iter().zip(budgets) {
        assert!(t.as_u64().unwrap() <= b.as_u64().unwrap());
    }
    assert_eq!(budgets.iter().map(|b| b.as_u64().unwrap()).sum::<u64>(), 20000);
    let selected = jsonl::read_corpus(&out.join("selected.jsonl")).unwrap();
    assert_eq!(selected.len() as u64, manifest["union_doc_count"].as_u64().unwrap());
}

#[test]
fn score_without_scorers_names_the_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("paths.reference_scores = {:?}\n", fixture("reference_scores.jsonl")));
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("out");
    ok(&out, &["fit-pca", "--config", cfg]);
    let o = odis(&out, &["score", "--config", cfg]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("scorer_k1.json") && err.contains("train-scorer"), "{err}");
    assert!(!out.join("scores_pc1.jsonl").exists());
}

#[test]
fn changed_config_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("paths.reference_scores = {:?}\n", fixture("reference_scores.jsonl")));
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("out");
    ok(&out, &["fit-pca", "--config", cfg, "--k", "3"]);
    let o = odis(&out, &["fit-pca", "--config", cfg, "--k", "2"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    ok(&out, &["fit-pca", "--config", cfg, "--k", "2", "--force"]);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "pca.tua = 0.5\n");
    let o = odis(&tmp.path().join("out"), &["fit-pca", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid configuration"));
}

#[test]
fn strict_mock_records_missing_cells_as_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "labeling.max_attempts = 1\n");
    let partial = tmp.path().join("partial.jsonl");
    let text = std::fs::read_to_string(fixture("mock_replies.jsonl")).unwrap();
    // Drop every reply of the first document.
    let kept: String = text
        .lines()
        .filter(|l| !l.contains("\"ref-000000\""))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&partial, kept).unwrap();
    let out = tmp.path().join("out");
    ok(
        &out,
        &["label", "--config", cfg.to_str().unwrap(), "--mock-replies", partial.to_str().unwrap(), "--strict-mock"],
    );
    let failures = std::fs::read_to_string(out.join("label_failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), 1);
    assert!(failures.contains("ref-000000"));
    let scores = jsonl::read_scores(&out.join("reference_scores.jsonl")).unwrap();
    assert_eq!(scores.len(), 459);
}
