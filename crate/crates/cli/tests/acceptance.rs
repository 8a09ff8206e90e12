//! CLI acceptance: byte-identical seeded training on the bundled sample and
//! the ranked-search output format.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

fn bnb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bnb"))
}

fn sample_listings() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_listings.csv")
}

fn run_ok(args: &[&str]) -> String {
    let output = bnb().args(args).output().expect("spawn bnb");
    assert!(
        output.status.success(),
        "bnb {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).expect("utf8 stdout")
}

fn report_without_timestamp(path: &Path) -> serde_json::Value {
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    value["meta"]["generated_at"] = serde_json::Value::Null;
    value
}

#[test]
fn acceptance_10_train_is_byte_identical_and_fast() {
    let listings = sample_listings();
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    let started = Instant::now();
    run_ok(&[
        "train",
        "--listings",
        listings.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    let first_run = started.elapsed();
    assert!(
        first_run.as_secs_f64() < 30.0,
        "full sample train took {first_run:?}, limit 30 s"
    );

    run_ok(&[
        "train",
        "--listings",
        listings.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "7",
    ]);

    let model_a = std::fs::read(out_a.join("price_model.json")).unwrap();
    let model_b = std::fs::read(out_b.join("price_model.json")).unwrap();
    assert_eq!(model_a, model_b, "model artifacts must be byte-identical");

    assert_eq!(
        report_without_timestamp(&out_a.join("report.json")),
        report_without_timestamp(&out_b.join("report.json")),
        "reports must match once the timestamp field is excluded"
    );

    // figure CSVs carry no timestamp at all, so they compare as raw bytes
    for name in [
        "search_trials.csv",
        "final_error_buckets.csv",
        "feature_importances.csv",
        "baseline_error_buckets.csv",
    ] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    println!(
        "ACCEPTANCE 10 seeded train byte-identical, completed in {:.1} s: PASS",
        first_run.as_secs_f64()
    );
}

#[test]
fn acceptance_11_tune_emits_ranked_blocks_with_grid_parameters() {
    let listings = sample_listings();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tune");

    let stdout = run_ok(&[
        "tune",
        "--listings",
        listings.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
        "--n-iter",
        "5",
    ]);

    // the ranked block layout:
    //   Model with rank: k
    //   Mean validation score: x.xxx (std: y.yyy)
    //   Parameters: {'n_estimators': ...}
    for rank in 1..=3 {
        assert!(
            stdout.contains(&format!("Model with rank: {rank}\n")),
            "missing rank {rank} block in:\n{stdout}"
        );
    }
    let lines: Vec<&str> = stdout.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.starts_with("Model with rank:") {
            let score = lines[i + 1];
            assert!(
                score.starts_with("Mean validation score: ") && score.contains(" (std: "),
                "bad score line: {score}"
            );
            let params = lines[i + 2];
            assert!(
                params.starts_with("Parameters: {'n_estimators': "),
                "bad params line: {params}"
            );
            for key in [
                "'min_samples_split': ",
                "'min_samples_leaf': ",
                "'max_features': '",
                "'max_depth': ",
                "'bootstrap': ",
            ] {
                assert!(params.contains(key), "params line missing {key}: {params}");
            }
        }
    }

    // every ranked trial's parameters lie in the stated grid
    let trials: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("search_ranked.json")).unwrap(),
    )
    .unwrap();
    let trials = trials.as_array().unwrap();
    assert_eq!(trials.len(), 5);
    for trial in trials {
        let p = &trial["params"];
        let n_estimators = p["n_estimators"].as_u64().unwrap();
        assert!((100..=200).contains(&n_estimators));
        assert!(["auto", "sqrt"]
            .contains(&p["max_features"].as_str().unwrap()));
        let depth = &p["max_depth"];
        assert!(
            depth.is_null() || (10..=20).contains(&depth.as_u64().unwrap()),
            "depth {depth:?}"
        );
        assert!([2, 5, 10].contains(&p["min_samples_split"].as_u64().unwrap()));
        assert!([1, 2, 4].contains(&p["min_samples_leaf"].as_u64().unwrap()));
        assert!(p["bootstrap"].is_boolean());
    }
    println!("ACCEPTANCE 11 ranked-block format and grid membership: PASS");
}
