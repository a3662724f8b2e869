//! Drive the compiled binary through the step-by-step workflow: synth ->
//! annotate -> weaklabel -> split -> undersample -> featurize -> select ->
//! train -> predict -> baseline -> evaluate -> cv -> relabel, plus run.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_finegrain")
}

fn run_ok(args: &[&str]) -> Output {
    let output = Command::new(binary())
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed:\n{}\n{}",
        args,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn path_str(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

#[test]
fn step_by_step_workflow_reaches_an_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth_dir = d.join("synth");
    run_ok(&[
        "synth",
        "--n-articles",
        "220",
        "--n-labels",
        "3",
        "--miss-rate",
        "0.25",
        "--spurious-rate",
        "0.05",
        "--seed",
        "12",
        "--out-dir",
        &path_str(&synth_dir),
    ]);
    let thesaurus = synth_dir.join("thesaurus.json");
    let corpus = synth_dir.join("corpus.jsonl");
    let golden = synth_dir.join("golden.csv");
    assert!(thesaurus.exists() && corpus.exists() && golden.exists());

    let occurrences = d.join("occurrences.jsonl");
    run_ok(&[
        "annotate",
        "--thesaurus",
        &path_str(&thesaurus),
        "--corpus",
        &path_str(&corpus),
        "--granularity",
        "term",
        "--out",
        &path_str(&occurrences),
        "--dump-dictionary",
        &path_str(&d.join("dictionary.json")),
    ]);

    let weak_csv = d.join("weak.csv");
    let weak_json = d.join("weak.json");
    let targets = d.join("targets.txt");
    run_ok(&[
        "weaklabel",
        "--thesaurus",
        &path_str(&thesaurus),
        "--corpus",
        &path_str(&corpus),
        "--occurrences",
        &path_str(&occurrences),
        "--out-csv",
        &path_str(&weak_csv),
        "--out-json",
        &path_str(&weak_json),
        "--targets-out",
        &path_str(&targets),
    ]);
    let target_lines = std::fs::read_to_string(&targets).unwrap();
    assert_eq!(target_lines.lines().count(), 3);

    let splits = d.join("splits.json");
    run_ok(&[
        "split",
        "--thesaurus",
        &path_str(&thesaurus),
        "--corpus",
        &path_str(&corpus),
        "--weak",
        &path_str(&weak_json),
        "--ma1-n",
        "20",
        "--ma2-n",
        "20",
        "--seed",
        "5",
        "--out",
        &path_str(&splits),
    ]);

    let ws_und = d.join("ws_und.txt");
    run_ok(&[
        "undersample",
        "--thesaurus",
        &path_str(&thesaurus),
        "--weak",
        &path_str(&weak_json),
        "--splits",
        &path_str(&splits),
        "--target",
        "60",
        "--seed",
        "6",
        "--out",
        &path_str(&ws_und),
    ]);

    // Featurize the training articles and the MA1 hold-out.
    let splits_value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&splits).unwrap()).unwrap();
    let ma1: Vec<String> = splits_value["ma1"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let ma1_list = d.join("ma1.txt");
    std::fs::write(&ma1_list, ma1.join("\n") + "\n").unwrap();

    let features_dir = d.join("features");
    run_ok(&[
        "featurize",
        "--thesaurus",
        &path_str(&thesaurus),
        "--corpus",
        &path_str(&corpus),
        "--occurrences",
        &path_str(&occurrences),
        "--train-pmids",
        &path_str(&ws_und),
        "--out-dir",
        &path_str(&features_dir),
        "--extra",
        &path_str(&ma1_list),
    ]);
    let train_matrix = features_dir.join("train.json");
    let ma1_matrix = features_dir.join("ma1.json");
    assert!(train_matrix.exists() && ma1_matrix.exists());

    let selection = d.join("selection.json");
    run_ok(&[
        "select",
        "--thesaurus",
        &path_str(&thesaurus),
        "--matrix",
        &path_str(&train_matrix),
        "--weak",
        &path_str(&weak_json),
        "--targets",
        &path_str(&targets),
        "--method",
        "chi2",
        "--k",
        "30",
        "--out-selection",
        &path_str(&selection),
        "--out-report",
        &path_str(&d.join("selection_report.csv")),
    ]);
    let report = std::fs::read_to_string(d.join("selection_report.csv")).unwrap();
    assert!(report.starts_with("rank,kind,key"));

    let model = d.join("model.json");
    run_ok(&[
        "train",
        "--matrix",
        &path_str(&train_matrix),
        "--weak",
        &path_str(&weak_json),
        "--targets",
        &path_str(&targets),
        "--selection",
        &path_str(&selection),
        "--classifier",
        "log-reg",
        "--penalty",
        "l2",
        "--c",
        "0.3",
        "--seed",
        "9",
        "--out",
        &path_str(&model),
    ]);

    let pred = d.join("pred_ma1.csv");
    run_ok(&[
        "predict",
        "--model",
        &path_str(&model),
        "--matrix",
        &path_str(&ma1_matrix),
        "--selection",
        &path_str(&selection),
        "--out",
        &path_str(&pred),
    ]);

    let eval_csv = d.join("eval.csv");
    let output = run_ok(&[
        "evaluate",
        "--pred",
        &path_str(&pred),
        "--golden",
        &path_str(&golden),
        "--targets",
        &path_str(&targets),
        "--out-csv",
        &path_str(&eval_csv),
        "--out-json",
        &path_str(&d.join("eval.json")),
        "--with-kappa",
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("macro_f1"), "{stdout}");
    assert!(stdout.contains("macro_kappa"), "{stdout}");

    // A baseline over the same articles, evaluated the same way.
    let ma1_corpus = d.join("ma1_corpus.jsonl");
    let full: Vec<String> = std::fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    let keep: Vec<String> = full
        .into_iter()
        .filter(|line| ma1.iter().any(|pm| line.contains(&format!("\"pmid\":\"{pm}\""))))
        .collect();
    std::fs::write(&ma1_corpus, keep.join("\n") + "\n").unwrap();
    run_ok(&[
        "baseline",
        "--kind",
        "ws-labels",
        "--thesaurus",
        &path_str(&thesaurus),
        "--corpus",
        &path_str(&ma1_corpus),
        "--weak",
        &path_str(&weak_json),
        "--targets",
        &path_str(&targets),
        "--out",
        &path_str(&d.join("baseline_pred.csv")),
    ]);

    run_ok(&[
        "cv",
        "--matrix",
        &path_str(&train_matrix),
        "--weak",
        &path_str(&weak_json),
        "--targets",
        &path_str(&targets),
        "--k",
        "3",
        "--seed",
        "31",
        "--classifier",
        "log-reg",
        "--c",
        "1.0",
        "--train-seed",
        "32",
        "--out",
        &path_str(&d.join("cv.csv")),
    ]);
    let cv = std::fs::read_to_string(d.join("cv.csv")).unwrap();
    assert!(cv.lines().count() == 5, "3 folds + header + mean: {cv}");

    run_ok(&[
        "relabel",
        "--model",
        &path_str(&model),
        "--matrix",
        &path_str(&train_matrix),
        "--weak",
        &path_str(&weak_json),
        "--selection",
        &path_str(&selection),
        "--out-model",
        &path_str(&d.join("retrained.json")),
        "--out-relabeled",
        &path_str(&d.join("relabeled.csv")),
    ]);
    assert!(d.join("retrained.json").exists());
}

#[test]
fn run_command_executes_and_reports_cached_stages() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = serde_json::json!({
        "corpus": {"source": "synth", "spec": {
            "n_articles": 120, "labels": ["C-0"], "miss_rate": 0.2,
            "spurious_rate": 0.0, "seed": 77
        }},
        "occurrences": {"source": "builtin", "granularity": "term_level"},
        "split": {"ma1_n": 12, "ma2_n": 12, "seed": 1},
        "selector_grid": {"methods": ["chi2"], "k": [10]},
        "classifier_grid": {"classifiers": ["log_reg"], "c": [1.0]},
        "train_seed": 2,
        "baselines": [{"kind": "ws_labels"}],
        "output_dir": out_dir,
    });
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, config.to_string()).unwrap();

    let first = run_ok(&["run", "--config", &path_str(&config_path)]);
    assert!(String::from_utf8_lossy(&first.stdout).contains("(0 cached)"));
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("report.csv").exists());

    let second = run_ok(&["run", "--config", &path_str(&config_path)]);
    let stdout = String::from_utf8_lossy(&second.stdout);
    assert!(
        !stdout.contains("(0 cached)") && stdout.contains("cached"),
        "{stdout}"
    );
}

#[test]
fn invalid_config_exits_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, "{\"corpus\": 7}").unwrap();
    let output = Command::new(binary())
        .args(["run", "--config", &path_str(&config_path)])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error"), "{stderr}");
}

#[test]
fn import_command_round_trips_external_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth_dir = d.join("synth");
    run_ok(&[
        "synth",
        "--n-articles",
        "10",
        "--n-labels",
        "2",
        "--seed",
        "3",
        "--out-dir",
        &path_str(&synth_dir),
    ]);
    let raw = d.join("external.jsonl");
    std::fs::write(
        &raw,
        "{\"pmid\":\"S000001\",\"concept_id\":\"C-0\",\"matched_text\":\"x\"}\n",
    )
    .unwrap();
    let out = d.join("imported.jsonl");
    run_ok(&[
        "import",
        "--corpus",
        &path_str(&synth_dir.join("corpus.jsonl")),
        "--descriptor-id",
        "D-SYN",
        "--occurrences",
        &path_str(&raw),
        "--out",
        &path_str(&out),
    ]);
    let imported = std::fs::read_to_string(&out).unwrap();
    assert!(imported.contains("\"source\":\"imported\""));

    // Unknown pmid: nonzero exit naming the line.
    std::fs::write(&raw, "{\"pmid\":\"nope\",\"concept_id\":\"C-0\"}\n").unwrap();
    let output = Command::new(binary())
        .args([
            "import",
            "--corpus",
            &path_str(&synth_dir.join("corpus.jsonl")),
            "--descriptor-id",
            "D-SYN",
            "--occurrences",
            &path_str(&raw),
            "--out",
            &path_str(&out),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("nope") && stderr.contains("line 1"), "{stderr}");
}

#[allow(dead_code)]
fn unused(_: PathBuf) {}
