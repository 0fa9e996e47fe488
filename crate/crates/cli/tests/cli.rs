use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data")
}

fn lptgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lptgnn"))
        .args(args)
        .env_remove("LPTGNN_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn short_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "data_root = {:?}\n[data]\nsplit = \"subpopulation\"\ndataset = \"MUTAG\"\n[train]\nmax_epochs = 3\n\
         [model.topo.topology]\nresolution = 12\n",
        data_root().to_str().unwrap()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("JSON on stdout")
}

#[test]
fn missing_dataset_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[data]\nsplit = \"pair\"\nsource = \"COX2\"\ntarget = \"COX2_MD\"\n").unwrap();
    let root = dir.path().to_str().unwrap();
    let out = lptgnn(&["--data-root", root, "train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("COX2"));
}

#[test]
fn unknown_suite_is_a_configuration_error() {
    let out = lptgnn(&["reproduce", "--suite", "everything"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown suite"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    assert_eq!(lptgnn(&["train", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(lptgnn(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_twice_gives_identical_metrics_and_eval_replays_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    let mut results = Vec::new();
    for run in &runs {
        let out = lptgnn(&["train", "--config", cfg.to_str().unwrap(), "--seed", "2", "--out", run.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        results.push(json(&out.stdout));
    }
    assert_eq!(results[0], results[1]);
    assert_eq!(results[0]["seed"], 2);
    let metrics: Vec<Vec<u8>> = runs.iter().map(|r| std::fs::read(r.join("metrics.jsonl")).unwrap()).collect();
    assert_eq!(metrics[0], metrics[1]);
    assert_eq!(metrics[0].iter().filter(|&&b| b == b'\n').count(), 3);
    for file in ["manifest.json", "config.toml", "result.json", "checkpoint.json"] {
        assert!(runs[0].join(file).is_file(), "{file} missing");
    }

    let ckpt = runs[0].join("checkpoint.json");
    let out = lptgnn(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval = json(&out.stdout);
    assert_eq!(eval["accuracy"], results[0]["accuracy"]);

    // The whole dataset through the same checkpoint, named under the data root.
    let root = data_root();
    let out = lptgnn(&["--data-root", root.to_str().unwrap(), "eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", "MUTAG"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out.stdout)["graphs"], 188);
}

#[test]
fn inspect_topology_reports_one_h0_point_per_node() {
    let mutag = data_root().join("MUTAG");
    let out = lptgnn(&[
        "inspect-topology",
        "--dataset",
        mutag.to_str().unwrap(),
        "--index",
        "0",
        "--filtration",
        "degree",
        "--resolution",
        "8",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out.stdout);
    let nodes = report["nodes"].as_u64().unwrap();
    assert_eq!(nodes, 17);
    let diagram = report["blocks"][0]["diagram"].as_array().unwrap();
    assert_eq!(diagram.len() as u64, nodes);
    assert!(diagram.iter().all(|p| p[2] == 0.0));
    assert_eq!(report["blocks"][0]["images"][0]["pixels"].as_array().unwrap().len(), 8);
}

#[test]
fn inspect_topology_rejects_out_of_range_index() {
    let mutag = data_root().join("MUTAG");
    let out = lptgnn(&["inspect-topology", "--dataset", mutag.to_str().unwrap(), "--index", "5000"]);
    assert_eq!(out.status.code(), Some(2));
}
