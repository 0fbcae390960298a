use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ddn::checkpoint::Checkpoint;

fn ddn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddn"))
        .args(args)
        .env_remove("DDN_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ddn(args);
    assert!(
        out.status.success(),
        "ddn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_ring(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("ring.csv");
    ok(&["generate", "--task", "elastic_ring", "--n", "120", "--seed", "7", "--out", p(&data)]);
    data
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        ok(&["generate", "--task", "elastic_ring", "--n", "2000", "--seed", "7", "--out", p(out)]);
    }
    let text = fs::read(&a).unwrap();
    assert_eq!(text, fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 2001);
    assert!(dir.path().join("a.csv.manifest.json").is_file());
}

#[test]
fn unknown_task_lists_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let out = ddn(&["generate", "--task", "spiral", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for t in ["squares", "half_gaussian", "gaussian_stick", "elastic_ring"] {
        assert!(err.contains(t), "{err}");
    }
}

#[test]
fn metrics_columns_and_bins() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_ring(dir.path());
    let ddn_dir = dir.path().join("ddn");
    ok(&["train", "--data", p(&data), "--out", p(&ddn_dir), "--variant", "ddn", "--beta", "0.1", "--epochs", "2"]);
    let header = fs::read_to_string(ddn_dir.join("metrics.tsv")).unwrap();
    assert!(header.starts_with("epoch\tnll\tkl\ttotal\tseconds\n"));

    let mlp_dir = dir.path().join("mlp");
    ok(&["train", "--data", p(&data), "--out", p(&mlp_dir), "--variant", "mlp", "--epochs", "2", "--bins", "64"]);
    let header = fs::read_to_string(mlp_dir.join("metrics.tsv")).unwrap();
    assert!(header.starts_with("epoch\tnll\ttotal\tseconds\n"));
    let ck = Checkpoint::load(&mlp_dir.join("model.ddn")).unwrap();
    assert_eq!(ck.model.config().bins, 64);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(mlp_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["bins"], "64");
}

#[test]
fn config_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_ring(dir.path());
    let out = p(&dir.path().join("o")).to_string();
    for extra in [&["--beta", "-0.5"][..], &["--bins", "100"], &["--batch-size", "1"], &["--range", "3:1"]] {
        let mut args = vec!["train", "--data", p(&data), "--out", &out, "--epochs", "1"];
        args.extend_from_slice(extra);
        assert_eq!(ddn(&args).status.code(), Some(2), "{extra:?}");
    }
}

#[test]
fn toy_eval_writes_grids_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_ring(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--data", p(&data), "--out", p(&run), "--epochs", "1", "--bins", "64"]);
    let mut reports = Vec::new();
    for name in ["e1", "e2"] {
        let out = dir.path().join(name);
        let stdout = ok(&["eval", "--checkpoint", p(&run), "--out", p(&out), "--grid", "--test-n", "200"]);
        assert!(stdout.contains("mean SSE"));
        let grids: Vec<_> = fs::read_dir(out.join("grids"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.starts_with("grid-"))
            .collect();
        assert_eq!(grids.len(), 4);
        reports.push(fs::read(out.join("report.tsv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn target_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_ring(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--data", p(&data), "--out", p(&run), "--epochs", "1", "--bins", "64"]);
    let one = dir.path().join("one.csv");
    fs::write(&one, "x0,y0\n0.1,0.5\n0.2,-0.5\n").unwrap();
    let out = ddn(&["eval", "--checkpoint", p(&run), "--data", p(&one), "--out", p(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("targets"));
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("model.ddn");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let out = ddn(&["eval", "--checkpoint", p(&bad), "--task", "squares", "--out", p(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn missing_external_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = ddn(&[
        "reproduce",
        "uci-fish",
        "--out",
        p(&dir.path().join("r")),
        "--data-dir",
        p(&dir.path().join("nowhere")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere") && err.contains("fish.csv"), "{err}");
}

fn table(path: &Path) {
    let mut s = String::from("a,b,c,target\n");
    for i in 0..80 {
        let v = i as f64 / 10.0;
        s.push_str(&format!("{v},{},{},{}\n", (v * 1.3).sin(), v * v * 0.1, v + (v * 2.1).cos()));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn tabular_trials_report_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("tab.csv");
    table(&t);
    let run = dir.path().join("run");
    ok(&[
        "train", "--table", p(&t), "--targets", "target", "--trials", "2", "--epochs", "2", "--bins", "64", "--batch-size",
        "16", "--out", p(&run),
    ]);
    assert!(run.join("trial-1").join("model.ddn").is_file());
    let stdout = ok(&["eval", "--checkpoint", p(&run), "--out", p(&dir.path().join("e"))]);
    assert!(stdout.contains("±") && stdout.contains("2 trial(s)"), "{stdout}");
}

#[test]
fn uci_recipe_uses_last_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    fs::create_dir_all(&data_dir).unwrap();
    // headerless, semicolon separated, like the distributed file
    let mut s = String::new();
    for i in 0..60 {
        let v = i as f64 / 7.0;
        s.push_str(&format!("{v};{};{};{};{};{};{}\n", v.sin(), v.cos(), v * 0.3, (v * 0.5).sin(), v * v * 0.01, v + v.sin()));
    }
    fs::write(data_dir.join("fish.csv"), s).unwrap();
    let out = dir.path().join("r");
    let stdout = ok(&[
        "reproduce", "uci-fish", "--out", p(&out), "--data-dir", p(&data_dir), "--trials", "2", "--epochs", "1", "--bins",
        "64",
    ]);
    assert!(stdout.contains("±"), "{stdout}");
    let table = fs::read_to_string(out.join("table.tsv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("fish\tddn\t0.1\t"));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"targets\": \"6\""));
}

#[test]
fn ablation_recipe_compares_all_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    ok(&[
        "reproduce", "ablation-ring", "--out", p(&out), "--epochs", "1", "--n", "64", "--test-n", "64", "--bins", "64",
    ]);
    let table = fs::read_to_string(out.join("table.tsv")).unwrap();
    let variants: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(variants, vec!["ddn", "ddn_no_vl", "mlp", "mlp_vl"]);
}

#[test]
fn beta_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&["reproduce", "beta-sweep", "--out", p(&out), "--epochs", "1", "--n", "64", "--test-n", "64", "--bins", "64"]);
    let table = fs::read_to_string(out.join("table.tsv")).unwrap();
    let betas: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').nth(2).unwrap()).collect();
    assert_eq!(betas, vec!["0.5", "0.1", "0.02"]);
    assert!(table.starts_with("task\tvariant\tbeta\tseeds\tmedian_mean_sse\tmedian_test_ll\tmedian_entropy\n"));
}

#[test]
fn replaying_a_manifest_reproduces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_ring(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--data", p(&data), "--out", p(&run), "--epochs", "2", "--bins", "64", "--seed", "3", "--no-time"]);
    let model = fs::read(run.join("model.ddn")).unwrap();
    let metrics = fs::read(run.join("metrics.tsv")).unwrap();
    let saved = dir.path().join("saved.json");
    fs::copy(run.join("manifest.json"), &saved).unwrap();
    fs::remove_dir_all(&run).unwrap();
    ok(&["replay", p(&saved)]);
    assert_eq!(fs::read(run.join("model.ddn")).unwrap(), model);
    assert_eq!(fs::read(run.join("metrics.tsv")).unwrap(), metrics);
}
