//! End-to-end pipeline tests: directional comparisons on a frozen
//! synthetic graph, protocol coverage, and byte-level determinism of the
//! command-line interface.

use std::fs;
use std::path::Path;
use std::process::Command;

use lte4g::config::{ExperimentConfig, Method, ProtocolKind};
use lte4g::experiment::{run_experiment, seed_dir};
use lte4g::graph::io::save_dataset;
use lte4g::graph::sbm_generate;

/// A block-model graph with two majority and one minority class, hard
/// enough that plain training visibly underserves the tail.
fn hard_dataset(dir: &Path) {
    let g = sbm_generate(4, &[100, 100, 40], 0.12, 0.03, 1.5).unwrap();
    save_dataset(&g, dir).unwrap();
}

fn hard_config(dataset: &Path, out: &Path, method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = dataset.to_path_buf();
    cfg.out = out.to_path_buf();
    cfg.method = method;
    cfg.protocol.imb_ratio = 0.1;
    cfg.protocol.imb_classes = 2;
    cfg.protocol.train_quota = 8;
    cfg.protocol.val_quota = 5;
    cfg.protocol.test_quota = 15;
    cfg.train.hidden = 16;
    cfg.train.max_epochs = 150;
    cfg.train.patience = 150;
    cfg.seeds = vec![0, 1, 2];
    cfg
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

#[test]
fn full_pipeline_beats_plain_training_on_an_imbalanced_toy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    hard_dataset(&data);

    let origin = run_experiment(&hard_config(&data, &tmp.path().join("origin"), Method::Origin))
        .unwrap();
    let full = run_experiment(&hard_config(&data, &tmp.path().join("full"), Method::Lte4g))
        .unwrap();

    let origin_bacc = median(
        origin
            .per_seed
            .iter()
            .map(|r| r.balanced_accuracy)
            .collect(),
    );
    let full_bacc = median(full.per_seed.iter().map(|r| r.balanced_accuracy).collect());
    assert!(
        full_bacc >= origin_bacc + 0.05,
        "expected a clear balanced-accuracy gap, got {origin_bacc} -> {full_bacc}"
    );

    // Structural guarantees of the routed pipeline, per seed.
    for row in &full.per_seed {
        let routing = row.routing_accuracy.expect("full pipeline routes");
        assert!(routing >= 0.9, "seed {}: routing {routing}", row.seed);
        assert!(
            row.accuracy <= routing + 1e-12,
            "seed {}: accuracy {} above routing accuracy {routing}",
            row.seed,
            row.accuracy
        );
    }
}

#[test]
fn distillation_toggle_swaps_students_for_expert_routing() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    hard_dataset(&data);

    let mut on = hard_config(&data, &tmp.path().join("on"), Method::Lte4g);
    on.seeds = vec![0];
    let mut off = on.clone();
    off.out = tmp.path().join("off");
    off.distill = false;

    let with_students = run_experiment(&on).unwrap();
    let expert_only = run_experiment(&off).unwrap();

    // Same routing either way: the toggle changes who answers, not where
    // nodes go.
    assert_eq!(
        with_students.per_seed[0].routing_accuracy,
        expert_only.per_seed[0].routing_accuracy
    );

    let on_bundle = fs::read_to_string(seed_dir(&on.out, 0).join("bundle.json")).unwrap();
    let off_bundle = fs::read_to_string(seed_dir(&off.out, 0).join("bundle.json")).unwrap();
    assert!(on_bundle.contains("\"student_head\""));
    assert!(!off_bundle.contains("\"student_head\""));

    let on_events = fs::read_to_string(seed_dir(&on.out, 0).join("events.jsonl")).unwrap();
    let off_events = fs::read_to_string(seed_dir(&off.out, 0).join("events.jsonl")).unwrap();
    assert!(on_events.contains("\"stage\":\"students\""));
    assert!(!off_events.contains("\"stage\":\"students\""));
}

#[test]
fn every_protocol_drives_the_orchestrator() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    hard_dataset(&data);

    for (kind, name) in [
        (ProtocolKind::Manual, "manual"),
        (ProtocolKind::Longtail, "longtail"),
        (ProtocolKind::Natural, "natural"),
    ] {
        let mut cfg = hard_config(&data, &tmp.path().join(name), Method::Origin);
        cfg.protocol.kind = kind;
        cfg.seeds = vec![0];
        cfg.train.max_epochs = 60;
        cfg.train.patience = 60;
        let summary =
            run_experiment(&cfg).unwrap_or_else(|e| panic!("{name} protocol failed: {e}"));
        assert_eq!(summary.per_seed.len(), 1, "{name}");
        assert!(
            summary.aggregate["balanced_accuracy"].mean > 1.0 / 3.0,
            "{name}: no better than chance"
        );
        let manifest = fs::read_to_string(seed_dir(&cfg.out, 0).join("manifest.json")).unwrap();
        assert!(manifest.contains(&format!("\"kind\": \"{name}\"")), "{name}");
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lte4g"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Shared flags for a small, fast full-pipeline run.
fn small_run_flags(cmd: &mut Command, data: &Path, out: &Path, seeds: &str) {
    cmd.args(["--method", "lte4g", "--protocol", "manual"])
        .args(["--imb-ratio", "0.25", "--imb-classes", "1"])
        .args(["--train-quota", "8", "--val-quota", "5", "--test-quota", "10"])
        .args(["--hidden", "16", "--max-epochs", "60", "--patience", "60"])
        .args(["--seeds", seeds])
        .arg("--dataset")
        .arg(data)
        .arg("--out")
        .arg(out);
}

fn generate_small(data: &Path) {
    let mut cmd = bin();
    cmd.args(["generate", "--sizes", "40,40,40", "--seed", "9"])
        .args(["--p-in", "0.18", "--p-out", "0.01", "--feature-shift", "3.0"])
        .arg("--out")
        .arg(data);
    run_ok(&mut cmd);
}

#[test]
fn cli_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    generate_small(&data);

    let mut first = bin();
    first.arg("run");
    small_run_flags(&mut first, &data, &out, "0");
    let stdout_a = run_ok(&mut first);

    let artifacts = [
        out.join("summary.json"),
        out.join("summary.csv"),
        seed_dir(&out, 0).join("metrics.json"),
        seed_dir(&out, 0).join("bundle.json"),
        seed_dir(&out, 0).join("predictions.tsv"),
        seed_dir(&out, 0).join("events.jsonl"),
    ];
    let before: Vec<Vec<u8>> = artifacts.iter().map(|p| fs::read(p).unwrap()).collect();

    let mut second = bin();
    second.arg("run");
    small_run_flags(&mut second, &data, &out, "0");
    let stdout_b = run_ok(&mut second);

    assert_eq!(stdout_a, stdout_b);
    for (path, old) in artifacts.iter().zip(&before) {
        let new = fs::read(path).unwrap();
        assert_eq!(&new, old, "{} changed between reruns", path.display());
    }
}

#[test]
fn cli_staged_commands_reproduce_the_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate_small(&data);

    let single = tmp.path().join("single");
    let mut run = bin();
    run.arg("run");
    small_run_flags(&mut run, &data, &single, "0");
    run_ok(&mut run);

    let staged = tmp.path().join("staged");
    for stage in ["prepare", "train", "infer", "eval"] {
        let mut cmd = bin();
        cmd.arg(stage);
        small_run_flags(&mut cmd, &data, &staged, "0");
        run_ok(&mut cmd);
    }

    for file in ["metrics.json", "predictions.tsv", "bundle.json"] {
        assert_eq!(
            fs::read(seed_dir(&single, 0).join(file)).unwrap(),
            fs::read(seed_dir(&staged, 0).join(file)).unwrap(),
            "{file} differs between staged and single runs"
        );
    }
    assert_eq!(
        fs::read(single.join("summary.json")).unwrap(),
        fs::read(staged.join("summary.json")).unwrap()
    );

    // Re-aggregation alone reproduces the summary too.
    let mut report = bin();
    report.arg("report");
    small_run_flags(&mut report, &data, &staged, "0");
    run_ok(&mut report);
    assert_eq!(
        fs::read(single.join("summary.json")).unwrap(),
        fs::read(staged.join("summary.json")).unwrap()
    );
}

#[test]
fn cli_converts_citation_files_into_a_runnable_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let content_path = tmp.path().join("toy.content");
    let cites_path = tmp.path().join("toy.cites");

    // Three classes of eight papers; features nearly one-hot by class,
    // citations mostly within a class.
    let classes = ["ml", "theory", "systems"];
    let mut content = String::new();
    let mut cites = String::new();
    for c in 0..3usize {
        for i in 0..8usize {
            let id = format!("p{}_{i}", classes[c]);
            let feats: Vec<String> = (0..3)
                .map(|j| if j == c { "1".to_string() } else { "0".to_string() })
                .collect();
            content.push_str(&format!("{id}\t{}\t{}\n", feats.join("\t"), classes[c]));
            if i > 0 {
                cites.push_str(&format!("p{}_{}\tp{}_{}\n", classes[c], i - 1, classes[c], i));
            }
        }
    }
    cites.push_str("pml_0\tptheory_0\npghost_1\tpml_3\n");
    fs::write(&content_path, content).unwrap();
    fs::write(&cites_path, cites).unwrap();

    let data = tmp.path().join("data");
    let mut convert = bin();
    convert
        .arg("convert")
        .arg("--content")
        .arg(&content_path)
        .arg("--cites")
        .arg(&cites_path)
        .arg("--out")
        .arg(&data);
    let stdout = run_ok(&mut convert);
    assert!(stdout.contains("converted 24 nodes"), "{stdout}");
    assert!(stdout.contains("dropped 1 of"), "{stdout}");

    let out = tmp.path().join("out");
    let mut run = bin();
    run.arg("run")
        .args(["--method", "origin", "--protocol", "manual"])
        .args(["--imb-ratio", "0.5", "--imb-classes", "1"])
        .args(["--train-quota", "2", "--val-quota", "1", "--test-quota", "2"])
        .args(["--hidden", "8", "--max-epochs", "40", "--patience", "40"])
        .args(["--seeds", "0"])
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&out);
    run_ok(&mut run);
    assert!(seed_dir(&out, 0).join("metrics.json").exists());
}

#[test]
fn cli_rejects_bad_flags_with_a_clear_error() {
    let mut cmd = bin();
    cmd.args(["run", "--dataset", "nowhere", "--method", "telepathy"]);
    let output = cmd.output().expect("binary runs");
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown method"), "{stderr}");

    let mut missing = bin();
    missing.args(["run", "--method", "origin"]);
    let output = missing.output().expect("binary runs");
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("no dataset directory"), "{stderr}");
}
