use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use fcae_cli::output::read_trajectory;

const BIN: &str = env!("CARGO_BIN_EXE_fcae");

const SMALL_ARCH: &str = "type=conv filter_w=3 filter_h=3 stride_w=1 stride_h=1 feature_maps=20 l2=0.001\n\
type=pool kernel_w=2 kernel_h=2 stride_w=2 stride_h=2\n";

fn fcae(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .env("FCAE_DATA_DIR", Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
        .output()
        .expect("spawn fcae")
}

fn ok(args: &[&str]) -> String {
    let out = fcae(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn surrogate_search_is_quick_and_logs_every_generation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let started = Instant::now();
    let stdout = ok(&[
        "search",
        "--mode",
        "surrogate",
        "--set",
        "pso.population_size=8",
        "--set",
        "pso.generations=10",
        "--out",
        s(&out),
    ]);
    assert!(started.elapsed() < Duration::from_secs(5));
    assert!(stdout.starts_with("gbest_fitness = "), "{stdout}");
    let records = read_trajectory(&out.join("trajectory.jsonl")).unwrap();
    assert_eq!(records.len(), 10);
    assert!(records.iter().all(|r| r.particle_lengths.len() == 8));
    for f in ["config.resolved", "trajectory.csv", "trajectory.svg", "gbest.arch", "summary.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn missing_dataset_fails_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let status = Command::new(BIN)
        .args(["search", "--set", "pso.generations=1", "--out", s(&out)])
        .env("FCAE_DATA_DIR", tmp.path().join("nowhere"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("nowhere"));
    assert!(!out.exists());
}

#[test]
fn rerun_from_resolved_config_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let args = [
        "search",
        "--dataset",
        "synth:gradient",
        "--set",
        "data.synth_n=48",
        "--set",
        "data.synth_size=8",
        "--set",
        "pso.population_size=3",
        "--set",
        "pso.generations=2",
        "--set",
        "fitness.epochs=1",
        "--set",
        "genome.max_conv=2",
        "--set",
        "genome.feature_maps=20..22",
        "--seed",
        "5",
        "--jobs",
        "1",
    ];
    let mut first = args.to_vec();
    first.extend(["--out", s(&a)]);
    ok(&first);
    let mut again = args.to_vec();
    again.extend(["--out", s(&b)]);
    ok(&again);
    ok(&["search", "--config", s(&a.join("config.resolved")), "--jobs", "1", "--out", s(&c)]);
    for f in ["trajectory.jsonl", "trajectory.csv", "evaluations.csv", "gbest.arch", "config.resolved"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, std::fs::read(c.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ablation_reports_twenty_matched_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abl");
    ok(&["ablate-velocity", "--mode", "surrogate", "--seed", "3", "--out", s(&out)]);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..3], ["seed", "x_reference", "gbest_reference"]);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 20);
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (3 + k).to_string());
        assert!(r[1].parse::<f64>().is_ok() && r[2].parse::<f64>().is_ok(), "{r:?}");
        assert!(out.join(format!("x_reference/trajectory_seed{}.jsonl", 3 + k)).is_file());
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("median_x_reference") && summary.contains("median_gbest_reference"));
}

#[test]
fn selfcheck_passes_and_reports_tolerances() {
    let stdout = ok(&["selfcheck"]);
    assert!(stdout.contains("all") && stdout.contains("passed"), "{stdout}");
    assert!(stdout.lines().filter(|l| l.contains("observed") && l.contains("allowed")).count() >= 5);
}

#[test]
fn injected_fault_is_caught_and_named() {
    let out = fcae(&["selfcheck", "--inject-fault", "decoder.deconv0"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let fails: Vec<&str> = stdout.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert!(!fails.is_empty(), "{stdout}");
    assert!(fails.iter().any(|l| l.contains("decoder.deconv0")), "{stdout}");

    let bad = fcae(&["selfcheck", "--inject-fault", "nope"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn deep_train_then_eval_on_synthetic_blobs() {
    let tmp = tempfile::tempdir().unwrap();
    let arch = tmp.path().join("a.arch");
    std::fs::write(&arch, SMALL_ARCH).unwrap();
    let out = tmp.path().join("deep");
    let common = [
        "--dataset",
        "synth:blobs",
        "--set",
        "data.synth_n=64",
        "--set",
        "data.synth_size=8",
        "--set",
        "trainer.epochs=3",
        "--set",
        "trainer.classifier_epochs=2",
        "--set",
        "trainer.fc_units=16",
        "--set",
        "trainer.runs=2",
    ];
    let mut args = vec!["deep-train", "--arch", s(&arch), "--out", s(&out)];
    args.extend(common);
    let stdout = ok(&args);
    assert!(stdout.contains("accuracy_mean"), "{stdout}");
    for f in ["block0.ckpt", "model.ckpt", "loss.csv", "metrics.txt", "config.resolved"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let loss = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 3);

    let ev = tmp.path().join("ev");
    let model = out.join("model.ckpt");
    let mut args = vec!["eval", "--checkpoint", s(&model), "--out", s(&ev)];
    args.extend(common);
    let text = ok(&args);
    let acc: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("accuracy = "))
        .expect("accuracy line")
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(ev.join("eval.txt").is_file());

    let block = out.join("block0.ckpt");
    let mut args = vec!["eval", "--checkpoint", s(&block), "--split", "train"];
    args.extend(common);
    assert!(ok(&args).contains("recon_error = "));
}

#[test]
fn two_stacked_blocks_and_no_more() {
    let tmp = tempfile::tempdir().unwrap();
    let arch = tmp.path().join("a.arch");
    std::fs::write(&arch, SMALL_ARCH).unwrap();
    let out = tmp.path().join("deep");
    let base = [
        "--dataset",
        "synth:gradient",
        "--set",
        "data.synth_n=32",
        "--set",
        "data.synth_size=8",
        "--set",
        "trainer.epochs=2",
        "--set",
        "trainer.classifier=none",
    ];
    let mut args = vec!["deep-train", "--arch", s(&arch), "--arch", s(&arch), "--out", s(&out)];
    args.extend(base);
    ok(&args);
    assert!(out.join("block0.ckpt").is_file() && out.join("block1.ckpt").is_file());
    let loss = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert!(loss.lines().any(|l| l.starts_with("1,")));

    let out3 = tmp.path().join("three");
    let mut args = vec!["deep-train", "--arch", s(&arch), "--arch", s(&arch), "--arch", s(&arch), "--out", s(&out3)];
    args.extend(base);
    assert_eq!(fcae(&args).status.code(), Some(2));
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let unknown = fcae(&["search", "--mode", "surrogate", "--set", "pso.swarm=3", "--out", s(&out)]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("pso.swarm"));

    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "run.mode = surrogate\npso.generations = many\n").unwrap();
    let bad = fcae(&["search", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));
    assert!(!out.exists());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# file values\nrun.mode = surrogate\nrun.seed = 1\npso.generations = 2\npso.population_size = 4\n").unwrap();
    let out = tmp.path().join("o");
    ok(&["search", "--config", s(&cfg), "--set", "pso.generations=3", "--seed", "9", "--out", s(&out)]);
    let resolved = std::fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("run.seed = 9\n"));
    assert!(resolved.contains("pso.generations = 3\n"));
    assert!(resolved.contains("pso.population_size = 4\n"));
    assert_eq!(read_trajectory(&out.join("trajectory.jsonl")).unwrap().len(), 3);
}
