use std::path::Path;
use std::process::Command;

use polycomp::format::{load_checkpoint, load_dataset};
use polycomp::pipeline::{FinetuneFile, MergedReport, RecoveryFile};

fn polycomp(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_polycomp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("POLYCOMP_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = polycomp(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const SMALL: &[&str] = &[
    "--set", "preset=small",
    "--set", "dataset.pool_size=120",
    "--set", "compressor.epochs=2",
    "--set", "compressor.states_per_step=50",
    "--set", "compressor.validation_states=100",
    "--set", "eval.episodes=1",
    "--set", "pgpe.generations=3",
];

fn with(cmd: &str, extra: &[&'static str]) -> Vec<&'static str> {
    let cmd: &'static str = Box::leak(cmd.to_string().into_boxed_str());
    let mut v = vec![cmd];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

fn run_pipeline(out: &Path) {
    let s = ok(out, &with("gen-dataset", &[]));
    assert!(s.contains("N=12 P=17"), "{s}");
    ok(out, &with("train-ae", &["--set", "compressor.latent_dim=1"]));
    ok(out, &with("eval-latent", &["--set", "compressor.latent_dim=1"]));
    ok(out, &with("finetune", &["--space", "latent"]));
    ok(out, &with("finetune", &["--space", "parameter", "--task", "speed"]));
}

const ARTIFACTS: &[&str] = &[
    "dataset.pcds",
    "dataset.pcds.json",
    "autoencoder.pcae",
    "autoencoder.pcae.json",
    "train_report.json",
    "landscape.csv",
    "landscape_standard.pgm",
    "recovery.json",
    "finetune_latent_standard.json",
    "finetune_parameter_speed.json",
];

#[test]
fn pipeline_outputs_and_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    for f in ARTIFACTS {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }

    let ds = load_dataset(&a.path().join("dataset.pcds")).unwrap();
    assert_eq!((ds.len(), ds.arch.param_count()), (12, 17));
    let (_, ae) = load_checkpoint(&a.path().join("autoencoder.pcae")).unwrap();
    assert_eq!(ae.latent_dim(), 1);

    let csv = std::fs::read_to_string(a.path().join("landscape.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "z_0,task,mean_return,episodes");
    assert_eq!(csv.lines().count(), 1 + 100 * 4);
    let img = std::fs::read(a.path().join("landscape_speed.pgm")).unwrap();
    assert!(img.starts_with(b"P5\n100 1\n255\n"));

    let rec: RecoveryFile = serde_json::from_slice(&std::fs::read(a.path().join("recovery.json")).unwrap()).unwrap();
    assert_eq!(rec.tasks.len(), 4);

    let ft: FinetuneFile =
        serde_json::from_slice(&std::fs::read(a.path().join("finetune_latent_standard.json")).unwrap()).unwrap();
    assert_eq!(ft.result.log.len(), 3);
    let ckpt_hash = polycomp::manifest::sha256_file(&a.path().join("autoencoder.pcae")).unwrap();
    assert_eq!(ft.checkpoint_sha256.as_deref(), Some(ckpt_hash.as_str()));
    let manifest = polycomp::manifest::RunManifest::load(a.path()).unwrap().unwrap();
    assert_eq!(manifest.output_hash("autoencoder.pcae"), Some(ckpt_hash.as_str()));
    assert!(manifest.stages["eval-latent"].env_steps > 0);
}

#[test]
fn defaults_are_echoed_per_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["finetune", "--space", "parameter", "--set", "preset=small", "--set", "pgpe.generations=1"]);
    let ft: FinetuneFile =
        serde_json::from_slice(&std::fs::read(out.join("finetune_parameter_standard.json")).unwrap()).unwrap();
    let c = &ft.config;
    assert_eq!((c.center_lr, c.population, c.init_sigma), (0.05, 4, 0.6));
    assert_eq!(ft.result.best_candidate.len(), 17);

    ok(out, &["finetune", "--space", "parameter", "--set", "env=rc", "--set", "pgpe.generations=1"]);
    let ft: FinetuneFile =
        serde_json::from_slice(&std::fs::read(out.join("finetune_parameter_speed.json")).unwrap()).unwrap();
    let c = &ft.config;
    assert_eq!((c.center_lr, c.population, c.init_sigma, c.generations), (0.01, 10, 0.3, 1));
    assert_eq!(c.anneal_fraction, 0.2);
    assert_eq!(polycomp_core::pgpe::PgpeConfig::reacher().generations, 200);
}

#[test]
fn validation_and_io_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = polycomp(out, &["gen-dataset", "--set", "preset=huge"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("dataset.pcds").exists());

    let o = polycomp(out, &["finetune", "--space", "latent"]);
    assert_eq!(o.status.code(), Some(2));

    let o = polycomp(out, &["train-ae", "--dataset", "/nonexistent/d.pcds"]);
    assert_eq!(o.status.code(), Some(3));

    let o = polycomp(out, &["gen-dataset", "--set", "dataset.unknown_key=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tampered_dataset_fails_manifest_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &with("gen-dataset", &[]));
    let p = out.join("dataset.pcds");
    let mut bytes = std::fs::read(&p).unwrap();
    let n = bytes.len();
    bytes[n - 20] ^= 1;
    std::fs::write(&p, bytes).unwrap();
    let o = polycomp(out, &with("train-ae", &[]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest"));
}

#[test]
fn training_rejects_mismatched_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &with("gen-dataset", &[]));
    let o = polycomp(out, &["train-ae", "--set", "preset=medium"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn merge_reports_averages_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &with("gen-dataset", &[]));
    ok(out, &with("train-ae", &[]));
    ok(out, &with("eval-latent", &[]));
    let rec = out.join("recovery.json");
    let copy = out.join("recovery2.json");
    std::fs::copy(&rec, &copy).unwrap();
    let merged_path = out.join("merged.json");
    let o = Command::new(env!("CARGO_BIN_EXE_polycomp"))
        .args(["merge-reports", "--output"])
        .arg(&merged_path)
        .arg(&rec)
        .arg(&copy)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let single: RecoveryFile = serde_json::from_slice(&std::fs::read(&rec).unwrap()).unwrap();
    let merged: MergedReport = serde_json::from_slice(&std::fs::read(&merged_path).unwrap()).unwrap();
    assert_eq!(merged.tasks.len(), single.tasks.len());
    for (m, s) in merged.tasks.iter().zip(&single.tasks) {
        assert_eq!(m.dataset, s.dataset);
        assert_eq!(m.latent, s.latent);
        assert_eq!(m.recovery, s.recovery);
        assert_eq!(m.runs, 2);
    }
}

#[test]
fn output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_polycomp"))
        .args(["gen-dataset"])
        .args(SMALL)
        .env("POLYCOMP_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("dataset.pcds").exists());
    assert!(dir.path().join("manifest.json").exists());
}
