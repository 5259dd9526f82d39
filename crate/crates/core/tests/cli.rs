mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pointembed::dataset::ToyDatasetSpec;
use pointembed::geometry::farthest_point_sample;
use pointembed::io::{read_cloud, write_cloud, CloudMeta};
use pointembed::model::duplication_baseline;
use pointembed::{PointCloud, TrainConfig};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pointembed"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pointembed")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        n_points: 64,
        n_sparse: 16,
        ratio: 4,
        k_group: 6,
        m_dist: 4,
        channels: 8,
        attn_channels: 8,
        k_conv: 4,
        extractor_blocks: 1,
        extractor_growth: 6,
        batch_size: 2,
        epochs,
        ..TrainConfig::default()
    }
}

/// Writes a config and a five-shape dataset, then trains a checkpoint.
fn trained(dir: &Path, epochs: usize) -> PathBuf {
    let cfg = dir.join(format!("config{epochs}.json"));
    std::fs::write(&cfg, serde_json::to_string_pretty(&tiny_config(epochs)).unwrap()).unwrap();
    let spec = dir.join("spec.json");
    let data = dir.join("data");
    if !data.exists() {
        let ds = ToyDatasetSpec {
            samples_per_family: 1,
            n_points: 64,
            ..ToyDatasetSpec::default()
        };
        std::fs::write(&spec, serde_json::to_string(&ds).unwrap()).unwrap();
        ok(&["gen-data", "--spec", s(&spec), "--out", s(&data)]);
    }
    let ckpt = dir.join(format!("model{epochs}.ckpt"));
    let log = dir.join(format!("log{epochs}.csv"));
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
        "--log",
        s(&log),
    ]);
    ckpt
}

fn write(dir: &Path, name: &str, cloud: &PointCloud) -> PathBuf {
    let p = dir.join(name);
    write_cloud(&p, cloud, &CloudMeta::default()).unwrap();
    p
}

#[test]
fn help_and_usage_errors() {
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("restore"));

    let bad = run(&["sample", "--bogus"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("Usage"));
    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("none.xyz");
    let out = dir.path().join("o.xyz");
    let r = run(&["sample", "--in", s(&missing), "--n", "4", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let bad = dir.path().join("bad.xyz");
    std::fs::write(&bad, "0 0 0\n1 1\n").unwrap();
    let r = run(&["sample", "--in", s(&bad), "--n", "1", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains(":2:"));
}

#[test]
fn sample_is_plain_fps() {
    let dir = TempDir::new().unwrap();
    let cloud = PointCloud::new(
        common::random_points(&mut common::rng(1), 2048)
            .into_iter()
            .map(|p| p.map(|v| v as f32 as f64))
            .collect(),
    )
    .unwrap();
    let input = write(dir.path(), "dense.ply", &cloud);
    let out = dir.path().join("sparse.ply");
    ok(&["sample", "--in", s(&input), "--n", "512", "--out", s(&out)]);
    let (got, _) = read_cloud(&out).unwrap();
    let idx = farthest_point_sample(&cloud, 512, 0).unwrap();
    assert_eq!(got, cloud.select(&idx));
}

#[test]
fn zero_initialized_round_trip_is_duplication() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(dir.path(), 0);
    let cloud = common::random_cloud(&mut common::rng(2), 64);
    let input = write(dir.path(), "p.xyz", &cloud);
    let q = dir.path().join("q.xyz");
    let offsets = dir.path().join("dq.csv");
    let r = dir.path().join("r.xyz");
    ok(&[
        "embed",
        "--ckpt",
        s(&ckpt),
        "--in",
        s(&input),
        "--out",
        s(&q),
        "--export-offsets",
        s(&offsets),
    ]);
    ok(&["restore", "--ckpt", s(&ckpt), "--in", s(&q), "--out", s(&r)]);

    let (qc, meta) = read_cloud(&q).unwrap();
    assert_eq!(qc.len(), 16);
    assert_eq!(meta.pad, 0);
    assert!(meta.transform.is_some());
    let csv = std::fs::read_to_string(&offsets).unwrap();
    assert_eq!(csv.lines().next(), Some("dx,dy,dz"));
    assert_eq!(csv.lines().count(), 17);

    let (rc, _) = read_cloud(&r).unwrap();
    let expected = duplication_baseline::<f64>(&cloud, 4, 0).unwrap();
    assert_eq!(rc.len(), expected.len());
    for (a, b) in rc.points().iter().zip(expected.points()) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-5, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn padding_restores_the_original_count() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(dir.path(), 0);
    let cloud = common::random_cloud(&mut common::rng(3), 66);
    let input = write(dir.path(), "p.xyz", &cloud);
    let q = dir.path().join("q.xyz");
    let r = dir.path().join("r.xyz");
    ok(&["embed", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&q)]);
    ok(&[
        "restore",
        "--ckpt",
        s(&ckpt),
        "--in",
        s(&q),
        "--out",
        s(&r),
        "--no-patch",
    ]);
    let (qc, meta) = read_cloud(&q).unwrap();
    assert_eq!((qc.len(), meta.pad), (17, 2));
    assert_eq!(read_cloud(&r).unwrap().0.len(), 66);
}

#[test]
fn oversized_inputs_restore_in_patches() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(dir.path(), 0);
    let q = common::random_cloud(&mut common::rng(4), 200);
    let input = write(dir.path(), "q.xyz", &q);
    let whole = dir.path().join("whole.xyz");
    let patched = dir.path().join("patched.xyz");
    ok(&[
        "restore",
        "--ckpt",
        s(&ckpt),
        "--in",
        s(&input),
        "--out",
        s(&whole),
        "--no-patch",
    ]);
    ok(&[
        "restore",
        "--ckpt",
        s(&ckpt),
        "--in",
        s(&input),
        "--out",
        s(&patched),
        "--patch-size",
        "64",
    ]);
    assert_eq!(read_cloud(&whole).unwrap().0.len(), 800);
    let (p, _) = read_cloud(&patched).unwrap();
    // Zero offsets restore duplicates, which the merge collapses, so every
    // patch point coincides with an input point.
    assert!(!p.is_empty());
    for pt in p.points() {
        let d = q
            .points()
            .iter()
            .map(|x| common::sq_dist(x, pt))
            .fold(f64::INFINITY, f64::min);
        assert!(d.sqrt() <= 1e-6);
    }
}

#[test]
fn train_eval_and_perturb_produce_reports() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(dir.path(), 2);
    let log = std::fs::read_to_string(dir.path().join("log2.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,lr,total,shape,dist,conform,mean_dq");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,0.001000,"));

    let report = dir.path().join("eval.csv");
    ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&dir.path().join("data")),
        "--report",
        s(&report),
    ]);
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().next(), Some("shape_id,emd,hd,cd"));
    assert_eq!(csv.lines().count(), 6);

    let shape = std::fs::read_dir(dir.path().join("data"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let perturb = dir.path().join("perturb.csv");
    ok(&[
        "perturb",
        "--ckpt",
        s(&ckpt),
        "--in",
        s(&shape),
        "--seed",
        "3",
        "--report",
        s(&perturb),
    ]);
    let csv = std::fs::read_to_string(&perturb).unwrap();
    assert_eq!(csv.lines().next(), Some("shape_id,cd_q,cd_perturbed,cd_q_prime"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let dir = TempDir::new().unwrap();
    let full = trained(dir.path(), 2);
    let again = dir.path().join("again.ckpt");
    let cfg = dir.path().join("config2.json");
    let data = dir.path().join("data");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&again),
    ]);
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&again).unwrap());

    let half = trained(dir.path(), 1);
    let resumed = dir.path().join("resumed.ckpt");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&resumed),
        "--resume",
        s(&half),
    ]);
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&resumed).unwrap());
}
