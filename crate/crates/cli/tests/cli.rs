use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recnet::model::{save_weights, ModelWeights, ProfileKind};
use recnet::pointcloud::read_cloud_xyz;
use recnet::transmission::{read_descriptors, write_descriptors, QuantizationMode};
use tempfile::TempDir;

/// Scene settings that keep fixtures small.
const SMALL_SCENE: &str = "[scene]\nboxes = 6\nwalls = 2\nmargin = 12.0\npoint_spacing = 0.4\n";

fn recnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recnet"))
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = recnet(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn fails(args: &[&str]) -> String {
    let out = recnet(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("small.toml"), SMALL_SCENE).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("small.toml")
    }

    fn sequence(&self, name: &str, extra: &[&str]) -> PathBuf {
        let (out, cfg) = (self.path(name), self.config());
        let mut args = vec!["synthetic", "--config", s(&cfg), "--out", s(&out)];
        let owned: Vec<String> = extra.iter().map(|a| a.to_string()).collect();
        args.extend(owned.iter().map(|a| a.as_str()));
        ok(&args);
        out
    }

    /// Untrained Mini weights from a zero-step run.
    fn weights(&self, seq: &Path) -> PathBuf {
        let out = self.path("train0");
        ok(&["train", "--config", s(&self.config()), "--data", s(seq), "--out", s(&out), "--steps", "0"]);
        out.join("weights.rwts")
    }
}

#[test]
fn synthetic_and_project() {
    let f = Fixture::new();
    let seq = f.sequence("seq", &["--scans", "3"]);
    assert_eq!(fs::read_dir(seq.join("velodyne")).unwrap().count(), 3);
    assert_eq!(fs::read_to_string(seq.join("poses.txt")).unwrap().lines().count(), 3);

    let images = f.path("rimg");
    ok(&["project", "--input", s(&seq), "--out", s(&images)]);
    let mut names: Vec<String> = fs::read_dir(&images)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["000000.rimg", "000001.rimg", "000002.rimg"]);

    let single = f.path("single");
    ok(&["project", "--input", s(&seq.join("velodyne/000001.bin")), "--out", s(&single)]);
    assert!(single.join("000001.rimg").exists());
    assert_eq!(fs::read_dir(&single).unwrap().count(), 1);
    assert_eq!(fs::read(single.join("000001.rimg")).unwrap(), fs::read(images.join("000001.rimg")).unwrap());

    let bad = f.path("bad.toml");
    fs::write(&bad, "[projection]\nfov_up_deg = -10.0\nfov_down_deg = 5.0\n").unwrap();
    let err = fails(&["project", "--config", s(&bad), "--input", s(&seq), "--out", s(&f.path("x"))]);
    assert!(err.contains("projection"), "{err}");
}

#[test]
fn outputs_are_byte_stable() {
    let f = Fixture::new();
    let a = f.sequence("a", &["--scans", "2", "--seed", "3"]);
    let b = f.sequence("b", &["--scans", "2", "--seed", "3"]);
    for name in ["velodyne/000000.bin", "velodyne/000001.bin", "poses.txt", "times.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn train_zero_steps_resume_and_divergence() {
    let f = Fixture::new();
    let seq = f.sequence("seq", &["--scans", "4"]);
    let cfg = f.config();

    let zero = f.path("zero");
    let out = ok(&["train", "--config", s(&cfg), "--data", s(&seq), "--out", s(&zero), "--steps", "0"]);
    assert!(zero.join("ckpt-000000.toml").exists());
    assert!(zero.join("weights.rwts").exists());
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("resolved configuration") && log.contains("steps = 0"), "{log}");

    let run = f.path("run");
    let common = ["train", "--config", s(&cfg), "--data", s(&seq), "--out", s(&run), "--batch-size", "2"];
    ok(&[&common[..], &["--steps", "2"]].concat());
    ok(&[&common[..], &["--steps", "3", "--resume", s(&run.join("ckpt-000002.toml"))]].concat());
    let csv = fs::read_to_string(run.join("loss.csv")).unwrap();
    let steps: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["1", "2", "3"]);
    assert!(run.join("ckpt-000003.toml").exists());

    let err = fails(&[&common[..], &["--steps", "20", "--lr", "1e30"]].concat());
    assert!(err.contains("diverged at step"), "{err}");
}

#[test]
fn encode_decode_unproject_pipeline() {
    let f = Fixture::new();
    let seq = f.sequence("seq", &["--scans", "3"]);
    let weights = f.weights(&seq);

    let recb = f.path("d.recb");
    ok(&["encode", "--weights", s(&weights), "--data", s(&seq), "--out", s(&recb), "--mode", "f16"]);
    let again = f.path("again.recb");
    ok(&["encode", "--weights", s(&weights), "--data", s(&seq), "--out", s(&again), "--mode", "f16"]);
    assert_eq!(fs::read(&recb).unwrap(), fs::read(&again).unwrap());
    let stream = read_descriptors(&recb).unwrap();
    assert_eq!((stream.records.len(), stream.mode), (3, QuantizationMode::Float16));

    let images = f.path("decoded");
    ok(&["decode", "--weights", s(&weights), "--input", s(&recb), "--out", s(&images)]);
    let clouds = f.path("clouds");
    ok(&["unproject", "--input", s(&images), "--out", s(&clouds)]);
    for i in 0..3 {
        read_cloud_xyz(clouds.join(format!("{i:06}.xyz"))).unwrap();
    }

    let err = fails(&["encode", "--profile", "kitti", "--weights", s(&weights), "--data", s(&seq), "--out", s(&f.path("k.recb"))]);
    assert!(err.contains("profile mismatch"), "{err}");
    let kitti = f.path("kitti.rwts");
    save_weights(&ModelWeights::init(ProfileKind::Kitti, 0), &kitti).unwrap();
    let err = fails(&["decode", "--weights", s(&kitti), "--input", s(&recb), "--out", s(&f.path("y"))]);
    assert!(err.contains("profile mismatch"), "{err}");
}

#[test]
fn eval_pr_with_oracle_tail() {
    let f = Fixture::new();
    // Two laps of 6 scans, 40 s apart: the second lap revisits the first.
    let seq = f.sequence(
        "loop",
        &["--scans", "12", "--trajectory", "loop", "--laps", "2", "--spacing", "2.5", "--scan-period", "40"],
    );
    let weights = f.weights(&seq);
    let recb = f.path("loop.recb");
    ok(&["encode", "--weights", s(&weights), "--data", s(&seq), "--out", s(&recb)]);

    let out = ok(&["eval-pr", "--db", s(&recb), "--oracle-tail", "--thresholds", "11"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "threshold,precision,recall");
    assert_eq!(rows.len(), 12);
    for r in &rows[1..] {
        assert_eq!(r.split(',').nth(1).unwrap(), "1", "{r}");
    }

    let learned = f.path("pr.csv");
    ok(&["eval-pr", "--db", s(&recb), "--weights", s(&weights), "--thresholds", "5", "--out", s(&learned)]);
    assert_eq!(fs::read_to_string(&learned).unwrap().lines().count(), 6);

    let err = fails(&["eval-pr", "--db", s(&recb), "--oracle-tail", "--map-seconds", "1e6"]);
    assert!(err.contains("empty"), "{err}");
}

#[test]
fn eval_ssim_tables() {
    let f = Fixture::new();
    let seq = f.sequence("seq", &["--scans", "2"]);
    let out = ok(&["eval-ssim", "--original", s(&seq), "--reconstructed", s(&seq), "--k", "8"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,corr_mean,corr_std,geom_mean,geom_std,norm_mean,norm_std,curv_mean,curv_std");
    assert_eq!(lines[1], "recnet,100,0,100,0,100,0,100,0");

    let partial = f.path("partial");
    fs::create_dir(&partial).unwrap();
    fs::copy(seq.join("velodyne/000000.bin"), partial.join("000000.bin")).unwrap();
    let err = fails(&["eval-ssim", "--original", s(&seq), "--reconstructed", s(&partial)]);
    assert!(err.contains("000001"), "{err}");
}

#[test]
fn bandwidth_reports() {
    let f = Fixture::new();
    let manifest = f.path("mission.toml");
    fs::write(
        &manifest,
        "duration = 10.0\n[[scan_group]]\ncount = 100\npoints = 100000\n[[descriptor_group]]\ncount = 100\nbytes = 65536\n",
    )
    .unwrap();
    let text = String::from_utf8(ok(&["bandwidth", "--manifest", s(&manifest)]).stdout).unwrap();
    for needle in ["16000", "655.36", "24.41", "Bandwidth for bottleneck vectors (kB/s)", "Mission Duration (s)"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
    let reference = String::from_utf8(ok(&["bandwidth", "--reference"]).stdout).unwrap();
    assert!(reference.contains("KITTI") && reference.contains("LTU"));

    fs::write(&manifest, "duration = 0.0\n").unwrap();
    fails(&["bandwidth", "--manifest", s(&manifest)]);
}

#[test]
fn reconstruct_map_cases() {
    let f = Fixture::new();
    let seq = f.sequence("seq", &["--scans", "2"]);
    let weights = f.weights(&seq);

    let empty = f.path("empty.recb");
    write_descriptors(&empty, ProfileKind::Mini, QuantizationMode::Float32, &[]).unwrap();
    let out = f.path("empty.xyz");
    ok(&["reconstruct-map", "--descriptors", s(&empty), "--weights", s(&weights), "--out", s(&out)]);
    assert_eq!(fs::read(&out).unwrap().len(), 0);

    let recb = f.path("d.recb");
    ok(&["encode", "--weights", s(&weights), "--data", s(&seq), "--out", s(&recb)]);
    let map = f.path("map.xyz");
    ok(&["reconstruct-map", "--descriptors", s(&recb), "--weights", s(&weights), "--out", s(&map)]);
    read_cloud_xyz(&map).unwrap();

    let one_pose = f.path("poses.txt");
    let first = fs::read_to_string(seq.join("poses.txt")).unwrap().lines().next().unwrap().to_string();
    fs::write(&one_pose, first + "\n").unwrap();
    let err = fails(&[
        "reconstruct-map",
        "--descriptors",
        s(&recb),
        "--weights",
        s(&weights),
        "--poses",
        s(&one_pose),
        "--out",
        s(&f.path("m2.xyz")),
    ]);
    assert!(err.contains("scan 1"), "{err}");
}

#[test]
fn flags_override_config_file() {
    let f = Fixture::new();
    let cfg = f.path("three.toml");
    fs::write(&cfg, format!("{SMALL_SCENE}[synthetic]\nseed = 1\n")).unwrap();
    let from_file = f.path("file");
    ok(&["synthetic", "--config", s(&cfg), "--scans", "2", "--out", s(&from_file)]);
    let from_flag = f.path("flag");
    ok(&["synthetic", "--config", s(&cfg), "--scans", "2", "--seed", "2", "--out", s(&from_flag)]);
    let bin = "velodyne/000000.bin";
    assert_ne!(fs::read(from_file.join(bin)).unwrap(), fs::read(from_flag.join(bin)).unwrap());

    let bad = f.path("bad.toml");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    fails(&["synthetic", "--config", s(&bad), "--out", s(&f.path("z"))]);
}
