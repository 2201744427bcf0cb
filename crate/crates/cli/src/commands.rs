use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use recnet::metrics::{corr_at, evaluate_reconstruction, Stat, CORR_RADIUS};
use recnet::model::{self, load_weights};
use recnet::pointcloud::{read_cloud, read_kitti_poses, write_cloud_xyz};
use recnet::projection::{self, read_range_image, write_range_image};
use recnet::retrieval::{
    build_db, encode_sequence, evaluate_pr, linspace_thresholds, split_map_queries, OracleScorer, PRCurve, TailScorer,
};
use recnet::training::{make_synthetic_sequence, validate, Dataset, ScanSequence, Trainer};
use recnet::transmission::{self, read_descriptors, reference_missions_table, write_descriptors, MissionManifest};
use recnet::PointCloud;

use crate::config::CliConfig;

/// A single file, or the files in `dir` (or `dir/velodyne`) with one of
/// `exts`, sorted by name.
fn inputs(path: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dir = if path.join("velodyne").is_dir() { path.join("velodyne") } else { path.to_path_buf() };
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.contains(&e)))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Runs `f` on every input, carrying on past failures, and reports them all.
fn for_each_file(files: &[PathBuf], mut f: impl FnMut(&Path) -> Result<()>) -> Result<()> {
    let mut failed = Vec::new();
    for p in files {
        if let Err(e) = f(p) {
            warn!("{}: {e:#}", p.display());
            failed.push(format!("{}: {e:#}", p.display()));
        }
    }
    if !failed.is_empty() {
        bail!("{} of {} files failed:\n  {}", failed.len(), files.len(), failed.join("\n  "));
    }
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn synthetic(cfg: &CliConfig, out: &Path) -> Result<()> {
    let projection = cfg.projection()?;
    let seq = make_synthetic_sequence(&cfg.scene, &projection, cfg.synthetic.seed)?;
    seq.save_dir(out)?;
    info!("wrote {} scans to {}", seq.len(), out.display());
    Ok(())
}

pub fn project(cfg: &CliConfig, input: &Path, out: &Path) -> Result<()> {
    let projection = cfg.projection()?;
    let files = inputs(input, &["bin", "xyz"])?;
    if files.is_empty() {
        bail!("no .bin or .xyz scans in {}", input.display());
    }
    create_dir(out)?;
    for_each_file(&files, |p| {
        let image = projection::project(&read_cloud(p)?, &projection)?;
        write_range_image(&image, out.join(format!("{}.rimg", stem(p))))?;
        Ok(())
    })?;
    info!("projected {} scans into {}", files.len(), out.display());
    Ok(())
}

pub fn train(cfg: &CliConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let projection = cfg.projection()?;
    let seq = ScanSequence::load_dir(data)?;
    let dataset = Dataset::from_sequence(&seq, &projection)?;
    create_dir(out)?;
    let config = cfg.train.clone();
    let mut trainer = match resume {
        Some(sidecar) => {
            let t = Trainer::resume(config, sidecar, &dataset)?;
            info!("resuming at step {}", t.step_count());
            t
        }
        None => Trainer::new(config, &dataset)?,
    };
    trainer.run(&dataset)?;
    let sidecar = trainer.save_checkpoint(out)?;
    model::save_weights(&trainer.weights, out.join("weights.rwts"))?;
    let report = validate(&trainer.weights, &dataset, &trainer.config.loss)?;
    info!(
        "step {}: validation l_mse {:.5}, mean |c_hat - c| {:.4} over {} pairs; checkpoint {}",
        trainer.step_count(),
        report.mean_mse,
        report.mean_abs_similarity_error,
        report.pairs,
        sidecar.display()
    );
    Ok(())
}

pub fn encode(cfg: &CliConfig, weights: &Path, data: &Path, out: &Path) -> Result<()> {
    let w = load_weights(weights)?;
    let kind = w.profile_kind();
    cfg.check_profile(kind, &format!("{}", weights.display()))?;
    let seq = ScanSequence::load_dir(data)?;
    let records = encode_sequence(&w, &seq, &cfg.projection_for(kind)?)?;
    write_descriptors(out, kind, cfg.encode.mode, &records)?;
    info!("encoded {} scans into {}", records.len(), out.display());
    Ok(())
}

pub fn decode(cfg: &CliConfig, weights: &Path, input: &Path, out: &Path) -> Result<()> {
    let w = load_weights(weights)?;
    let stream = read_descriptors(input)?;
    if stream.profile != w.profile_kind() {
        bail!(
            "profile mismatch: {} holds {} descriptors, {} is a {} model",
            input.display(),
            stream.profile,
            weights.display(),
            w.profile_kind()
        );
    }
    let projection = cfg.projection_for(stream.profile)?;
    create_dir(out)?;
    for r in &stream.records {
        let image = model::decode(&w, &r.bottleneck, &projection)?;
        write_range_image(&image, out.join(format!("{:06}.rimg", r.scan_id)))?;
    }
    info!("decoded {} descriptors into {}", stream.records.len(), out.display());
    Ok(())
}

pub fn unproject(input: &Path, out: &Path) -> Result<()> {
    let files = inputs(input, &["rimg"])?;
    if files.is_empty() {
        bail!("no .rimg files in {}", input.display());
    }
    create_dir(out)?;
    for_each_file(&files, |p| {
        let cloud = projection::unproject(&read_range_image(p)?);
        write_cloud_xyz(&cloud, out.join(format!("{}.xyz", stem(p))))?;
        Ok(())
    })
}

pub fn eval_pr(cfg: &CliConfig, db: &Path, queries: Option<&Path>, weights: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let map_stream = read_descriptors(db)?;
    let (map, queries) = match queries {
        Some(q) => (map_stream.records, read_descriptors(q)?.records),
        None => split_map_queries(map_stream.records, cfg.eval.map_seconds),
    };
    if queries.is_empty() {
        bail!("query set is empty");
    }
    let db = build_db(map)?;
    let thresholds = linspace_thresholds(cfg.eval.thresholds);
    let curve: PRCurve = match weights {
        Some(p) => {
            let w = load_weights(p)?;
            evaluate_pr(&db, &queries, &TailScorer::new(&w), cfg.eval.gt_radius, &thresholds)?
        }
        None => {
            info!("scoring with the ground-truth oracle, m = {}", cfg.eval.m);
            evaluate_pr(&db, &queries, &OracleScorer { m: cfg.eval.m }, cfg.eval.gt_radius, &thresholds)?
        }
    };
    info!("{} map records, {} queries", db.len(), queries.len());
    write_or_print(out, &curve.to_csv())
}

fn clouds_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(inputs(dir, &["bin", "xyz"])?.into_iter().map(|p| (stem(&p), p)).collect())
}

pub fn eval_ssim(cfg: &CliConfig, original: &Path, reconstructed: &Path, method: &str, out: Option<&Path>) -> Result<()> {
    let a = clouds_by_stem(original)?;
    let b = clouds_by_stem(reconstructed)?;
    let (ka, kb): (BTreeSet<_>, BTreeSet<_>) = (a.keys().collect(), b.keys().collect());
    let only_a: Vec<&str> = ka.difference(&kb).map(|s| s.as_str()).collect();
    let only_b: Vec<&str> = kb.difference(&ka).map(|s| s.as_str()).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        bail!(
            "file sets differ; missing from {}: [{}]; missing from {}: [{}]",
            reconstructed.display(),
            only_a.join(", "),
            original.display(),
            only_b.join(", ")
        );
    }
    if a.is_empty() {
        bail!("no scans in {}", original.display());
    }
    let load = |m: &BTreeMap<String, PathBuf>| m.values().map(read_cloud).collect::<recnet::Result<Vec<PointCloud>>>();
    let (originals, recons) = (load(&a)?, load(&b)?);
    let mut table = evaluate_reconstruction(&originals, &[(method, &recons)], cfg.eval.k)?;
    if cfg.eval.radius != CORR_RADIUS {
        let corr = originals
            .iter()
            .zip(&recons)
            .map(|(o, r)| corr_at(o, r, cfg.eval.radius))
            .collect::<recnet::Result<Vec<f64>>>()?;
        table.rows[0].corr = Stat::of(&corr);
    }
    info!("\n{}", table.to_text());
    write_or_print(out, &table.to_csv())
}

pub fn bandwidth(manifest: Option<&Path>, column: &str, reference: bool, out: Option<&Path>) -> Result<()> {
    let text = match (reference, manifest) {
        (true, _) => reference_missions_table(),
        (false, Some(p)) => {
            let src = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let stats = MissionManifest::from_toml(&src)
                .and_then(|m| m.report())
                .with_context(|| format!("manifest {}", p.display()))?;
            stats.to_table(column)
        }
        (false, None) => bail!("a manifest is required"),
    };
    write_or_print(out, &text)
}

pub fn reconstruct_map(cfg: &CliConfig, descriptors: &Path, weights: &Path, poses: Option<&Path>, out: &Path) -> Result<()> {
    let stream = read_descriptors(descriptors)?;
    let w = load_weights(weights)?;
    let poses = match poses {
        Some(p) => read_kitti_poses(p)?.into_iter().enumerate().map(|(i, pose)| (i as u32, pose)).collect(),
        None => transmission::embedded_poses(&stream.records),
    };
    let projection = cfg.projection_for(stream.profile)?;
    let map = transmission::reconstruct_map(&stream.records, &w, &poses, &projection)?;
    write_cloud_xyz(&map, out)?;
    info!("{} points from {} scans written to {}", map.len(), stream.records.len(), out.display());
    Ok(())
}
