//! Posed scan sequences, their projected form and pair sampling.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::similarity_from_distance;
use crate::pointcloud::{read_cloud, read_kitti_poses, write_kitti_bin, write_kitti_poses, PointCloud, Pose};
use crate::projection::{project, ProjectionConfig, RangeImage};

#[derive(Debug, Clone, PartialEq)]
pub enum ScanSource {
    File(PathBuf),
    /// Generated in memory; the cloud's `frame_id` names the generator.
    Cloud(Arc<PointCloud>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanEntry {
    pub source: ScanSource,
    pub pose: Pose,
    pub timestamp: f64,
}

impl ScanEntry {
    pub fn load(&self) -> Result<PointCloud> {
        let mut cloud = match &self.source {
            ScanSource::File(p) => read_cloud(p)?,
            ScanSource::Cloud(c) => (**c).clone(),
        };
        cloud.timestamp = Some(self.timestamp);
        Ok(cloud)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanSequence {
    pub scans: Vec<ScanEntry>,
}

/// Fallback scan period when a sequence has no `times.txt`.
pub const DEFAULT_SCAN_PERIOD: f64 = 0.1;

impl ScanSequence {
    pub fn new(scans: Vec<ScanEntry>) -> Result<Self> {
        if let Some(w) = scans.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::InvalidArgument(format!(
                "timestamps decrease between scans {w} and {}",
                w + 1
            )));
        }
        Ok(Self { scans })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.scans.iter().map(|s| s.pose).collect()
    }

    /// Reads a KITTI odometry style directory: `velodyne/*.bin` (or `*.xyz`),
    /// `poses.txt`, and optionally `times.txt`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let scan_dir = dir.join("velodyne");
        let mut files: Vec<PathBuf> = fs::read_dir(&scan_dir)
            .map_err(|e| Error::io(&scan_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("bin" | "xyz")))
            .collect();
        files.sort();
        let poses = read_kitti_poses(dir.join("poses.txt"))?;
        if poses.len() != files.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: {} scans but {} poses",
                dir.display(),
                files.len(),
                poses.len()
            )));
        }
        let times_path = dir.join("times.txt");
        let times: Vec<f64> = if times_path.exists() {
            let text = fs::read_to_string(&times_path).map_err(|e| Error::io(&times_path, e))?;
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                out.push(line.trim().parse().map_err(|_| Error::Parse {
                    path: times_path.clone(),
                    line: i + 1,
                    msg: format!("not a number: {:?}", line.trim()),
                })?);
            }
            if out.len() != files.len() {
                return Err(Error::InvalidArgument(format!(
                    "{}: {} timestamps for {} scans",
                    times_path.display(),
                    out.len(),
                    files.len()
                )));
            }
            out
        } else {
            (0..files.len()).map(|i| i as f64 * DEFAULT_SCAN_PERIOD).collect()
        };
        Self::new(
            files
                .into_iter()
                .zip(poses)
                .zip(times)
                .map(|((f, pose), timestamp)| ScanEntry {
                    source: ScanSource::File(f),
                    pose,
                    timestamp,
                })
                .collect(),
        )
    }

    /// Writes the sequence in the layout [`load_dir`](Self::load_dir) reads.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let scan_dir = dir.join("velodyne");
        fs::create_dir_all(&scan_dir).map_err(|e| Error::io(&scan_dir, e))?;
        for (i, s) in self.scans.iter().enumerate() {
            write_kitti_bin(&s.load()?, scan_dir.join(format!("{i:06}.bin")))?;
        }
        write_kitti_poses(&self.poses(), dir.join("poses.txt"))?;
        let times: String = self.scans.iter().map(|s| format!("{:e}\n", s.timestamp)).collect();
        let p = dir.join("times.txt");
        fs::write(&p, times).map_err(|e| Error::io(&p, e))
    }
}

/// A sequence projected once to normalized range images.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub projection: ProjectionConfig,
    pub images: Vec<Vec<f32>>,
    pub poses: Vec<Pose>,
    pub timestamps: Vec<f64>,
}

impl Dataset {
    pub fn from_sequence(seq: &ScanSequence, projection: &ProjectionConfig) -> Result<Self> {
        let mut images = Vec::with_capacity(seq.len());
        for s in &seq.scans {
            images.push(project(&s.load()?, projection)?.normalized());
        }
        Ok(Self {
            projection: *projection,
            images,
            poses: seq.poses(),
            timestamps: seq.scans.iter().map(|s| s.timestamp).collect(),
        })
    }

    pub fn from_images(images: &[RangeImage], poses: Vec<Pose>) -> Result<Self> {
        let projection = images
            .first()
            .map(|i| i.config)
            .ok_or_else(|| Error::InvalidArgument("dataset needs at least one image".into()))?;
        if images.iter().any(|i| i.config != projection) || images.len() != poses.len() {
            return Err(Error::InvalidArgument(
                "images must share one projection and match the pose count".into(),
            ));
        }
        Ok(Self {
            projection,
            images: images.iter().map(|i| i.normalized()).collect(),
            timestamps: (0..images.len()).map(|i| i as f64 * DEFAULT_SCAN_PERIOD).collect(),
            poses,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPair {
    pub first: usize,
    pub second: usize,
    /// Translation distance, meters.
    pub distance: f64,
}

impl ScanPair {
    pub fn target(&self, m: f64) -> f64 {
        similarity_from_distance(self.distance, m)
    }
}

/// Near pairs (`d ≤ r_pos`) and far pairs (`d ≥ r_neg`) over `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPool {
    pub near: Vec<ScanPair>,
    pub far: Vec<ScanPair>,
}

impl PairPool {
    pub fn new(poses: &[Pose], r_pos: f64, r_neg: f64) -> Result<Self> {
        if !(r_pos >= 0.0 && r_pos < r_neg) {
            return Err(Error::Config(format!("need 0 <= r_pos < r_neg, got r_pos={r_pos} r_neg={r_neg}")));
        }
        if poses.len() < 2 {
            return Err(Error::Config(format!("pair sampling needs at least 2 scans, got {}", poses.len())));
        }
        let (mut near, mut far) = (Vec::new(), Vec::new());
        for i in 0..poses.len() {
            for j in i + 1..poses.len() {
                let distance = poses[i].distance(&poses[j]);
                let p = ScanPair { first: i, second: j, distance };
                if distance <= r_pos {
                    near.push(p);
                } else if distance >= r_neg {
                    far.push(p);
                }
            }
        }
        if near.is_empty() {
            return Err(Error::Config(format!("no scan pairs within r_pos={r_pos} m (r_neg={r_neg} m)")));
        }
        Ok(Self { near, far })
    }

    /// Half near, half far (near gets the odd one); all near when no pair is
    /// far enough. Each pair is drawn uniformly with replacement and its
    /// order flipped with probability ½.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Vec<ScanPair> {
        let n_near = if self.far.is_empty() { batch } else { batch.div_ceil(2) };
        let mut out = Vec::with_capacity(batch);
        for k in 0..batch {
            let pool = if k < n_near { &self.near } else { &self.far };
            let mut p = pool[rng.random_range(0..pool.len())];
            if rng.random_bool(0.5) {
                std::mem::swap(&mut p.first, &mut p.second);
            }
            out.push(p);
        }
        out
    }
}

/// One batch of pairs drawn from `poses`.
pub fn sample_pairs(poses: &[Pose], r_pos: f64, r_neg: f64, batch: usize, rng: &mut impl Rng) -> Result<Vec<ScanPair>> {
    Ok(PairPool::new(poses, r_pos, r_neg)?.sample(batch, rng))
}
