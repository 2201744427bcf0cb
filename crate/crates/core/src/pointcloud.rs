//! Point clouds, poses, KITTI ingestion, XYZ export and voxel downsampling.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: Option<f32>,
}

impl Point3 {
    pub const fn new(x: f32, y: f32, z: f32) -> Self {
        Self {
            x,
            y,
            z,
            intensity: None,
        }
    }

    pub fn with_intensity(mut self, intensity: f32) -> Self {
        self.intensity = Some(intensity);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    pub fn norm(&self) -> f64 {
        let [x, y, z] = self.coords();
        (x * x + y * y + z * z).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let [a, b, c] = self.coords();
        let [d, e, f] = other.coords();
        ((a - d).powi(2) + (b - e).powi(2) + (c - f).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: String,
    pub timestamp: Option<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            frame_id: String::new(),
            timestamp: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            frame_id: self.frame_id.clone(),
            timestamp: self.timestamp,
        }
    }
}

/// Tolerance for `RᵀR = I` and `det R = 1` when validating rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Rigid transform mapping sensor-frame points to the world: `R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (|RᵀR − I| = {ortho:.3e}, det = {det:.9})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Planar pose: yaw about +z and a translation.
    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::from(translation),
        }
    }

    /// Row-major 3×4 `[R|t]`, as in KITTI pose files.
    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Self::new(rotation, Vector3::new(v[3], v[7], v[11]))
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        let v = self.rotation * Vector3::from(p.coords()) + self.translation;
        Point3 {
            x: v.x as f32,
            y: v.y as f32,
            z: v.z as f32,
            intensity: p.intensity,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Euclidean distance between translations.
    pub fn distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Bytes per KITTI velodyne record: four little-endian f32 (x, y, z, intensity).
pub const KITTI_POINT_BYTES: usize = 16;

/// Parses a KITTI velodyne buffer. Returns the cloud and the number of
/// records dropped for non-finite coordinates.
pub fn parse_kitti_bin(bytes: &[u8]) -> Result<(PointCloud, usize)> {
    if bytes.len() % KITTI_POINT_BYTES != 0 {
        let offset = bytes.len() / KITTI_POINT_BYTES * KITTI_POINT_BYTES;
        return Err(Error::format(
            "kitti scan",
            offset,
            format!("size {} is not a multiple of {KITTI_POINT_BYTES}", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / KITTI_POINT_BYTES);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(KITTI_POINT_BYTES) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
        let p = Point3::new(f(0), f(1), f(2)).with_intensity(f(3));
        if p.is_finite() {
            points.push(p);
        } else {
            dropped += 1;
        }
    }
    Ok((PointCloud::new(points), dropped))
}

pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (mut cloud, dropped) = parse_kitti_bin(&bytes)?;
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} non-finite points", path.display());
    }
    cloud.frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(cloud)
}

pub fn encode_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_POINT_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity.unwrap_or(0.0)] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_kitti_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_kitti_bin(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_kitti_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_poses(&text).map_err(|(line, msg)| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

/// Parses pose text; errors carry a 1-based line number.
pub fn parse_kitti_poses(text: &str) -> std::result::Result<Vec<Pose>, (usize, String)> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 12 {
            return Err((i + 1, format!("expected 12 values, found {}", tokens.len())));
        }
        let mut v = [0.0; 12];
        for (slot, tok) in v.iter_mut().zip(&tokens) {
            *slot = tok
                .parse()
                .map_err(|_| (i + 1, format!("not a number: {tok:?}")))?;
        }
        poses.push(Pose::from_row_major(&v).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(poses)
}

pub fn format_kitti_poses(poses: &[Pose]) -> String {
    let mut s = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major().iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_kitti_poses(poses: &[Pose], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_kitti_poses(poses)).map_err(|e| Error::io(path, e))
}

/// One `x y z` line per point, in order.
pub fn write_cloud_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cloud_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if vals.len() < 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 values, found {}", vals.len()),
            });
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
    }
    let mut cloud = PointCloud::new(points);
    cloud.frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(cloud)
}

/// Reads `.bin` (KITTI) or anything else as XYZ text.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => read_kitti_bin(path),
        _ => read_cloud_xyz(path),
    }
}

/// Integer voxel coordinates of a point; floor, so negatives do not share
/// the origin voxel.
pub fn voxel_index(p: &Point3, voxel_size: f64) -> [i64; 3] {
    let [x, y, z] = p.coords();
    [
        (x / voxel_size).floor() as i64,
        (y / voxel_size).floor() as i64,
        (z / voxel_size).floor() as i64,
    ]
}

/// Replaces the points of each occupied voxel by their centroid. Output
/// order follows the first point seen in each voxel.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<([f64; 3], usize)> = Vec::new();
    for p in &cloud.points {
        let key = voxel_index(p, voxel_size);
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push(([0.0; 3], 0));
            sums.len() - 1
        });
        let [x, y, z] = p.coords();
        let (acc, n) = &mut sums[slot];
        acc[0] += x;
        acc[1] += y;
        acc[2] += z;
        *n += 1;
    }
    let points = sums
        .into_iter()
        .map(|(acc, n)| {
            let n = n as f64;
            Point3::new((acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32)
        })
        .collect();
    Ok(PointCloud {
        points,
        frame_id: cloud.frame_id.clone(),
        timestamp: cloud.timestamp,
    })
}
