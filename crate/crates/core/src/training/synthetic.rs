//! Procedural scenes observed along a trajectory, for training without
//! recorded data.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{ScanEntry, ScanSequence, ScanSource};
use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud, Pose};
use crate::projection::ProjectionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trajectory {
    /// Straight drive along +x.
    Line,
    /// Closed circle, counter-clockwise, driven `laps` times.
    Loop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub scans: usize,
    /// Meters between consecutive poses.
    pub spacing: f64,
    pub trajectory: Trajectory,
    /// Loop only. Scans are spread evenly over this many laps.
    pub laps: f64,
    pub boxes: usize,
    pub walls: usize,
    /// Scene margin around the trajectory, meters.
    pub margin: f64,
    /// Surface sampling pitch, meters.
    pub point_spacing: f64,
    pub sensor_height: f64,
    /// Seconds between scans.
    pub scan_period: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            scans: 20,
            spacing: 2.0,
            trajectory: Trajectory::Line,
            laps: 1.0,
            boxes: 24,
            walls: 4,
            margin: 30.0,
            point_spacing: 0.15,
            sensor_height: 1.73,
            scan_period: 0.1,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scans == 0 {
            return Err(Error::InvalidArgument("scene needs at least one scan".into()));
        }
        for (name, v) in [
            ("spacing", self.spacing),
            ("margin", self.margin),
            ("point_spacing", self.point_spacing),
            ("sensor_height", self.sensor_height),
            ("scan_period", self.scan_period),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("scene {name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.laps.is_finite() && self.laps > 0.0) {
            return Err(Error::InvalidArgument(format!("scene laps must be > 0, got {}", self.laps)));
        }
        if self.point_spacing <= 0.0 {
            return Err(Error::InvalidArgument("scene point_spacing must be > 0".into()));
        }
        Ok(())
    }

    /// Sensor poses; translation z is the sensor height above the ground.
    pub fn poses(&self) -> Vec<Pose> {
        let h = self.sensor_height;
        match self.trajectory {
            Trajectory::Line => (0..self.scans)
                .map(|i| Pose::from_yaw(0.0, [i as f64 * self.spacing, 0.0, h]))
                .collect(),
            Trajectory::Loop => {
                let n = self.scans as f64 / self.laps;
                let radius = n * self.spacing / (2.0 * PI);
                (0..self.scans)
                    .map(|i| {
                        let a = (2.0 * PI * i as f64 / n).rem_euclid(2.0 * PI);
                        Pose::from_yaw(a + PI / 2.0, [radius * a.cos(), radius * a.sin(), h])
                    })
                    .collect()
            }
        }
    }
}

// Ground within this distance of a pose, and every object surface, is sampled
// at `point_spacing / DENSE_FACTOR`.
const DENSE_RADIUS: f64 = 20.0;
const DENSE_FACTOR: usize = 3;

/// World-frame surface samples of the scene around `poses`.
pub fn scene_points(spec: &SceneSpec, poses: &[Pose], seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for p in poses {
        lo = lo.inf(&p.translation);
        hi = hi.sup(&p.translation);
    }
    let (x0, x1) = (lo.x - spec.margin, hi.x + spec.margin);
    let (y0, y1) = (lo.y - spec.margin, hi.y + spec.margin);
    let step = spec.point_spacing;
    let mut pts = Vec::new();

    // Ground, jittered grid, refined near the trajectory where the beam
    // footprint is smallest.
    let fine = step / DENSE_FACTOR as f64;
    let nx = ((x1 - x0) / step).ceil() as usize;
    let ny = ((y1 - y0) / step).ceil() as usize;
    for i in 0..nx {
        for j in 0..ny {
            let (cx, cy) = (x0 + i as f64 * step, y0 + j as f64 * step);
            let near = poses.iter().any(|p| (p.translation.x - cx).hypot(p.translation.y - cy) < DENSE_RADIUS);
            let (n, s) = if near { (DENSE_FACTOR, fine) } else { (1, step) };
            for a in 0..n {
                for b in 0..n {
                    let x = cx + (a as f64 + rng.random::<f64>()) * s;
                    let y = cy + (b as f64 + rng.random::<f64>()) * s;
                    pts.push(Vector3::new(x, y, 0.0));
                }
            }
        }
    }

    let clear_of_path = |x: f64, y: f64, r: f64| poses.iter().all(|p| (p.translation.x - x).hypot(p.translation.y - y) > r);

    // Axis-aligned boxes: four sides and a lid.
    let mut placed = 0;
    let mut attempts = 0;
    while placed < spec.boxes && attempts < spec.boxes * 50 {
        attempts += 1;
        let (sx, sy, sz) = (rng.random_range(1.0..5.0), rng.random_range(1.0..5.0), rng.random_range(1.0..4.0));
        let cx = rng.random_range(x0..x1);
        let cy = rng.random_range(y0..y1);
        if !clear_of_path(cx, cy, 3.0 + 0.5 * f64::hypot(sx, sy)) {
            continue;
        }
        placed += 1;
        let (bx0, by0) = (cx - sx / 2.0, cy - sy / 2.0);
        sample_rect(&mut pts, [bx0, by0, 0.0], [sx, 0.0, 0.0], [0.0, 0.0, sz], fine);
        sample_rect(&mut pts, [bx0, by0 + sy, 0.0], [sx, 0.0, 0.0], [0.0, 0.0, sz], fine);
        sample_rect(&mut pts, [bx0, by0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, sz], fine);
        sample_rect(&mut pts, [bx0 + sx, by0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, sz], fine);
        sample_rect(&mut pts, [bx0, by0, sz], [sx, 0.0, 0.0], [0.0, sy, 0.0], fine);
    }

    // Walls: long vertical planes at random offsets and headings.
    let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    for k in 0..spec.walls {
        let side = if k % 2 == 0 { 1.0 } else { -1.0 };
        let heading = rng.random_range(-0.3..0.3) + if matches!(spec.trajectory, Trajectory::Loop) && k >= 2 { PI / 2.0 } else { 0.0 };
        let offset = side * rng.random_range(8.0..15.0);
        let length = rng.random_range(15.0..40.0);
        let height = rng.random_range(3.0..6.0);
        let along = rng.random_range(-0.5..0.5) * (x1 - x0).max(y1 - y0) * 0.5;
        let (c, s) = (heading.cos(), heading.sin());
        let (ox, oy) = (mx + along * c - offset * s, my + along * s + offset * c);
        let start = [ox - length / 2.0 * c, oy - length / 2.0 * s, 0.0];
        sample_rect(&mut pts, start, [length * c, length * s, 0.0], [0.0, 0.0, height], fine);
    }
    pts
}

fn sample_rect(out: &mut Vec<Vector3<f64>>, origin: [f64; 3], a: [f64; 3], b: [f64; 3], step: f64) {
    let (o, a, b) = (Vector3::from(origin), Vector3::from(a), Vector3::from(b));
    let na = (a.norm() / step).ceil().max(1.0) as usize;
    let nb = (b.norm() / step).ceil().max(1.0) as usize;
    for i in 0..=na {
        for j in 0..=nb {
            out.push(o + a * (i as f64 / na as f64) + b * (j as f64 / nb as f64));
        }
    }
}

/// Points of `world` visible from `pose`: inside the sensor's vertical field
/// of view and range limits. No occlusion is modelled.
pub fn observe(world: &[Vector3<f64>], pose: &Pose, projection: &ProjectionConfig) -> PointCloud {
    let inv = pose.inverse();
    let (lo, hi) = (-(projection.fov_down as f64), projection.fov_up as f64);
    let (rmin, rmax) = (projection.min_range as f64, projection.max_range as f64);
    let points = world
        .iter()
        .filter_map(|w| {
            let p = inv.rotation * w + inv.translation;
            let r = p.norm();
            if r < rmin || r > rmax {
                return None;
            }
            let pitch = (p.z / r).asin();
            (pitch >= lo && pitch <= hi).then(|| Point3::new(p.x as f32, p.y as f32, p.z as f32))
        })
        .collect();
    PointCloud::new(points)
}

/// Deterministic synthetic sequence for `spec` and `seed`.
pub fn make_synthetic_sequence(spec: &SceneSpec, projection: &ProjectionConfig, seed: u64) -> Result<ScanSequence> {
    spec.validate()?;
    projection.validate()?;
    let poses = spec.poses();
    let world = scene_points(spec, &poses, seed);
    let scans = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut cloud = observe(&world, pose, projection);
            cloud.frame_id = format!("synthetic-{seed}-{i:06}");
            let timestamp = i as f64 * spec.scan_period;
            cloud.timestamp = Some(timestamp);
            ScanEntry {
                source: ScanSource::Cloud(Arc::new(cloud)),
                pose: *pose,
                timestamp,
            }
        })
        .collect();
    ScanSequence::new(scans)
}
