//! Spherical projection between point clouds and range images.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::bytes::{put_f32s, Reader};
use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub width: usize,
    pub height: usize,
    /// Radians above the horizon.
    pub fov_up: f32,
    /// Radians below the horizon.
    pub fov_down: f32,
    pub min_range: f32,
    pub max_range: f32,
}

impl ProjectionConfig {
    /// 64-beam KITTI sensor: 64×900, +3°/−25°.
    pub fn kitti() -> Self {
        Self {
            width: 900,
            height: 64,
            fov_up: 3f32.to_radians(),
            fov_down: 25f32.to_radians(),
            min_range: 1.0,
            max_range: 80.0,
        }
    }

    /// 32-beam Ouster OS1-32: 32×450, ±16.6°.
    pub fn os1_32() -> Self {
        Self {
            width: 450,
            height: 32,
            fov_up: 16.6f32.to_radians(),
            fov_down: 16.6f32.to_radians(),
            min_range: 1.0,
            max_range: 80.0,
        }
    }

    pub fn fov(&self) -> f64 {
        self.fov_up as f64 + self.fov_down as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("projection config: {m}")));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image must be at least 1x1, got {}x{}", self.height, self.width));
        }
        if self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return bad(format!("image {}x{} exceeds 65535", self.height, self.width));
        }
        if !(self.fov().is_finite() && self.fov() > 0.0) {
            return bad(format!("fov_up + fov_down must be positive, got {}", self.fov()));
        }
        if !(self.min_range >= 0.0 && self.min_range < self.max_range && self.max_range.is_finite()) {
            return bad(format!(
                "need 0 <= min_range < max_range, got {} and {}",
                self.min_range, self.max_range
            ));
        }
        Ok(())
    }

    /// Continuous image coordinates `(u, v)` of a direction.
    pub fn image_coords(&self, x: f64, y: f64, z: f64) -> (f64, f64) {
        let r = (x * x + y * y + z * z).sqrt();
        let yaw = y.atan2(x);
        let pitch = (z / r).clamp(-1.0, 1.0).asin();
        let u = 0.5 * (1.0 - yaw / PI) * self.width as f64;
        let v = (1.0 - (pitch + self.fov_down as f64) / self.fov()) * self.height as f64;
        (u, v)
    }

    /// Yaw and pitch of the centre of pixel `(row, col)`.
    pub fn pixel_angles(&self, row: usize, col: usize) -> (f64, f64) {
        let yaw = PI * (1.0 - 2.0 * (col as f64 + 0.5) / self.width as f64);
        let pitch = (1.0 - (row as f64 + 0.5) / self.height as f64) * self.fov() - self.fov_down as f64;
        (yaw, pitch)
    }
}

/// Radians per pixel along u and v: `(2π/w, f/h)`.
pub fn angular_resolution(config: &ProjectionConfig) -> (f64, f64) {
    (
        2.0 * PI / config.width as f64,
        config.fov() / config.height as f64,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    /// Row-major ranges in meters; 0 = no return.
    pub data: Vec<f32>,
    pub config: ProjectionConfig,
}

impl RangeImage {
    pub fn zeros(config: ProjectionConfig) -> Self {
        Self {
            data: vec![0.0; config.width * config.height],
            config,
        }
    }

    pub fn new(data: Vec<f32>, config: ProjectionConfig) -> Result<Self> {
        config.validate()?;
        if data.len() != config.width * config.height {
            return Err(Error::InvalidArgument(format!(
                "range image has {} values, expected {}x{}",
                data.len(),
                config.height,
                config.width
            )));
        }
        Ok(Self { data, config })
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.config.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.config.width + col] = value;
    }

    pub fn valid_count(&self) -> usize {
        let min = self.config.min_range;
        self.data.iter().filter(|&&r| r > 0.0 && r >= min).count()
    }

    /// Ranges divided by `max_range`, the scale the network sees.
    pub fn normalized(&self) -> Vec<f32> {
        let s = self.config.max_range;
        self.data.iter().map(|&r| r / s).collect()
    }

    /// Inverse of [`normalized`](Self::normalized) with the inference-time
    /// clean-up: values are clamped to [0, 1], scaled, and anything below
    /// `min_range` becomes "no return".
    pub fn from_normalized(values: &[f32], config: ProjectionConfig) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| {
                let r = v.clamp(0.0, 1.0) * config.max_range;
                if r < config.min_range || !r.is_finite() || r <= 0.0 {
                    0.0
                } else {
                    r
                }
            })
            .collect();
        Self::new(data, config)
    }
}

pub fn project(cloud: &PointCloud, config: &ProjectionConfig) -> Result<RangeImage> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut image = RangeImage::zeros(*config);
    let (min, max) = (config.min_range as f64, config.max_range as f64);
    for p in &cloud.points {
        let [x, y, z] = p.coords();
        let r = (x * x + y * y + z * z).sqrt();
        if r == 0.0 || r < min || r > max || !r.is_finite() {
            continue;
        }
        let (u, v) = config.image_coords(x, y, z);
        let v = v.floor();
        if v < 0.0 || v >= h as f64 {
            continue;
        }
        let mut col = u.floor() as usize;
        if col >= w {
            col = 0;
        }
        let idx = v as usize * w + col;
        let r = r as f32;
        let cur = image.data[idx];
        if cur == 0.0 || r < cur {
            image.data[idx] = r;
        }
    }
    Ok(image)
}

pub fn unproject(image: &RangeImage) -> PointCloud {
    let cfg = &image.config;
    let mut points = Vec::with_capacity(image.valid_count());
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            let r = image.get(row, col);
            if !(r > 0.0 && r >= cfg.min_range) {
                continue;
            }
            let (yaw, pitch) = cfg.pixel_angles(row, col);
            let r = r as f64;
            points.push(Point3::new(
                (r * pitch.cos() * yaw.cos()) as f32,
                (r * pitch.cos() * yaw.sin()) as f32,
                (r * pitch.sin()) as f32,
            ));
        }
    }
    PointCloud::new(points)
}

const RIMG_MAGIC: &[u8; 4] = b"RIMG";
const RIMG_VERSION: u16 = 1;

pub fn encode_range_image(image: &RangeImage) -> Vec<u8> {
    let c = &image.config;
    let mut out = Vec::with_capacity(26 + image.data.len() * 4);
    out.extend_from_slice(RIMG_MAGIC);
    out.extend_from_slice(&RIMG_VERSION.to_le_bytes());
    out.extend_from_slice(&(c.height as u16).to_le_bytes());
    out.extend_from_slice(&(c.width as u16).to_le_bytes());
    put_f32s(&mut out, &[c.fov_up, c.fov_down, c.min_range, c.max_range]);
    put_f32s(&mut out, &image.data);
    out
}

pub fn decode_range_image(bytes: &[u8]) -> Result<RangeImage> {
    let mut r = Reader::new("range image", bytes);
    r.expect_magic(RIMG_MAGIC)?;
    let version = r.u16()?;
    if version != RIMG_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let height = r.u16()? as usize;
    let width = r.u16()? as usize;
    let header = r.f32s(4)?;
    let config = ProjectionConfig {
        width,
        height,
        fov_up: header[0],
        fov_down: header[1],
        min_range: header[2],
        max_range: header[3],
    };
    config
        .validate()
        .map_err(|e| Error::format("range image", 6, e.to_string()))?;
    let data = r.f32s(width * height)?;
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    RangeImage::new(data, config)
}

pub fn write_range_image(image: &RangeImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_range_image(image)).map_err(|e| Error::io(path, e))
}

pub fn read_range_image(path: impl AsRef<Path>) -> Result<RangeImage> {
    let path = path.as_ref();
    decode_range_image(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_point_lands_mid_width() {
        let cfg = ProjectionConfig::kitti();
        let img = project(&PointCloud::new(vec![Point3::new(10.0, 0.0, 0.0)]), &cfg).unwrap();
        assert_eq!(img.get(6, 450), 10.0);
        assert_eq!(img.valid_count(), 1);
    }

    #[test]
    fn nearest_wins() {
        let cfg = ProjectionConfig::kitti();
        let cloud = PointCloud::new(vec![Point3::new(8.0, 0.0, 0.0), Point3::new(5.0, 0.0, 0.0)]);
        let img = project(&cloud, &cfg).unwrap();
        assert_eq!(img.get(6, 450), 5.0);
    }

    #[test]
    fn out_of_range_points_are_dropped() {
        let cfg = ProjectionConfig::kitti();
        let cloud = PointCloud::new(vec![
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(90.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 10.0),
        ]);
        assert_eq!(project(&cloud, &cfg).unwrap().valid_count(), 0);
    }

    #[test]
    fn yaw_minus_pi_wraps_to_column_zero() {
        let cfg = ProjectionConfig::kitti();
        let (u, _) = cfg.image_coords(-10.0, -0.0, 0.0);
        assert_eq!(u, cfg.width as f64);
        let img = project(&PointCloud::new(vec![Point3::new(-10.0, -0.0, 0.0)]), &cfg).unwrap();
        assert_eq!(img.get(6, 0), 10.0);
    }

    #[test]
    fn resolution() {
        let (du, dv) = angular_resolution(&ProjectionConfig::kitti());
        assert!((du - 0.006981317).abs() < 1e-8);
        assert!((dv - 28f64.to_radians() / 64.0).abs() < 1e-7);
        let mut one = ProjectionConfig::kitti();
        one.width = 1;
        one.height = 1;
        let (du, dv) = angular_resolution(&one);
        assert_eq!(du, 2.0 * PI);
        assert!((dv - one.fov()).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ProjectionConfig::kitti();
        c.width = 0;
        assert!(c.validate().is_err());
        let mut c = ProjectionConfig::kitti();
        c.fov_up = -c.fov_down;
        assert!(c.validate().is_err());
        let mut c = ProjectionConfig::kitti();
        c.min_range = 100.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rimg_round_trip_and_errors() {
        let mut img = RangeImage::zeros(ProjectionConfig::os1_32());
        img.set(3, 7, 12.5);
        let bytes = encode_range_image(&img);
        assert_eq!(bytes.len(), 4 + 2 + 2 + 2 + 16 + 32 * 450 * 4);
        assert_eq!(decode_range_image(&bytes).unwrap(), img);
        assert!(matches!(decode_range_image(&bytes[..100]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_range_image(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn normalization_clamps_and_gates() {
        let cfg = ProjectionConfig::kitti();
        let mut vals = vec![0.0f32; cfg.width * cfg.height];
        vals[0] = 0.5;
        vals[1] = 1.5;
        vals[2] = -0.2;
        vals[3] = 0.005;
        let img = RangeImage::from_normalized(&vals, cfg).unwrap();
        assert_eq!(&img.data[..4], &[40.0, 80.0, 0.0, 0.0]);
    }
}
