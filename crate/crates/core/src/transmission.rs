//! Descriptor streams ("RECB"), quantized payloads, bandwidth accounting and
//! map reconstruction from transmitted descriptors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use half::f16;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bytes::{put_f32s, Reader};
use crate::error::{Error, Result};
use crate::model::{self, Bottleneck, ModelWeights, ProfileKind};
use crate::pointcloud::{PointCloud, Pose};
use crate::projection::{unproject, ProjectionConfig};
use crate::retrieval::DescriptorRecord;

const MAGIC: &[u8; 4] = b"RECB";
const VERSION: u16 = 1;
/// Stream header: magic, version, profile, mode, count.
pub const STREAM_HEADER_BYTES: usize = 4 + 2 + 1 + 1 + 4;
/// Per-record header: scan id, timestamp, 3×4 pose.
pub const RECORD_HEADER_BYTES: usize = 4 + 8 + 12 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizationMode {
    Float32,
    Float16,
    /// Per-descriptor `min`, `max` then one byte per value.
    Uint8,
}

impl QuantizationMode {
    pub fn id(self) -> u8 {
        match self {
            QuantizationMode::Float32 => 0,
            QuantizationMode::Float16 => 1,
            QuantizationMode::Uint8 => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(QuantizationMode::Float32),
            1 => Some(QuantizationMode::Float16),
            2 => Some(QuantizationMode::Uint8),
            _ => None,
        }
    }

    pub fn payload_bytes(self, values: usize) -> usize {
        match self {
            QuantizationMode::Float32 => 4 * values,
            QuantizationMode::Float16 => 2 * values,
            QuantizationMode::Uint8 => 8 + values,
        }
    }
}

impl std::str::FromStr for QuantizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "float32" | "f32" => Ok(QuantizationMode::Float32),
            "float16" | "f16" => Ok(QuantizationMode::Float16),
            "uint8" | "u8" => Ok(QuantizationMode::Uint8),
            other => Err(Error::InvalidArgument(format!(
                "unknown quantization {other:?} (expected float32, float16 or uint8)"
            ))),
        }
    }
}

fn profile_byte(profile: ProfileKind) -> u8 {
    profile.id() as u8
}

fn encode_payload(out: &mut Vec<u8>, values: &[f32], mode: QuantizationMode) {
    match mode {
        QuantizationMode::Float32 => put_f32s(out, values),
        QuantizationMode::Float16 => {
            for &v in values {
                out.extend_from_slice(&f16::from_f32(v).to_le_bytes());
            }
        }
        QuantizationMode::Uint8 => {
            let (lo, hi) = values
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };
            put_f32s(out, &[lo, hi]);
            let span = hi as f64 - lo as f64;
            for &v in values {
                let q = if span > 0.0 {
                    ((v as f64 - lo as f64) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                };
                out.push(q);
            }
        }
    }
}

fn decode_payload(r: &mut Reader, n: usize, mode: QuantizationMode) -> Result<Vec<f32>> {
    match mode {
        QuantizationMode::Float32 => r.f32s(n),
        QuantizationMode::Float16 => Ok(r
            .take(2 * n)?
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect()),
        QuantizationMode::Uint8 => {
            let s = r.f32s(2)?;
            let (lo, hi) = (s[0] as f64, s[1] as f64);
            let step = (hi - lo) / 255.0;
            Ok(r.take(n)?.iter().map(|&q| (lo + q as f64 * step) as f32).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorStream {
    pub profile: ProfileKind,
    pub mode: QuantizationMode,
    pub records: Vec<DescriptorRecord>,
}

/// Serializes `records`, all of which must be `profile` descriptors.
pub fn encode_stream(profile: ProfileKind, mode: QuantizationMode, records: &[DescriptorRecord]) -> Result<Vec<u8>> {
    let n = profile.profile().bottleneck_len();
    let mut out = Vec::with_capacity(STREAM_HEADER_BYTES + records.len() * (RECORD_HEADER_BYTES + mode.payload_bytes(n)));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(profile_byte(profile));
    out.push(mode.id());
    let count = u32::try_from(records.len()).map_err(|_| Error::InvalidArgument("too many records".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for rec in records {
        if rec.bottleneck.profile != profile {
            return Err(Error::Profile(format!(
                "scan {} is {}, stream is {profile}",
                rec.scan_id, rec.bottleneck.profile
            )));
        }
        if rec.bottleneck.values.len() != n {
            return Err(Error::Profile(format!("scan {}: {} values, expected {n}", rec.scan_id, rec.bottleneck.values.len())));
        }
        if rec.bottleneck.values.iter().any(|v| !v.is_finite()) || !rec.timestamp.is_finite() {
            return Err(Error::InvalidArgument(format!("scan {}: non-finite values cannot be serialized", rec.scan_id)));
        }
        out.extend_from_slice(&rec.scan_id.to_le_bytes());
        out.extend_from_slice(&rec.timestamp.to_le_bytes());
        let pose: Vec<f32> = rec.pose.to_row_major().iter().map(|&v| v as f32).collect();
        put_f32s(&mut out, &pose);
        encode_payload(&mut out, &rec.bottleneck.values, mode);
    }
    Ok(out)
}

pub fn decode_stream(bytes: &[u8]) -> Result<DescriptorStream> {
    let mut r = Reader::new("descriptor stream", bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format("descriptor stream", 4, format!("unsupported version {version}")));
    }
    let profile_id = r.u8()?;
    let profile = ProfileKind::from_id(profile_id as u16)
        .map_err(|e| Error::format("descriptor stream", 6, e.to_string()))?;
    let mode_id = r.u8()?;
    let mode = QuantizationMode::from_id(mode_id)
        .ok_or_else(|| Error::format("descriptor stream", 7, format!("unknown quantization mode {mode_id}")))?;
    let count = r.u32()? as usize;
    let n = profile.profile().bottleneck_len();
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let scan_id = r.u32()?;
        let timestamp = r.f64()?;
        let at = r.offset();
        let raw = r.f32s(12)?;
        let mut pose = [0.0f64; 12];
        for (p, v) in pose.iter_mut().zip(raw) {
            *p = v as f64;
        }
        let pose = Pose::from_row_major(&pose)
            .map_err(|e| Error::format("descriptor stream", at, e.to_string()))?;
        let values = decode_payload(&mut r, n, mode)?;
        let at = r.offset();
        let bottleneck = Bottleneck::new(profile, values)
            .map_err(|e| Error::format("descriptor stream", at, e.to_string()))?;
        records.push(DescriptorRecord {
            scan_id,
            bottleneck,
            pose,
            timestamp,
        });
    }
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    Ok(DescriptorStream { profile, mode, records })
}

/// A one-record stream.
pub fn serialize_descriptor(record: &DescriptorRecord, mode: QuantizationMode) -> Result<Vec<u8>> {
    encode_stream(record.bottleneck.profile, mode, std::slice::from_ref(record))
}

pub fn deserialize_descriptor(bytes: &[u8]) -> Result<DescriptorRecord> {
    let mut s = decode_stream(bytes)?;
    if s.records.len() != 1 {
        return Err(Error::format(
            "descriptor stream",
            8,
            format!("expected one record, found {}", s.records.len()),
        ));
    }
    Ok(s.records.remove(0))
}

pub fn write_descriptors(path: impl AsRef<Path>, profile: ProfileKind, mode: QuantizationMode, records: &[DescriptorRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_stream(profile, mode, records)?).map_err(|e| Error::io(path, e))
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<DescriptorStream> {
    let path = path.as_ref();
    decode_stream(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Bytes per point of a KITTI scan on the wire.
pub const RAW_POINT_BYTES: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGroup {
    pub count: u64,
    pub points: u64,
    /// Bytes per scan; defaults to `points × 16`.
    pub bytes: Option<u64>,
}

impl ScanGroup {
    pub fn bytes_per_scan(&self) -> u64 {
        self.bytes.unwrap_or(self.points * RAW_POINT_BYTES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorGroup {
    pub count: u64,
    /// Serialized bytes per descriptor.
    pub bytes: u64,
}

/// What a mission transmitted, grouped by identical item sizes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionManifest {
    /// Seconds.
    pub duration: f64,
    #[serde(default)]
    pub scan_group: Vec<ScanGroup>,
    #[serde(default)]
    pub descriptor_group: Vec<DescriptorGroup>,
}

impl MissionManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn report(&self) -> Result<MissionStats> {
        let raw: u64 = self.scan_group.iter().map(|g| g.count * g.bytes_per_scan()).sum();
        let desc: u64 = self.descriptor_group.iter().map(|g| g.count * g.bytes).sum();
        mission_totals(raw, desc, self.duration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissionStats {
    pub duration: f64,
    pub raw_bytes_per_s: f64,
    pub descriptor_bytes_per_s: f64,
    pub raw_total_bytes: u64,
    pub descriptor_total_bytes: u64,
    /// Raw rate over descriptor rate; infinite without descriptors.
    pub ratio: f64,
}

pub const LABEL_DURATION: &str = "Mission Duration (s)";
pub const LABEL_RAW_RATE: &str = "Bandwidth for transmitting original clouds (kB/s)";
pub const LABEL_DESC_RATE: &str = "Bandwidth for bottleneck vectors (kB/s)";
pub const LABEL_RAW_SIZE: &str = "Final map size from original clouds (MB)";
pub const LABEL_DESC_SIZE: &str = "Final size of bottleneck vectors (MB)";
pub const LABEL_RATIO: &str = "Bandwidth reduction (x)";

fn mission_totals(raw: u64, desc: u64, duration: f64) -> Result<MissionStats> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!("mission duration must be > 0, got {duration}")));
    }
    let raw_rate = raw as f64 / duration;
    let desc_rate = desc as f64 / duration;
    Ok(MissionStats {
        duration,
        raw_bytes_per_s: raw_rate,
        descriptor_bytes_per_s: desc_rate,
        raw_total_bytes: raw,
        descriptor_total_bytes: desc,
        ratio: if desc == 0 { f64::INFINITY } else { raw as f64 / desc as f64 },
    })
}

/// `scans` are `(point count, bytes)`; `descriptors` are serialized sizes.
pub fn mission_report(scans: &[(u64, u64)], descriptors: &[u64], duration: f64) -> Result<MissionStats> {
    mission_totals(scans.iter().map(|s| s.1).sum(), descriptors.iter().sum(), duration)
}

impl MissionStats {
    /// kB/s with 1 kB = 1000 B.
    pub fn raw_kb_per_s(&self) -> f64 {
        self.raw_bytes_per_s / 1e3
    }

    pub fn descriptor_kb_per_s(&self) -> f64 {
        self.descriptor_bytes_per_s / 1e3
    }

    /// MB with 1 MB = 10⁶ B.
    pub fn raw_mb(&self) -> f64 {
        self.raw_total_bytes as f64 / 1e6
    }

    pub fn descriptor_mb(&self) -> f64 {
        self.descriptor_total_bytes as f64 / 1e6
    }

    /// Two-column text table, one row per statistic.
    pub fn to_table(&self, column: &str) -> String {
        let ratio = if self.ratio.is_finite() { format!("{:.2}", self.ratio) } else { "inf".into() };
        table(
            &[column],
            &[
                (LABEL_DURATION, vec![fmt_num(self.duration)]),
                (LABEL_RAW_RATE, vec![fmt_num(self.raw_kb_per_s())]),
                (LABEL_DESC_RATE, vec![fmt_num(self.descriptor_kb_per_s())]),
                (LABEL_RAW_SIZE, vec![fmt_num(self.raw_mb())]),
                (LABEL_DESC_SIZE, vec![fmt_num(self.descriptor_mb())]),
                (LABEL_RATIO, vec![ratio]),
            ],
        )
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn table(columns: &[&str], rows: &[(&str, Vec<String>)]) -> String {
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Statistics:".len());
    let col_w: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| rows.iter().map(|r| r.1[i].len()).max().unwrap_or(0).max(c.len()))
        .collect();
    let mut s = String::new();
    let _ = write!(s, "{:<label_w$}", "Statistics:");
    for (c, w) in columns.iter().zip(&col_w) {
        let _ = write!(s, "  {c:>w$}");
    }
    s.push('\n');
    for (label, vals) in rows {
        let _ = write!(s, "{label:<label_w$}");
        for (v, w) in vals.iter().zip(&col_w) {
            let _ = write!(s, "  {v:>w$}");
        }
        s.push('\n');
    }
    s
}

/// Published mission figures for two recorded drives, echoed for
/// comparison. Not derived from any computation here.
pub fn reference_missions_table() -> String {
    let rows = [
        (LABEL_DURATION, ["470", "368"]),
        (LABEL_RAW_RATE, ["2,560", "1,220"]),
        (LABEL_DESC_RATE, ["131", "88"]),
        (LABEL_RAW_SIZE, ["897", "204"]),
        (LABEL_DESC_SIZE, ["62", "33"]),
    ];
    let rows: Vec<(&str, Vec<String>)> = rows
        .iter()
        .map(|(l, v)| (*l, v.iter().map(|s| s.to_string()).collect()))
        .collect();
    table(&["KITTI", "LTU"], &rows)
}

/// Decodes every descriptor, unprojects it and places it in the world with
/// `poses[scan_id]`. Scans are concatenated in scan-id order.
pub fn reconstruct_map(
    records: &[DescriptorRecord],
    weights: &ModelWeights,
    poses: &BTreeMap<u32, Pose>,
    projection: &ProjectionConfig,
) -> Result<PointCloud> {
    let mut ordered: Vec<&DescriptorRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.scan_id);
    for r in &ordered {
        if !poses.contains_key(&r.scan_id) {
            return Err(Error::Lookup(format!("no pose for scan {}", r.scan_id)));
        }
    }
    let parts = ordered
        .par_iter()
        .map(|r| {
            let image = model::decode(weights, &r.bottleneck, projection)?;
            Ok(unproject(&image).transformed(&poses[&r.scan_id]))
        })
        .collect::<Result<Vec<PointCloud>>>()?;
    let mut map = PointCloud::new(parts.into_iter().flat_map(|c| c.points).collect());
    map.frame_id = "map".into();
    Ok(map)
}

/// Poses carried inside the records themselves.
pub fn embedded_poses(records: &[DescriptorRecord]) -> BTreeMap<u32, Pose> {
    records.iter().map(|r| (r.scan_id, r.pose)).collect()
}
