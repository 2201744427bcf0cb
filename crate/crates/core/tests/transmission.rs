use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recnet::model::{self, Bottleneck, ModelWeights, ProfileKind};
use recnet::projection::unproject;
use recnet::retrieval::DescriptorRecord;
use recnet::transmission::*;
use recnet::{Error, Pose};

fn descriptor(kind: ProfileKind, id: u32, lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> DescriptorRecord {
    let n = kind.profile().bottleneck_len();
    DescriptorRecord {
        scan_id: id,
        bottleneck: Bottleneck::new(kind, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap(),
        pose: Pose::from_yaw(0.3 * id as f64, [id as f64, -2.0, 1.5]),
        timestamp: 0.1 * id as f64,
    }
}

#[test]
fn kitti_payload_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rec = descriptor(ProfileKind::Kitti, 0, -1.0, 1.0, &mut rng);
    let header = STREAM_HEADER_BYTES + RECORD_HEADER_BYTES;
    assert_eq!(serialize_descriptor(&rec, QuantizationMode::Float32).unwrap().len(), 65_536 + header);
    assert_eq!(serialize_descriptor(&rec, QuantizationMode::Float16).unwrap().len(), 32_768 + header);
    assert_eq!(serialize_descriptor(&rec, QuantizationMode::Uint8).unwrap().len(), 16_384 + 8 + header);
}

#[test]
fn float32_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let recs: Vec<_> = (0..5).map(|i| descriptor(ProfileKind::Mini, i, -30.0, 30.0, &mut rng)).collect();
    let s = decode_stream(&encode_stream(ProfileKind::Mini, QuantizationMode::Float32, &recs).unwrap()).unwrap();
    assert_eq!((s.profile, s.mode), (ProfileKind::Mini, QuantizationMode::Float32));
    for (a, b) in recs.iter().zip(&s.records) {
        assert_eq!(a.scan_id, b.scan_id);
        assert_eq!(a.timestamp.to_bits(), b.timestamp.to_bits());
        let bits = |r: &DescriptorRecord| r.bottleneck.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
        assert!(a.pose.distance(&b.pose) < 1e-5);
    }
}

#[test]
fn uint8_unit_interval_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rec = descriptor(ProfileKind::Kitti, 1, 0.0, 1.0, &mut rng);
    let back = deserialize_descriptor(&serialize_descriptor(&rec, QuantizationMode::Uint8).unwrap()).unwrap();
    let err = rec
        .bottleneck
        .values
        .iter()
        .zip(&back.bottleneck.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(err as f64 <= 1.0 / 510.0 + 1e-7, "{err}");
}

fn half_ulp(v: f32) -> f64 {
    let a = v.abs() as f64;
    if a < 2f64.powi(-14) {
        2f64.powi(-24)
    } else {
        2f64.powi(a.log2().floor() as i32 - 10)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quantized_round_trips_within_bounds(seed in any::<u64>(), lo in -50.0f32..0.0, width in 0.001f32..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rec = descriptor(ProfileKind::Mini, 7, lo, lo + width, &mut rng);
        let v = &rec.bottleneck.values;
        let (min, max) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));

        let u8_back = deserialize_descriptor(&serialize_descriptor(&rec, QuantizationMode::Uint8).unwrap()).unwrap();
        let bound = (max as f64 - min as f64) / 510.0 + 1e-6 * (1.0 + max.abs().max(min.abs()) as f64);
        for (a, b) in v.iter().zip(&u8_back.bottleneck.values) {
            prop_assert!(((a - b).abs() as f64) <= bound);
        }

        let f16_back = deserialize_descriptor(&serialize_descriptor(&rec, QuantizationMode::Float16).unwrap()).unwrap();
        for (a, b) in v.iter().zip(&f16_back.bottleneck.values) {
            prop_assert!(((a - b).abs() as f64) <= half_ulp(*a) / 2.0 * 1.0001 + 1e-12 || a.abs() > 65504.0);
        }
    }
}

#[test]
fn float16_in_eight_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rec = descriptor(ProfileKind::Mini, 2, -8.0, 8.0, &mut rng);
    let back = deserialize_descriptor(&serialize_descriptor(&rec, QuantizationMode::Float16).unwrap()).unwrap();
    for (a, b) in rec.bottleneck.values.iter().zip(&back.bottleneck.values) {
        assert!(((a - b).abs() as f64) <= half_ulp(*a) / 2.0);
    }
}

#[test]
fn constant_descriptor_uint8() {
    let n = ProfileKind::Mini.profile().bottleneck_len();
    let rec = DescriptorRecord {
        scan_id: 0,
        bottleneck: Bottleneck::new(ProfileKind::Mini, vec![2.5; n]).unwrap(),
        pose: Pose::identity(),
        timestamp: 0.0,
    };
    let back = deserialize_descriptor(&serialize_descriptor(&rec, QuantizationMode::Uint8).unwrap()).unwrap();
    assert!(back.bottleneck.values.iter().all(|&v| v == 2.5));
}

#[test]
fn malformed_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rec = descriptor(ProfileKind::Mini, 0, -1.0, 1.0, &mut rng);
    let bytes = serialize_descriptor(&rec, QuantizationMode::Float32).unwrap();
    let payload_at = STREAM_HEADER_BYTES + RECORD_HEADER_BYTES;
    match deserialize_descriptor(&bytes[..payload_at + 10]) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, payload_at),
        other => panic!("expected format error, got {other:?}"),
    }
    match deserialize_descriptor(&bytes[..20]) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
        other => panic!("expected format error, got {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(deserialize_descriptor(&bad), Err(Error::Format { offset: 0, .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(deserialize_descriptor(&bad), Err(Error::Format { offset: 4, .. })));
    let mut bad = bytes.clone();
    bad[7] = 7;
    assert!(matches!(deserialize_descriptor(&bad), Err(Error::Format { offset: 7, .. })));
    let mut long = bytes.clone();
    long.push(0);
    assert!(deserialize_descriptor(&long).is_err());

    let mut nan = rec.clone();
    nan.bottleneck.values[3] = f32::NAN;
    assert!(matches!(serialize_descriptor(&nan, QuantizationMode::Float32), Err(Error::InvalidArgument(_))));
    let kitti = descriptor(ProfileKind::Kitti, 1, -1.0, 1.0, &mut rng);
    assert!(matches!(encode_stream(ProfileKind::Mini, QuantizationMode::Float32, &[kitti]), Err(Error::Profile(_))));
}

#[test]
fn descriptor_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let recs: Vec<_> = (0..3).map(|i| descriptor(ProfileKind::Mini, i, -1.0, 1.0, &mut rng)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.recb");
    write_descriptors(&path, ProfileKind::Mini, QuantizationMode::Float16, &recs).unwrap();
    let s = read_descriptors(&path).unwrap();
    assert_eq!(s.mode, QuantizationMode::Float16);
    assert_eq!(s.records.len(), 3);
    assert_eq!("u8".parse::<QuantizationMode>().unwrap(), QuantizationMode::Uint8);
    assert!("int4".parse::<QuantizationMode>().is_err());
}

#[test]
fn synthetic_manifest_arithmetic() {
    let scans = vec![(100_000, 1_600_000); 100];
    let stats = mission_report(&scans, &[65_536; 100], 10.0).unwrap();
    assert_eq!(stats.raw_kb_per_s(), 16_000.0);
    assert!((stats.descriptor_kb_per_s() - 655.36).abs() < 1e-9);
    assert!((stats.ratio - 1_600_000.0 / 65_536.0).abs() < 1e-12);
    assert!((stats.ratio - 24.41).abs() < 0.01);
    assert_eq!(stats.raw_mb(), 160.0);
    assert!((stats.descriptor_mb() - 6.5536).abs() < 1e-12);

    let manifest = MissionManifest::from_toml(
        "duration = 10.0\n[[scan_group]]\ncount = 100\npoints = 100000\n[[descriptor_group]]\ncount = 100\nbytes = 65536\n",
    )
    .unwrap();
    assert_eq!(manifest.report().unwrap(), stats);
    assert_eq!(MissionManifest::from_toml(&manifest.to_toml()).unwrap(), manifest);

    let table = stats.to_table("Synthetic");
    for label in [LABEL_DURATION, LABEL_RAW_RATE, LABEL_DESC_RATE, LABEL_RAW_SIZE, LABEL_DESC_SIZE, LABEL_RATIO] {
        assert!(table.contains(label), "{label}");
    }
    assert!(table.contains("16000") && table.contains("655.36") && table.contains("24.41"));
}

#[test]
fn mission_edge_cases() {
    let stats = mission_report(&[(10, 160)], &[], 1.0).unwrap();
    assert_eq!(stats.descriptor_bytes_per_s, 0.0);
    assert!(stats.ratio.is_infinite());
    assert!(stats.to_table("x").contains("inf"));
    assert!(mission_report(&[(10, 160)], &[10], 0.0).is_err());
    assert!(MissionManifest::from_toml("duration = 0.0").unwrap().report().is_err());

    let reference = reference_missions_table();
    assert!(reference.contains("2,560") && reference.contains("1,220") && reference.contains(LABEL_DESC_SIZE));
}

#[test]
fn float32_descriptor_beats_raw_scan_tenfold() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rec = descriptor(ProfileKind::Kitti, 0, -1.0, 1.0, &mut rng);
    let desc = serialize_descriptor(&rec, QuantizationMode::Float32).unwrap().len() as f64;
    let raw = 120_000.0 * RAW_POINT_BYTES as f64;
    assert!(raw / desc > 10.0);
}

fn mini_record(weights: &ModelWeights, id: u32, pose: Pose) -> DescriptorRecord {
    let proj = ProfileKind::Mini.projection();
    let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
    let data = (0..proj.width * proj.height).map(|_| rng.random_range(0.0..40.0)).collect();
    let image = recnet::RangeImage::new(data, proj).unwrap();
    DescriptorRecord {
        scan_id: id,
        bottleneck: model::encode(weights, &image).unwrap(),
        pose,
        timestamp: id as f64,
    }
}

#[test]
fn reconstruct_map_cases() {
    let weights = ModelWeights::init(ProfileKind::Mini, 8);
    let proj = ProfileKind::Mini.projection();
    let rec = mini_record(&weights, 0, Pose::identity());

    let single = reconstruct_map(std::slice::from_ref(&rec), &weights, &embedded_poses(std::slice::from_ref(&rec)), &proj).unwrap();
    let expected = unproject(&model::decode(&weights, &rec.bottleneck, &proj).unwrap());
    assert_eq!(single.points, expected.points);

    let shifted = DescriptorRecord {
        scan_id: 1,
        pose: Pose::from_yaw(0.0, [10.0, 0.0, 0.0]),
        ..rec.clone()
    };
    let pair = [shifted.clone(), rec.clone()];
    let map = reconstruct_map(&pair, &weights, &embedded_poses(&pair), &proj).unwrap();
    let n = expected.len();
    assert_eq!(map.len(), 2 * n);
    for (a, b) in map.points[..n].iter().zip(&map.points[n..]) {
        assert!((b.x - a.x - 10.0).abs() < 1e-4 && (b.y - a.y).abs() < 1e-5 && (b.z - a.z).abs() < 1e-5);
    }

    let empty = reconstruct_map(&[], &weights, &BTreeMap::new(), &proj).unwrap();
    assert!(empty.is_empty());
    assert!(matches!(reconstruct_map(&pair, &weights, &BTreeMap::new(), &proj), Err(Error::Lookup(_))));

    // A rigid transform of every pose moves the map by the same transform.
    let t = Pose::from_yaw(0.7, [3.0, -4.0, 1.0]);
    let moved: BTreeMap<u32, Pose> = embedded_poses(&pair).into_iter().map(|(k, p)| (k, t.compose(&p))).collect();
    let map_t = reconstruct_map(&pair, &weights, &moved, &proj).unwrap();
    for (a, b) in map.points.iter().zip(&map_t.points) {
        assert!(t.transform_point(a).distance(b) < 1e-4);
    }
}
