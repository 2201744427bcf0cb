use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recnet::model::{Bottleneck, ModelWeights, ProfileKind};
use recnet::retrieval::*;
use recnet::{Error, Pose};

fn record(id: u32, pose: Pose, timestamp: f64, rng: &mut ChaCha8Rng) -> DescriptorRecord {
    let n = ProfileKind::Mini.profile().bottleneck_len();
    let values = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    DescriptorRecord {
        scan_id: id,
        bottleneck: Bottleneck::new(ProfileKind::Mini, values).unwrap(),
        pose,
        timestamp,
    }
}

/// Two laps of a circle; the second lap is shifted by a fraction of a step
/// so every query has a unique nearest map pose.
fn two_laps(per_lap: usize, radius: f64) -> (Vec<DescriptorRecord>, Vec<DescriptorRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut all = Vec::new();
    for lap in 0..2 {
        for i in 0..per_lap {
            let a = 2.0 * PI * (i as f64 + 0.3 * lap as f64) / per_lap as f64;
            let id = (lap * per_lap + i) as u32;
            let pose = Pose::from_yaw(a, [radius * a.cos(), radius * a.sin(), 0.0]);
            all.push(record(id, pose, id as f64, &mut rng));
        }
    }
    split_map_queries(all, per_lap as f64)
}

#[test]
fn build_db_rules() {
    assert!(build_db(vec![]).unwrap().is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = record(1, Pose::identity(), 0.0, &mut rng);
    let b = record(1, Pose::identity(), 1.0, &mut rng);
    assert!(matches!(build_db(vec![a.clone(), b]), Err(Error::InvalidArgument(_))));

    let kitti = DescriptorRecord {
        scan_id: 2,
        bottleneck: Bottleneck::new(ProfileKind::Kitti, vec![0.0; ProfileKind::Kitti.profile().bottleneck_len()]).unwrap(),
        ..a.clone()
    };
    assert!(matches!(build_db(vec![a.clone(), kitti.clone()]), Err(Error::Profile(_))));
    let db = build_db(vec![a]).unwrap();
    assert!(matches!(query(&db, &kitti, &OracleScorer { m: 10.0 }, 0.5), Err(Error::Profile(_))));
    assert!(query(&DescriptorDB::default(), &kitti, &OracleScorer { m: 10.0 }, 0.5).is_err());
}

#[test]
fn split_is_strictly_before_map_seconds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let recs: Vec<_> = [0.0, 169.9, 170.0, 250.0]
        .iter()
        .enumerate()
        .map(|(i, &t)| record(i as u32, Pose::identity(), t, &mut rng))
        .collect();
    let (map, queries) = split_map_queries(recs, MAP_SECONDS);
    assert_eq!(map.iter().map(|r| r.scan_id).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(queries.iter().map(|r| r.scan_id).collect::<Vec<_>>(), vec![2, 3]);
}

#[test]
fn oracle_best_match_is_nearest_pose() {
    let (map, queries) = two_laps(30, 20.0);
    let db = build_db(map.clone()).unwrap();
    let oracle = OracleScorer { m: 10.0 };
    for q in &queries {
        let got = query(&db, q, &oracle, DEFAULT_THRESHOLD).unwrap();
        let nearest = map
            .iter()
            .min_by(|a, b| q.pose.distance(&a.pose).total_cmp(&q.pose.distance(&b.pose)))
            .unwrap();
        assert_eq!(got.best_id, nearest.scan_id);
    }
}

#[test]
fn oracle_precision_and_recall_are_one() {
    let (map, queries) = two_laps(40, 25.0);
    let db = build_db(map).unwrap();
    let m = 10.0;
    let t = (-DEFAULT_GT_RADIUS / m).exp() - 1e-9;
    let curve = evaluate_pr(&db, &queries, &OracleScorer { m }, DEFAULT_GT_RADIUS, &[0.0, t, 0.9]).unwrap();
    for p in &curve.points {
        if p.true_positives + p.false_positives > 0 {
            assert_eq!(p.precision, 1.0);
        }
    }
    assert_eq!(curve.points[1].recall, 1.0);
    assert_eq!(curve.points[0].recall, 1.0);
}

#[test]
fn no_relevant_queries_means_zero_recall() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let db = build_db(vec![record(0, Pose::identity(), 0.0, &mut rng)]).unwrap();
    let far = record(1, Pose::from_yaw(0.0, [100.0, 0.0, 0.0]), 1.0, &mut rng);
    let curve = evaluate_pr(&db, &[far], &OracleScorer { m: 10.0 }, 3.0, &[0.0, 0.5]).unwrap();
    assert_eq!(curve.points[0].recall, 0.0);
    assert_eq!(curve.points[0].precision, 0.0);
    // Nothing accepted at 0.5: precision falls back to 1.
    assert_eq!(curve.points[1].precision, 1.0);
}

#[test]
fn recall_nonincreasing_in_threshold() {
    let (map, queries) = two_laps(24, 8.0);
    let db = build_db(map).unwrap();
    let curve = evaluate_pr(&db, &queries, &OracleScorer { m: 10.0 }, 1.0, &linspace_thresholds(41)).unwrap();
    for w in curve.points.windows(2) {
        assert!(w[0].threshold < w[1].threshold);
        assert!(w[1].recall <= w[0].recall);
        assert!(w[1].true_positives + w[1].false_positives <= w[0].true_positives + w[0].false_positives);
    }
    let csv = curve.to_csv();
    assert_eq!(csv.lines().count(), 42);
    assert!(csv.starts_with("threshold,precision,recall\n"));
}

#[test]
fn tail_scorer_self_query_and_matrix() {
    let weights = ModelWeights::init(ProfileKind::Mini, 2);
    let (map, queries) = two_laps(6, 10.0);
    let db = build_db(map.clone()).unwrap();
    let scorer = TailScorer::new(&weights);

    let own = &map[3];
    let got = query(&db, own, &scorer, 0.0).unwrap();
    let fixed = recnet::model::tail_similarity(&weights, &own.bottleneck, &own.bottleneck).unwrap() as f64;
    assert!(got.score >= fixed);
    assert!(!query(&db, own, &scorer, 1.01).unwrap().accepted);

    let matrix = pairwise_score_matrix(&db, &queries, &scorer).unwrap();
    assert_eq!(matrix, pairwise_score_matrix(&db, &queries, &scorer).unwrap());
    assert_eq!((matrix.len(), matrix[0].len()), (queries.len(), map.len()));
    for (q, row) in queries.iter().zip(&matrix) {
        for (r, &s) in map.iter().zip(row) {
            let single = recnet::model::tail_similarity(&weights, &q.bottleneck, &r.bottleneck).unwrap() as f64;
            assert!((s - single).abs() < 1e-6);
        }
        let best = query(&db, q, &scorer, 0.5).unwrap();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.score, max);
    }
    assert!(pairwise_score_matrix(&db, &[], &scorer).unwrap().is_empty());
}

#[test]
fn ties_go_to_lowest_scan_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = Pose::from_yaw(0.0, [1.0, 0.0, 0.0]);
    let db = build_db(vec![record(9, p, 0.0, &mut rng), record(4, p, 0.0, &mut rng), record(7, p, 0.0, &mut rng)]).unwrap();
    let q = record(20, Pose::identity(), 5.0, &mut rng);
    assert_eq!(query(&db, &q, &OracleScorer { m: 10.0 }, 0.0).unwrap().best_id, 4);
}

#[test]
fn linspace_edges() {
    assert!(linspace_thresholds(0).is_empty());
    assert_eq!(linspace_thresholds(3), vec![0.0, 0.5, 1.0]);
}
