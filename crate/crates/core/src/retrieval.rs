//! Descriptor database and threshold-swept place-recognition evaluation.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::losses::similarity_from_distance;
use crate::model::{self, Bottleneck, ModelWeights, ProfileKind};
use crate::pointcloud::Pose;
use crate::projection::{project, ProjectionConfig};
use crate::training::ScanSequence;

/// Similarity threshold for accepting a match.
pub const DEFAULT_THRESHOLD: f64 = 0.75;
/// Ground-truth radius for a correct match, meters.
pub const DEFAULT_GT_RADIUS: f64 = 3.0;
/// Scans recorded before this time (seconds) form the map.
pub const MAP_SECONDS: f64 = 170.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub scan_id: u32,
    pub bottleneck: Bottleneck,
    pub pose: Pose,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorDB {
    profile: Option<ProfileKind>,
    records: Vec<DescriptorRecord>,
}

impl DescriptorDB {
    pub fn records(&self) -> &[DescriptorRecord] {
        &self.records
    }

    pub fn profile(&self) -> Option<ProfileKind> {
        self.profile
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Keeps insertion order; rejects mixed profiles and repeated scan ids.
pub fn build_db(records: Vec<DescriptorRecord>) -> Result<DescriptorDB> {
    let profile = records.first().map(|r| r.bottleneck.profile);
    let mut seen = HashSet::new();
    for r in &records {
        if Some(r.bottleneck.profile) != profile {
            return Err(Error::Profile(format!(
                "scan {} is {}, database is {}",
                r.scan_id,
                r.bottleneck.profile,
                profile.expect("nonempty")
            )));
        }
        if !seen.insert(r.scan_id) {
            return Err(Error::InvalidArgument(format!("duplicate scan id {}", r.scan_id)));
        }
    }
    Ok(DescriptorDB { profile, records })
}

/// Records with `timestamp < map_seconds` become the map, the rest queries.
pub fn split_map_queries(records: Vec<DescriptorRecord>, map_seconds: f64) -> (Vec<DescriptorRecord>, Vec<DescriptorRecord>) {
    records.into_iter().partition(|r| r.timestamp < map_seconds)
}

/// Projects and encodes every scan of a sequence; scan ids are positions.
pub fn encode_sequence(weights: &ModelWeights, seq: &ScanSequence, projection: &ProjectionConfig) -> Result<Vec<DescriptorRecord>> {
    const CHUNK: usize = 8;
    let mut out = Vec::with_capacity(seq.len());
    for (c, chunk) in seq.scans.chunks(CHUNK).enumerate() {
        let images = chunk
            .iter()
            .map(|s| project(&s.load()?, projection))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = images.iter().collect();
        let betas = model::encode_batch(weights, &refs)?;
        for (k, (s, b)) in chunk.iter().zip(betas).enumerate() {
            out.push(DescriptorRecord {
                scan_id: (c * CHUNK + k) as u32,
                bottleneck: b,
                pose: s.pose,
                timestamp: s.timestamp,
            });
        }
    }
    Ok(out)
}

/// Scores a query against candidate map records.
pub trait SimilarityScorer {
    fn score(&self, query: &DescriptorRecord, candidates: &[&DescriptorRecord]) -> Result<Vec<f64>>;
}

/// The learned tail network.
pub struct TailScorer<'w> {
    pub weights: &'w ModelWeights,
    /// Candidates evaluated per forward pass.
    pub batch: usize,
}

impl<'w> TailScorer<'w> {
    pub fn new(weights: &'w ModelWeights) -> Self {
        Self { weights, batch: 32 }
    }
}

impl SimilarityScorer for TailScorer<'_> {
    fn score(&self, query: &DescriptorRecord, candidates: &[&DescriptorRecord]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(candidates.len());
        for chunk in candidates.chunks(self.batch.max(1)) {
            let others: Vec<&Bottleneck> = chunk.iter().map(|r| &r.bottleneck).collect();
            out.extend(
                model::tail_similarity_many(self.weights, &query.bottleneck, &others)?
                    .into_iter()
                    .map(f64::from),
            );
        }
        Ok(out)
    }
}

/// Ground truth `exp(−d/m)` from poses, ignoring descriptors.
pub struct OracleScorer {
    pub m: f64,
}

impl SimilarityScorer for OracleScorer {
    fn score(&self, query: &DescriptorRecord, candidates: &[&DescriptorRecord]) -> Result<Vec<f64>> {
        Ok(candidates
            .iter()
            .map(|c| similarity_from_distance(query.pose.distance(&c.pose), self.m))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub best_id: u32,
    pub score: f64,
    pub accepted: bool,
}

fn check_profiles(db: &DescriptorDB, q: &DescriptorRecord) -> Result<()> {
    match db.profile {
        Some(p) if p != q.bottleneck.profile => Err(Error::Profile(format!(
            "query {} is {}, database is {p}",
            q.scan_id, q.bottleneck.profile
        ))),
        _ => Ok(()),
    }
}

/// Highest score wins; equal scores go to the lowest scan id.
fn best_of(db: &DescriptorDB, scores: &[f64]) -> (u32, f64) {
    let mut best: Option<(u32, f64)> = None;
    for (r, &s) in db.records.iter().zip(scores) {
        best = match best {
            Some((id, b)) if b > s || (b == s && id < r.scan_id) => Some((id, b)),
            _ => Some((r.scan_id, s)),
        };
    }
    best.expect("nonempty database")
}

pub fn query(db: &DescriptorDB, q: &DescriptorRecord, scorer: &impl SimilarityScorer, threshold: f64) -> Result<QueryResult> {
    if db.is_empty() {
        return Err(Error::InvalidArgument("cannot query an empty database".into()));
    }
    check_profiles(db, q)?;
    let refs: Vec<&DescriptorRecord> = db.records.iter().collect();
    let scores = scorer.score(q, &refs)?;
    let (best_id, score) = best_of(db, &scores);
    Ok(QueryResult {
        best_id,
        score,
        accepted: score >= threshold,
    })
}

/// `|queries| × |db|` scores, rows in query order.
pub fn pairwise_score_matrix(db: &DescriptorDB, queries: &[DescriptorRecord], scorer: &impl SimilarityScorer) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&DescriptorRecord> = db.records.iter().collect();
    queries
        .iter()
        .map(|q| {
            check_profiles(db, q)?;
            scorer.score(q, &refs)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
}

impl PRCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
        }
        s
    }
}

/// `n` evenly spaced thresholds over `[0, 1]`.
pub fn linspace_thresholds(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Threshold-swept precision and recall.
///
/// An accepted query is a true positive when its best match lies within
/// `gt_radius` of it. Recall is taken over queries that have at least one
/// map record within `gt_radius`.
pub fn evaluate_pr(
    db: &DescriptorDB,
    queries: &[DescriptorRecord],
    scorer: &impl SimilarityScorer,
    gt_radius: f64,
    thresholds: &[f64],
) -> Result<PRCurve> {
    if db.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate against an empty database".into()));
    }
    let mut ts = thresholds.to_vec();
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("thresholds must be finite".into()));
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let matrix = pairwise_score_matrix(db, queries, scorer)?;
    let mut best = Vec::with_capacity(queries.len());
    let mut relevant = 0;
    for (q, scores) in queries.iter().zip(&matrix) {
        let (id, score) = best_of(db, scores);
        let pose = &db.records.iter().find(|r| r.scan_id == id).expect("id from db").pose;
        let correct = q.pose.distance(pose) <= gt_radius;
        if db.records.iter().any(|r| q.pose.distance(&r.pose) <= gt_radius) {
            relevant += 1;
        }
        best.push((score, correct));
    }

    let points = ts
        .into_iter()
        .map(|threshold| {
            let (mut tp, mut fp) = (0, 0);
            for &(score, correct) in &best {
                if score >= threshold {
                    if correct {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            PRPoint {
                threshold,
                precision: if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 },
                recall: if relevant == 0 { 0.0 } else { tp as f64 / relevant as f64 },
                true_positives: tp,
                false_positives: fp,
                relevant,
            }
        })
        .collect();
    Ok(PRCurve { points })
}
