//! Reconstruction quality: correspondence ratio and PointSSIM-style
//! geometry, normal and curvature similarity.

mod features;
mod kdtree;

pub use features::{local_features, PointFeatures};
pub use kdtree::{KdTree, Neighbor};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Correspondence radius, meters.
pub const CORR_RADIUS: f64 = 0.5;
/// Default neighbourhood size for local features.
pub const DEFAULT_K: usize = 10;
/// Guard for relative differences of vanishing features.
pub const SIM_EPS: f64 = 1e-9;

fn coords(cloud: &PointCloud) -> Vec<[f64; 3]> {
    cloud.points.iter().map(|p| p.coords()).collect()
}

pub fn build_index(cloud: &PointCloud) -> KdTree {
    KdTree::new(coords(cloud))
}

fn covered_fraction(from: &PointCloud, to: &KdTree, radius: f64) -> Result<f64> {
    let hits = from
        .points
        .par_iter()
        .map(|p| to.nearest(p.coords()).map(|n| (n.distance <= radius) as usize))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / from.len() as f64)
}

/// Mean over both directions of the share of points with a counterpart
/// within `radius`, in percent.
pub fn corr_at(a: &PointCloud, b: &PointCloud, radius: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("correspondence needs two nonempty clouds".into()));
    }
    let (ta, tb) = (build_index(a), build_index(b));
    Ok(50.0 * (covered_fraction(a, &tb, radius)? + covered_fraction(b, &ta, radius)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalScores {
    pub geom: f64,
    pub norm: f64,
    pub curv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityReport {
    /// Percent, at [`CORR_RADIUS`].
    pub corr_at: f64,
    pub geom_sim: f64,
    pub norm_sim: f64,
    pub curv_sim: f64,
    pub k: usize,
    pub a_to_b: DirectionalScores,
    pub b_to_a: DirectionalScores,
}

fn relative_similarity(x: f64, y: f64) -> f64 {
    1.0 - (x - y).abs() / x.max(y).max(SIM_EPS)
}

fn directional(
    from: &KdTree,
    from_features: &[PointFeatures],
    to: &KdTree,
    to_features: &[PointFeatures],
) -> Result<(DirectionalScores, f64)> {
    let per_point = (0..from.len())
        .into_par_iter()
        .map(|i| {
            let nb = to.nearest(from.point(i))?;
            let (fa, fb) = (&from_features[i], &to_features[nb.index]);
            let dot = fa.normal.iter().zip(&fb.normal).map(|(x, y)| x * y).sum::<f64>();
            Ok([
                relative_similarity(fa.mean_distance, fb.mean_distance),
                dot.abs().min(1.0),
                relative_similarity(fa.curvature, fb.curvature),
                (nb.distance <= CORR_RADIUS) as u8 as f64,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_point.len() as f64;
    let mean = |j: usize| per_point.iter().map(|v| v[j]).sum::<f64>() / n;
    Ok((
        DirectionalScores {
            geom: 100.0 * mean(0),
            norm: 100.0 * mean(1),
            curv: 100.0 * mean(2),
        },
        100.0 * mean(3),
    ))
}

/// Feature similarity of two clouds in a shared frame. Each point is paired
/// with its nearest neighbour in the other cloud; both directions are
/// averaged.
pub fn pointssim(a: &PointCloud, b: &PointCloud, k: usize) -> Result<SimilarityReport> {
    if a.len() <= k || b.len() <= k {
        return Err(Error::InvalidArgument(format!(
            "pointssim needs more than k = {k} points per cloud, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ta, tb) = (build_index(a), build_index(b));
    let (fa, fb) = (local_features(&ta, k)?, local_features(&tb, k)?);
    let (ab, corr_ab) = directional(&ta, &fa, &tb, &fb)?;
    let (ba, corr_ba) = directional(&tb, &fb, &ta, &fa)?;
    Ok(SimilarityReport {
        corr_at: (corr_ab + corr_ba) / 2.0,
        geom_sim: (ab.geom + ba.geom) / 2.0,
        norm_sim: (ab.norm + ba.norm) / 2.0,
        curv_sim: (ab.curv + ba.curv) / 2.0,
        k,
        a_to_b: ab,
        b_to_a: ba,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub corr: Stat,
    pub geom: Stat,
    pub norm: Stat,
    pub curv: Stat,
    pub scans: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReconstructionTable {
    pub rows: Vec<TableRow>,
}

impl ReconstructionTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,corr_mean,corr_std,geom_mean,geom_std,norm_mean,norm_std,curv_mean,curv_std\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.method, r.corr.mean, r.corr.std, r.geom.mean, r.geom.std, r.norm.mean, r.norm.std, r.curv.mean, r.curv.std
            ));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let mut s = format!(
            "{:<width$}  {:>12}  {:>12}  {:>12}  {:>12}\n",
            "Method", "Corr@0.5m [%]", "GeomSim [%]", "NormSim [%]", "CurvSim [%]"
        );
        let f = |st: &Stat| format!("{:.1}±{:.1}", st.mean, st.std);
        for r in &self.rows {
            s.push_str(&format!(
                "{:<width$}  {:>13}  {:>12}  {:>12}  {:>12}\n",
                r.method,
                f(&r.corr),
                f(&r.geom),
                f(&r.norm),
                f(&r.curv)
            ));
        }
        s
    }
}

/// Scores each variant against the originals scan by scan and aggregates the
/// per-scan scores. Every variant must hold one cloud per original.
pub fn evaluate_reconstruction(
    originals: &[PointCloud],
    variants: &[(&str, &[PointCloud])],
    k: usize,
) -> Result<ReconstructionTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for (method, clouds) in variants {
        if clouds.len() != originals.len() {
            return Err(Error::InvalidArgument(format!(
                "{method}: {} clouds for {} originals",
                clouds.len(),
                originals.len()
            )));
        }
        let reports = originals
            .iter()
            .zip(clouds.iter())
            .map(|(o, r)| pointssim(o, r, k))
            .collect::<Result<Vec<_>>>()?;
        let col = |f: fn(&SimilarityReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
        rows.push(TableRow {
            method: method.to_string(),
            corr: col(|r| r.corr_at),
            geom: col(|r| r.geom_sim),
            norm: col(|r| r.norm_sim),
            curv: col(|r| r.curv_sim),
            scans: reports.len(),
        });
    }
    Ok(ReconstructionTable { rows })
}
