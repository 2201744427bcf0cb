//! Per-point normals, curvature and neighbour spacing.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::kdtree::KdTree;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFeatures {
    /// Unit normal, oriented toward the sensor origin.
    pub normal: [f64; 3],
    /// `λ_min / Σλ` of the neighbourhood covariance, in `[0, 1/3]`.
    pub curvature: f64,
    /// Mean distance to the `k` neighbours, meters.
    pub mean_distance: f64,
    /// The neighbourhood covariance vanished; normal and curvature are defaults.
    pub degenerate: bool,
}

/// Relative eigenvalue sum below which a neighbourhood counts as a single point.
const DEGENERATE_EPS: f64 = 1e-18;

/// Features of every point from its `k` nearest neighbours (itself excluded);
/// the covariance is taken over the point and its neighbours.
pub fn local_features(tree: &KdTree, k: usize) -> Result<Vec<PointFeatures>> {
    if k == 0 || tree.len() <= k {
        return Err(Error::InvalidArgument(format!(
            "local features need more than k = {k} points, got {}",
            tree.len()
        )));
    }
    (0..tree.len())
        .into_par_iter()
        .map(|i| {
            let p = tree.point(i);
            let mut nb = tree.knn(p, k + 1)?;
            match nb.iter().position(|n| n.index == i) {
                Some(pos) => {
                    nb.remove(pos);
                }
                None => {
                    nb.pop();
                }
            }
            let mean_distance = nb.iter().map(|n| n.distance).sum::<f64>() / k as f64;
            let members: Vec<Vector3<f64>> = std::iter::once(p)
                .chain(nb.iter().map(|n| tree.point(n.index)))
                .map(Vector3::from)
                .collect();
            Ok(shape_features(&members, Vector3::from(p), mean_distance))
        })
        .collect()
}

fn shape_features(members: &[Vector3<f64>], p: Vector3<f64>, mean_distance: f64) -> PointFeatures {
    let n = members.len() as f64;
    let centroid = members.iter().sum::<Vector3<f64>>() / n;
    let cov = members
        .iter()
        .map(|m| {
            let d = m - centroid;
            d * d.transpose()
        })
        .sum::<Matrix3<f64>>()
        / n;
    let eig = SymmetricEigen::new(cov);
    let values = eig.eigenvalues.map(|v| v.max(0.0));
    let total = values.sum();
    let scale = members.iter().map(|m| (m - centroid).norm_squared()).sum::<f64>().max(f64::MIN_POSITIVE);
    if total <= DEGENERATE_EPS * scale || total == 0.0 {
        return PointFeatures {
            normal: [0.0, 0.0, 1.0],
            curvature: 0.0,
            mean_distance,
            degenerate: true,
        };
    }
    let min = (0..3).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("three eigenvalues");
    let mut normal: Vector3<f64> = eig.eigenvectors.column(min).normalize();
    let toward_origin = -normal.dot(&p);
    if toward_origin < 0.0 || (toward_origin == 0.0 && first_nonzero_negative(&normal)) {
        normal = -normal;
    }
    PointFeatures {
        normal: normal.into(),
        curvature: (values[min] / total).clamp(0.0, 1.0 / 3.0),
        mean_distance,
        degenerate: false,
    }
}

/// Orientation fallback when the point's ray lies in the tangent plane:
/// make z (then y, then x) positive.
fn first_nonzero_negative(n: &Vector3<f64>) -> bool {
    [n.z, n.y, n.x]
        .into_iter()
        .find(|v| v.abs() > 1e-12)
        .is_some_and(|v| v < 0.0)
}
