//! Fusing consecutive scans into a dense global cloud, plus the
//! preprocessing surface reconstruction needs (downsampling, oriented normals).

use std::collections::HashMap;
use std::ops::Range;

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Pose, Vec3, UP};
use crate::ingest::{ScanFrame, Trajectory};
use crate::kdtree::KdTree;

pub const DEFAULT_WINDOW: usize = 20;
pub const DEFAULT_LEAF: f64 = 0.05;
pub const DEFAULT_NORMAL_K: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no scan falls inside the trajectory span")]
    NoUsableScans,
    #[error("need at least {needed} points, cloud has {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Points in the global frame with the sensor origin that observed each one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub viewpoints: Vec<Vec3>,
}

impl GlobalCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies a rigid transform to points, normals and viewpoints.
    pub fn transformed(&self, pose: &Pose) -> GlobalCloud {
        GlobalCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| pose.transform_vector(n)).collect()),
            viewpoints: self
                .viewpoints
                .iter()
                .map(|p| pose.transform_point(p))
                .collect(),
        }
    }

    /// Keeps points satisfying `keep`, preserving order.
    pub fn filtered(&self, keep: impl Fn(&Vec3) -> bool) -> GlobalCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.points[i])).collect();
        GlobalCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| idx.iter().map(|&i| ns[i]).collect()),
            viewpoints: idx.iter().map(|&i| self.viewpoints[i]).collect(),
        }
    }
}

/// Scan indices of a window of `window` scans centred on `keyframe`,
/// shifted to stay inside `0..n_scans`.
pub fn window_range(n_scans: usize, keyframe: usize, window: usize) -> Range<usize> {
    let window = window.clamp(1, n_scans.max(1));
    let half = (window - 1) / 2;
    let start = keyframe.saturating_sub(half).min(n_scans.saturating_sub(window));
    start..(start + window).min(n_scans)
}

/// Transforms each scan into the global frame and concatenates them.
///
/// `mount` maps sensor coordinates into the robot body frame whose poses
/// the trajectory logs. Scans timestamped outside the trajectory span are
/// skipped with a warning.
pub fn accumulate(
    scans: &[ScanFrame],
    traj: &Trajectory,
    mount: &Pose,
) -> Result<GlobalCloud, AggregateError> {
    let placed: Vec<Option<(Pose, &ScanFrame)>> = scans
        .iter()
        .map(|scan| match traj.interpolate(scan.t()) {
            Ok(body) => Some((body.compose(mount), scan)),
            Err(_) => {
                warn!("skipping scan at t={} outside trajectory span", scan.t());
                None
            }
        })
        .collect();
    if placed.iter().all(Option::is_none) {
        return Err(AggregateError::NoUsableScans);
    }
    let parts: Vec<(Vec<Vec3>, Vec3, usize)> = placed
        .par_iter()
        .flatten()
        .map(|(sensor, scan)| {
            let pts: Vec<Vec3> = scan.points().iter().map(|p| sensor.transform_point(p)).collect();
            (pts, sensor.translation, scan.len())
        })
        .collect();
    let total = parts.iter().map(|p| p.2).sum();
    let mut cloud = GlobalCloud {
        points: Vec::with_capacity(total),
        normals: None,
        viewpoints: Vec::with_capacity(total),
    };
    for (pts, origin, n) in parts {
        cloud.points.extend(pts);
        cloud.viewpoints.extend(std::iter::repeat_n(origin, n));
    }
    Ok(cloud)
}

fn leaf_key(p: &Vec3, leaf: f64) -> [i64; 3] {
    [
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    ]
}

/// One centroid per occupied `leaf`-sized cell, in order of first occupancy.
pub fn voxel_downsample(cloud: &GlobalCloud, leaf: f64) -> Result<GlobalCloud, AggregateError> {
    if !(leaf > 0.0 && leaf.is_finite()) {
        return Err(AggregateError::InvalidParameter(format!("leaf {leaf} must be positive")));
    }
    let mut cell_of: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let next = members.len();
        let c = *cell_of.entry(leaf_key(p, leaf)).or_insert(next);
        if c == next {
            members.push(Vec::new());
        }
        members[c].push(i);
    }
    let mut out = GlobalCloud {
        points: Vec::with_capacity(members.len()),
        normals: cloud.normals.as_ref().map(|_| Vec::with_capacity(members.len())),
        viewpoints: Vec::with_capacity(members.len()),
    };
    for m in &members {
        let centroid = m.iter().map(|&i| cloud.points[i]).sum::<Vec3>() / m.len() as f64;
        let nearest = m
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = (cloud.points[a] - centroid).norm_squared();
                let db = (cloud.points[b] - centroid).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("cells are non-empty");
        out.points.push(centroid);
        out.viewpoints.push(cloud.viewpoints[nearest]);
        if let (Some(src), Some(dst)) = (cloud.normals.as_ref(), out.normals.as_mut()) {
            let sum: Vec3 = m.iter().map(|&i| src[i]).sum();
            let n = sum.norm();
            dst.push(if n > 1e-12 { sum / n } else { src[nearest] });
        }
    }
    Ok(out)
}

/// Result of [`estimate_normals`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub cloud: GlobalCloud,
    /// Points whose neighbourhood had rank < 2 and got the default `+z` normal.
    pub degenerate: usize,
}

/// PCA normals from each point and its `k` nearest neighbours, oriented
/// toward the recorded viewpoint.
pub fn estimate_normals(cloud: &GlobalCloud, k: usize) -> Result<NormalEstimate, AggregateError> {
    if k < 3 {
        return Err(AggregateError::InvalidParameter(format!("k = {k} must be at least 3")));
    }
    if cloud.len() < k + 1 {
        return Err(AggregateError::TooFewPoints {
            needed: k + 1,
            have: cloud.len(),
        });
    }
    let tree = KdTree::new(&cloud.points);
    let estimates: Vec<Option<Vec3>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = cloud.points[i];
            let nbrs = tree.knn_excluding(&p, k, i);
            let mut pts = Vec::with_capacity(k + 1);
            pts.push(p);
            pts.extend(nbrs.iter().map(|n| cloud.points[n.index]));
            let n = plane_normal(&pts)?;
            Some(if n.dot(&(cloud.viewpoints[i] - p)) < 0.0 { -n } else { n })
        })
        .collect();
    let degenerate = estimates.iter().filter(|e| e.is_none()).count();
    let normals = estimates.into_iter().map(|e| e.unwrap_or(UP)).collect();
    Ok(NormalEstimate {
        cloud: GlobalCloud {
            points: cloud.points.clone(),
            normals: Some(normals),
            viewpoints: cloud.viewpoints.clone(),
        },
        degenerate,
    })
}

/// Centroid and covariance (divided by n) of a point set.
pub fn covariance(points: &[Vec3]) -> (Vec3, Matrix3<f64>) {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    (centroid, cov / n)
}

/// Eigen-decomposition sorted by ascending eigenvalue.
pub fn sorted_eigen(cov: &Matrix3<f64>) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.map(|i| eig.eigenvalues[i]);
    let vecs = order.map(|i| eig.eigenvectors.column(i).into_owned().normalize());
    (vals, vecs)
}

/// Smallest-variance direction of the neighbourhood, or `None` when the
/// points span fewer than two dimensions.
pub fn plane_normal(points: &[Vec3]) -> Option<Vec3> {
    let (_, cov) = covariance(points);
    let (vals, vecs) = sorted_eigen(&cov);
    let scale = vals[2].max(0.0);
    if scale <= 1e-24 || vals[1] <= 1e-10 * scale {
        return None;
    }
    Some(vecs[0])
}
