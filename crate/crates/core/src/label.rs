//! Trajectory-guided labelling.
//!
//! Voxels swept by the robot footprint are traversable by observation. Their
//! features define a Gaussian reference; every other occupied voxel is
//! potentially traversable when its squared Mahalanobis distance to that
//! reference is within the χ²₃ quantile, and non-traversable otherwise.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, Matrix3, Vector3};
use rayon::prelude::*;
use statrs::function::gamma::gamma_lr;
use thiserror::Error;

use crate::features::FeatureGrid;
use crate::geom::{TravLabel, Vec3, VoxelGridSpec};
use crate::ingest::Trajectory;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_LAMBDA: f64 = 1e-6;
/// Feature dimension: elevation, slope, roughness.
pub const FEATURE_DIM: u32 = 3;
/// Maximum spacing between stamped footprint poses, in meters.
pub const STAMP_SPACING: f64 = 0.1;
const MIN_REFERENCE_SAMPLES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("trajectory footprint covers no occupied voxel")]
    EmptyTrajectoryOverlap,
    #[error("need at least {needed} trajectory voxels, got {have}")]
    TooFewTrajectoryVoxels { needed: usize, have: usize },
    #[error("covariance is not positive definite")]
    SingularCovariance,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Robot ground-contact rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintSpec {
    /// Extent along the heading, meters.
    pub length: f64,
    /// Extent across the heading, meters.
    pub width: f64,
    /// Vertical tolerance about the pose height, meters.
    pub z_band: f64,
}

impl Default for FootprintSpec {
    fn default() -> Self {
        Self {
            length: 1.0,
            width: 0.8,
            z_band: 0.3,
        }
    }
}

impl FootprintSpec {
    pub fn validate(&self) -> Result<(), LabelError> {
        if [self.length, self.width, self.z_band]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            Ok(())
        } else {
            Err(LabelError::InvalidParameter(
                "footprint dimensions must be positive".into(),
            ))
        }
    }
}

/// Linear indices of occupied voxels under the robot footprint.
///
/// The trajectory is resampled at most [`STAMP_SPACING`] apart. At each
/// pose an oriented rectangle is stamped; a voxel qualifies when its centre
/// lies in the rectangle (or the voxel column contains the pose itself) and
/// its centre height is within `z_band` of the pose.
pub fn trajectory_voxels(
    traj: &Trajectory,
    grid: &VoxelGridSpec,
    fp: &FootprintSpec,
    feature_grid: &FeatureGrid,
) -> Result<BTreeSet<usize>, LabelError> {
    fp.validate()?;
    let vs = grid.voxel_size();
    let lo = grid.min_corner();
    let dims = grid.dims();
    let reach = 0.5 * fp.length.hypot(fp.width);
    let mut out = BTreeSet::new();

    let cell_range = |axis: usize, a: f64, b: f64| -> Option<(usize, usize)> {
        // voxels whose centre lies in [a, b]
        let first = ((a - lo[axis]) / vs[axis] - 0.5).ceil().max(0.0);
        let last = ((b - lo[axis]) / vs[axis] - 0.5).floor();
        if last < 0.0 || first > last {
            return None;
        }
        let last = (last as usize).min(dims[axis] - 1);
        let first = first as usize;
        (first <= last).then_some((first, last))
    };

    for pose in resample(traj, STAMP_SPACING) {
        let c = pose.translation;
        let (sin, cos) = pose.yaw().sin_cos();
        let Some((z0, z1)) = cell_range(2, c.z - fp.z_band, c.z + fp.z_band) else {
            continue;
        };
        let column = grid.voxel_index(&Vec3::new(c.x, c.y, lo.z));
        let (Some((x0, x1)), Some((y0, y1))) = (
            cell_range(0, c.x - reach, c.x + reach),
            cell_range(1, c.y - reach, c.y + reach),
        ) else {
            continue;
        };
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                let under_pose = column.is_some_and(|col| col[0] == ix && col[1] == iy);
                let center = grid.voxel_center([ix, iy, 0]);
                let d = center - c;
                let along = cos * d.x + sin * d.y;
                let across = -sin * d.x + cos * d.y;
                let in_rect = along.abs() <= 0.5 * fp.length && across.abs() <= 0.5 * fp.width;
                if !(in_rect || under_pose) {
                    continue;
                }
                for iz in z0..=z1 {
                    let lin = grid.linear_index([ix, iy, iz]);
                    if feature_grid.is_occupied(lin) {
                        out.insert(lin);
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(LabelError::EmptyTrajectoryOverlap);
    }
    Ok(out)
}

/// Poses at every sample plus interpolated poses between samples so that
/// consecutive positions are at most `spacing` apart.
fn resample(traj: &Trajectory, spacing: f64) -> Vec<crate::geom::Pose> {
    let s = traj.samples();
    let mut out = vec![s[0]];
    for w in s.windows(2) {
        let dist = (w[1].translation - w[0].translation).norm();
        let steps = (dist / spacing).ceil().max(1.0) as usize;
        for i in 1..=steps {
            let t = w[0].t + (w[1].t - w[0].t) * i as f64 / steps as f64;
            let t = if i == steps { w[1].t } else { t };
            out.push(traj.interpolate(t).expect("time inside span"));
        }
    }
    out
}

/// Multivariate Gaussian fitted to trajectory-voxel features.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    pub mu: Vector3<f64>,
    pub sigma: Matrix3<f64>,
    pub sample_count: usize,
    pub lambda: f64,
}

impl ReferenceModel {
    /// Mean and unbiased covariance of `samples`, with `lambda·I` added.
    pub fn fit(samples: &[Vector3<f64>], lambda: f64) -> Result<Self, LabelError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LabelError::InvalidParameter("lambda must be positive".into()));
        }
        if samples.len() < MIN_REFERENCE_SAMPLES {
            return Err(LabelError::TooFewTrajectoryVoxels {
                needed: MIN_REFERENCE_SAMPLES,
                have: samples.len(),
            });
        }
        let (mu, sigma) = sample_moments(samples);
        let sigma = sigma + Matrix3::identity() * lambda;
        Ok(Self {
            mu,
            sigma,
            sample_count: samples.len(),
            lambda,
        })
    }

    fn cholesky(&self) -> Result<Cholesky<f64, nalgebra::U3>, LabelError> {
        Cholesky::new(self.sigma).ok_or(LabelError::SingularCovariance)
    }
}

/// Mean and unbiased (n − 1) covariance, symmetrized. Needs two samples.
pub fn sample_moments(samples: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
    assert!(samples.len() >= 2, "covariance needs at least two samples");
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<Vector3<f64>>() / n;
    let mut sigma = Matrix3::zeros();
    for s in samples {
        let d = s - mu;
        sigma += d * d.transpose();
    }
    sigma /= n - 1.0;
    (mu, (sigma + sigma.transpose()) * 0.5)
}

/// Reference model over the features of `traj_voxels`.
pub fn fit_reference(
    feature_grid: &FeatureGrid,
    traj_voxels: &BTreeSet<usize>,
    lambda: f64,
) -> Result<ReferenceModel, LabelError> {
    let samples: Vec<Vector3<f64>> = traj_voxels
        .iter()
        .filter_map(|&k| feature_grid.get(k))
        .map(|c| Vector3::from(c.mean.to_array()))
        .collect();
    ReferenceModel::fit(&samples, lambda)
}

/// `(F − μ)ᵀ Σ⁻¹ (F − μ)` via a Cholesky solve.
pub fn mahalanobis_sq(f: &Vector3<f64>, model: &ReferenceModel) -> Result<f64, LabelError> {
    Ok(mahalanobis_sq_with(&model.cholesky()?, f, &model.mu))
}

fn mahalanobis_sq_with(
    chol: &Cholesky<f64, nalgebra::U3>,
    f: &Vector3<f64>,
    mu: &Vector3<f64>,
) -> f64 {
    // with Σ = L Lᵀ, D² = ‖L⁻¹ (F − μ)‖²
    let d = f - mu;
    let y = chol
        .l_dirty()
        .solve_lower_triangular(&d)
        .expect("Cholesky factor has a positive diagonal");
    y.norm_squared()
}

/// The `(1 − alpha)` quantile of χ² with `dof` degrees of freedom, found by
/// bisection on the regularized lower incomplete gamma function.
pub fn chi2_threshold(dof: u32, alpha: f64) -> f64 {
    assert!(dof >= 1, "degrees of freedom must be positive");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let k = dof as f64 / 2.0;
    let target = 1.0 - alpha;
    let cdf = |x: f64| gamma_lr(k, x / 2.0);
    let mut lo = 0.0;
    let mut hi = dof as f64;
    while cdf(hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Dense per-voxel labels over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    spec: VoxelGridSpec,
    labels: Vec<TravLabel>,
}

impl LabelGrid {
    pub fn unoccupied(spec: VoxelGridSpec) -> Self {
        Self {
            labels: vec![TravLabel::Unoccupied; spec.voxel_count()],
            spec,
        }
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn labels(&self) -> &[TravLabel] {
        &self.labels
    }

    pub fn get(&self, linear: usize) -> TravLabel {
        self.labels[linear]
    }

    pub fn set(&mut self, linear: usize, label: TravLabel) {
        self.labels[linear] = label;
    }

    pub fn label_at(&self, p: &Vec3) -> TravLabel {
        self.spec
            .voxel_index(p)
            .map_or(TravLabel::Unoccupied, |i| self.labels[self.spec.linear_index(i)])
    }

    /// Counts of T, P, N and Unoccupied voxels.
    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for l in &self.labels {
            c[*l as usize] += 1;
        }
        c
    }
}

/// Assigns T to trajectory voxels, then P/N by the χ² threshold (inclusive).
pub fn label_grid(
    feature_grid: &FeatureGrid,
    traj_voxels: &BTreeSet<usize>,
    model: &ReferenceModel,
    threshold: f64,
) -> Result<LabelGrid, LabelError> {
    if !(threshold > 0.0) {
        return Err(LabelError::InvalidParameter("threshold must be positive".into()));
    }
    let mut grid = LabelGrid::unoccupied(*feature_grid.spec());
    if feature_grid.occupied_count() == 0 {
        return Ok(grid);
    }
    let chol = model.cholesky()?;
    let cells: Vec<(usize, [f64; 3])> = feature_grid
        .iter()
        .map(|(k, c)| (k, c.mean.to_array()))
        .collect();
    let assigned: Vec<(usize, TravLabel)> = cells
        .par_iter()
        .map(|&(k, f)| {
            let label = if traj_voxels.contains(&k) {
                TravLabel::Traversable
            } else if mahalanobis_sq_with(&chol, &Vector3::from(f), &model.mu) <= threshold {
                TravLabel::PotentiallyTraversable
            } else {
                TravLabel::NonTraversable
            };
            (k, label)
        })
        .collect();
    for (k, l) in assigned {
        grid.set(k, l);
    }
    Ok(grid)
}
