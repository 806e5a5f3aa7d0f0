//! Per-keyframe ground-truth generation.
//!
//! Each keyframe anchors an ego frame: the robot pose at the keyframe scan
//! with roll and pitch removed. Scans in the surrounding window are fused,
//! expressed in that frame, reconstructed into a mesh, reduced to voxel
//! features and labelled against a reference fitted on the voxels the robot
//! drove over.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use log::info;
use thiserror::Error;

use crate::aggregate::{self, AggregateError, DEFAULT_LEAF, DEFAULT_NORMAL_K, DEFAULT_WINDOW};
use crate::features::{self, FeatureError, FeatureGrid, DEFAULT_FEATURE_K};
use crate::geom::{Pose, Vec3, VoxelGridSpec};
use crate::ingest::{IngestError, ScanFrame, Trajectory};
use crate::label::{
    self, FootprintSpec, LabelError, LabelGrid, ReferenceModel, DEFAULT_ALPHA, DEFAULT_LAMBDA, FEATURE_DIM,
};
use crate::surface::{self, ReconstructionParams, SurfaceError, TriMesh};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("keyframe {0} is out of range")]
    NoSuchKeyframe(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pose lookup: {0}")]
    Ingest(#[from] IngestError),
    #[error("aggregation: {0}")]
    Aggregate(#[from] AggregateError),
    #[error("reconstruction: {0}")]
    Surface(#[from] SurfaceError),
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("labelling: {0}")]
    Label(#[from] LabelError),
}

/// Where the reference Gaussian is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceScope {
    /// One reference per keyframe from that keyframe's trajectory voxels.
    #[default]
    Keyframe,
    /// One reference pooled over all processed keyframes.
    Sequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub grid: VoxelGridSpec,
    /// Number of scans fused per keyframe.
    pub window: usize,
    pub leaf: f64,
    pub normal_k: usize,
    pub backend: String,
    pub reconstruction: ReconstructionParams,
    pub feature_k: usize,
    pub footprint: FootprintSpec,
    pub alpha: f64,
    pub lambda: f64,
    /// Sensor pose in the body frame logged by the trajectory.
    pub mount: Pose,
    pub scope: ReferenceScope,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            grid: VoxelGridSpec::default_label_grid(),
            window: DEFAULT_WINDOW,
            leaf: DEFAULT_LEAF,
            normal_k: DEFAULT_NORMAL_K,
            backend: "mls".into(),
            reconstruction: ReconstructionParams::default(),
            feature_k: DEFAULT_FEATURE_K,
            footprint: FootprintSpec::default(),
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            mount: Pose::identity(0.0),
            scope: ReferenceScope::Keyframe,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidParameter(m.into()));
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if !(self.leaf > 0.0 && self.leaf.is_finite()) {
            return bad("leaf must be positive");
        }
        if self.normal_k < 3 || self.feature_k < 3 {
            return bad("neighbourhood sizes must be at least 3");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        self.reconstruction.validate()?;
        self.footprint.validate()?;
        surface::backend_by_name(&self.backend)?;
        Ok(())
    }
}

/// Everything computed for one keyframe.
#[derive(Debug, Clone)]
pub struct KeyframeOutput {
    pub keyframe: usize,
    /// World pose of the ego frame.
    pub ego: Pose,
    pub mesh: TriMesh,
    pub features: FeatureGrid,
    pub traj_voxels: BTreeSet<usize>,
    pub model: ReferenceModel,
    pub labels: LabelGrid,
    pub timings: Vec<(&'static str, Duration)>,
}

struct Prepared {
    keyframe: usize,
    ego: Pose,
    mesh: TriMesh,
    features: FeatureGrid,
    traj_voxels: BTreeSet<usize>,
    timings: Vec<(&'static str, Duration)>,
}

struct Timer(Vec<(&'static str, Duration)>, Instant);

impl Timer {
    fn new() -> Self {
        Timer(Vec::new(), Instant::now())
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.0.push((stage, now - self.1));
        self.1 = now;
    }
}

/// Default keyframes: every `stride`-th scan inside the trajectory span.
pub fn keyframes(scans: &[ScanFrame], traj: &Trajectory, stride: usize) -> Vec<usize> {
    (0..scans.len())
        .step_by(stride.max(1))
        .filter(|&i| traj.contains_time(scans[i].t()))
        .collect()
}

/// Runs the pipeline for each of `keyframes`.
pub fn run(
    scans: &[ScanFrame],
    traj: &Trajectory,
    keyframes: &[usize],
    params: &PipelineParams,
) -> Result<Vec<KeyframeOutput>, PipelineError> {
    params.validate()?;
    let prepared = keyframes
        .iter()
        .map(|&k| prepare(scans, traj, k, params))
        .collect::<Result<Vec<_>, _>>()?;
    let pooled = match params.scope {
        ReferenceScope::Keyframe => None,
        ReferenceScope::Sequence => {
            let samples: Vec<_> = prepared
                .iter()
                .flat_map(|p| {
                    p.traj_voxels
                        .iter()
                        .filter_map(|k| p.features.get(*k))
                        .map(|c| nalgebra::Vector3::from(c.mean.to_array()))
                })
                .collect();
            Some(ReferenceModel::fit(&samples, params.lambda)?)
        }
    };
    let threshold = label::chi2_threshold(FEATURE_DIM, params.alpha);
    prepared
        .into_iter()
        .map(|p| {
            let mut timer = Timer::new();
            let model = match &pooled {
                Some(m) => m.clone(),
                None => label::fit_reference(&p.features, &p.traj_voxels, params.lambda)?,
            };
            timer.lap("fit");
            let labels = label::label_grid(&p.features, &p.traj_voxels, &model, threshold)?;
            timer.lap("label");
            let [t, pt, n, _] = labels.counts();
            info!("keyframe {}: T={t} P={pt} N={n}", p.keyframe);
            let mut timings = p.timings;
            timings.extend(timer.0);
            Ok(KeyframeOutput {
                keyframe: p.keyframe,
                ego: p.ego,
                mesh: p.mesh,
                features: p.features,
                traj_voxels: p.traj_voxels,
                model,
                labels,
                timings,
            })
        })
        .collect()
}

/// World pose of the gravity-aligned ego frame at scan `keyframe`.
pub fn ego_pose(scans: &[ScanFrame], traj: &Trajectory, keyframe: usize) -> Result<Pose, PipelineError> {
    let scan = scans.get(keyframe).ok_or(PipelineError::NoSuchKeyframe(keyframe))?;
    Ok(traj.interpolate(scan.t())?.gravity_aligned())
}

fn prepare(
    scans: &[ScanFrame],
    traj: &Trajectory,
    keyframe: usize,
    params: &PipelineParams,
) -> Result<Prepared, PipelineError> {
    let mut timer = Timer::new();
    let ego = ego_pose(scans, traj, keyframe)?;
    let to_ego = ego.inverse();
    let range = aggregate::window_range(scans.len(), keyframe, params.window);
    let world = aggregate::accumulate(&scans[range], traj, &params.mount)?;
    let grid = &params.grid;
    let margin = (3.0 * params.reconstruction.support_radius).max(1.0);
    let (lo, hi) = (grid.min_corner() - Vec3::repeat(margin), grid.max_corner() + Vec3::repeat(margin));
    let local = world
        .transformed(&to_ego)
        .filtered(|p| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]));
    drop(world);
    let down = aggregate::voxel_downsample(&local, params.leaf)?;
    timer.lap("aggregate");
    let oriented = aggregate::estimate_normals(&down, params.normal_k)?.cloud;
    timer.lap("normals");
    let backend = surface::backend_by_name(&params.backend)?;
    let mesh = surface::crop_mesh(&backend.reconstruct(&oriented, &params.reconstruction)?, grid);
    timer.lap("reconstruct");
    let feats = features::vertex_features(&mesh, params.feature_k)?;
    let fgrid = features::voxelize_features(&feats, &mesh, grid);
    timer.lap("features");
    let traj_voxels = label::trajectory_voxels(&traj.transformed(&to_ego), grid, &params.footprint, &fgrid)?;
    timer.lap("trajectory");
    Ok(Prepared {
        keyframe,
        ego,
        mesh,
        features: fgrid,
        traj_voxels,
        timings: timer.0,
    })
}
