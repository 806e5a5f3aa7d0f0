//! Run configuration: a flat TOML table. Unknown keys are rejected and
//! relative paths resolve against the configuration file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use travgt_core::geom::{Pose, Vec3, VoxelGridSpec};
use travgt_core::label::FootprintSpec;
use travgt_core::pipeline::{PipelineParams, ReferenceScope};
use travgt_core::surface::ReconstructionParams;
use travgt_core::synth::LidarModel;

use crate::error::{read_text, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scan_dir: PathBuf,
    pub trajectory: PathBuf,
    pub output_dir: PathBuf,
    /// Scene description used by `synth` and `pipeline`.
    pub terrain: Option<PathBuf>,

    pub grid_min: [f64; 3],
    pub grid_max: [f64; 3],
    pub voxel_size: [f64; 3],

    pub window: usize,
    /// Scans between keyframes; defaults to `window`.
    pub keyframe_stride: Option<usize>,
    pub leaf: f64,
    pub normal_k: usize,
    /// Sensor position in the body frame whose poses the trajectory logs.
    pub sensor_offset: [f64; 3],

    pub backend: String,
    pub lattice_spacing: f64,
    pub support_radius: f64,
    pub mls_neighbors: usize,
    pub max_lattice_nodes: usize,

    pub feature_k: usize,

    pub footprint_length: f64,
    pub footprint_width: f64,
    pub footprint_z_band: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// `keyframe` or `sequence`.
    pub reference_scope: String,

    /// Overrides the terrain seed when set.
    pub seed: Option<u64>,
    /// Worker threads; machine parallelism when unset.
    pub threads: Option<usize>,

    pub lidar_rings: usize,
    pub lidar_elevation_min: f64,
    pub lidar_elevation_max: f64,
    pub lidar_azimuth_step: f64,
    pub lidar_max_range: f64,
    pub lidar_noise_sigma: f64,
    /// Simulate a scan at every n-th trajectory sample.
    pub scan_every: usize,
}

impl Default for Config {
    fn default() -> Self {
        let grid = VoxelGridSpec::default_label_grid();
        let p = PipelineParams::default();
        let l = LidarModel::default();
        Self {
            scan_dir: "scans".into(),
            trajectory: "trajectory.csv".into(),
            output_dir: "out".into(),
            terrain: None,
            grid_min: grid.min_corner().into(),
            grid_max: grid.max_corner().into(),
            voxel_size: grid.voxel_size().into(),
            window: p.window,
            keyframe_stride: None,
            leaf: p.leaf,
            normal_k: p.normal_k,
            sensor_offset: [0.0, 0.0, 1.9],
            backend: p.backend,
            lattice_spacing: p.reconstruction.lattice_spacing,
            support_radius: p.reconstruction.support_radius,
            mls_neighbors: p.reconstruction.neighbors,
            max_lattice_nodes: p.reconstruction.max_nodes,
            feature_k: p.feature_k,
            footprint_length: p.footprint.length,
            footprint_width: p.footprint.width,
            footprint_z_band: p.footprint.z_band,
            alpha: p.alpha,
            lambda: p.lambda,
            reference_scope: "keyframe".into(),
            seed: None,
            threads: None,
            lidar_rings: l.rings,
            lidar_elevation_min: l.elevation_min_deg,
            lidar_elevation_max: l.elevation_max_deg,
            lidar_azimuth_step: l.azimuth_step_deg,
            lidar_max_range: l.max_range,
            lidar_noise_sigma: l.noise_sigma,
            scan_every: 1,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let mut cfg = Self::from_toml(&text).map_err(|e| CliError::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.scan_dir);
        fix(&mut self.trajectory);
        fix(&mut self.output_dir);
        if let Some(t) = self.terrain.as_mut() {
            fix(t);
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.grid()?;
        self.scope()?;
        self.pipeline_params()?.validate().map_err(|e| e.to_string())?;
        self.lidar().validate().map_err(|e| e.to_string())?;
        if self.keyframe_stride == Some(0) || self.scan_every == 0 || self.threads == Some(0) {
            return Err("keyframe_stride, scan_every and threads must be at least 1".into());
        }
        if self.sensor_offset.iter().any(|v| !v.is_finite()) {
            return Err("sensor_offset must be finite".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<VoxelGridSpec, String> {
        VoxelGridSpec::new(self.grid_min.into(), self.grid_max.into(), self.voxel_size.into())
            .map_err(|e| format!("grid: {e}"))
    }

    fn scope(&self) -> Result<ReferenceScope, String> {
        match self.reference_scope.as_str() {
            "keyframe" => Ok(ReferenceScope::Keyframe),
            "sequence" => Ok(ReferenceScope::Sequence),
            other => Err(format!("unknown reference_scope `{other}` (keyframe|sequence)")),
        }
    }

    pub fn mount(&self) -> Pose {
        Pose::from_translation_yaw(0.0, Vec3::from(self.sensor_offset), 0.0)
    }

    pub fn pipeline_params(&self) -> Result<PipelineParams, String> {
        Ok(PipelineParams {
            grid: self.grid()?,
            window: self.window,
            leaf: self.leaf,
            normal_k: self.normal_k,
            backend: self.backend.clone(),
            reconstruction: ReconstructionParams {
                lattice_spacing: self.lattice_spacing,
                support_radius: self.support_radius,
                neighbors: self.mls_neighbors,
                max_nodes: self.max_lattice_nodes,
            },
            feature_k: self.feature_k,
            footprint: FootprintSpec {
                length: self.footprint_length,
                width: self.footprint_width,
                z_band: self.footprint_z_band,
            },
            alpha: self.alpha,
            lambda: self.lambda,
            mount: self.mount(),
            scope: self.scope()?,
        })
    }

    pub fn lidar(&self) -> LidarModel {
        LidarModel {
            rings: self.lidar_rings,
            elevation_min_deg: self.lidar_elevation_min,
            elevation_max_deg: self.lidar_elevation_max,
            azimuth_step_deg: self.lidar_azimuth_step,
            max_range: self.lidar_max_range,
            noise_sigma: self.lidar_noise_sigma,
            ..LidarModel::default()
        }
    }

    pub fn keyframe_stride(&self) -> usize {
        self.keyframe_stride.unwrap_or(self.window)
    }
}
