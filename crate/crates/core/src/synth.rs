//! Analytic heightfield terrains, a ray-marched virtual LiDAR and path
//! following trajectories. These provide scenes whose geometry is known
//! exactly, for testing the rest of the pipeline.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Pose, Vec3};
use crate::ingest::{ScanFrame, Trajectory};

/// Ray-march step, meters.
pub const MARCH_STEP: f64 = 0.05;
/// Bracket width at which bisection stops, meters.
pub const BISECT_TOL: f64 = 1e-6;
/// Trajectory sampling rate, Hz.
pub const TRAJECTORY_RATE: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("point ({0}, {1}) lies outside every terrain region")]
    OutsideTerrain(f64, f64),
    #[error("invalid terrain: {0}")]
    InvalidSpec(String),
    #[error("scan produced no returns")]
    NoReturns,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionKind {
    Flat {
        z0: f64,
    },
    /// Rises by `tan(slope)` per meter along `heading` measured from `origin`.
    Ramp {
        z0: f64,
        slope: f64,
        heading: f64,
        origin: [f64; 2],
    },
    /// `z0 + a·sin(2πx/λ)·sin(2πy/λ)` in world coordinates.
    Rough {
        z0: f64,
        amplitude: f64,
        wavelength: f64,
    },
    /// Ground at `z0` with a band of `thickness` raised by `height`, centred
    /// along the region's longer axis.
    Wall {
        z0: f64,
        height: f64,
        thickness: f64,
    },
}

/// An axis-aligned rectangle `[min, max]` in x/y with one terrain kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub kind: RegionKind,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    fn overlaps(&self, o: &Region) -> bool {
        self.min[0] < o.max[0] && o.min[0] < self.max[0] && self.min[1] < o.max[1] && o.min[1] < self.max[1]
    }

    fn in_wall_band(&self, x: f64, y: f64, thickness: f64) -> bool {
        let cx = 0.5 * (self.min[0] + self.max[0]);
        let cy = 0.5 * (self.min[1] + self.max[1]);
        if self.max[0] - self.min[0] >= self.max[1] - self.min[1] {
            (y - cy).abs() <= 0.5 * thickness
        } else {
            (x - cx).abs() <= 0.5 * thickness
        }
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            RegionKind::Flat { z0 } => z0,
            RegionKind::Ramp { z0, slope, heading, origin } => {
                let along = (x - origin[0]) * heading.cos() + (y - origin[1]) * heading.sin();
                z0 + slope.tan() * along
            }
            RegionKind::Rough { z0, amplitude, wavelength } => {
                let k = 2.0 * PI / wavelength;
                z0 + amplitude * (k * x).sin() * (k * y).sin()
            }
            RegionKind::Wall { z0, height, thickness } => {
                if self.in_wall_band(x, y, thickness) {
                    z0 + height
                } else {
                    z0
                }
            }
        }
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        match self.kind {
            RegionKind::Flat { .. } | RegionKind::Wall { .. } => [0.0, 0.0],
            RegionKind::Ramp { slope, heading, .. } => {
                let t = slope.tan();
                [t * heading.cos(), t * heading.sin()]
            }
            RegionKind::Rough { amplitude, wavelength, .. } => {
                let k = 2.0 * PI / wavelength;
                [
                    amplitude * k * (k * x).cos() * (k * y).sin(),
                    amplitude * k * (k * x).sin() * (k * y).cos(),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainSpec {
    regions: Vec<Region>,
    pub seed: u64,
}

impl TerrainSpec {
    pub fn new(regions: Vec<Region>, seed: u64) -> Result<Self, SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if regions.is_empty() {
            return bad("no regions".into());
        }
        for (i, r) in regions.iter().enumerate() {
            let mut nums = vec![r.min[0], r.min[1], r.max[0], r.max[1]];
            match r.kind {
                RegionKind::Flat { z0 } => nums.push(z0),
                RegionKind::Ramp { z0, slope, heading, origin } => {
                    nums.extend([z0, slope, heading, origin[0], origin[1]]);
                    if !(slope > 0.0 && slope < 60f64.to_radians()) {
                        return bad(format!("region {i}: ramp slope must lie in (0°, 60°)"));
                    }
                }
                RegionKind::Rough { z0, amplitude, wavelength } => {
                    nums.extend([z0, amplitude, wavelength]);
                    if !(wavelength > 0.0 && amplitude >= 0.0) {
                        return bad(format!("region {i}: rough needs wavelength > 0, amplitude ≥ 0"));
                    }
                }
                RegionKind::Wall { z0, height, thickness } => {
                    nums.extend([z0, height, thickness]);
                    if !(thickness > 0.0) {
                        return bad(format!("region {i}: wall thickness must be positive"));
                    }
                }
            }
            if nums.iter().any(|v| !v.is_finite()) {
                return bad(format!("region {i}: non-finite parameter"));
            }
            if !(r.min[0] < r.max[0] && r.min[1] < r.max[1]) {
                return bad(format!("region {i}: empty extent"));
            }
            if let Some(j) = regions[..i].iter().position(|o| o.overlaps(r)) {
                return bad(format!("regions {j} and {i} overlap"));
            }
        }
        Ok(Self { regions, seed })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// First region containing `(x, y)`; shared edges resolve to the earlier one.
    pub fn region_at(&self, x: f64, y: f64) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(x, y))
    }

    fn height_opt(&self, x: f64, y: f64) -> Option<f64> {
        self.region_at(x, y).map(|r| r.height(x, y))
    }
}

pub fn terrain_height(spec: &TerrainSpec, x: f64, y: f64) -> Result<f64, SynthError> {
    spec.height_opt(x, y).ok_or(SynthError::OutsideTerrain(x, y))
}

/// Angle between the analytic surface normal and vertical.
pub fn analytic_slope(spec: &TerrainSpec, x: f64, y: f64) -> Result<f64, SynthError> {
    let r = spec.region_at(x, y).ok_or(SynthError::OutsideTerrain(x, y))?;
    let [gx, gy] = r.gradient(x, y);
    Ok((1.0 / (1.0 + gx * gx + gy * gy).sqrt()).acos())
}

/// Spinning multi-ring LiDAR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarModel {
    pub rings: usize,
    /// Lowest and highest ring elevation, degrees.
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    /// Returns closer than this are discarded, meters.
    pub min_range: f64,
    /// Gaussian range noise standard deviation, meters; zero disables noise.
    pub noise_sigma: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            rings: 32,
            elevation_min_deg: -40.0,
            elevation_max_deg: 0.0,
            azimuth_step_deg: 0.5,
            max_range: 50.0,
            min_range: 0.1,
            noise_sigma: 0.0,
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.rings >= 1
            && self.elevation_min_deg.is_finite()
            && self.elevation_max_deg.is_finite()
            && self.elevation_min_deg <= self.elevation_max_deg
            && self.elevation_min_deg >= -90.0
            && self.elevation_max_deg <= 90.0
            && self.azimuth_step_deg > 0.0
            && self.azimuth_step_deg <= 360.0
            && self.max_range > self.min_range
            && self.min_range >= 0.0
            && self.noise_sigma >= 0.0
            && self.noise_sigma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec("invalid lidar parameters".into()))
        }
    }

    /// Unit ray directions in the sensor frame, ring-major.
    pub fn directions(&self) -> Vec<Vec3> {
        let n_az = (360.0 / self.azimuth_step_deg).round().max(1.0) as usize;
        let mut out = Vec::with_capacity(self.rings * n_az);
        for r in 0..self.rings {
            let e = if self.rings == 1 {
                self.elevation_min_deg
            } else {
                self.elevation_min_deg
                    + (self.elevation_max_deg - self.elevation_min_deg) * r as f64 / (self.rings - 1) as f64
            }
            .to_radians();
            for a in 0..n_az {
                let az = (a as f64 * 360.0 / n_az as f64).to_radians();
                out.push(Vec3::new(e.cos() * az.cos(), e.cos() * az.sin(), e.sin()));
            }
        }
        out
    }
}

/// Range to the first terrain intersection along `origin + s·dir`.
fn cast(spec: &TerrainSpec, origin: &Vec3, dir: &Vec3, lidar: &LidarModel) -> Option<f64> {
    let above = |s: f64| -> Option<bool> {
        let p = origin + dir * s;
        spec.height_opt(p.x, p.y).map(|h| p.z > h)
    };
    let mut prev = lidar.min_range;
    if above(prev) != Some(true) {
        return None;
    }
    loop {
        let s = (prev + MARCH_STEP).min(lidar.max_range);
        match above(s) {
            None => return None,
            Some(false) => {
                let (mut lo, mut hi) = (prev, s);
                while hi - lo > BISECT_TOL {
                    let mid = 0.5 * (lo + hi);
                    if above(mid) == Some(true) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            Some(true) if s >= lidar.max_range => return None,
            Some(true) => prev = s,
        }
    }
}

/// Simulates one sweep from the sensor at `pose`. Points are returned in the
/// sensor frame in ray order. Range noise is drawn from a generator seeded
/// with `noise_seed`, so output is independent of thread count.
pub fn virtual_scan(
    spec: &TerrainSpec,
    pose: &Pose,
    lidar: &LidarModel,
    noise_seed: u64,
) -> Result<ScanFrame, SynthError> {
    lidar.validate()?;
    let dirs = lidar.directions();
    let origin = pose.translation;
    let hits: Vec<Option<f64>> = dirs
        .par_iter()
        .map(|d| cast(spec, &origin, &pose.transform_vector(d), lidar))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = (lidar.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, lidar.noise_sigma).expect("finite sigma"));
    let mut points = Vec::new();
    for (d, hit) in dirs.iter().zip(hits) {
        let Some(mut range) = hit else { continue };
        if let Some(n) = &noise {
            range += n.sample(&mut rng);
        }
        if range > 0.0 {
            points.push(d * range);
        }
    }
    if points.is_empty() {
        return Err(SynthError::NoReturns);
    }
    ScanFrame::new(pose.t, points, None).map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

/// Per-scan noise seed derived from the terrain seed and scan index.
pub fn scan_seed(terrain_seed: u64, index: usize) -> u64 {
    terrain_seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One scan at every `every`-th trajectory sample, with the sensor at
/// `body ∘ mount`.
pub fn simulate_sequence(
    spec: &TerrainSpec,
    traj: &Trajectory,
    lidar: &LidarModel,
    mount: &Pose,
    every: usize,
) -> Result<Vec<ScanFrame>, SynthError> {
    traj.samples()
        .iter()
        .enumerate()
        .step_by(every.max(1))
        .map(|(i, body)| {
            let sensor = Pose { t: body.t, ..body.compose(mount) };
            virtual_scan(spec, &sensor, lidar, scan_seed(spec.seed, i))
        })
        .collect()
}

/// Poses at [`TRAJECTORY_RATE`] along `path` at `speed`, `clearance` above the
/// terrain, yawed along the current segment with zero pitch and roll.
pub fn gen_trajectory(
    spec: &TerrainSpec,
    path: &[[f64; 2]],
    speed: f64,
    clearance: f64,
) -> Result<Trajectory, SynthError> {
    if path.len() < 2 {
        return Err(SynthError::InvalidSpec("path needs at least two points".into()));
    }
    if !(speed > 0.0 && speed.is_finite() && clearance.is_finite()) {
        return Err(SynthError::InvalidSpec("speed must be positive".into()));
    }
    let seg_len: Vec<f64> = path
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .collect();
    if seg_len.iter().any(|&l| !(l > 0.0)) {
        return Err(SynthError::InvalidSpec("path has repeated points".into()));
    }
    let total: f64 = seg_len.iter().sum();
    let dt = 1.0 / TRAJECTORY_RATE;
    let n = (total / (speed * dt) + 1e-9).floor() as usize + 1;
    let mut poses = Vec::with_capacity(n);
    let (mut seg, mut seg_start) = (0, 0.0);
    for i in 0..n {
        let t = i as f64 * dt;
        let s = (speed * t).min(total);
        while seg + 1 < seg_len.len() && s >= seg_start + seg_len[seg] {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let (a, b) = (path[seg], path[seg + 1]);
        let u = ((s - seg_start) / seg_len[seg]).min(1.0);
        let x = a[0] + (b[0] - a[0]) * u;
        let y = a[1] + (b[1] - a[1]) * u;
        let z = terrain_height(spec, x, y)? + clearance;
        let yaw = (b[1] - a[1]).atan2(b[0] - a[0]);
        poses.push(Pose::from_translation_yaw(t, Vec3::new(x, y, z), yaw));
    }
    Trajectory::new(poses).map_err(|e| SynthError::InvalidSpec(e.to_string()))
}
