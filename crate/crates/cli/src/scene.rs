//! Synthetic scene files.
//!
//! ```toml
//! seed = 7
//!
//! [[region]]
//! kind = "flat"          # flat | ramp | rough | wall
//! min = [-10.0, -10.0]
//! max = [10.0, 10.0]
//! z0 = 0.0
//!
//! [trajectory]
//! path = [[-5.0, 0.0], [5.0, 0.0]]
//! speed = 1.0
//! clearance = 0.1
//! ```
//!
//! Ramps take `slope_deg`, `heading_deg` and `origin`; rough patches take
//! `amplitude` and `wavelength`; walls take `height` and `thickness`.

use serde::Deserialize;
use travgt_core::synth::{gen_trajectory, Region, RegionKind, SynthError, TerrainSpec};
use travgt_core::ingest::Trajectory;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    #[serde(default)]
    seed: u64,
    region: Vec<RawRegion>,
    trajectory: RawTrajectory,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    kind: String,
    min: [f64; 2],
    max: [f64; 2],
    #[serde(default)]
    z0: f64,
    slope_deg: Option<f64>,
    heading_deg: Option<f64>,
    origin: Option<[f64; 2]>,
    amplitude: Option<f64>,
    wavelength: Option<f64>,
    height: Option<f64>,
    thickness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub path: Vec<[f64; 2]>,
    pub speed: f64,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub terrain: TerrainSpec,
    pub path: PathSpec,
}

type RawTrajectory = PathSpec;

impl Scene {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let raw: RawScene = toml::from_str(text).map_err(|e| e.to_string())?;
        let regions = raw
            .region
            .iter()
            .enumerate()
            .map(|(i, r)| region(r).map_err(|e| format!("region {i}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let terrain = TerrainSpec::new(regions, raw.seed).map_err(|e| e.to_string())?;
        Ok(Scene { terrain, path: raw.trajectory })
    }

    pub fn trajectory(&self) -> Result<Trajectory, SynthError> {
        gen_trajectory(&self.terrain, &self.path.path, self.path.speed, self.path.clearance)
    }
}

fn region(r: &RawRegion) -> Result<Region, String> {
    let extras = |allowed: &[&str]| -> Result<(), String> {
        let given = [
            ("slope_deg", r.slope_deg.is_some()),
            ("heading_deg", r.heading_deg.is_some()),
            ("origin", r.origin.is_some()),
            ("amplitude", r.amplitude.is_some()),
            ("wavelength", r.wavelength.is_some()),
            ("height", r.height.is_some()),
            ("thickness", r.thickness.is_some()),
        ];
        match given.iter().find(|(k, set)| *set && !allowed.contains(k)) {
            Some((k, _)) => Err(format!("`{k}` does not apply to kind `{}`", r.kind)),
            None => Ok(()),
        }
    };
    let need = |v: Option<f64>, k: &str| v.ok_or_else(|| format!("kind `{}` needs `{k}`", r.kind));
    let kind = match r.kind.as_str() {
        "flat" => {
            extras(&[])?;
            RegionKind::Flat { z0: r.z0 }
        }
        "ramp" => {
            extras(&["slope_deg", "heading_deg", "origin"])?;
            RegionKind::Ramp {
                z0: r.z0,
                slope: need(r.slope_deg, "slope_deg")?.to_radians(),
                heading: r.heading_deg.unwrap_or(0.0).to_radians(),
                origin: r.origin.unwrap_or(r.min),
            }
        }
        "rough" => {
            extras(&["amplitude", "wavelength"])?;
            RegionKind::Rough {
                z0: r.z0,
                amplitude: need(r.amplitude, "amplitude")?,
                wavelength: need(r.wavelength, "wavelength")?,
            }
        }
        "wall" => {
            extras(&["height", "thickness"])?;
            RegionKind::Wall {
                z0: r.z0,
                height: need(r.height, "height")?,
                thickness: need(r.thickness, "thickness")?,
            }
        }
        other => return Err(format!("unknown kind `{other}`")),
    };
    Ok(Region { min: r.min, max: r.max, kind })
}
