//! Shared geometric primitives: points, rigid poses, voxel-grid indexing and
//! the traversability label alphabet.

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

/// World coordinates are always double precision.
pub type Vec3 = Vector3<f64>;

/// The global vertical axis.
pub const UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
}

pub fn is_finite(v: &Vec3) -> bool {
    v.x.is_finite() && v.y.is_finite() && v.z.is_finite()
}

/// A timestamped rigid transform from a body frame into the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: f64,
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl Pose {
    /// Builds a pose from a raw `(w, x, y, z)` quaternion, renormalizing it.
    pub fn from_wxyz(t: f64, translation: Vec3, q: [f64; 4]) -> Result<Self, GeomError> {
        if !t.is_finite() {
            return Err(GeomError::NonFinite("timestamp"));
        }
        if !is_finite(&translation) {
            return Err(GeomError::NonFinite("translation"));
        }
        if q.iter().any(|c| !c.is_finite()) {
            return Err(GeomError::NonFinite("quaternion"));
        }
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = raw.norm();
        if norm < 1e-12 {
            return Err(GeomError::ZeroQuaternion);
        }
        Ok(Self {
            t,
            translation,
            rotation: UnitQuaternion::new_unchecked(raw / norm),
        })
    }

    pub fn identity(t: f64) -> Self {
        Self {
            t,
            translation: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_translation_yaw(t: f64, translation: Vec3, yaw: f64) -> Self {
        Self {
            t,
            translation,
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        }
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Heading about the global z axis, in radians.
    pub fn yaw(&self) -> f64 {
        self.rotation.euler_angles().2
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        Pose {
            t: self.t,
            translation: -(rotation * self.translation),
            rotation,
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`. The result keeps
    /// the timestamp of `other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            t: other.t,
            translation: self.transform_point(&other.translation),
            rotation: self.rotation * other.rotation,
        }
    }

    /// Gravity-aligned frame at this pose: same translation, yaw only.
    pub fn gravity_aligned(&self) -> Pose {
        Pose::from_translation_yaw(self.t, self.translation, self.yaw())
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        self.rotation.to_rotation_matrix()
    }
}

/// Free function form of [`Pose::transform_point`].
pub fn transform_point(pose: &Pose, p: &Vec3) -> Vec3 {
    pose.transform_point(p)
}

/// Integer voxel coordinates `(ix, iy, iz)`.
pub type VoxelIndex = [usize; 3];

/// Axis-aligned regular voxel grid with half-open cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    min_corner: Vec3,
    max_corner: Vec3,
    voxel_size: Vec3,
    dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(min_corner: Vec3, max_corner: Vec3, voxel_size: Vec3) -> Result<Self, GeomError> {
        if !is_finite(&min_corner) || !is_finite(&max_corner) || !is_finite(&voxel_size) {
            return Err(GeomError::NonFinite("grid"));
        }
        let mut dims = [0usize; 3];
        for i in 0..3 {
            if voxel_size[i] <= 0.0 {
                return Err(GeomError::InvalidGrid(format!(
                    "voxel size along axis {i} must be positive"
                )));
            }
            let n = ((max_corner[i] - min_corner[i]) / voxel_size[i]).round();
            if n < 1.0 {
                return Err(GeomError::InvalidGrid(format!(
                    "extent along axis {i} is smaller than one voxel"
                )));
            }
            if n > u32::MAX as f64 {
                return Err(GeomError::InvalidGrid(format!("too many voxels along axis {i}")));
            }
            dims[i] = n as usize;
        }
        Ok(Self {
            min_corner,
            max_corner,
            voxel_size,
            dims,
        })
    }

    /// The ego-centred label grid: 51.2 m × 51.2 m × 6.4 m at 0.2 m.
    pub fn default_label_grid() -> Self {
        Self::new(
            Vec3::new(-25.6, -25.6, -2.0),
            Vec3::new(25.6, 25.6, 4.4),
            Vec3::new(0.2, 0.2, 0.2),
        )
        .expect("default grid is valid")
    }

    pub fn min_corner(&self) -> Vec3 {
        self.min_corner
    }

    pub fn max_corner(&self) -> Vec3 {
        self.max_corner
    }

    pub fn voxel_size(&self) -> Vec3 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min_corner[i] && p[i] < self.max_corner[i])
    }

    /// Cell containing `p`, or `None` outside `[min_corner, max_corner)`.
    pub fn voxel_index(&self, p: &Vec3) -> Option<VoxelIndex> {
        if !self.contains(p) {
            return None;
        }
        let mut idx = [0usize; 3];
        for i in 0..3 {
            let cell = ((p[i] - self.min_corner[i]) / self.voxel_size[i]).floor();
            // rounding can push a point just below max_corner onto dims
            idx[i] = (cell.max(0.0) as usize).min(self.dims[i] - 1);
        }
        Some(idx)
    }

    pub fn voxel_center(&self, idx: VoxelIndex) -> Vec3 {
        Vec3::new(
            self.min_corner.x + (idx[0] as f64 + 0.5) * self.voxel_size.x,
            self.min_corner.y + (idx[1] as f64 + 0.5) * self.voxel_size.y,
            self.min_corner.z + (idx[2] as f64 + 0.5) * self.voxel_size.z,
        )
    }

    /// x-fastest linear index.
    pub fn linear_index(&self, idx: VoxelIndex) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    pub fn unravel(&self, linear: usize) -> VoxelIndex {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [linear % nx, (linear / nx) % ny, linear / (nx * ny)]
    }
}

/// Equivalent to [`VoxelGridSpec::voxel_index`].
pub fn voxel_index(p: &Vec3, grid: &VoxelGridSpec) -> Option<VoxelIndex> {
    grid.voxel_index(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TravLabel {
    Traversable,
    PotentiallyTraversable,
    NonTraversable,
    Unoccupied,
}

impl TravLabel {
    /// The three occupied classes scored by per-class IoU.
    pub const CLASSES: [TravLabel; 3] = [
        TravLabel::Traversable,
        TravLabel::PotentiallyTraversable,
        TravLabel::NonTraversable,
    ];

    pub fn is_occupied(self) -> bool {
        self != TravLabel::Unoccupied
    }

    /// Single-letter code used in label files; `None` for `Unoccupied`.
    pub fn code(self) -> Option<char> {
        match self {
            TravLabel::Traversable => Some('T'),
            TravLabel::PotentiallyTraversable => Some('P'),
            TravLabel::NonTraversable => Some('N'),
            TravLabel::Unoccupied => None,
        }
    }

    pub fn from_code(c: &str) -> Option<Self> {
        match c {
            "T" => Some(TravLabel::Traversable),
            "P" => Some(TravLabel::PotentiallyTraversable),
            "N" => Some(TravLabel::NonTraversable),
            _ => None,
        }
    }
}
