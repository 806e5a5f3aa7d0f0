//! Surface reconstruction from oriented points and mesh utilities.
//!
//! The default backend evaluates a truncated moving-least-squares signed
//! distance on a regular lattice and extracts its zero level set with
//! marching cubes. Other backends plug in through [`SurfaceBackend`].

mod implicit;
mod marching;

use std::collections::HashMap;

use thiserror::Error;

use crate::aggregate::GlobalCloud;
use crate::geom::{Vec3, VoxelGridSpec, UP};

pub use implicit::{ImplicitField, MlsBackend};

pub const MIN_RECONSTRUCTION_POINTS: usize = 100;
/// Faces at or below this area are dropped as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SurfaceError {
    #[error("reconstruction needs at least {needed} points, got {have}")]
    InsufficientPoints { needed: usize, have: usize },
    #[error("cloud has no normals")]
    MissingNormals,
    #[error("implicit function never crosses zero")]
    EmptySurface,
    #[error("invalid reconstruction parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown reconstruction backend '{0}'")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionParams {
    /// Lattice spacing in meters.
    pub lattice_spacing: f64,
    /// Nodes farther than this from every point carry no value.
    pub support_radius: f64,
    /// Oriented points blended per lattice node.
    pub neighbors: usize,
    /// Upper bound on evaluated lattice nodes, guarding memory use.
    pub max_nodes: usize,
}

impl Default for ReconstructionParams {
    fn default() -> Self {
        Self {
            lattice_spacing: 0.1,
            support_radius: 0.3,
            neighbors: 8,
            max_nodes: 32_000_000,
        }
    }
}

impl ReconstructionParams {
    pub fn validate(&self) -> Result<(), SurfaceError> {
        let bad = |m: &str| Err(SurfaceError::InvalidParameter(m.to_string()));
        if !(self.lattice_spacing > 0.0 && self.lattice_spacing.is_finite()) {
            return bad("lattice_spacing must be positive");
        }
        if !(self.support_radius > 0.0 && self.support_radius.is_finite()) {
            return bad("support_radius must be positive");
        }
        if self.neighbors == 0 {
            return bad("neighbors must be at least 1");
        }
        Ok(())
    }
}

/// Triangle mesh with counter-clockwise faces seen from the outside.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_normals: Vec<Vec3>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Unnormalized face normal (twice the area vector).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_cross(f).normalize()
    }

    /// Checks the structural invariants: indices in range, distinct corners,
    /// area above [`MIN_FACE_AREA`], unit vertex normals when present.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(format!("face {i} references a missing vertex"));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(format!("face {i} repeats a vertex"));
            }
            if 0.5 * self.face_cross(i).norm() <= MIN_FACE_AREA {
                return Err(format!("face {i} is degenerate"));
            }
        }
        if !self.vertex_normals.is_empty() {
            if self.vertex_normals.len() != n {
                return Err("vertex normal count mismatch".into());
            }
            if let Some(i) = self
                .vertex_normals
                .iter()
                .position(|v| (v.norm() - 1.0).abs() > 1e-6)
            {
                return Err(format!("vertex normal {i} is not unit length"));
            }
        }
        Ok(())
    }

    /// Vertices on an edge used by exactly one face, or by more than two.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut uses: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let mut out = vec![false; self.vertices.len()];
        for ((a, b), n) in uses {
            if n != 2 {
                out[a as usize] = true;
                out[b as usize] = true;
            }
        }
        out
    }
}

/// Result of [`vertex_normals`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalsResult {
    pub mesh: TriMesh,
    /// Vertices with no incident face; they get `+z`.
    pub isolated: usize,
}

/// Per-vertex normal: normalized sum of the unit normals of incident faces.
pub fn vertex_normals(mesh: &TriMesh) -> NormalsResult {
    let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
    let mut touched = vec![false; mesh.vertices.len()];
    for (i, f) in mesh.faces.iter().enumerate() {
        let cross = mesh.face_cross(i);
        let len = cross.norm();
        if len == 0.0 {
            continue;
        }
        let n = cross / len;
        for &v in f {
            acc[v as usize] += n;
            touched[v as usize] = true;
        }
    }
    let mut isolated = 0;
    let normals = acc
        .into_iter()
        .zip(&touched)
        .map(|(s, &t)| {
            let len = s.norm();
            if !t || len < 1e-12 {
                isolated += usize::from(!t);
                UP
            } else {
                s / len
            }
        })
        .collect();
    NormalsResult {
        mesh: TriMesh {
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            vertex_normals: normals,
        },
        isolated,
    }
}

/// Keeps faces with at least one vertex inside the grid box and drops
/// vertices no longer referenced. Coordinates are never modified.
pub fn crop_mesh(mesh: &TriMesh, grid: &VoxelGridSpec) -> TriMesh {
    let inside: Vec<bool> = mesh.vertices.iter().map(|v| grid.contains(v)).collect();
    let faces: Vec<[u32; 3]> = mesh
        .faces
        .iter()
        .filter(|f| f.iter().any(|&v| inside[v as usize]))
        .copied()
        .collect();
    compact(mesh, faces)
}

/// Rebuilds `mesh` with only `faces`, dropping unreferenced vertices while
/// keeping the original vertex order.
pub(crate) fn compact(mesh: &TriMesh, faces: Vec<[u32; 3]>) -> TriMesh {
    let mut used = vec![false; mesh.vertices.len()];
    for f in &faces {
        for &v in f {
            used[v as usize] = true;
        }
    }
    let has_normals = mesh.vertex_normals.len() == mesh.vertices.len();
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut out = TriMesh::default();
    for (v, _) in used.iter().enumerate().filter(|(_, u)| **u) {
        remap[v] = out.vertices.len() as u32;
        out.vertices.push(mesh.vertices[v]);
        if has_normals {
            out.vertex_normals.push(mesh.vertex_normals[v]);
        }
    }
    out.faces = faces.iter().map(|f| f.map(|v| remap[v as usize])).collect();
    out
}

/// A surface reconstruction algorithm producing a [`TriMesh`] with vertex
/// normals from an oriented cloud.
pub trait SurfaceBackend: Sync {
    fn name(&self) -> &'static str;
    fn reconstruct(
        &self,
        cloud: &GlobalCloud,
        params: &ReconstructionParams,
    ) -> Result<TriMesh, SurfaceError>;
}

/// Looks up a backend by configuration name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn SurfaceBackend>, SurfaceError> {
    match name {
        "mls" => Ok(Box::new(MlsBackend)),
        other => Err(SurfaceError::UnknownBackend(other.to_string())),
    }
}

/// Reconstructs with the default [`MlsBackend`].
pub fn reconstruct(cloud: &GlobalCloud, params: &ReconstructionParams) -> Result<TriMesh, SurfaceError> {
    MlsBackend.reconstruct(cloud, params)
}
