//! Truncated moving-least-squares signed distance on a regular lattice.

use rayon::prelude::*;

use super::{marching, ReconstructionParams, SurfaceBackend, SurfaceError, TriMesh};
use super::MIN_RECONSTRUCTION_POINTS;
use crate::aggregate::GlobalCloud;
use crate::geom::Vec3;
use crate::kdtree::KdTree;

/// Signed distance samples on a lattice. Nodes without any point inside the
/// support radius hold no value.
#[derive(Debug, Clone)]
pub struct ImplicitField {
    origin: Vec3,
    spacing: f64,
    dims: [usize; 3],
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ImplicitField {
    /// Evaluates the field around `points` (with unit `normals`).
    ///
    /// The value at node `x` is `n̄ · (x − p̄)`, where `p̄` and `n̄` are the
    /// weighted mean position and normal of the `neighbors` nearest points
    /// within `support_radius`, weighted by `(1 − d²/R²)²`.
    pub fn build(
        points: &[Vec3],
        normals: &[Vec3],
        params: &ReconstructionParams,
    ) -> Result<Self, SurfaceError> {
        params.validate()?;
        let s = params.lattice_spacing;
        let r = params.support_radius;
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        // nodes sit at half-integer multiples of the spacing
        let mut origin = Vec3::zeros();
        let mut dims = [0usize; 3];
        for a in 0..3 {
            origin[a] = (((lo[a] - r) / s - 0.5).floor() + 0.5) * s;
            dims[a] = ((hi[a] + r - origin[a]) / s).ceil() as usize + 2;
        }
        let total = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&n| n <= params.max_nodes)
            .ok_or_else(|| {
                SurfaceError::InvalidParameter(format!(
                    "lattice {}x{}x{} exceeds max_nodes {}",
                    dims[0], dims[1], dims[2], params.max_nodes
                ))
            })?;

        let mut field = ImplicitField {
            origin,
            spacing: s,
            dims,
            values: vec![0.0; total],
            valid: vec![false; total],
        };

        let mut near = vec![false; total];
        let r_sq = r * r;
        for p in points {
            let rel = (p - origin) / s;
            let lo_i = |a: usize| ((rel[a] - r / s).ceil().max(0.0)) as usize;
            let hi_i = |a: usize| ((rel[a] + r / s).floor() as usize).min(dims[a] - 1);
            for k in lo_i(2)..=hi_i(2) {
                for j in lo_i(1)..=hi_i(1) {
                    for i in lo_i(0)..=hi_i(0) {
                        let id = field.node_id(i, j, k);
                        if !near[id] && (field.node_position(i, j, k) - p).norm_squared() <= r_sq {
                            near[id] = true;
                        }
                    }
                }
            }
        }

        let candidates: Vec<usize> = (0..total).filter(|&i| near[i]).collect();
        drop(near);
        let tree = KdTree::new(points);
        let evaluated: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|&id| {
                let [i, j, k] = field.unravel(id);
                let x = field.node_position(i, j, k);
                let nbrs = tree.knn_within(&x, params.neighbors, r);
                let mut wsum = 0.0;
                let mut pbar = Vec3::zeros();
                let mut nbar = Vec3::zeros();
                for n in &nbrs {
                    let q = 1.0 - n.dist_sq / r_sq;
                    let w = q * q;
                    wsum += w;
                    pbar += points[n.index] * w;
                    nbar += normals[n.index] * w;
                }
                let nlen = nbar.norm();
                if wsum <= 0.0 || nlen < 1e-9 * wsum {
                    return None;
                }
                pbar /= wsum;
                Some((nbar / nlen).dot(&(x - pbar)))
            })
            .collect();
        for (&id, v) in candidates.iter().zip(evaluated) {
            if let Some(v) = v {
                field.values[id] = v;
                field.valid[id] = true;
            }
        }
        Ok(field)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub(crate) fn node_id(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub(crate) fn unravel(&self, id: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [id % nx, (id / nx) % ny, id / (nx * ny)]
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        let id = self.node_id(i, j, k);
        self.valid[id].then(|| self.values[id])
    }

    pub(crate) fn value_by_id(&self, id: usize) -> Option<f64> {
        self.valid[id].then(|| self.values[id])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Implicit moving-least-squares surface with marching-cubes extraction.
#[derive(Debug, Clone, Copy, Default)]
pub struct MlsBackend;

impl SurfaceBackend for MlsBackend {
    fn name(&self) -> &'static str {
        "mls"
    }

    fn reconstruct(
        &self,
        cloud: &GlobalCloud,
        params: &ReconstructionParams,
    ) -> Result<TriMesh, SurfaceError> {
        let normals = cloud.normals.as_ref().ok_or(SurfaceError::MissingNormals)?;
        if cloud.len() < MIN_RECONSTRUCTION_POINTS {
            return Err(SurfaceError::InsufficientPoints {
                needed: MIN_RECONSTRUCTION_POINTS,
                have: cloud.len(),
            });
        }
        let field = ImplicitField::build(&cloud.points, normals, params)?;
        let mesh = marching::extract(&field);
        if mesh.is_empty() {
            return Err(SurfaceError::EmptySurface);
        }
        Ok(super::vertex_normals(&mesh).mesh)
    }
}
