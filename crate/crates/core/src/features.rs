//! Per-vertex geometric features and their voxel averages.
//!
//! Each mesh vertex gets `[h, θ, r]`: elevation (its z coordinate), slope
//! (angle between its normal and the vertical) and roughness (log of the mean
//! squared distance of its k nearest vertices to their best-fit plane).

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::aggregate::{covariance, sorted_eigen};
use crate::geom::{Vec3, VoxelGridSpec, UP};
use crate::kdtree::KdTree;
use crate::surface::TriMesh;

/// Lower bound on the plane-fit MSE, in m². Exact planes would give log(0).
pub const MSE_FLOOR: f64 = 1e-9;
pub const DEFAULT_FEATURE_K: usize = 16;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("normal has length {0}, expected 1")]
    NonUnitNormal(f64),
    #[error("roughness needs more than k = {k} vertices, mesh has {have}")]
    TooFewVertices { k: usize, have: usize },
    #[error("k = {0} is too small; at least 4 neighbours are required")]
    NeighborhoodTooSmall(usize),
    #[error("mesh has no vertex normals")]
    MissingNormals,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VertexFeatures {
    /// Elevation in meters.
    pub h: f64,
    /// Slope in radians, `[0, π/2]`.
    pub theta: f64,
    /// Roughness, natural log of m².
    pub r: f64,
}

impl VertexFeatures {
    pub fn to_array(self) -> [f64; 3] {
        [self.h, self.theta, self.r]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            h: a[0],
            theta: a[1],
            r: a[2],
        }
    }
}

pub fn elevation(v: &Vec3) -> f64 {
    v.z
}

/// Angle between `n` and the vertical. Uses `|n·z|`, so downward-facing
/// normals give the same slope as upward ones.
pub fn slope(n: &Vec3) -> Result<f64, FeatureError> {
    let len = n.norm();
    if !((len - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(FeatureError::NonUnitNormal(len));
    }
    Ok(n.dot(&UP).abs().clamp(-1.0, 1.0).acos())
}

/// Log MSE of `neighbors` about their total-least-squares plane, floored.
pub fn plane_fit_log_mse(neighbors: &[Vec3]) -> f64 {
    let (centroid, cov) = covariance(neighbors);
    let (_, vecs) = sorted_eigen(&cov);
    let normal = vecs[0];
    let mse = neighbors
        .iter()
        .map(|p| {
            let d = normal.dot(&(p - centroid));
            d * d
        })
        .sum::<f64>()
        / neighbors.len() as f64;
    mse.max(MSE_FLOOR).ln()
}

fn check_k(k: usize, have: usize) -> Result<(), FeatureError> {
    if k < 4 {
        return Err(FeatureError::NeighborhoodTooSmall(k));
    }
    if have < k + 1 {
        return Err(FeatureError::TooFewVertices { k, have });
    }
    Ok(())
}

fn roughness_with(tree: &KdTree, mesh: &TriMesh, vertex: usize, k: usize) -> f64 {
    let nbrs: Vec<Vec3> = tree
        .knn_excluding(&mesh.vertices[vertex], k, vertex)
        .iter()
        .map(|n| mesh.vertices[n.index])
        .collect();
    plane_fit_log_mse(&nbrs)
}

/// Roughness of one vertex. Builds a neighbour index per call; use
/// [`vertex_features`] for whole meshes.
pub fn roughness(vertex: usize, mesh: &TriMesh, k: usize) -> Result<f64, FeatureError> {
    check_k(k, mesh.vertices.len())?;
    let tree = KdTree::new(&mesh.vertices);
    Ok(roughness_with(&tree, mesh, vertex, k))
}

/// `[h, θ, r]` for every vertex, in vertex order.
pub fn vertex_features(mesh: &TriMesh, k: usize) -> Result<Vec<VertexFeatures>, FeatureError> {
    if mesh.vertex_normals.len() != mesh.vertices.len() {
        return Err(FeatureError::MissingNormals);
    }
    check_k(k, mesh.vertices.len())?;
    let tree = KdTree::new(&mesh.vertices);
    (0..mesh.vertices.len())
        .into_par_iter()
        .map(|i| {
            Ok(VertexFeatures {
                h: elevation(&mesh.vertices[i]),
                theta: slope(&mesh.vertex_normals[i])?,
                r: roughness_with(&tree, mesh, i, k),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelFeature {
    pub count: u32,
    pub mean: VertexFeatures,
}

/// Sparse grid of mean features; voxels absent from the map are unoccupied.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    spec: VoxelGridSpec,
    cells: BTreeMap<usize, VoxelFeature>,
}

impl FeatureGrid {
    pub fn new(spec: VoxelGridSpec) -> Self {
        Self {
            spec,
            cells: BTreeMap::new(),
        }
    }

    /// Builds from `(linear index, cell)` pairs; zero-count cells are skipped.
    pub fn from_cells(
        spec: VoxelGridSpec,
        cells: impl IntoIterator<Item = (usize, VoxelFeature)>,
    ) -> Result<Self, String> {
        let mut g = Self::new(spec);
        for (idx, cell) in cells {
            if idx >= spec.voxel_count() {
                return Err(format!("voxel index {idx} outside grid"));
            }
            if cell.count == 0 {
                continue;
            }
            if g.cells.insert(idx, cell).is_some() {
                return Err(format!("duplicate voxel index {idx}"));
            }
        }
        Ok(g)
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn get(&self, linear: usize) -> Option<&VoxelFeature> {
        self.cells.get(&linear)
    }

    pub fn is_occupied(&self, linear: usize) -> bool {
        self.cells.contains_key(&linear)
    }

    /// Occupied voxels in ascending linear-index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &VoxelFeature)> {
        self.cells.iter().map(|(&k, v)| (k, v))
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.len()
    }

    pub fn total_vertex_count(&self) -> u64 {
        self.cells.values().map(|c| c.count as u64).sum()
    }
}

/// Averages vertex features per voxel. Vertices outside the grid are ignored.
pub fn voxelize_features(
    feats: &[VertexFeatures],
    mesh: &TriMesh,
    spec: &VoxelGridSpec,
) -> FeatureGrid {
    assert_eq!(feats.len(), mesh.vertices.len(), "features must align with vertices");
    let mut sums: BTreeMap<usize, (u32, [f64; 3])> = BTreeMap::new();
    for (v, f) in mesh.vertices.iter().zip(feats) {
        if let Some(idx) = spec.voxel_index(v) {
            let e = sums.entry(spec.linear_index(idx)).or_insert((0, [0.0; 3]));
            e.0 += 1;
            for (acc, x) in e.1.iter_mut().zip(f.to_array()) {
                *acc += x;
            }
        }
    }
    FeatureGrid {
        spec: *spec,
        cells: sums
            .into_iter()
            .map(|(k, (n, s))| {
                let mean = VertexFeatures::from_array(s.map(|x| x / n as f64));
                (k, VoxelFeature { count: n, mean })
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::vertex_normals;
    use nalgebra::{DMatrix, Rotation3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn grid_mesh(n: usize, h: f64, z: impl Fn(f64, f64) -> f64) -> TriMesh {
        jittered_mesh(n, h, 0.0, z)
    }

    /// Grid mesh with deterministic xy jitter so k-NN distances have no ties.
    fn jittered_mesh(n: usize, h: f64, jitter: f64, z: impl Fn(f64, f64) -> f64) -> TriMesh {
        let mut m = TriMesh::default();
        for j in 0..n {
            for i in 0..n {
                let (fi, fj) = (i as f64, j as f64);
                let x = fi * h + jitter * (fi * 7.13 + fj * 3.31).sin();
                let y = fj * h + jitter * (fi * 2.71 - fj * 5.77).cos();
                m.vertices.push(Vec3::new(x, y, z(x, y)));
            }
        }
        let id = |i: usize, j: usize| (j * n + i) as u32;
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                m.faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                m.faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        vertex_normals(&m).mesh
    }

    /// Independent plane fit: smallest singular vector of the centred data.
    fn svd_log_mse(pts: &[Vec3]) -> f64 {
        let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
        let m = DMatrix::from_fn(pts.len(), 3, |r, k| pts[r][k] - c[k]);
        let svd = m.svd(false, true);
        let vt = svd.v_t.unwrap();
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let n = Vec3::new(vt[(imin, 0)], vt[(imin, 1)], vt[(imin, 2)]);
        let mse = pts.iter().map(|p| n.dot(&(p - c)).powi(2)).sum::<f64>() / pts.len() as f64;
        mse.max(MSE_FLOOR).ln()
    }

    #[test]
    fn elevation_examples() {
        assert_eq!(elevation(&Vec3::new(1.0, 2.0, 3.0)), 3.0);
        assert_eq!(elevation(&Vec3::zeros()), 0.0);
        assert_eq!(elevation(&Vec3::new(-4.2, 7.0, -1.5)), -1.5);
    }

    #[test]
    fn slope_examples() {
        assert_eq!(slope(&UP).unwrap(), 0.0);
        assert!((slope(&Vec3::x()).unwrap() - FRAC_PI_2).abs() < 1e-15);
        let s = 1.0 / 2f64.sqrt();
        assert!((slope(&Vec3::new(s, 0.0, s)).unwrap() - FRAC_PI_4).abs() < 1e-12);
        assert_eq!(slope(&-UP).unwrap(), 0.0);
        assert!(matches!(slope(&Vec3::new(0.0, 0.0, 2.0)), Err(FeatureError::NonUnitNormal(_))));
    }

    #[test]
    fn roughness_coplanar_is_floored() {
        let m = grid_mesh(6, 0.1, |x, y| 0.3 * x - 0.2 * y + 1.0);
        let r = roughness(14, &m, 8).unwrap();
        assert!((r - MSE_FLOOR.ln()).abs() < 1e-12);
        assert!((r - (-20.723)).abs() < 1e-3);
    }

    #[test]
    fn roughness_alternating_offsets() {
        // neighbours at ±δ about z = 0, symmetric so the fit plane is z = 0
        let d = 0.1;
        let mut verts = vec![Vec3::zeros()];
        for k in 0..8 {
            let a = k as f64 * FRAC_PI_4;
            let z = if k % 2 == 0 { d } else { -d };
            verts.push(Vec3::new(a.cos(), a.sin(), z));
        }
        let m = TriMesh { vertices: verts, faces: vec![], vertex_normals: vec![] };
        let r = roughness(0, &m, 8).unwrap();
        assert!((r - (0.01f64).ln()).abs() < 1e-9, "{r}");
    }

    #[test]
    fn roughness_matches_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = grid_mesh(7, 0.1, |_, _| 0.0);
        let mut m = m;
        for v in &mut m.vertices {
            v.z = rng.random_range(-0.05..0.05);
        }
        let k = 10;
        for i in 0..m.vertices.len() {
            // brute-force neighbour search
            let mut d: Vec<(f64, usize)> = m
                .vertices
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, p)| ((p - m.vertices[i]).norm_squared(), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let nb: Vec<Vec3> = d[..k].iter().map(|&(_, j)| m.vertices[j]).collect();
            let expected = svd_log_mse(&nb);
            assert!((roughness(i, &m, k).unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn roughness_errors() {
        let m = grid_mesh(2, 1.0, |_, _| 0.0);
        assert_eq!(roughness(0, &m, 4), Err(FeatureError::TooFewVertices { k: 4, have: 4 }));
        assert_eq!(roughness(0, &m, 3), Err(FeatureError::NeighborhoodTooSmall(3)));
    }

    #[test]
    fn flat_mesh_features() {
        let m = grid_mesh(8, 0.1, |_, _| 2.0);
        for f in vertex_features(&m, 8).unwrap() {
            assert_eq!(f.h, 2.0);
            assert!(f.theta.abs() < 1e-7);
            assert_eq!(f.r, MSE_FLOOR.ln());
        }
    }

    #[test]
    fn ramp_mesh_slope() {
        let beta = 20f64.to_radians();
        let m = grid_mesh(12, 0.1, |x, _| x * beta.tan());
        for f in vertex_features(&m, 8).unwrap() {
            assert!((f.theta - 0.349).abs() < 0.02);
        }
    }

    #[test]
    fn z_translation_shifts_only_elevation() {
        let m = jittered_mesh(8, 0.1, 0.02, |x, y| (3.0 * x).sin() * 0.1 + y * y);
        let mut shifted = m.clone();
        for v in &mut shifted.vertices {
            v.z += 1.25;
        }
        let a = vertex_features(&m, 8).unwrap();
        let b = vertex_features(&shifted, 8).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            assert!((fb.h - fa.h - 1.25).abs() < 1e-12);
            assert_eq!(fa.theta, fb.theta);
            assert!((fa.r - fb.r).abs() < 1e-6);
        }
    }

    #[test]
    fn voxelize_examples() {
        let spec = VoxelGridSpec::new(Vec3::zeros(), Vec3::repeat(1.0), Vec3::repeat(0.5)).unwrap();
        let m = TriMesh {
            vertices: vec![Vec3::repeat(0.1), Vec3::new(0.2, 0.2, 0.2), Vec3::repeat(0.7), Vec3::repeat(5.0)],
            faces: vec![],
            vertex_normals: vec![],
        };
        let f = |h| VertexFeatures { h, theta: 0.1, r: -3.0 };
        let g = voxelize_features(&[f(1.0), f(3.0), f(7.0), f(9.0)], &m, &spec);
        assert_eq!(g.occupied_count(), 2);
        assert_eq!(g.total_vertex_count(), 3);
        let c0 = g.get(0).unwrap();
        assert_eq!((c0.count, c0.mean.h), (2, 2.0));
        let c7 = g.get(spec.linear_index([1, 1, 1])).unwrap();
        assert_eq!(c7.mean, f(7.0));
        assert!(!g.is_occupied(1));
    }

    #[test]
    fn voxelize_matches_group_by_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = VoxelGridSpec::new(Vec3::zeros(), Vec3::repeat(2.0), Vec3::repeat(0.4)).unwrap();
        let n = 500;
        let verts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(-0.2..2.2), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)))
            .collect();
        let feats: Vec<VertexFeatures> = (0..n)
            .map(|_| VertexFeatures { h: rng.random_range(-1.0..1.0), theta: rng.random_range(0.0..1.5), r: rng.random_range(-20.0..0.0) })
            .collect();
        let m = TriMesh { vertices: verts.clone(), faces: vec![], vertex_normals: vec![] };
        let g = voxelize_features(&feats, &m, &spec);
        let mut in_grid = 0;
        for (lin, cell) in g.iter() {
            let idx = spec.unravel(lin);
            let members: Vec<&VertexFeatures> = verts
                .iter()
                .zip(&feats)
                .filter(|(v, _)| (0..3).all(|a| {
                    let lo = idx[a] as f64 * 0.4;
                    v[a] >= lo && v[a] < lo + 0.4
                }))
                .map(|(_, f)| f)
                .collect();
            in_grid += members.len();
            assert_eq!(members.len(), cell.count as usize);
            let mean_h = members.iter().map(|f| f.h).sum::<f64>() / members.len() as f64;
            let mean_r = members.iter().map(|f| f.r).sum::<f64>() / members.len() as f64;
            assert!((mean_h - cell.mean.h).abs() < 1e-12);
            assert!((mean_r - cell.mean.r).abs() < 1e-12);
        }
        let expected_in = verts.iter().filter(|v| spec.contains(v)).count();
        assert_eq!(in_grid, expected_in);
        assert_eq!(g.total_vertex_count() as usize, expected_in);
    }

    proptest! {
        #[test]
        fn slope_never_nan(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64, scale in (1.0 - 1e-6)..(1.0 + 1e-6)) {
            let n = Vector3::new(x, y, z);
            prop_assume!(n.norm() > 1e-3);
            let n = n.normalize() * scale;
            let s = slope(&n).unwrap();
            prop_assert!(s.is_finite() && (0.0..=FRAC_PI_2).contains(&s));
        }

        #[test]
        fn features_rigid_invariance(yaw in -3.0..3.0f64, axis in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), angle in -3.0..3.0f64,
                                     t in (-10.0..10.0f64, -10.0..10.0f64, -5.0..5.0f64)) {
            let base = jittered_mesh(7, 0.1, 0.02, |x, y| 0.2 * (4.0 * x).sin() + 0.1 * (5.0 * y).cos());
            let f0 = vertex_features(&base, 8).unwrap();
            let shift = Vec3::new(t.0, t.1, t.2);
            let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
            let zmesh = vertex_normals(&TriMesh {
                vertices: base.vertices.iter().map(|v| rz * v + shift).collect(),
                faces: base.faces.clone(),
                vertex_normals: vec![],
            }).mesh;
            let fz = vertex_features(&zmesh, 8).unwrap();
            for (a, b) in f0.iter().zip(&fz) {
                prop_assert!((a.theta - b.theta).abs() < 1e-6);
                prop_assert!((b.h - a.h - shift.z).abs() < 1e-9);
            }
            let ax = Vector3::new(axis.0, axis.1, axis.2);
            prop_assume!(ax.norm() > 1e-2);
            let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(ax), angle);
            let any = TriMesh {
                vertices: base.vertices.iter().map(|v| rot * v + shift).collect(),
                faces: base.faces.clone(),
                vertex_normals: vec![],
            };
            let any = vertex_normals(&any).mesh;
            let fa = vertex_features(&any, 8).unwrap();
            for (a, b) in f0.iter().zip(&fa) {
                prop_assert!((a.r - b.r).abs() < 1e-6);
            }
        }
    }
}
