//! Marching cubes over an [`ImplicitField`].
//!
//! Instead of a 256-case table, each cell's polygons are traced from its
//! faces: every face contributes segments between its sign-changing edges,
//! and ambiguous faces (alternating corner signs) are resolved with the
//! asymptotic decider on the bilinear face interpolant. Two cells sharing a
//! face see identical corner values in identical order, so they make the
//! same decision and the surface has no cracks. A value of exactly zero
//! counts as inside.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{compact, ImplicitField, TriMesh, MIN_FACE_AREA};
use crate::geom::Vec3;

/// Welding quantum for coincident vertices, in meters.
const WELD_QUANTUM: f64 = 1e-7;

/// Corner `c` has offsets `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as `(low corner, high corner, axis)`.
const EDGES: [(usize, usize, usize); 12] = [
    (0, 1, 0),
    (2, 3, 0),
    (4, 5, 0),
    (6, 7, 0),
    (0, 2, 1),
    (1, 3, 1),
    (4, 6, 1),
    (5, 7, 1),
    (0, 4, 2),
    (1, 5, 2),
    (2, 6, 2),
    (3, 7, 2),
];

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    EDGES
        .iter()
        .position(|&(x, y, _)| x == lo && y == hi)
        .expect("corners are adjacent")
}

/// Faces as four corners in cyclic order, starting from the corner with both
/// in-face coordinates zero; neighbouring cells enumerate a shared face in
/// the same order.
fn faces() -> [[usize; 4]; 6] {
    let mut out = [[0; 4]; 6];
    let mut f = 0;
    for axis in 0..3 {
        let (u, v) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for side in 0..2 {
            let corner = |du: usize, dv: usize| (side << axis) | (du << u) | (dv << v);
            out[f] = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            f += 1;
        }
    }
    out
}

fn inside(v: f64) -> bool {
    v <= 0.0
}

/// Closed loops of local edge ids for one cell.
fn cell_loops(vals: &[f64; 8], faces: &[[usize; 4]; 6]) -> Vec<Vec<usize>> {
    let mut link: [[usize; 2]; 12] = [[usize::MAX; 2]; 12];
    let mut connect = |a: usize, b: usize| {
        for (e, o) in [(a, b), (b, a)] {
            let slot = if link[e][0] == usize::MAX { 0 } else { 1 };
            link[e][slot] = o;
        }
    };
    for q in faces {
        let f = q.map(|c| vals[c]);
        let ins = f.map(inside);
        let e = [
            edge_between(q[0], q[1]),
            edge_between(q[1], q[2]),
            edge_between(q[2], q[3]),
            edge_between(q[3], q[0]),
        ];
        let crossing: Vec<usize> = (0..4).filter(|&i| ins[i] != ins[(i + 1) % 4]).collect();
        match crossing.len() {
            0 => {}
            2 => connect(e[crossing[0]], e[crossing[1]]),
            4 => {
                let denom = f[0] + f[2] - f[1] - f[3];
                let saddle = if denom != 0.0 {
                    (f[0] * f[2] - f[1] * f[3]) / denom
                } else {
                    0.25 * (f[0] + f[1] + f[2] + f[3])
                };
                if inside(saddle) == ins[0] {
                    // corners 0 and 2 connect through the face centre
                    connect(e[0], e[1]);
                    connect(e[2], e[3]);
                } else {
                    connect(e[3], e[0]);
                    connect(e[1], e[2]);
                }
            }
            _ => unreachable!("a quad has an even number of sign changes"),
        }
    }
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if seen[start] || link[start][0] == usize::MAX {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let mut prev = start;
        let mut cur = link[start][0];
        while cur != start {
            seen[cur] = true;
            lp.push(cur);
            let next = if link[cur][0] == prev { link[cur][1] } else { link[cur][0] };
            prev = cur;
            cur = next;
        }
        loops.push(lp);
    }
    loops
}

/// Gradient of the trilinear interpolant at local coordinates `p`.
fn trilinear_gradient(vals: &[f64; 8], p: [f64; 3]) -> Vec3 {
    let mut g = Vec3::zeros();
    for (c, &v) in vals.iter().enumerate() {
        let o = corner_offset(c);
        let basis = |a: usize| if o[a] == 1 { p[a] } else { 1.0 - p[a] };
        let sign = |a: usize| if o[a] == 1 { 1.0 } else { -1.0 };
        g.x += v * sign(0) * basis(1) * basis(2);
        g.y += v * basis(0) * sign(1) * basis(2);
        g.z += v * basis(0) * basis(1) * sign(2);
    }
    g
}

/// Global key of the lattice edge leaving node `id` along `axis`.
fn edge_key(id: usize, axis: usize) -> u64 {
    id as u64 * 3 + axis as u64
}

fn crossing_point(field: &ImplicitField, key: u64) -> Vec3 {
    let id = (key / 3) as usize;
    let axis = (key % 3) as usize;
    let [i, j, k] = field.unravel(id);
    let mut n = [i, j, k];
    n[axis] += 1;
    let fa = field.value_by_id(id).expect("valid corner");
    let fb = field
        .value(n[0], n[1], n[2])
        .expect("valid corner");
    let t = fa / (fa - fb);
    let a = field.node_position(i, j, k);
    let b = field.node_position(n[0], n[1], n[2]);
    a + (b - a) * t
}

/// Extracts the zero level set as a welded triangle mesh (no normals).
pub(super) fn extract(field: &ImplicitField) -> TriMesh {
    let [nx, ny, nz] = field.dims();
    if nx < 2 || ny < 2 || nz < 2 {
        return TriMesh::default();
    }
    let faces = faces();
    let spacing = field.spacing();
    let layers: Vec<Vec<[u64; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut vals = [0.0; 8];
                    let mut complete = true;
                    for (c, v) in vals.iter_mut().enumerate() {
                        let o = corner_offset(c);
                        match field.value(i + o[0], j + o[1], k + o[2]) {
                            Some(x) => *v = x,
                            None => {
                                complete = false;
                                break;
                            }
                        }
                    }
                    if !complete {
                        continue;
                    }
                    let n_in = vals.iter().filter(|&&v| inside(v)).count();
                    if n_in == 0 || n_in == 8 {
                        continue;
                    }
                    let keys: [u64; 12] = EDGES.map(|(lo, _, axis)| {
                        let o = corner_offset(lo);
                        edge_key(field.node_id(i + o[0], j + o[1], k + o[2]), axis)
                    });
                    for mut lp in cell_loops(&vals, &faces) {
                        if lp.len() < 3 {
                            continue;
                        }
                        // orient so the polygon normal follows the field gradient
                        let pts: Vec<Vec3> = lp
                            .iter()
                            .map(|&e| crossing_point(field, keys[e]))
                            .collect();
                        let mut newell = Vec3::zeros();
                        let mut centroid = Vec3::zeros();
                        for a in 0..pts.len() {
                            newell += pts[a].cross(&pts[(a + 1) % pts.len()]);
                            centroid += pts[a];
                        }
                        centroid /= pts.len() as f64;
                        let base = field.node_position(i, j, k);
                        let local = ((centroid - base) / spacing).map(|v| v.clamp(0.0, 1.0));
                        let mut grad = trilinear_gradient(&vals, [local.x, local.y, local.z]);
                        if grad.norm_squared() == 0.0 {
                            grad = trilinear_gradient(&vals, [0.5; 3]);
                        }
                        if newell.dot(&grad) < 0.0 {
                            lp.reverse();
                        }
                        for w in 1..lp.len() - 1 {
                            tris.push([keys[lp[0]], keys[lp[w]], keys[lp[w + 1]]]);
                        }
                    }
                }
            }
            tris
        })
        .collect();

    let mut mesh = TriMesh::default();
    let mut by_edge: HashMap<u64, u32> = HashMap::new();
    let mut by_position: HashMap<[i64; 3], u32> = HashMap::new();
    let mut faces_out = Vec::new();
    for tri in layers.into_iter().flatten() {
        let ids = tri.map(|key| {
            *by_edge.entry(key).or_insert_with(|| {
                let p = crossing_point(field, key);
                let q = p.map(|c| (c / WELD_QUANTUM).round() as i64);
                *by_position.entry([q.x, q.y, q.z]).or_insert_with(|| {
                    mesh.vertices.push(p);
                    (mesh.vertices.len() - 1) as u32
                })
            })
        });
        if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
            continue;
        }
        let [a, b, c] = ids.map(|v| mesh.vertices[v as usize]);
        if 0.5 * (b - a).cross(&(c - a)).norm() <= MIN_FACE_AREA {
            continue;
        }
        faces_out.push(ids);
    }
    compact(&mesh, faces_out)
}
