//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use travgt_core::eval;
use travgt_core::features::{self, FeatureGrid};
use travgt_core::formats;
use travgt_core::geom::{Pose, TravLabel, Vec3, VoxelGridSpec};
use travgt_core::ingest::{self, Trajectory};
use travgt_core::kdtree::KdTree;
use travgt_core::label::{self, LabelGrid, ReferenceModel};
use travgt_core::pipeline::{self, KeyframeOutput, PipelineParams};
use travgt_core::surface::{vertex_normals, TriMesh};
use travgt_core::synth::{self, LidarModel, Region, RegionKind, TerrainSpec};

// criterion tolerances
const SLOPE_DEG: f64 = 20.0;
const SLOPE_MEAN_TOL_DEG: f64 = 2.0;
const SLOPE_P95_TOL_DEG: f64 = 4.0;
const SLOPE_RUNTIME: Duration = Duration::from_secs(60);
const FLAT_Z0: f64 = 0.5;
const ELEVATION_TOL: f64 = 0.05;
const ROUGH_AMPLITUDES: [f64; 3] = [0.02, 0.05, 0.10];
const ROUGH_FLAT_GAP: f64 = 1.0;
const CHI2_3_05: f64 = 7.8147;
const CHI2_TOL: f64 = 1e-3;
const CHI2_CLOSED_TOL: f64 = 1e-9;
const COVERAGE_SAMPLES: usize = 10_000;
const COVERAGE_RANGE: (f64, f64) = (0.94, 0.96);
const MAHALANOBIS_CASES: usize = 1_000;
const MAHALANOBIS_REL_TOL: f64 = 1e-9;
const WALL_N_MIN: f64 = 0.95;
const FLAT_P_MIN: f64 = 0.90;
const METRIC_PAIRS: usize = 100;
const INVARIANCE_TOL: f64 = 1e-6;
const SLERP_TOL: f64 = 1e-9;
const DEFAULT_DIMS: [usize; 3] = [256, 256, 32];
const DEFAULT_MIN: [f64; 3] = [-25.6, -25.6, -2.0];
const DEFAULT_MAX: [f64; 3] = [25.6, 25.6, 4.4];

/// Vertices closer than this to the mesh border are not interior.
const INTERIOR_MARGIN: f64 = 0.3;
const SENSOR_HEIGHT: f64 = 1.9;
const CLEARANCE: f64 = 0.1;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("slope oracle", slope_oracle),
        ("elevation oracle", elevation_oracle),
        ("roughness monotonicity", roughness_monotonicity),
        ("chi-squared quantile", chi2_quantile),
        ("coverage calibration", coverage_calibration),
        ("mahalanobis oracle", mahalanobis_oracle),
        ("end-to-end labelling", end_to_end_labelling),
        ("metric oracle", metric_oracle),
        ("rigid-motion feature invariance", rigid_invariance),
        ("determinism across thread counts", determinism),
        ("pose interpolation", interpolation),
        ("default grid conformance", default_grid),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// synthetic scenes

fn lidar() -> LidarModel {
    LidarModel {
        rings: 128,
        elevation_min_deg: -50.0,
        elevation_max_deg: 0.0,
        azimuth_step_deg: 0.4,
        max_range: 20.0,
        ..LidarModel::default()
    }
}

fn mount() -> Pose {
    Pose::from_translation_yaw(0.0, Vec3::new(0.0, 0.0, SENSOR_HEIGHT), 0.0)
}

fn region(min: [f64; 2], max: [f64; 2], kind: RegionKind) -> Region {
    Region { min, max, kind }
}

struct SceneRun {
    terrain: TerrainSpec,
    traj: Trajectory,
    out: KeyframeOutput,
}

/// Drives `path`, simulates scans every half second and labels the middle one.
fn run_scene(terrain: TerrainSpec, path: &[[f64; 2]]) -> SceneRun {
    let traj = synth::gen_trajectory(&terrain, path, 1.0, CLEARANCE).expect("trajectory");
    let scans = synth::simulate_sequence(&terrain, &traj, &lidar(), &mount(), 5).expect("scans");
    let params = PipelineParams { mount: mount(), window: scans.len(), ..PipelineParams::default() };
    let mut out = pipeline::run(&scans, &traj, &[scans.len() / 2], &params).expect("pipeline");
    SceneRun { terrain, traj, out: out.remove(0) }
}

/// The keyframe mesh in world coordinates with recomputed normals.
fn world_mesh(run: &SceneRun) -> TriMesh {
    let ego = &run.out.ego;
    let m = &run.out.mesh;
    vertex_normals(&TriMesh {
        vertices: m.vertices.iter().map(|v| ego.transform_point(v)).collect(),
        faces: m.faces.clone(),
        vertex_normals: Vec::new(),
    })
    .mesh
}

/// Vertices at least [`INTERIOR_MARGIN`] from any border vertex.
fn interior(mesh: &TriMesh) -> Vec<bool> {
    let boundary = mesh.boundary_vertices();
    let border: Vec<Vec3> = mesh.vertices.iter().zip(&boundary).filter(|(_, b)| **b).map(|(v, _)| *v).collect();
    if border.is_empty() {
        return boundary.iter().map(|b| !b).collect();
    }
    let tree = KdTree::new(&border);
    mesh.vertices
        .iter()
        .map(|v| tree.knn(v, 1)[0].dist_sq >= INTERIOR_MARGIN * INTERIOR_MARGIN)
        .collect()
}

fn inside(v: &Vec3, min: [f64; 2], max: [f64; 2], margin: f64) -> bool {
    v.x >= min[0] + margin && v.x <= max[0] - margin && v.y >= min[1] + margin && v.y <= max[1] - margin
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------------------
// 1

fn slope_oracle() -> Outcome {
    let started = Instant::now();
    let (min, max) = ([-15.0, -15.0], [15.0, 15.0]);
    let terrain = TerrainSpec::new(
        vec![region(min, max, RegionKind::Ramp { z0: 0.0, slope: SLOPE_DEG.to_radians(), heading: 0.4, origin: [0.0, 0.0] })],
        11,
    )
    .unwrap();
    let run = run_scene(terrain, &[[-4.0, -1.0], [4.0, 1.0]]);
    let mesh = world_mesh(&run);
    let feats = features::vertex_features(&mesh, features::DEFAULT_FEATURE_K).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let keep = interior(&mesh);
    let mut slopes = Vec::new();
    let mut errors = Vec::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        if keep[i] && inside(v, min, max, 1.0) {
            let truth = synth::analytic_slope(&run.terrain, v.x, v.y).unwrap();
            slopes.push(feats[i].theta.to_degrees());
            errors.push((feats[i].theta - truth).abs().to_degrees());
        }
    }
    if slopes.len() < 1000 {
        return Err(format!("only {} interior vertices", slopes.len()));
    }
    errors.sort_by(f64::total_cmp);
    let p95 = errors[(errors.len() as f64 * 0.95).ceil() as usize - 1];
    let m = mean(&slopes);
    check(
        (m - SLOPE_DEG).abs() <= SLOPE_MEAN_TOL_DEG && p95 <= SLOPE_P95_TOL_DEG && elapsed <= SLOPE_RUNTIME,
        format!(
            "mean {m:.4} deg over {} vertices, p95 error {p95:.2e} deg, runtime {:.1} s",
            slopes.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2

fn elevation_oracle() -> Outcome {
    let (min, max) = ([-15.0, -15.0], [15.0, 15.0]);
    let terrain = TerrainSpec::new(vec![region(min, max, RegionKind::Flat { z0: FLAT_Z0 })], 12).unwrap();
    let run = run_scene(terrain, &[[-4.0, 0.0], [4.0, 0.0]]);
    let mesh = world_mesh(&run);
    let feats = features::vertex_features(&mesh, features::DEFAULT_FEATURE_K).map_err(|e| e.to_string())?;
    let keep = interior(&mesh);
    let h: Vec<f64> = (0..mesh.vertices.len())
        .filter(|&i| keep[i] && inside(&mesh.vertices[i], min, max, 1.0))
        .map(|i| feats[i].h)
        .collect();
    if h.len() < 1000 {
        return Err(format!("only {} interior vertices", h.len()));
    }
    let m = mean(&h);
    check((m - FLAT_Z0).abs() <= ELEVATION_TOL, format!("mean elevation {m:.6} m over {} vertices", h.len()))
}

// ---------------------------------------------------------------------------
// 3

fn roughness_monotonicity() -> Outcome {
    let wavelength = 1.5;
    let patches = [[-9.0, 0.0, -3.0, 6.0], [-3.0, 0.0, 3.0, 6.0], [3.0, 0.0, 9.0, 6.0]];
    let mut regions = vec![
        region([-12.0, -12.0], [12.0, 0.0], RegionKind::Flat { z0: 0.0 }),
        region([-12.0, 0.0], [-9.0, 6.0], RegionKind::Flat { z0: 0.0 }),
        region([9.0, 0.0], [12.0, 6.0], RegionKind::Flat { z0: 0.0 }),
        region([-12.0, 6.0], [12.0, 12.0], RegionKind::Flat { z0: 0.0 }),
    ];
    for (p, a) in patches.iter().zip(ROUGH_AMPLITUDES) {
        regions.push(region([p[0], p[1]], [p[2], p[3]], RegionKind::Rough { z0: 0.0, amplitude: a, wavelength }));
    }
    let run = run_scene(TerrainSpec::new(regions, 13).unwrap(), &[[-5.0, -3.0], [5.0, -3.0]]);
    let mesh = world_mesh(&run);
    let feats = features::vertex_features(&mesh, features::DEFAULT_FEATURE_K).map_err(|e| e.to_string())?;
    let keep = interior(&mesh);
    let region_mean = |min: [f64; 2], max: [f64; 2]| -> Result<f64, String> {
        let r: Vec<f64> = (0..mesh.vertices.len())
            .filter(|&i| keep[i] && inside(&mesh.vertices[i], min, max, 0.5))
            .map(|i| feats[i].r)
            .collect();
        if r.len() < 200 {
            return Err(format!("only {} vertices in [{min:?}, {max:?}]", r.len()));
        }
        Ok(mean(&r))
    };
    let flat = region_mean([-8.0, -10.0], [8.0, -0.5])?;
    let rough = patches
        .iter()
        .map(|p| region_mean([p[0], p[1]], [p[2], p[3]]))
        .collect::<Result<Vec<_>, _>>()?;
    let increasing = rough.windows(2).all(|w| w[0] < w[1]);
    let gap = rough.iter().all(|&r| flat <= r - ROUGH_FLAT_GAP);
    check(
        increasing && gap,
        format!("flat {flat:.2}, a=0.02: {:.2}, a=0.05: {:.2}, a=0.10: {:.2}", rough[0], rough[1], rough[2]),
    )
}

// ---------------------------------------------------------------------------
// 4

/// P(χ²₃ ≤ x) = erf(√(x/2)) − √(2x/π)·e^(−x/2).
fn chi2_3_cdf(x: f64) -> f64 {
    statrs::function::erf::erf((x / 2.0).sqrt()) - (2.0 * x / std::f64::consts::PI).sqrt() * (-x / 2.0).exp()
}

fn chi2_quantile() -> Outcome {
    let got = label::chi2_threshold(3, 0.05);
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_3_cdf(mid) < 0.95 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    let closed = label::chi2_threshold(2, (-1.0f64).exp());
    check(
        (got - CHI2_3_05).abs() <= CHI2_TOL && (got - oracle).abs() <= CHI2_TOL && (closed - 2.0).abs() <= CHI2_CLOSED_TOL,
        format!("chi2(3, 0.05) = {got:.6} (oracle {oracle:.6}), chi2(2, e^-1) = {closed:.12}"),
    )
}

// ---------------------------------------------------------------------------
// 5

fn coverage_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth_mu = Vector3::new(-0.1, 0.05, -14.0);
    let truth_sd = Vector3::new(0.03, 0.02, 1.5);
    let fit_samples: Vec<Vector3<f64>> = (0..500)
        .map(|_| truth_mu + Vector3::from_fn(|i, _| truth_sd[i] * gauss(&mut rng)))
        .collect();
    let model = ReferenceModel::fit(&fit_samples, label::DEFAULT_LAMBDA).map_err(|e| e.to_string())?;
    let l = model.sigma.cholesky().ok_or("fitted covariance not SPD")?.l();
    let threshold = label::chi2_threshold(3, 0.05);
    let mut accepted = 0;
    for _ in 0..COVERAGE_SAMPLES {
        let z = Vector3::from_fn(|_, _| gauss(&mut rng));
        let f = model.mu + l * z;
        if label::mahalanobis_sq(&f, &model).map_err(|e| e.to_string())? <= threshold {
            accepted += 1;
        }
    }
    let frac = accepted as f64 / COVERAGE_SAMPLES as f64;
    check(
        frac >= COVERAGE_RANGE.0 && frac <= COVERAGE_RANGE.1,
        format!("{accepted} of {COVERAGE_SAMPLES} accepted ({frac:.4})"),
    )
}

// ---------------------------------------------------------------------------
// 6

fn adjugate_inverse(m: &Matrix3<f64>) -> Matrix3<f64> {
    let cof = |r: usize, c: usize| {
        let (r0, r1) = ((r + 1) % 3, (r + 2) % 3);
        let (c0, c1) = ((c + 1) % 3, (c + 2) % 3);
        m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)]
    };
    let det = m[(0, 0)] * cof(0, 0) + m[(0, 1)] * cof(0, 1) + m[(0, 2)] * cof(0, 2);
    Matrix3::from_fn(|r, c| cof(c, r) / det)
}

fn mahalanobis_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..MAHALANOBIS_CASES {
        let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let sigma = a * a.transpose() + Matrix3::identity() * rng.random_range(0.01..1.0);
        let mu = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let f = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let model = ReferenceModel { mu, sigma, sample_count: 4, lambda: 1e-6 };
        let got = label::mahalanobis_sq(&f, &model).map_err(|e| e.to_string())?;
        let d = f - mu;
        let oracle = (d.transpose() * adjugate_inverse(&sigma) * d)[(0, 0)];
        worst = worst.max((got - oracle).abs() / oracle.abs());
    }
    check(worst <= MAHALANOBIS_REL_TOL, format!("worst relative error {worst:.2e} over {MAHALANOBIS_CASES} cases"))
}

// ---------------------------------------------------------------------------
// 7

/// Independent footprint stamping over every occupied voxel.
fn stamped_oracle(traj: &Trajectory, grid: &VoxelGridSpec, features: &FeatureGrid) -> BTreeSet<usize> {
    let fp = label::FootprintSpec::default();
    let mut poses = Vec::new();
    for w in traj.samples().windows(2) {
        let steps = ((w[1].translation - w[0].translation).norm() / label::STAMP_SPACING).ceil().max(1.0) as usize;
        for i in 0..steps {
            poses.push(traj.interpolate(w[0].t + (w[1].t - w[0].t) * i as f64 / steps as f64).unwrap());
        }
    }
    poses.push(*traj.samples().last().unwrap());
    let mut out = BTreeSet::new();
    for (lin, _) in features.iter() {
        let idx = grid.unravel(lin);
        let c = grid.voxel_center(idx);
        let hit = poses.iter().any(|p| {
            let d = c - p.translation;
            let yaw = p.yaw();
            let along = d.x * yaw.cos() + d.y * yaw.sin();
            let across = -d.x * yaw.sin() + d.y * yaw.cos();
            let under = grid
                .voxel_index(&Vec3::new(p.translation.x, p.translation.y, grid.min_corner().z))
                .is_some_and(|v| v[0] == idx[0] && v[1] == idx[1]);
            (under || (along.abs() <= fp.length / 2.0 && across.abs() <= fp.width / 2.0)) && d.z.abs() <= fp.z_band
        });
        if hit {
            out.insert(lin);
        }
    }
    out
}

fn end_to_end_labelling() -> Outcome {
    let wall = ([-12.0, 3.0], [12.0, 5.0], 1.5, 0.4);
    let terrain = TerrainSpec::new(
        vec![
            region([-12.0, -12.0], [12.0, 3.0], RegionKind::Flat { z0: 0.0 }),
            region(wall.0, wall.1, RegionKind::Wall { z0: 0.0, height: wall.2, thickness: wall.3 }),
            region(
                [-12.0, 5.0],
                [12.0, 12.0],
                RegionKind::Ramp { z0: 0.0, slope: FRAC_PI_4, heading: FRAC_PI_2, origin: [0.0, 5.0] },
            ),
        ],
        17,
    )
    .unwrap();
    let run = run_scene(terrain, &[[-5.0, 0.0], [5.0, 0.0]]);
    let o = &run.out;
    let grid = *o.labels.spec();
    let ego = o.ego;
    let world = |lin: usize| ego.transform_point(&grid.voxel_center(grid.unravel(lin)));

    // partition
    for lin in 0..grid.voxel_count() {
        let l = o.labels.get(lin);
        if l.is_occupied() != o.features.is_occupied(lin) || (l == TravLabel::Traversable) != o.traj_voxels.contains(&lin) {
            return Err(format!("partition violated at voxel {lin}"));
        }
    }
    let oracle = stamped_oracle(&run.traj.transformed(&ego.inverse()), &grid, &o.features);
    let t_ok = oracle.iter().all(|&k| o.labels.get(k) == TravLabel::Traversable);

    let wall_mid = 0.5 * (wall.0[1] + wall.1[1]);
    let band = 0.5 * wall.3 + 0.5 * grid.voxel_size().y;
    let (mut wall_n, mut wall_total, mut flat_p, mut flat_total) = (0, 0, 0, 0);
    for (lin, _) in o.features.iter() {
        let c = world(lin);
        if c.x.abs() > 11.0 {
            continue;
        }
        if (c.y - wall_mid).abs() <= band && c.z > 0.2 {
            wall_total += 1;
            wall_n += usize::from(o.labels.get(lin) == TravLabel::NonTraversable);
        }
        if c.y <= wall.0[1] - 0.6 && c.y >= -11.0 && c.z.abs() < 0.1 && !o.traj_voxels.contains(&lin) {
            flat_total += 1;
            flat_p += usize::from(o.labels.get(lin) == TravLabel::PotentiallyTraversable);
        }
    }
    if wall_total == 0 || flat_total == 0 {
        return Err(format!("scene coverage too small: {wall_total} wall, {flat_total} flat voxels"));
    }
    let wf = wall_n as f64 / wall_total as f64;
    let ff = flat_p as f64 / flat_total as f64;
    check(
        t_ok && wf >= WALL_N_MIN && ff >= FLAT_P_MIN,
        format!(
            "wall N {wall_n}/{wall_total} ({wf:.3}), flat P {flat_p}/{flat_total} ({ff:.3}), trajectory T {}/{} (pipeline set {}), partition holds",
            oracle.iter().filter(|&&k| o.labels.get(k) == TravLabel::Traversable).count(),
            oracle.len(),
            o.traj_voxels.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let all = [TravLabel::Traversable, TravLabel::PotentiallyTraversable, TravLabel::NonTraversable, TravLabel::Unoccupied];
    for pair in 0..METRIC_PAIRS {
        let dims = [rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..6)];
        let spec = VoxelGridSpec::new(
            Vec3::zeros(),
            Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * 0.5,
            Vec3::repeat(0.5),
        )
        .unwrap();
        let occupancy = rng.random_range(0.0..1.0);
        let draw = |rng: &mut ChaCha8Rng| {
            let mut g = LabelGrid::unoccupied(spec);
            for k in 0..spec.voxel_count() {
                if rng.random_bool(occupancy) {
                    g.set(k, all[rng.random_range(0..3)]);
                }
            }
            g
        };
        let pred = draw(&mut rng);
        let gt = draw(&mut rng);
        let stats = eval::confusion(&pred, &gt).map_err(|e| e.to_string())?;

        let mut occ = [0u64; 4];
        let mut cls = [[0u64; 3]; 3];
        for k in 0..spec.voxel_count() {
            let (p, g) = (pred.get(k), gt.get(k));
            occ[match (p.is_occupied(), g.is_occupied()) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            }] += 1;
            for (c, class) in TravLabel::CLASSES.iter().enumerate() {
                if p == *class && g == *class {
                    cls[c][0] += 1;
                }
                if p == *class && g != *class {
                    cls[c][1] += 1;
                }
                if p != *class && g == *class {
                    cls[c][2] += 1;
                }
            }
        }
        let counts_ok = [stats.tp_occ, stats.fp_occ, stats.fn_occ, stats.tn_occ] == occ
            && (0..3).all(|c| [stats.classes[c].tp, stats.classes[c].fp, stats.classes[c].fn_] == cls[c]);
        if !counts_ok {
            return Err(format!("pair {pair}: counts differ"));
        }
        let ratio = |t: u64, f: u64, n: u64| (t + f + n > 0).then(|| t as f64 / (t + f + n) as f64);
        let occ_iou = ratio(occ[0], occ[1], occ[2]);
        let class_iou: Vec<Option<f64>> = cls.iter().map(|c| ratio(c[0], c[1], c[2])).collect();
        let defined: Vec<f64> = class_iou.iter().flatten().copied().collect();
        let m = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        let same = |a: Option<f64>, b: Option<f64>| a.map(f64::to_bits) == b.map(f64::to_bits);
        let ok = same(eval::iou_occ(&stats).ok(), occ_iou)
            && TravLabel::CLASSES.iter().zip(&class_iou).all(|(c, v)| same(eval::iou_class(&stats, *c).ok(), *v))
            && same(eval::miou(&stats).ok(), m);
        if !ok {
            return Err(format!("pair {pair}: metric values differ"));
        }
    }
    Ok(format!("{METRIC_PAIRS} random pairs: counts identical, ratios bit-equal"))
}

// ---------------------------------------------------------------------------
// 9

fn test_mesh(rng: &mut ChaCha8Rng) -> TriMesh {
    let n = 24;
    let mut vertices = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let x = i as f64 * 0.1 + rng.random_range(-0.03..0.03);
            let y = j as f64 * 0.1 + rng.random_range(-0.03..0.03);
            let z = 0.3 * (1.3 * x).sin() + 0.2 * (0.7 * y).cos() + rng.random_range(-0.01..0.01);
            vertices.push(Vec3::new(x, y, z));
        }
    }
    let mut faces = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = (j * n + i) as u32;
            let (b, c, d) = (a + 1, a + 1 + n as u32, a + n as u32);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    vertex_normals(&TriMesh { vertices, faces, vertex_normals: Vec::new() }).mesh
}

fn moved(mesh: &TriMesh, pose: &Pose) -> TriMesh {
    TriMesh {
        vertices: mesh.vertices.iter().map(|v| pose.transform_point(v)).collect(),
        faces: mesh.faces.clone(),
        vertex_normals: mesh.vertex_normals.iter().map(|n| pose.transform_vector(n)).collect(),
    }
}

fn rigid_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = features::DEFAULT_FEATURE_K;
    let (mut slope_err, mut rough_err, mut elev_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let mesh = test_mesh(&mut rng);
        let base = features::vertex_features(&mesh, k).map_err(|e| e.to_string())?;
        let t = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0));

        let z_motion = Pose::from_translation_yaw(0.0, t, rng.random_range(-3.1..3.1));
        let zf = features::vertex_features(&moved(&mesh, &z_motion), k).map_err(|e| e.to_string())?;
        let shift = Pose::from_translation_yaw(0.0, t, 0.0);
        let sf = features::vertex_features(&moved(&mesh, &shift), k).map_err(|e| e.to_string())?;
        let axis = nalgebra::Unit::new_normalize(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let general = Pose { t: 0.0, translation: t, rotation: UnitQuaternion::from_axis_angle(&axis, rng.random_range(0.1..3.0)) };
        let gf = features::vertex_features(&moved(&mesh, &general), k).map_err(|e| e.to_string())?;

        for i in 0..base.len() {
            slope_err = slope_err.max((zf[i].theta - base[i].theta).abs()).max((sf[i].theta - base[i].theta).abs());
            rough_err = rough_err
                .max((gf[i].r - base[i].r).abs())
                .max((zf[i].r - base[i].r).abs())
                .max((sf[i].r - base[i].r).abs());
            elev_err = elev_err
                .max((sf[i].h - (base[i].h + t.z)).abs())
                .max((zf[i].h - (base[i].h + t.z)).abs());
        }
    }
    check(
        slope_err <= INVARIANCE_TOL && rough_err <= INVARIANCE_TOL && elev_err == 0.0,
        format!("max slope change {slope_err:.1e} rad, roughness change {rough_err:.1e}, elevation residual {elev_err:e}"),
    )
}

// ---------------------------------------------------------------------------
// 10 and 12

const CLI_SCENE: &str = r#"
seed = 21
[[region]]
kind = "flat"
min = [-14.0, -14.0]
max = [14.0, 3.0]
[[region]]
kind = "wall"
min = [-14.0, 3.0]
max = [14.0, 5.0]
height = 1.2
thickness = 0.4
[[region]]
kind = "rough"
min = [-14.0, 5.0]
max = [14.0, 14.0]
amplitude = 0.1
wavelength = 2.0
[trajectory]
path = [[-4.0, 0.0], [4.0, 0.0], [4.0, 2.0]]
speed = 1.0
clearance = 0.1
"#;

/// Writes a scene and a config that keeps the default grid.
fn cli_workspace(dir: &Path) {
    std::fs::write(dir.join("scene.toml"), CLI_SCENE).unwrap();
    let cfg = "terrain = \"scene.toml\"\nscan_every = 5\nwindow = 11\nlidar_rings = 64\nlidar_elevation_min = -50.0\nlidar_max_range = 20.0\n";
    std::fs::write(dir.join("config.toml"), cfg).unwrap();
}

fn run_cli(dir: &Path, threads: usize) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_travgt"))
        .args(["pipeline", "--config"])
        .arg(dir.join("config.toml"))
        .args(["--threads", &threads.to_string(), "--seed", "99"])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("travgt exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "stnl" || e == "stnf"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    cli_workspace(a.path());
    cli_workspace(b.path());
    run_cli(a.path(), 1)?;
    run_cli(b.path(), 4)?;
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    check(
        !fa.is_empty() && fa.len() % 2 == 0 && fa == fb,
        format!("{} files byte-identical between --threads 1 and 4: {}", fa.len(), names.join(", ")),
    )
}

fn default_grid() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cli_workspace(dir.path());
    run_cli(dir.path(), 2)?;
    let files = artifacts(dir.path());
    let expected = VoxelGridSpec::default_label_grid();
    let ok_spec = |s: &VoxelGridSpec| {
        s.dims() == DEFAULT_DIMS
            && s.min_corner() == Vec3::from(DEFAULT_MIN)
            && s.max_corner() == Vec3::from(DEFAULT_MAX)
            && s.voxel_size() == Vec3::repeat(0.2)
    };
    if !ok_spec(&expected) {
        return Err(format!("default spec is {expected:?}"));
    }
    for (name, bytes) in &files {
        let spec = if name.ends_with(".stnl") {
            *formats::parse_label_grid(std::str::from_utf8(bytes).unwrap()).map_err(|e| e.to_string())?.spec()
        } else {
            *formats::read_feature_grid(bytes).map_err(|e| e.to_string())?.spec()
        };
        if !ok_spec(&spec) {
            return Err(format!("{name} has grid {spec:?}"));
        }
    }
    let header = files
        .iter()
        .find(|(n, _)| n.ends_with(".stnl"))
        .and_then(|(_, b)| std::str::from_utf8(b).ok()?.lines().nth(1).map(str::to_owned))
        .unwrap_or_default();
    check(!files.is_empty(), format!("{} files on dims {DEFAULT_DIMS:?}; `{header}`", files.len()))
}

// ---------------------------------------------------------------------------
// 11

fn interpolation() -> Outcome {
    let a = UnitQuaternion::identity();
    let b = UnitQuaternion::from_euler_angles(0.0, 0.0, FRAC_PI_2);
    let mid = ingest::slerp(&a, &b, 0.5);
    let expect = UnitQuaternion::from_euler_angles(0.0, 0.0, FRAC_PI_4);
    let mid_err = mid.angle_to(&expect).max((mid.coords - expect.coords).norm());

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_norm: f64 = 0.0;
    let random_q = |rng: &mut ChaCha8Rng| {
        let v = nalgebra::Vector4::from_fn(|_, _| gauss(rng));
        [v[0], v[1], v[2], v[3]]
    };
    let poses: Vec<Pose> = (0..50)
        .map(|i| Pose::from_wxyz(i as f64 * 0.1, Vec3::new(i as f64, 0.0, 0.0), random_q(&mut rng)).unwrap())
        .collect();
    let traj = Trajectory::new(poses).map_err(|e| e.to_string())?;
    for _ in 0..10_000 {
        let t = rng.random_range(0.0..4.9);
        let p = ingest::interpolate_pose(&traj, t).map_err(|e| e.to_string())?;
        worst_norm = worst_norm.max((p.rotation.quaternion().norm() - 1.0).abs());
        let q = ingest::slerp(
            &UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(nalgebra::Vector4::from(random_q(&mut rng)))),
            &UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(nalgebra::Vector4::from(random_q(&mut rng)))),
            rng.random_range(0.0..1.0),
        );
        worst_norm = worst_norm.max((q.quaternion().norm() - 1.0).abs());
    }
    check(
        mid_err <= SLERP_TOL && worst_norm <= SLERP_TOL,
        format!("midpoint error {mid_err:.1e}, worst |norm - 1| {worst_norm:.1e} over 20000 samples"),
    )
}
