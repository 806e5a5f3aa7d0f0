use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde_json::{json, Value};
use travgt_core::eval::{self, MetricsReport};
use travgt_core::formats;
use travgt_core::geom::TravLabel;
use travgt_core::ingest::{self, ScanFormat, ScanFrame, Trajectory};
use travgt_core::label::LabelGrid;
use travgt_core::pipeline::{self, KeyframeOutput};
use travgt_core::ply;
use travgt_core::synth;

use crate::config::Config;
use crate::error::{read_input, read_text, CliError};
use crate::scene::Scene;

const SCAN_PREFIX: &str = "scan_";

/// Label file name for keyframe `k`.
pub fn frame_stem(k: usize) -> String {
    format!("frame_{k:06}")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::write(path, e))
}

fn load_scene(cfg: &Config, terrain: Option<&Path>) -> Result<(Scene, PathBuf), CliError> {
    let path = terrain
        .map(Path::to_path_buf)
        .or_else(|| cfg.terrain.clone())
        .ok_or_else(|| CliError::Parse("no terrain scene given (--terrain or `terrain` key)".into()))?;
    let scene = Scene::from_toml(&read_text(&path)?).map_err(|e| CliError::parse(&path, e))?;
    Ok((scene, path))
}

pub struct SynthSummary {
    pub scans: usize,
    pub poses: usize,
    pub seed: u64,
}

/// Simulates scans along the scene path into `scan_dir` and writes the
/// trajectory. Previously generated scans in `scan_dir` are replaced.
pub fn synth(cfg: &Config, terrain: Option<&Path>) -> Result<SynthSummary, CliError> {
    let (mut scene, path) = load_scene(cfg, terrain)?;
    scene.terrain.seed = cfg.seed.unwrap_or(scene.terrain.seed);
    let traj = scene.trajectory().map_err(|e| CliError::stage(&path.display().to_string(), e))?;
    let scans = synth::simulate_sequence(&scene.terrain, &traj, &cfg.lidar(), &cfg.mount(), cfg.scan_every)
        .map_err(|e| CliError::stage("synth", e))?;

    if cfg.scan_dir.is_dir() {
        for entry in fs::read_dir(&cfg.scan_dir).map_err(|e| CliError::write(&cfg.scan_dir, e))? {
            let p = entry.map_err(|e| CliError::write(&cfg.scan_dir, e))?.path();
            let ours = p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(SCAN_PREFIX));
            if ours && p.extension().is_some_and(|e| e == "ply") {
                fs::remove_file(&p).map_err(|e| CliError::write(&p, e))?;
            }
        }
    }
    for (i, scan) in scans.iter().enumerate() {
        let mut buf = Vec::new();
        ingest::write_scan_ply(&mut buf, scan).expect("writing to memory");
        write_file(&cfg.scan_dir.join(format!("{SCAN_PREFIX}{i:06}.ply")), &buf)?;
    }
    let mut buf = Vec::new();
    ingest::write_trajectory(&mut buf, &traj).expect("writing to memory");
    write_file(&cfg.trajectory, &buf)?;
    info!("wrote {} scans and {} poses", scans.len(), traj.samples().len());
    Ok(SynthSummary { scans: scans.len(), poses: traj.samples().len(), seed: scene.terrain.seed })
}

fn load_scans(dir: &Path) -> Result<Vec<ScanFrame>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput(dir.to_path_buf()),
        _ => CliError::stage(&format!("reading {}", dir.display()), e),
    })?;
    let mut files: Vec<(PathBuf, ScanFormat)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| ScanFormat::from_path(&p).map(|f| (p, f)))
        .collect();
    files.sort_by(|a, b| a.0.cmp(&b.0));
    if files.is_empty() {
        return Err(CliError::MissingInput(dir.join("*.ply")));
    }
    let mut scans = files
        .par_iter()
        .map(|(p, f)| {
            let loaded = ingest::load_scan(p, *f).map_err(|e| CliError::ingest(p, e))?;
            if loaded.dropped > 0 {
                warn!("{}: dropped {} non-finite rows", p.display(), loaded.dropped);
            }
            Ok(loaded.scan)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    scans.sort_by(|a, b| a.t().total_cmp(&b.t()));
    Ok(scans)
}

fn load_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    ingest::load_trajectory(path).map_err(|e| CliError::ingest(path, e))
}

pub struct LabelRun {
    pub frames: Vec<(usize, PathBuf)>,
    pub manifest: PathBuf,
}

/// Runs the labelling pipeline and writes per-keyframe artifacts plus a
/// manifest into `output_dir`.
pub fn label(cfg: &Config, frame: Option<usize>) -> Result<LabelRun, CliError> {
    let started = Instant::now();
    let params = cfg.pipeline_params().map_err(CliError::Parse)?;
    let traj = load_trajectory(&cfg.trajectory)?;
    let scans = load_scans(&cfg.scan_dir)?;
    let load_time = started.elapsed();
    let keyframes = match frame {
        Some(k) if k < scans.len() => vec![k],
        Some(k) => {
            return Err(CliError::Parse(format!("--frame {k}: only {} scans available", scans.len())));
        }
        None => pipeline::keyframes(&scans, &traj, cfg.keyframe_stride()),
    };
    if keyframes.is_empty() {
        return Err(CliError::Stage("no scan lies inside the trajectory time span".into()));
    }
    let outputs = pipeline::run(&scans, &traj, &keyframes, &params).map_err(|e| CliError::stage("label", e))?;

    let out = &cfg.output_dir;
    let mut frames = Vec::new();
    let mut frame_entries = Vec::new();
    for o in &outputs {
        let stem = frame_stem(o.keyframe);
        let stnl = out.join(format!("{stem}.stnl"));
        let stnf = out.join(format!("{stem}.stnf"));
        let mesh = out.join(format!("{stem}_mesh.ply"));
        let mut buf = Vec::new();
        formats::write_label_grid(&mut buf, &o.labels).expect("writing to memory");
        write_file(&stnl, &buf)?;
        buf.clear();
        formats::write_feature_grid(&mut buf, &o.features).expect("writing to memory");
        write_file(&stnf, &buf)?;
        buf.clear();
        ply::write_binary(
            &mut buf,
            &o.mesh.vertices,
            ply::VertexAttributes { normals: Some(&o.mesh.vertex_normals), colors: None },
            &o.mesh.faces,
            &[format!("keyframe {}", o.keyframe)],
        )
        .expect("writing to memory");
        write_file(&mesh, &buf)?;
        frame_entries.push(frame_manifest(o, scans[o.keyframe].t(), [&stnl, &stnf, &mesh]));
        frames.push((o.keyframe, stnl));
    }

    let echo = toml::to_string(cfg).map_err(|e| CliError::stage("config echo", e))?;
    write_file(&out.join("config.toml"), echo.as_bytes())?;
    let manifest = json!({
        "config": serde_json::to_value(cfg).map_err(|e| CliError::stage("manifest", e))?,
        "scans": scans.len(),
        "frames": frame_entries,
        "timing_ms": {
            "load": load_time.as_secs_f64() * 1e3,
            "total": started.elapsed().as_secs_f64() * 1e3,
        },
    });
    let manifest_path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("json values serialize");
    write_file(&manifest_path, text.as_bytes())?;
    Ok(LabelRun { frames, manifest: manifest_path })
}

fn frame_manifest(o: &KeyframeOutput, t: f64, files: [&Path; 3]) -> Value {
    let [t_count, p, n, u] = o.labels.counts();
    let timing: BTreeMap<&str, f64> = o.timings.iter().map(|(k, d)| (*k, d.as_secs_f64() * 1e3)).collect();
    let m = &o.model;
    json!({
        "keyframe": o.keyframe,
        "timestamp": t,
        "ego_pose": {
            "translation": [o.ego.translation.x, o.ego.translation.y, o.ego.translation.z],
            "rotation_wxyz": o.ego.wxyz(),
        },
        "counts": { "T": t_count, "P": p, "N": n, "Unoccupied": u },
        "mesh": { "vertices": o.mesh.vertices.len(), "faces": o.mesh.faces.len() },
        "reference": {
            "mu": [m.mu[0], m.mu[1], m.mu[2]],
            "sigma": (0..3).map(|r| [m.sigma[(r, 0)], m.sigma[(r, 1)], m.sigma[(r, 2)]]).collect::<Vec<_>>(),
            "samples": m.sample_count,
        },
        "files": {
            "labels": files[0].display().to_string(),
            "features": files[1].display().to_string(),
            "mesh": files[2].display().to_string(),
        },
        "timing_ms": timing,
    })
}

pub fn read_label_grid(path: &Path) -> Result<LabelGrid, CliError> {
    formats::parse_label_grid(&read_text(path)?).map_err(|e| CliError::parse(path, e))
}

pub fn report_json(r: &MetricsReport) -> Value {
    let c = &r.counts;
    let class = |i: usize| json!({ "tp": c.classes[i].tp, "fp": c.classes[i].fp, "fn": c.classes[i].fn_ });
    json!({
        "iou_occ": r.iou_occ,
        "iou_T": r.iou_class[0],
        "iou_P": r.iou_class[1],
        "iou_N": r.iou_class[2],
        "miou": r.miou,
        "counts": {
            "occupancy": { "tp": c.tp_occ, "fp": c.fp_occ, "fn": c.fn_occ, "tn": c.tn_occ },
            "T": class(0),
            "P": class(1),
            "N": class(2),
        },
    })
}

/// Scores `pred` against `gt`, writes the report to `out` and returns it.
pub fn evaluate(pred: &Path, gt: &Path, out: &Path) -> Result<Value, CliError> {
    let p = read_label_grid(pred)?;
    let g = read_label_grid(gt)?;
    let stats = eval::confusion(&p, &g)?;
    let report = report_json(&eval::report(&stats));
    let text = serde_json::to_string_pretty(&report).expect("json values serialize");
    write_file(out, text.as_bytes())?;
    Ok(report)
}

pub fn label_color(l: TravLabel) -> [u8; 3] {
    match l {
        TravLabel::Traversable => [0, 200, 0],
        TravLabel::PotentiallyTraversable => [0, 90, 255],
        TravLabel::NonTraversable => [230, 0, 230],
        TravLabel::Unoccupied => [128, 128, 128],
    }
}

/// Colors mesh vertices by the label of their voxel.
pub fn export(labels: &Path, mesh: &Path, out: &Path) -> Result<usize, CliError> {
    let grid = read_label_grid(labels)?;
    let data = ply::parse(&read_input(mesh)?).map_err(|e| CliError::parse(mesh, e))?;
    let colors: Vec<[u8; 3]> = data.vertices.iter().map(|v| label_color(grid.label_at(v))).collect();
    let mut buf = Vec::new();
    ply::write_binary(
        &mut buf,
        &data.vertices,
        ply::VertexAttributes { normals: data.normals.as_deref(), colors: Some(&colors) },
        &data.faces,
        &[],
    )
    .expect("writing to memory");
    write_file(out, &buf)?;
    Ok(data.vertices.len())
}
