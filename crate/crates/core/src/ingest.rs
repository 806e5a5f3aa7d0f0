//! Loading LiDAR scans and trajectory logs, and pose interpolation.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use thiserror::Error;

use crate::geom::{is_finite, GeomError, Pose, Vec3};
use crate::ply;

/// Header line required at the top of trajectory files.
pub const TRAJECTORY_HEADER: &str = "t,x,y,z,qw,qx,qy,qz";

/// Quaternions closer than this (in |dot|) are blended linearly.
const SLERP_PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },
    #[error("scan contains no finite points")]
    EmptyScan,
    #[error("timestamps not strictly increasing at sample {0}")]
    NonMonotonicTimestamps(usize),
    #[error("timestamp {0} outside trajectory span")]
    OutOfRange(f64),
    #[error("trajectory has no samples")]
    EmptyTrajectory,
}

impl IngestError {
    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        IngestError::MalformedFile {
            line,
            reason: reason.into(),
        }
    }
}

impl From<ply::PlyError> for IngestError {
    fn from(e: ply::PlyError) -> Self {
        match e {
            ply::PlyError::Io(source) => IngestError::Io {
                path: String::new(),
                source,
            },
            ply::PlyError::Malformed { line, reason } => IngestError::MalformedFile { line, reason },
        }
    }
}

/// One LiDAR frame in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFrame {
    t: f64,
    points: Vec<Vec3>,
    intensity: Option<Vec<f64>>,
}

impl ScanFrame {
    pub fn new(t: f64, points: Vec<Vec3>, intensity: Option<Vec<f64>>) -> Result<Self, IngestError> {
        if points.is_empty() {
            return Err(IngestError::EmptyScan);
        }
        if !(t.is_finite() && t >= 0.0) {
            return Err(IngestError::malformed(0, format!("invalid timestamp {t}")));
        }
        if let Some(i) = points.iter().position(|p| !is_finite(p)) {
            return Err(IngestError::malformed(0, format!("non-finite point {i}")));
        }
        if let Some(int) = &intensity {
            if int.len() != points.len() {
                return Err(IngestError::malformed(0, "intensity length mismatch"));
            }
        }
        Ok(Self {
            t,
            points,
            intensity,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanFormat {
    Ply,
    XyzCsv,
}

impl ScanFormat {
    /// Guesses the format from a file extension (`.ply`, `.csv`, `.xyz`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(ScanFormat::Ply),
            "csv" | "xyz" | "txt" => Some(ScanFormat::XyzCsv),
            _ => None,
        }
    }
}

/// A loaded scan plus the number of rows dropped for non-finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScan {
    pub scan: ScanFrame,
    pub dropped: usize,
}

fn read_file(path: &Path) -> Result<Vec<u8>, IngestError> {
    fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Timestamp from a `timestamp <seconds>` comment; scans without one load at t = 0.
fn timestamp_from_comments<'a>(comments: impl Iterator<Item = &'a str>) -> Result<f64, IngestError> {
    for c in comments {
        let mut w = c.split_whitespace();
        if w.next() == Some("timestamp") {
            let raw = w.next().unwrap_or("");
            return raw
                .parse::<f64>()
                .map_err(|_| IngestError::malformed(0, format!("bad timestamp '{raw}'")));
        }
    }
    Ok(0.0)
}

pub fn load_scan(path: &Path, format: ScanFormat) -> Result<LoadedScan, IngestError> {
    let bytes = read_file(path)?;
    match format {
        ScanFormat::Ply => parse_ply_scan(&bytes),
        ScanFormat::XyzCsv => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| IngestError::malformed(0, "file is not utf-8"))?;
            parse_xyz_csv(text)
        }
    }
}

pub fn parse_ply_scan(bytes: &[u8]) -> Result<LoadedScan, IngestError> {
    let data = ply::parse(bytes)?;
    let t = timestamp_from_comments(data.comments.iter().map(String::as_str))?;
    let total = data.vertices.len();
    let points: Vec<Vec3> = data.vertices.into_iter().filter(is_finite).collect();
    let dropped = total - points.len();
    Ok(LoadedScan {
        scan: ScanFrame::new(t, points, None)?,
        dropped,
    })
}

/// Parses `x,y,z[,intensity]` rows. Lines starting with `#` are comments;
/// `# timestamp <t>` sets the scan time.
pub fn parse_xyz_csv(text: &str) -> Result<LoadedScan, IngestError> {
    let mut points = Vec::new();
    let mut intensity: Vec<f64> = Vec::new();
    let mut width = None;
    let mut dropped = 0;
    let mut comments = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim());
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(IngestError::malformed(
                line_no,
                format!("expected 3 or 4 fields, found {}", fields.len()),
            ));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(IngestError::malformed(line_no, "inconsistent column count"))
            }
            _ => {}
        }
        let mut vals = [0.0; 4];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f
                .parse::<f64>()
                .map_err(|_| IngestError::malformed(line_no, format!("bad number '{f}'")))?;
        }
        if vals[..fields.len()].iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
        if fields.len() == 4 {
            intensity.push(vals[3]);
        }
    }
    let t = timestamp_from_comments(comments.into_iter())?;
    let intensity = (width == Some(4)).then_some(intensity);
    Ok(LoadedScan {
        scan: ScanFrame::new(t, points, intensity)?,
        dropped,
    })
}

/// Writes a scan as binary PLY carrying its timestamp in a comment.
pub fn write_scan_ply<W: Write>(w: W, scan: &ScanFrame) -> std::io::Result<()> {
    ply::write_binary(
        w,
        scan.points(),
        ply::VertexAttributes::default(),
        &[],
        &[format!("timestamp {}", scan.t())],
    )
}

/// Time-ordered robot poses in the global frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<Pose>,
}

impl Trajectory {
    pub fn new(samples: Vec<Pose>) -> Result<Self, IngestError> {
        if samples.is_empty() {
            return Err(IngestError::EmptyTrajectory);
        }
        for i in 1..samples.len() {
            if !(samples[i].t > samples[i - 1].t) {
                return Err(IngestError::NonMonotonicTimestamps(i));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Pose] {
        &self.samples
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.start_time() && t <= self.end_time()
    }

    pub fn interpolate(&self, t: f64) -> Result<Pose, IngestError> {
        interpolate_pose(self, t)
    }

    /// Applies `frame` to every sample (e.g. global → ego).
    pub fn transformed(&self, frame: &Pose) -> Trajectory {
        Trajectory {
            samples: self.samples.iter().map(|p| frame.compose(p)).collect(),
        }
    }
}

/// Parses the `t,x,y,z,qw,qx,qy,qz` csv format.
pub fn parse_trajectory(text: &str) -> Result<Trajectory, IngestError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        Some((i, _)) => {
            return Err(IngestError::malformed(
                i + 1,
                format!("expected header '{TRAJECTORY_HEADER}'"),
            ))
        }
        None => return Err(IngestError::EmptyTrajectory),
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>()
                    .map_err(|_| IngestError::malformed(line_no, format!("bad number '{f}'")))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 8 {
            return Err(IngestError::malformed(
                line_no,
                format!("expected 8 fields, found {}", vals.len()),
            ));
        }
        let pose = Pose::from_wxyz(
            vals[0],
            Vec3::new(vals[1], vals[2], vals[3]),
            [vals[4], vals[5], vals[6], vals[7]],
        )
        .map_err(|e: GeomError| IngestError::malformed(line_no, e.to_string()))?;
        samples.push(pose);
    }
    Trajectory::new(samples)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, IngestError> {
    let bytes = read_file(path)?;
    let text =
        std::str::from_utf8(&bytes).map_err(|_| IngestError::malformed(0, "file is not utf-8"))?;
    parse_trajectory(text)
}

pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> std::io::Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for p in traj.samples() {
        let [qw, qx, qy, qz] = p.wxyz();
        let v = p.translation;
        writeln!(w, "{},{},{},{},{},{},{},{}", p.t, v.x, v.y, v.z, qw, qx, qy, qz)?;
    }
    Ok(())
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let qa = a.quaternion().coords;
    let mut qb = b.quaternion().coords;
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    let blended = if dot > 1.0 - SLERP_PARALLEL_EPS {
        qa * (1.0 - s) + qb * s
    } else {
        let theta = dot.min(1.0).acos();
        let sin_theta = theta.sin();
        qa * (((1.0 - s) * theta).sin() / sin_theta) + qb * ((s * theta).sin() / sin_theta)
    };
    UnitQuaternion::new_normalize(Quaternion::from(blended))
}

/// Pose at time `t`: linear in translation, slerp in rotation.
pub fn interpolate_pose(traj: &Trajectory, t: f64) -> Result<Pose, IngestError> {
    let s = traj.samples();
    if !t.is_finite() || !traj.contains_time(t) {
        return Err(IngestError::OutOfRange(t));
    }
    // first sample with time >= t
    let hi = s.partition_point(|p| p.t < t);
    if s[hi].t == t {
        return Ok(s[hi]);
    }
    let (a, b) = (&s[hi - 1], &s[hi]);
    let u = (t - a.t) / (b.t - a.t);
    Ok(Pose {
        t,
        translation: a.translation + (b.translation - a.translation) * u,
        rotation: slerp(&a.rotation, &b.rotation, u),
    })
}
