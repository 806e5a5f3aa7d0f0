//! Grid file formats.
//!
//! STNF holds a feature grid in little-endian binary:
//! magic `STNF`, u32 version, 3×f64 min, 3×f64 max, 3×f64 voxel, 3×u32 dims,
//! then one record per occupied voxel (u32 linear index, u32 count,
//! 3×f64 features) in ascending index order.
//!
//! STNL holds a label grid as text:
//!
//! ```text
//! STNL v1
//! grid min -25.6 -25.6 -2 max 25.6 25.6 4.4 voxel 0.2 0.2 0.2 dims 256 256 32
//! 127 128 9 T
//! ```
//!
//! Unlisted voxels are unoccupied.

use std::io::{self, Write};

use thiserror::Error;

use crate::features::{FeatureGrid, VertexFeatures, VoxelFeature};
use crate::geom::{TravLabel, Vec3, VoxelGridSpec};
use crate::label::LabelGrid;

pub const STNF_MAGIC: &[u8; 4] = b"STNF";
pub const STNF_VERSION: u32 = 1;
pub const STNL_HEADER: &str = "STNL v1";
const STNF_HEADER_LEN: usize = 4 + 4 + 9 * 8 + 3 * 4;
const STNF_RECORD_LEN: usize = 4 + 4 + 3 * 8;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
}

fn malformed(line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Malformed { line, reason: reason.into() }
}

pub fn write_feature_grid<W: Write>(mut w: W, grid: &FeatureGrid) -> io::Result<()> {
    let spec = grid.spec();
    let mut buf = Vec::with_capacity(STNF_HEADER_LEN + grid.occupied_count() * STNF_RECORD_LEN);
    buf.extend_from_slice(STNF_MAGIC);
    buf.extend_from_slice(&STNF_VERSION.to_le_bytes());
    for v in [spec.min_corner(), spec.max_corner(), spec.voxel_size()] {
        for c in v.iter() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    for d in spec.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for (idx, cell) in grid.iter() {
        buf.extend_from_slice(&(idx as u32).to_le_bytes());
        buf.extend_from_slice(&cell.count.to_le_bytes());
        for f in cell.mean.to_array() {
            buf.extend_from_slice(&f.to_le_bytes());
        }
    }
    w.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        let end = self.pos + N;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| FormatError::Invalid(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s.try_into().expect("slice length"))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    fn vec3(&mut self) -> Result<Vec3, FormatError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

pub fn read_feature_grid(bytes: &[u8]) -> Result<FeatureGrid, FormatError> {
    let mut c = Cursor { bytes, pos: 0 };
    if &c.take::<4>()? != STNF_MAGIC {
        return Err(FormatError::Invalid("not an STNF file".into()));
    }
    let version = c.u32()?;
    if version != STNF_VERSION {
        return Err(FormatError::Invalid(format!("unsupported STNF version {version}")));
    }
    let (min, max, voxel) = (c.vec3()?, c.vec3()?, c.vec3()?);
    let dims = [c.u32()?, c.u32()?, c.u32()?];
    let spec = checked_spec(min, max, voxel, dims.map(|d| d as usize))?;
    if !(bytes.len() - c.pos).is_multiple_of(STNF_RECORD_LEN) {
        return Err(FormatError::Invalid("trailing partial record".into()));
    }
    let mut cells = Vec::with_capacity((bytes.len() - c.pos) / STNF_RECORD_LEN);
    let mut last = None;
    while c.pos < bytes.len() {
        let idx = c.u32()? as usize;
        let count = c.u32()?;
        let mean = VertexFeatures::from_array([c.f64()?, c.f64()?, c.f64()?]);
        if last.is_some_and(|l| idx <= l) {
            return Err(FormatError::Invalid(format!("record {idx} out of order")));
        }
        if count == 0 || mean.to_array().iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Invalid(format!("invalid record for voxel {idx}")));
        }
        last = Some(idx);
        cells.push((idx, VoxelFeature { count, mean }));
    }
    FeatureGrid::from_cells(spec, cells).map_err(FormatError::Invalid)
}

fn checked_spec(min: Vec3, max: Vec3, voxel: Vec3, dims: [usize; 3]) -> Result<VoxelGridSpec, FormatError> {
    let spec = VoxelGridSpec::new(min, max, voxel).map_err(|e| FormatError::Invalid(e.to_string()))?;
    if spec.dims() != dims {
        return Err(FormatError::Invalid(format!(
            "dims {:?} disagree with extent (expected {:?})",
            dims,
            spec.dims()
        )));
    }
    Ok(spec)
}

pub fn write_label_grid<W: Write>(mut w: W, grid: &LabelGrid) -> io::Result<()> {
    let s = grid.spec();
    let (lo, hi, v, d) = (s.min_corner(), s.max_corner(), s.voxel_size(), s.dims());
    let mut out = String::new();
    out.push_str(STNL_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "grid min {} {} {} max {} {} {} voxel {} {} {} dims {} {} {}\n",
        lo.x, lo.y, lo.z, hi.x, hi.y, hi.z, v.x, v.y, v.z, d[0], d[1], d[2]
    ));
    for (lin, l) in grid.labels().iter().enumerate() {
        if let Some(code) = l.code() {
            let [i, j, k] = s.unravel(lin);
            out.push_str(&format!("{i} {j} {k} {code}\n"));
        }
    }
    w.write_all(out.as_bytes())
}

pub fn parse_label_grid(text: &str) -> Result<LabelGrid, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, STNL_HEADER)) => {}
        _ => return Err(malformed(1, format!("expected `{STNL_HEADER}`"))),
    }
    let (n, grid_line) = lines.next().ok_or_else(|| malformed(2, "missing grid line"))?;
    let tok: Vec<&str> = grid_line.split_whitespace().collect();
    let layout = ["grid", "min", "", "", "", "max", "", "", "", "voxel", "", "", "", "dims", "", "", ""];
    if tok.len() != layout.len() || layout.iter().zip(&tok).any(|(k, t)| !k.is_empty() && k != t) {
        return Err(malformed(n, "expected `grid min x y z max x y z voxel x y z dims nx ny nz`"));
    }
    let num = |i: usize| tok[i].parse::<f64>().map_err(|_| malformed(n, format!("bad number `{}`", tok[i])));
    let int = |i: usize| tok[i].parse::<usize>().map_err(|_| malformed(n, format!("bad integer `{}`", tok[i])));
    let min = Vec3::new(num(2)?, num(3)?, num(4)?);
    let max = Vec3::new(num(6)?, num(7)?, num(8)?);
    let voxel = Vec3::new(num(10)?, num(11)?, num(12)?);
    let dims = [int(14)?, int(15)?, int(16)?];
    let spec = checked_spec(min, max, voxel, dims).map_err(|e| malformed(n, e.to_string()))?;

    let mut grid = LabelGrid::unoccupied(spec);
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(malformed(n, "expected `ix iy iz label`"));
        }
        let mut idx = [0usize; 3];
        for (a, t) in idx.iter_mut().zip(&tok[..3]) {
            *a = t.parse().map_err(|_| malformed(n, format!("bad index `{t}`")))?;
        }
        if (0..3).any(|a| idx[a] >= dims[a]) {
            return Err(malformed(n, format!("voxel {idx:?} outside grid")));
        }
        let label = TravLabel::from_code(tok[3]).ok_or_else(|| malformed(n, format!("unknown label `{}`", tok[3])))?;
        let lin = spec.linear_index(idx);
        if grid.get(lin).is_occupied() {
            return Err(malformed(n, format!("voxel {idx:?} listed twice")));
        }
        grid.set(lin, label);
    }
    Ok(grid)
}
