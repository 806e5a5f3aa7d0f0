//! Minimal PLY support: ascii and binary little-endian, `vertex` and `face`
//! elements. Other elements are parsed and skipped.

use std::io::Write;

use thiserror::Error;

use crate::geom::Vec3;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PLY at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

fn malformed(line: usize, reason: impl Into<String>) -> PlyError {
    PlyError::Malformed {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Geometry extracted from a PLY file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    /// Present when every vertex carries `nx, ny, nz`.
    pub normals: Option<Vec<Vec3>>,
    /// Faces as triangles; polygons are fan-triangulated.
    pub faces: Vec<[u32; 3]>,
    pub comments: Vec<String>,
}

/// Parses a PLY document from memory.
pub fn parse(bytes: &[u8]) -> Result<PlyData, PlyError> {
    let (format, elements, comments, body_start) = parse_header(bytes)?;
    let mut out = PlyData {
        comments,
        ..PlyData::default()
    };
    let mut cursor = Cursor::new(format, &bytes[body_start..], header_lines(&bytes[..body_start]));
    for el in &elements {
        let wants_vertex = el.name == "vertex";
        let wants_face = el.name == "face";
        let xyz = if wants_vertex {
            let pos = |n: &str| el.props.iter().position(|p| p.name() == n);
            let (x, y, z) = match (pos("x"), pos("y"), pos("z")) {
                (Some(x), Some(y), Some(z)) => (x, y, z),
                _ => return Err(malformed(0, "vertex element lacks x, y, z")),
            };
            let normal = match (pos("nx"), pos("ny"), pos("nz")) {
                (Some(a), Some(b), Some(c)) => Some((a, b, c)),
                _ => None,
            };
            Some(((x, y, z), normal))
        } else {
            None
        };
        let face_prop = if wants_face {
            el.props
                .iter()
                .position(|p| matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index"))
        } else {
            None
        };
        if let Some((_, Some(_))) = xyz {
            out.normals = Some(Vec::with_capacity(el.count));
        }
        let mut scalars = vec![0.0; el.props.len()];
        let mut list: Vec<f64> = Vec::new();
        for _ in 0..el.count {
            for (pi, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => scalars[pi] = cursor.scalar(*ty)?,
                    Property::List { count, item, .. } => {
                        let n = cursor.scalar(*count)?;
                        if n < 0.0 {
                            return Err(malformed(cursor.line, "negative list length"));
                        }
                        let n = n as usize;
                        if Some(pi) == face_prop {
                            list.clear();
                            for _ in 0..n {
                                list.push(cursor.scalar(*item)?);
                            }
                        } else {
                            for _ in 0..n {
                                cursor.scalar(*item)?;
                            }
                        }
                    }
                }
            }
            cursor.end_record()?;
            if let Some(((x, y, z), normal)) = xyz {
                out.vertices
                    .push(Vec3::new(scalars[x], scalars[y], scalars[z]));
                if let (Some((a, b, c)), Some(ns)) = (normal, out.normals.as_mut()) {
                    ns.push(Vec3::new(scalars[a], scalars[b], scalars[c]));
                }
            }
            if face_prop.is_some() {
                if list.len() < 3 {
                    return Err(malformed(cursor.line, "face with fewer than 3 vertices"));
                }
                for w in 1..list.len() - 1 {
                    out.faces
                        .push([list[0] as u32, list[w] as u32, list[w + 1] as u32]);
                }
            }
        }
    }
    let nv = out.vertices.len();
    if out.faces.iter().flatten().any(|&i| i as usize >= nv) {
        return Err(malformed(0, "face index out of range"));
    }
    Ok(out)
}

fn header_lines(header: &[u8]) -> usize {
    header.iter().filter(|&&b| b == b'\n').count()
}

type Header = (Format, Vec<Element>, Vec<String>, usize);

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed(line_no + 1, "unterminated header"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| malformed(line_no + 1, "header is not utf-8"))?
            .trim_end_matches('\r');
        pos += nl + 1;
        line_no += 1;
        let mut words = line.split_whitespace();
        let Some(key) = words.next() else { continue };
        if line_no == 1 {
            if key != "ply" {
                return Err(malformed(1, "missing 'ply' magic"));
            }
            continue;
        }
        match key {
            "format" => {
                format = Some(match words.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLittleEndian,
                    Some(other) => {
                        return Err(malformed(line_no, format!("unsupported format '{other}'")))
                    }
                    None => return Err(malformed(line_no, "format without type")),
                });
            }
            "comment" | "obj_info" => {
                comments.push(line[key.len()..].trim().to_string());
            }
            "element" => {
                let name = words
                    .next()
                    .ok_or_else(|| malformed(line_no, "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| malformed(line_no, "element without count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed(line_no, "property before element"))?;
                let ty = words
                    .next()
                    .ok_or_else(|| malformed(line_no, "property without type"))?;
                let prop = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    let name = words.next();
                    match (count, item, name) {
                        (Some(count), Some(item), Some(name)) => Property::List {
                            name: name.to_string(),
                            count,
                            item,
                        },
                        _ => return Err(malformed(line_no, "bad list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty)
                        .ok_or_else(|| malformed(line_no, format!("unknown type '{ty}'")))?;
                    let name = words
                        .next()
                        .ok_or_else(|| malformed(line_no, "property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                el.props.push(prop);
            }
            "end_header" => break,
            other => return Err(malformed(line_no, format!("unknown header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| malformed(line_no, "missing format line"))?;
    Ok((format, elements, comments, pos))
}

struct Cursor<'a> {
    format: Format,
    body: &'a [u8],
    pos: usize,
    line: usize,
    tokens: std::vec::IntoIter<String>,
}

impl<'a> Cursor<'a> {
    fn new(format: Format, body: &'a [u8], header_lines: usize) -> Self {
        Self {
            format,
            body,
            pos: 0,
            line: header_lines,
            tokens: Vec::new().into_iter(),
        }
    }

    fn next_ascii_line(&mut self) -> Result<(), PlyError> {
        loop {
            if self.pos >= self.body.len() {
                return Err(malformed(self.line + 1, "unexpected end of data"));
            }
            let rest = &self.body[self.pos..];
            let nl = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| malformed(self.line + 1, "data is not utf-8"))?;
            self.pos += (nl + 1).min(rest.len());
            self.line += 1;
            let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if !toks.is_empty() {
                self.tokens = toks.into_iter();
                return Ok(());
            }
        }
    }

    fn scalar(&mut self, ty: Scalar) -> Result<f64, PlyError> {
        match self.format {
            Format::Ascii => {
                if self.tokens.len() == 0 {
                    self.next_ascii_line()?;
                }
                let tok = self.tokens.next().expect("non-empty line");
                tok.parse::<f64>()
                    .map_err(|_| malformed(self.line, format!("bad number '{tok}'")))
            }
            Format::BinaryLittleEndian => {
                let n = ty.size();
                if self.pos + n > self.body.len() {
                    return Err(malformed(0, "unexpected end of binary data"));
                }
                let v = ty.read_le(&self.body[self.pos..self.pos + n]);
                self.pos += n;
                Ok(v)
            }
        }
    }

    fn end_record(&mut self) -> Result<(), PlyError> {
        if self.format == Format::Ascii && self.tokens.len() != 0 {
            return Err(malformed(self.line, "extra values on line"));
        }
        Ok(())
    }
}

/// Optional per-vertex payloads for [`write_binary`].
#[derive(Debug, Clone, Copy, Default)]
pub struct VertexAttributes<'a> {
    pub normals: Option<&'a [Vec3]>,
    pub colors: Option<&'a [[u8; 3]]>,
}

/// Writes a binary little-endian PLY with double-precision coordinates.
pub fn write_binary<W: Write>(
    mut w: W,
    vertices: &[Vec3],
    attrs: VertexAttributes<'_>,
    faces: &[[u32; 3]],
    comments: &[String],
) -> std::io::Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        header.push_str(&format!("comment {c}\n"));
    }
    header.push_str(&format!("element vertex {}\n", vertices.len()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if attrs.normals.is_some() {
        header.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if attrs.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if !faces.is_empty() {
        header.push_str(&format!("element face {}\n", faces.len()));
        header.push_str("property list uchar int vertex_indices\n");
    }
    header.push_str("end_header\n");

    let mut buf = Vec::with_capacity(header.len() + vertices.len() * 51 + faces.len() * 13);
    buf.extend_from_slice(header.as_bytes());
    for (i, v) in vertices.iter().enumerate() {
        for c in v.iter() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(ns) = attrs.normals {
            for c in ns[i].iter() {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        if let Some(cs) = attrs.colors {
            buf.extend_from_slice(&cs[i]);
        }
    }
    for f in faces {
        buf.push(3);
        for &i in f {
            buf.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

/// Writes an ascii PLY (positions, optional normals, faces).
pub fn write_ascii<W: Write>(
    mut w: W,
    vertices: &[Vec3],
    normals: Option<&[Vec3]>,
    faces: &[[u32; 3]],
    comments: &[String],
) -> std::io::Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    for c in comments {
        writeln!(w, "comment {c}")?;
    }
    writeln!(w, "element vertex {}", vertices.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if normals.is_some() {
        writeln!(w, "property double nx\nproperty double ny\nproperty double nz")?;
    }
    if !faces.is_empty() {
        writeln!(w, "element face {}", faces.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
    }
    writeln!(w, "end_header")?;
    for (i, v) in vertices.iter().enumerate() {
        write!(w, "{} {} {}", v.x, v.y, v.z)?;
        if let Some(ns) = normals {
            write!(w, " {} {} {}", ns[i].x, ns[i].y, ns[i].z)?;
        }
        writeln!(w)?;
    }
    for f in faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}
