//! OBJ (`v`/`f` records) and PLY (ASCII and binary little-endian) readers and writers.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{Mesh, MeshError, Topology, Vec3};

fn io_err(path: &Path, source: std::io::Error) -> MeshError {
    MeshError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads an OBJ or PLY file (chosen by extension). When `expected` is given,
/// the file's connectivity must match it and the returned mesh shares it.
pub fn load_mesh(path: &Path, expected: Option<&Arc<Topology>>) -> Result<Mesh, MeshError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let (vertices, faces) = match ext.as_str() {
        "obj" => read_obj(&bytes[..])?,
        "ply" => read_ply(&bytes[..])?,
        other => return Err(MeshError::Unsupported(format!("extension '{other}'"))),
    };
    match expected {
        None => Mesh::new(vertices, faces),
        Some(topology) => {
            let found = Topology::new(vertices.len(), faces)?;
            if found.id() != topology.id() || found.faces() != topology.faces() {
                return Err(MeshError::TopologyMismatch {
                    expected: topology.id(),
                    found: found.id(),
                });
            }
            Ok(Mesh::with_topology(vertices, Arc::clone(topology)))
        }
    }
}

type RawMesh = (Vec<Vec3>, Vec<[usize; 3]>);

pub fn read_obj(reader: impl Read) -> Result<RawMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| MeshError::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let parse_err = |msg: String| MeshError::Parse { line: lineno + 1, msg };
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t}: {e}"))))
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(parse_err("vertex needs 3 coordinates".into()));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let raw: i64 = first.parse().map_err(|e| parse_err(format!("{first}: {e}")))?;
                        let resolved = if raw < 0 { vertices.len() as i64 + raw } else { raw - 1 };
                        if resolved < 0 {
                            return Err(parse_err(format!("invalid index {raw}")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(MeshError::NonTriangleFace(idx.len()));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

pub fn write_obj(mesh: &Mesh, mut w: impl Write) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn perr(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse { line, msg: msg.into() }
}

pub fn read_ply(bytes: &[u8]) -> Result<RawMesh, MeshError> {
    // header is ASCII, terminated by "end_header\n"
    let marker = b"end_header";
    let pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| perr(1, "missing end_header"))?;
    let mut body_start = pos + marker.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| perr(1, "non-ASCII header"))?;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in header.lines().enumerate() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["ply"] | [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, _] => return Err(MeshError::Unsupported(format!("PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| perr(i + 1, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(i + 1, "property before element"))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(c).ok_or_else(|| perr(i + 1, "bad list count type"))?,
                    item: Scalar::parse(item).ok_or_else(|| perr(i + 1, "bad list item type"))?,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(i + 1, "property before element"))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or_else(|| perr(i + 1, "bad property type"))?,
                });
            }
            _ => return Err(perr(i + 1, format!("unrecognised header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| perr(1, "missing format line"))?;
    let body = &bytes[body_start..];
    let mut reader: Box<dyn ValueReader> = match format {
        PlyFormat::Ascii => Box::new(AsciiReader::new(body)?),
        PlyFormat::BinaryLittleEndian => Box::new(BinaryReader { data: body, pos: 0 }),
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            reader.begin_record();
            let mut xyz = [0.0f64; 3];
            let mut face: Option<Vec<usize>> = None;
            for prop in &el.props {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = reader.read(*ty)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = reader.read(*count)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(reader.read(*item)?);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            face = Some(items.iter().map(|&x| x as usize).collect());
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2])),
                "face" => {
                    let f = face.ok_or_else(|| perr(0, "face without vertex_indices"))?;
                    if f.len() != 3 {
                        return Err(MeshError::NonTriangleFace(f.len()));
                    }
                    faces.push([f[0], f[1], f[2]]);
                }
                _ => {}
            }
        }
    }
    Ok((vertices, faces))
}

trait ValueReader {
    fn begin_record(&mut self) {}
    fn read(&mut self, ty: Scalar) -> Result<f64, MeshError>;
}

struct BinaryReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl ValueReader for BinaryReader<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64, MeshError> {
        let n = ty.size();
        let chunk = self
            .data
            .get(self.pos..self.pos + n)
            .ok_or_else(|| perr(0, "unexpected end of binary PLY body"))?;
        self.pos += n;
        Ok(ty.read_le(chunk))
    }
}

struct AsciiReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    tokens: Vec<&'a str>,
    next: usize,
    line: usize,
}

impl<'a> AsciiReader<'a> {
    fn new(body: &'a [u8]) -> Result<Self, MeshError> {
        let text = std::str::from_utf8(body).map_err(|_| perr(0, "non-UTF8 ASCII body"))?;
        Ok(Self {
            lines: text.lines().enumerate(),
            tokens: Vec::new(),
            next: 0,
            line: 0,
        })
    }
}

impl ValueReader for AsciiReader<'_> {
    fn begin_record(&mut self) {
        loop {
            match self.lines.next() {
                Some((i, l)) => {
                    self.tokens = l.split_whitespace().collect();
                    self.next = 0;
                    self.line = i + 1;
                    if !self.tokens.is_empty() {
                        return;
                    }
                }
                None => {
                    self.tokens.clear();
                    self.next = 0;
                    return;
                }
            }
        }
    }

    fn read(&mut self, _ty: Scalar) -> Result<f64, MeshError> {
        let tok = self
            .tokens
            .get(self.next)
            .ok_or_else(|| perr(self.line, "record too short"))?;
        self.next += 1;
        tok.parse::<f64>().map_err(|e| perr(self.line, format!("{tok}: {e}")))
    }
}

/// Writes PLY with double-precision coordinates, so binary output round-trips bit-exactly.
pub fn write_ply(mesh: &Mesh, format: PlyFormat, mut w: impl Write) -> std::io::Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.num_vertices(),
        mesh.num_faces()
    )?;
    match format {
        PlyFormat::Ascii => {
            for v in mesh.vertices() {
                writeln!(w, "{:?} {:?} {:?}", v.x, v.y, v.z)?;
            }
            for f in mesh.faces() {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut buf = Vec::with_capacity(mesh.num_vertices() * 24 + mesh.num_faces() * 13);
            for v in mesh.vertices() {
                for c in [v.x, v.y, v.z] {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
            }
            for f in mesh.faces() {
                buf.push(3u8);
                for &i in f {
                    buf.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Writes by extension: `.obj`, or `.ply` as binary little-endian.
pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<(), MeshError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    match ext.as_str() {
        "obj" => write_obj(mesh, &mut w),
        "ply" => write_ply(mesh, PlyFormat::BinaryLittleEndian, &mut w),
        other => return Err(MeshError::Unsupported(format!("extension '{other}'"))),
    }
    .and_then(|_| w.flush())
    .map_err(|e| io_err(path, e))
}
