//! OBJ, PLY and STL mesh input; OBJ output.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::mesh::{TriangleMesh, Vec3};
use crate::error::{Error, Result};

/// A parsed mesh together with non-fatal findings.
#[derive(Clone, Debug)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    pub warnings: Vec<String>,
}

/// Loads a mesh, logging non-fatal warnings.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let loaded = load_mesh_report(path.as_ref())?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.as_ref().display());
    }
    Ok(loaded.mesh)
}

pub fn load_mesh_report(path: impl AsRef<Path>) -> Result<LoadedMesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = fs::read(path)?;
    let (vertices, triangles) = match ext.as_str() {
        "obj" => parse_obj(path, &bytes)?,
        "ply" => parse_ply(path, &bytes)?,
        "stl" => parse_stl(path, &bytes)?,
        _ => return Err(Error::UnsupportedFormat { path: path.into() }),
    };
    if triangles.is_empty() || vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mesh = TriangleMesh::new(vertices, triangles)?;
    let report = mesh.edge_report();
    let mut warnings = Vec::new();
    if report.non_manifold > 0 {
        warnings.push(format!("{} non-manifold edges", report.non_manifold));
    }
    if report.boundary > 0 {
        warnings.push(format!("{} boundary edges (mesh is not watertight)", report.boundary));
    }
    Ok(LoadedMesh { mesh, warnings })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        msg: msg.into(),
    }
}

type Parsed = (Vec<Vec3>, Vec<[u32; 3]>);

fn fan(poly: &[u32], out: &mut Vec<[u32; 3]>) {
    for i in 1..poly.len().saturating_sub(1) {
        out.push([poly[0], poly[i], poly[i + 1]]);
    }
}

fn parse_obj(path: &Path, bytes: &[u8]) -> Result<Parsed> {
    let text = std::str::from_utf8(bytes).map_err(|_| parse_err(path, 0, "not UTF-8"))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|_| parse_err(path, ln, format!("bad coordinate `{s}`"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(parse_err(path, ln, "vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in it {
                    let idx = tok.split('/').next().unwrap_or("");
                    let i: i64 = idx
                        .parse()
                        .map_err(|_| parse_err(path, ln, format!("bad face index `{tok}`")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(parse_err(path, ln, "face index 0"));
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(parse_err(path, ln, format!("face index {i} out of range")));
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(parse_err(path, ln, "face with fewer than 3 vertices"));
                }
                fan(&poly, &mut triangles);
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

#[derive(Clone, Copy, Debug)]
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
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<Parsed> {
    let header_end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| parse_err(path, 0, "missing end_header"))?;
    let mut body = header_end + 10;
    while body < bytes.len() && bytes[body] != b'\n' {
        body += 1;
    }
    body += 1;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| parse_err(path, 0, "header not UTF-8"))?;

    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for (ln, line) in header.lines().enumerate() {
        let ln = ln + 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["ply"] | [] => {}
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", f, _] => return Err(parse_err(path, ln, format!("unsupported format {f}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| parse_err(path, ln, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let (c, i) = Scalar::parse(c)
                    .zip(Scalar::parse(i))
                    .ok_or_else(|| parse_err(path, ln, "bad list types"))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, ln, "property before element"))?
                    .props
                    .push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(path, ln, format!("bad type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, ln, "property before element"))?
                    .props
                    .push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(parse_err(path, ln, format!("unexpected header line `{line}`"))),
        }
    }
    let binary = binary.ok_or_else(|| parse_err(path, 0, "missing format line"))?;

    // Each row becomes a list of (property name, values).
    let rows_of = |el: &Element, reader: &mut dyn FnMut(Scalar) -> Result<f64>| -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(el.count);
        for _ in 0..el.count {
            let mut row = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar(_, t) => row.push(reader(*t)?),
                    Property::List(_, c, t) => {
                        let n = reader(*c)? as usize;
                        row.push(n as f64);
                        for _ in 0..n {
                            row.push(reader(*t)?);
                        }
                    }
                }
            }
            out.push(row);
        }
        Ok(out)
    };

    let mut all_rows = Vec::new();
    if binary {
        let mut pos = body;
        let mut reader = |t: Scalar| -> Result<f64> {
            let n = t.size();
            let b = bytes
                .get(pos..pos + n)
                .ok_or_else(|| parse_err(path, 0, "truncated binary body"))?;
            pos += n;
            Ok(t.read_le(b))
        };
        for el in &elements {
            all_rows.push(rows_of(el, &mut reader)?);
        }
    } else {
        let text = std::str::from_utf8(&bytes[body.min(bytes.len())..]).map_err(|_| parse_err(path, 0, "body not UTF-8"))?;
        let mut tokens = text.split_whitespace();
        let mut reader = |_: Scalar| -> Result<f64> {
            let t = tokens.next().ok_or_else(|| parse_err(path, 0, "truncated ascii body"))?;
            t.parse::<f64>().map_err(|_| parse_err(path, 0, format!("bad number `{t}`")))
        };
        for el in &elements {
            all_rows.push(rows_of(el, &mut reader)?);
        }
    }

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (el, rows) in elements.iter().zip(all_rows) {
        match el.name.as_str() {
            "vertex" => {
                let col = |name: &str| {
                    el.props
                        .iter()
                        .position(|p| matches!(p, Property::Scalar(n, _) if n == name))
                        .ok_or_else(|| parse_err(path, 0, format!("vertex has no `{name}`")))
                };
                if el.props.iter().any(|p| matches!(p, Property::List(..))) {
                    return Err(parse_err(path, 0, "list property on vertices"));
                }
                let (x, y, z) = (col("x")?, col("y")?, col("z")?);
                vertices.extend(rows.iter().map(|r| Vec3::new(r[x], r[y], r[z])));
            }
            "face" => {
                let li = el
                    .props
                    .iter()
                    .position(|p| matches!(p, Property::List(n, ..) if n == "vertex_indices" || n == "vertex_index"))
                    .ok_or_else(|| parse_err(path, 0, "face has no vertex_indices"))?;
                for r in rows {
                    // Walk to the list column, skipping earlier properties.
                    let mut off = 0;
                    for p in &el.props[..li] {
                        off += match p {
                            Property::Scalar(..) => 1,
                            Property::List(..) => 1 + r[off] as usize,
                        };
                    }
                    let n = r[off] as usize;
                    let poly: Vec<u32> = r[off + 1..off + 1 + n].iter().map(|&v| v as u32).collect();
                    if poly.len() < 3 {
                        return Err(parse_err(path, 0, "face with fewer than 3 vertices"));
                    }
                    fan(&poly, &mut triangles);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

/// Welds STL corners that are bit-identical.
struct Welder {
    map: HashMap<[u64; 3], u32>,
    vertices: Vec<Vec3>,
}

impl Welder {
    fn id(&mut self, v: Vec3) -> u32 {
        let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
        let next = self.vertices.len() as u32;
        *self.map.entry(key).or_insert_with(|| {
            self.vertices.push(v);
            next
        })
    }
}

fn parse_stl(path: &Path, bytes: &[u8]) -> Result<Parsed> {
    let mut w = Welder {
        map: HashMap::new(),
        vertices: Vec::new(),
    };
    let mut triangles = Vec::new();
    let binary_len = bytes
        .get(80..84)
        .map(|b| 84 + 50 * u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize);
    if binary_len == Some(bytes.len()) {
        let count = (bytes.len() - 84) / 50;
        for t in 0..count {
            let rec = &bytes[84 + 50 * t..84 + 50 * (t + 1)];
            let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes")) as f64;
            let tri = [0, 1, 2].map(|c| w.id(Vec3::new(f(3 + 3 * c), f(4 + 3 * c), f(5 + 3 * c))));
            triangles.push(tri);
        }
    } else {
        let text = std::str::from_utf8(bytes).map_err(|_| parse_err(path, 0, "neither binary nor ascii STL"))?;
        let mut corners = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            if it.next() == Some("vertex") {
                let c: Vec<f64> = it
                    .map(|s| s.parse().map_err(|_| parse_err(path, ln + 1, format!("bad coordinate `{s}`"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(parse_err(path, ln + 1, "vertex needs 3 coordinates"));
                }
                corners.push(w.id(Vec3::new(c[0], c[1], c[2])));
                if corners.len() == 3 {
                    triangles.push([corners[0], corners[1], corners[2]]);
                    corners.clear();
                }
            }
        }
    }
    Ok((w.vertices, triangles))
}

pub fn write_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in mesh.triangles() {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}
