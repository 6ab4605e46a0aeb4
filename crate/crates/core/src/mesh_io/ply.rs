use std::fmt::Write;

use super::{Location, MeshError, Result, TriangleMesh};
use crate::geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
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
    fn from_name(name: &str) -> Option<Self> {
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
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar {
        name: String,
        ty: Scalar,
    },
    List {
        name: String,
        count: Scalar,
        item: Scalar,
    },
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
    properties: Vec<Property>,
}

/// One decoded element instance: scalar values and list values in
/// property order.
enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

fn header_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Syntax {
        location: Location::Line(line),
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Encoding, Vec<Element>, usize, usize)> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| pos + p)
            .ok_or_else(|| header_err(line_no + 1, "PLY header is not terminated by end_header"))?;
        line_no += 1;
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| header_err(line_no, "PLY header is not valid text"))?
            .trim();
        pos = end + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(header_err(1, "missing `ply` magic"));
            }
            continue;
        }
        match toks.first().copied() {
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some(other) => {
                        return Err(header_err(
                            line_no,
                            format!("unsupported PLY format `{other}`"),
                        ))
                    }
                    None => return Err(header_err(line_no, "format line without encoding")),
                });
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(header_err(line_no, "element line needs a name and a count"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| header_err(line_no, format!("bad element count `{}`", toks[2])))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let ty = |name: &str| {
                    Scalar::from_name(name).ok_or_else(|| {
                        header_err(line_no, format!("unknown property type `{name}`"))
                    })
                };
                let prop = match toks.as_slice() {
                    ["property", "list", count, item, name] => Property::List {
                        name: name.to_string(),
                        count: ty(count)?,
                        item: ty(item)?,
                    },
                    ["property", t, name] => Property::Scalar {
                        name: name.to_string(),
                        ty: ty(t)?,
                    },
                    _ => return Err(header_err(line_no, "malformed property line")),
                };
                element.properties.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => {
                return Err(header_err(
                    line_no,
                    format!("unexpected header keyword `{other}`"),
                ))
            }
        }
    }
    let encoding = encoding.ok_or_else(|| header_err(line_no, "PLY header has no format line"))?;
    Ok((encoding, elements, pos, line_no))
}

struct AsciiBody<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    first_line: usize,
}

impl AsciiBody<'_> {
    fn read(&mut self, element: &Element) -> Result<(Vec<Value>, usize)> {
        let (idx, line) = loop {
            match self.lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some(pair) => break pair,
                None => {
                    return Err(MeshError::Syntax {
                        location: Location::Line(self.first_line),
                        message: format!("unexpected end of data in element `{}`", element.name),
                    })
                }
            }
        };
        let line_no = self.first_line + idx;
        let mut toks = line.split_whitespace();
        let mut next = |what: &str| -> Result<f64> {
            let t = toks
                .next()
                .ok_or_else(|| header_err(line_no, format!("missing value for `{what}`")))?;
            t.parse::<f64>()
                .map_err(|_| header_err(line_no, format!("bad number `{t}` for `{what}`")))
        };
        let mut values = Vec::with_capacity(element.properties.len());
        for prop in &element.properties {
            match prop {
                Property::Scalar { name, .. } => values.push(Value::Scalar(next(name)?)),
                Property::List { name, .. } => {
                    let n = next(name)?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(header_err(line_no, format!("bad list length {n}")));
                    }
                    let items = (0..n as usize)
                        .map(|_| next(name))
                        .collect::<Result<Vec<_>>>()?;
                    values.push(Value::List(items));
                }
            }
        }
        Ok((values, line_no))
    }
}

struct BinaryBody<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl BinaryBody<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(MeshError::Syntax {
                location: Location::Byte(self.base + self.pos),
                message: "unexpected end of binary PLY data".into(),
            });
        }
        let v = ty.read_le(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }

    fn read(&mut self, element: &Element) -> Result<(Vec<Value>, usize)> {
        let offset = self.base + self.pos;
        let mut values = Vec::with_capacity(element.properties.len());
        for prop in &element.properties {
            match *prop {
                Property::Scalar { ty, .. } => values.push(Value::Scalar(self.scalar(ty)?)),
                Property::List { count, item, .. } => {
                    let n = self.scalar(count)?;
                    if n < 0.0 {
                        return Err(MeshError::Syntax {
                            location: Location::Byte(offset),
                            message: format!("negative list length {n}"),
                        });
                    }
                    let items = (0..n as usize)
                        .map(|_| self.scalar(item))
                        .collect::<Result<Vec<_>>>()?;
                    values.push(Value::List(items));
                }
            }
        }
        Ok((values, offset))
    }
}

fn location(encoding: Encoding, at: usize) -> Location {
    match encoding {
        Encoding::Ascii => Location::Line(at),
        Encoding::BinaryLe => Location::Byte(at),
    }
}

pub(super) fn parse(bytes: &[u8]) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let (encoding, elements, body_start, header_lines) = parse_header(bytes)?;
    let body = &bytes[body_start..];

    let mut ascii = match encoding {
        Encoding::Ascii => Some(AsciiBody {
            lines: std::str::from_utf8(body)
                .map_err(|e| MeshError::Syntax {
                    location: Location::Byte(body_start + e.valid_up_to()),
                    message: "ASCII PLY body is not valid UTF-8".into(),
                })?
                .lines()
                .enumerate(),
            first_line: header_lines + 1,
        }),
        Encoding::BinaryLe => None,
    };
    let mut binary = BinaryBody {
        bytes: body,
        pos: 0,
        base: body_start,
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for element in &elements {
        let find = |name: &str| element.properties.iter().position(|p| p.name() == name);
        let (xyz, face_list) = match element.name.as_str() {
            "vertex" => {
                let ids = [find("x"), find("y"), find("z")];
                if ids.iter().any(Option::is_none) {
                    return Err(header_err(1, "vertex element lacks x/y/z properties"));
                }
                (Some(ids.map(Option::unwrap)), None)
            }
            "face" => {
                let id = find("vertex_indices")
                    .or_else(|| find("vertex_index"))
                    .ok_or_else(|| header_err(1, "face element lacks a vertex_indices list"))?;
                (None, Some(id))
            }
            _ => (None, None),
        };
        for _ in 0..element.count {
            let (values, at) = match ascii.as_mut() {
                Some(a) => a.read(element)?,
                None => binary.read(element)?,
            };
            if let Some(ids) = xyz {
                let mut v = [0.0; 3];
                for k in 0..3 {
                    v[k] = match values[ids[k]] {
                        Value::Scalar(s) => s,
                        Value::List(_) => {
                            return Err(MeshError::Syntax {
                                location: location(encoding, at),
                                message: "vertex coordinate declared as a list".into(),
                            })
                        }
                    };
                    if !v[k].is_finite() {
                        return Err(MeshError::Syntax {
                            location: location(encoding, at),
                            message: "non-finite vertex coordinate".into(),
                        });
                    }
                }
                vertices.push(v);
            }
            if let Some(id) = face_list {
                let Value::List(items) = &values[id] else {
                    return Err(MeshError::Syntax {
                        location: location(encoding, at),
                        message: "vertex_indices is not a list".into(),
                    });
                };
                if items.len() != 3 {
                    return Err(MeshError::Syntax {
                        location: location(encoding, at),
                        message: format!(
                            "only triangular faces are supported, got {} indices",
                            items.len()
                        ),
                    });
                }
                let mut f = [0usize; 3];
                for k in 0..3 {
                    if items[k] < 0.0 || items[k].fract() != 0.0 {
                        return Err(MeshError::Syntax {
                            location: location(encoding, at),
                            message: format!("bad vertex index {}", items[k]),
                        });
                    }
                    f[k] = items[k] as usize;
                }
                faces.push(f);
            }
        }
    }
    Ok((vertices, faces))
}

/// ASCII PLY with per-face `red green blue` (uchar) properties.
///
/// Vertex coordinates are written as doubles in shortest round-trip form, so
/// re-parsing reproduces them exactly.
pub fn export_colored_ply(mesh: &TriangleMesh, face_colors: &[[u8; 3]]) -> Result<String> {
    if face_colors.len() != mesh.face_count() {
        return Err(MeshError::ColorCountMismatch {
            colors: face_colors.len(),
            faces: mesh.face_count(),
        });
    }
    let mut out = String::with_capacity(256 + mesh.vertex_count() * 48 + mesh.face_count() * 28);
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", mesh.vertex_count()).unwrap();
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    writeln!(out, "element face {}", mesh.face_count()).unwrap();
    out.push_str(
        "property list uchar int vertex_indices\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for v in mesh.vertices() {
        writeln!(out, "{} {} {}", v[0], v[1], v[2]).unwrap();
    }
    for (f, c) in mesh.faces().iter().zip(face_colors) {
        writeln!(
            out,
            "3 {} {} {} {} {} {}",
            f[0], f[1], f[2], c[0], c[1], c[2]
        )
        .unwrap();
    }
    Ok(out)
}
