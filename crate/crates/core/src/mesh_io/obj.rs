use std::fmt::Write;

use super::{Location, MeshError, Result, TriangleMesh};
use crate::geom::Vec3;

fn syntax(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Syntax {
        location: Location::Line(line),
        message: message.into(),
    }
}

/// Parses the vertex index out of an OBJ face token (`7`, `7/1`, `7//3`,
/// `-1`). Returns a 0-based index, which may still be out of range.
fn face_index(token: &str, vertex_count: usize, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let raw: i64 = head
        .parse()
        .map_err(|_| syntax(line, format!("bad face index `{token}`")))?;
    match raw {
        0 => Err(syntax(line, "face index 0 is not valid in OBJ")),
        r if r > 0 => Ok((r - 1) as usize),
        r => {
            let resolved = vertex_count as i64 + r;
            if resolved < 0 {
                Err(syntax(
                    line,
                    format!("relative index {r} precedes the first vertex"),
                ))
            } else {
                Ok(resolved as usize)
            }
        }
    }
}

pub(super) fn parse(bytes: &[u8]) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let text = std::str::from_utf8(bytes).map_err(|e| MeshError::Syntax {
        location: Location::Byte(e.valid_up_to()),
        message: "OBJ is not valid UTF-8".into(),
    })?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() < 3 || coords.len() > 4 {
                    return Err(syntax(line_no, "vertex needs 3 coordinates"));
                }
                let mut v = [0.0f64; 3];
                for k in 0..3 {
                    v[k] = coords[k]
                        .parse()
                        .map_err(|_| syntax(line_no, format!("bad coordinate `{}`", coords[k])))?;
                    if !v[k].is_finite() {
                        return Err(syntax(line_no, "non-finite coordinate"));
                    }
                }
                vertices.push(v);
            }
            Some("f") => {
                let toks: Vec<&str> = tokens.collect();
                if toks.len() != 3 {
                    return Err(syntax(
                        line_no,
                        format!(
                            "only triangular faces are supported, got {} vertices",
                            toks.len()
                        ),
                    ));
                }
                let mut f = [0usize; 3];
                for k in 0..3 {
                    f[k] = face_index(toks[k], vertices.len(), line_no)?;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

/// Writes the mesh as ASCII OBJ with 1-based indices. Coordinates use the
/// shortest representation that round-trips exactly.
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 40 + mesh.face_count() * 20);
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v[0], v[1], v[2]).unwrap();
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out
}
