use std::collections::HashMap;

use super::{Location, MeshError, Result, TriangleMesh};
use crate::geom::Vec3;

const HEADER: usize = 80;
const RECORD: usize = 50;

fn key(v: Vec3) -> [u64; 3] {
    // +0.0 and -0.0 are the same coordinate
    v.map(|c| if c == 0.0 { 0u64 } else { c.to_bits() })
}

/// Binary STL. Vertices are merged on exact coordinate equality so that
/// the facet soup becomes an indexed mesh with adjacency.
pub(super) fn parse(bytes: &[u8]) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    if bytes.len() < HEADER + 4 {
        return Err(MeshError::Syntax {
            location: Location::Byte(bytes.len()),
            message: "binary STL shorter than its 84-byte preamble".into(),
        });
    }
    let count = u32::from_le_bytes(bytes[HEADER..HEADER + 4].try_into().unwrap()) as usize;
    let expected = HEADER + 4 + count * RECORD;
    if bytes.len() != expected {
        let ascii = bytes.starts_with(b"solid") && !bytes[..bytes.len().min(512)].contains(&0);
        return Err(MeshError::Syntax {
            location: Location::Byte(bytes.len().min(expected)),
            message: if ascii {
                "ASCII STL is not supported; convert to binary STL".into()
            } else {
                format!(
                    "binary STL declares {count} facets ({expected} bytes) but has {} bytes",
                    bytes.len()
                )
            },
        });
    }

    let mut index: HashMap<[u64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::with_capacity(count);
    for t in 0..count {
        let rec = HEADER + 4 + t * RECORD;
        let mut f = [0usize; 3];
        for (k, slot) in f.iter_mut().enumerate() {
            let off = rec + 12 + k * 12;
            let mut v = [0.0; 3];
            for (c, out) in v.iter_mut().enumerate() {
                let b = &bytes[off + 4 * c..off + 4 * c + 4];
                *out = f32::from_le_bytes(b.try_into().unwrap()) as f64;
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(MeshError::Syntax {
                    location: Location::Byte(off),
                    message: "non-finite vertex coordinate".into(),
                });
            }
            *slot = *index.entry(key(v)).or_insert_with(|| {
                vertices.push(v);
                vertices.len() - 1
            });
        }
        faces.push(f);
    }
    Ok((vertices, faces))
}

/// Binary STL with recomputed facet normals. Coordinates are narrowed to
/// `f32` as the format requires.
pub fn write_stl(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 + mesh.face_count() * RECORD);
    let mut header = [0u8; HEADER];
    let tag = b"archseg binary stl";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.face_count() as u32).to_le_bytes());
    for (fi, f) in mesh.faces().iter().enumerate() {
        for c in mesh.normals()[fi] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        for &vi in f {
            for c in mesh.vertices()[vi] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{fixtures::TETRA_OBJ, parse_mesh, MeshFormat};
    use super::*;

    #[test]
    fn stl_round_trip_deduplicates_vertices() {
        let m = parse_mesh(TETRA_OBJ.as_bytes(), MeshFormat::Obj).unwrap();
        let bytes = write_stl(&m);
        assert_eq!(bytes.len(), 84 + 4 * 50);
        let back = parse_mesh(&bytes, MeshFormat::Stl).unwrap();
        assert_eq!(back.vertex_count(), 4);
        assert_eq!(back.face_count(), 4);
        for adj in back.adjacency() {
            assert_eq!(adj.len(), 3);
        }
    }

    #[test]
    fn truncated_stl_is_an_error() {
        let m = parse_mesh(TETRA_OBJ.as_bytes(), MeshFormat::Obj).unwrap();
        let mut bytes = write_stl(&m);
        bytes.pop();
        assert!(matches!(
            parse_mesh(&bytes, MeshFormat::Stl),
            Err(MeshError::Syntax { .. })
        ));
    }

    #[test]
    fn ascii_stl_is_rejected_with_hint() {
        let text = b"solid x\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nvertex 1 0 0\nvertex 0 1 0\nendloop\nendfacet\nendsolid x\n";
        let err = parse_mesh(text, MeshFormat::Stl).unwrap_err();
        assert!(err.to_string().contains("ASCII STL"));
    }
}
