//! Triangle mesh data model, validation, and file formats (OBJ, PLY, STL,
//! label sidecars).

mod labels;
mod obj;
mod ply;
mod stl;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::geom::{self, Vec3};

pub use labels::{read_labels, write_labels, FaceLabels, LabelError, DEFAULT_NUM_CLASSES};
pub use obj::write_obj;
pub use ply::export_colored_ply;
pub use stl::write_stl;

/// Faces whose squared area falls below this are rejected as degenerate.
pub const DEGENERATE_AREA_SQ: f64 = 1e-12;

/// Where a parse error happened: a 1-based text line or a byte offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Byte(b) => write!(f, "byte offset {b}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("syntax error at {location}: {message}")]
    Syntax { location: Location, message: String },
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} is degenerate (squared area {area_sq:e})")]
    DegenerateFace { face: usize, area_sq: f64 },
    #[error("non-manifold edge ({a}, {b}) shared by faces {faces:?}")]
    NonManifoldEdge {
        a: usize,
        b: usize,
        faces: Vec<usize>,
    },
    #[error("mesh is empty")]
    Empty,
    #[error("color count {colors} does not match face count {faces}")]
    ColorCountMismatch { colors: usize, faces: usize },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
}

pub type Result<T, E = MeshError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
    Stl,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            "stl" => Some(MeshFormat::Stl),
            _ => None,
        }
    }
}

/// Two faces meeting along a mesh edge `(a, b)`, with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharedEdge {
    pub faces: (usize, usize),
    pub verts: (usize, usize),
}

/// A validated, manifold triangle mesh.
///
/// Construction goes through [`TriangleMesh::new`], which rejects
/// out-of-range indices, degenerate faces, and edges with three or more
/// incident faces. Face normals and face adjacency are derived, never read
/// from files.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    adjacency: Vec<Vec<usize>>,
    shared_edges: Vec<SharedEdge>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() || vertices.is_empty() {
            return Err(MeshError::Empty);
        }
        let nv = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&v| v >= nv) {
                return Err(MeshError::IndexOutOfRange {
                    face: fi,
                    index,
                    vertex_count: nv,
                });
            }
        }

        let mut normals = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let av = geom::area_vector(vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            let area_sq = geom::dot(av, av) / 4.0;
            if !(area_sq >= DEGENERATE_AREA_SQ) || f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace { face: fi, area_sq });
            }
            normals.push(geom::normalize(av));
        }

        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }

        let mut adjacency = vec![Vec::new(); faces.len()];
        let mut shared_edges = Vec::new();
        let mut keys: Vec<_> = edge_faces.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let incident = &edge_faces[&key];
            match incident.len() {
                1 => {}
                2 => {
                    let (i, j) = (incident[0].min(incident[1]), incident[0].max(incident[1]));
                    if i == j {
                        // the same face lists this edge twice
                        return Err(MeshError::DegenerateFace {
                            face: i,
                            area_sq: 0.0,
                        });
                    }
                    adjacency[i].push(j);
                    adjacency[j].push(i);
                    shared_edges.push(SharedEdge {
                        faces: (i, j),
                        verts: key,
                    });
                }
                _ => {
                    return Err(MeshError::NonManifoldEdge {
                        a: key.0,
                        b: key.1,
                        faces: incident.clone(),
                    })
                }
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        shared_edges.sort_unstable_by_key(|e| (e.faces, e.verts));

        Ok(TriangleMesh {
            vertices,
            faces,
            normals,
            adjacency,
            shared_edges,
        })
    }

    /// Same topology with new vertex positions; normals are recomputed and
    /// the result is re-validated.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        assert_eq!(
            vertices.len(),
            self.vertices.len(),
            "vertex count must be preserved"
        );
        TriangleMesh::new(vertices, self.faces.clone())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Every interior edge with its two incident faces, sorted by face pair.
    pub fn shared_edges(&self) -> &[SharedEdge] {
        &self.shared_edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_vertices(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0]],
            self.vertices[f[1]],
            self.vertices[f[2]],
        ]
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(face);
        geom::centroid(a, b, c)
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_vertices(face);
        geom::norm(geom::area_vector(a, b, c)) / 2.0
    }

    /// Per-axis mean of all vertices.
    pub fn vertex_mean(&self) -> Vec3 {
        let n = self.vertices.len() as f64;
        let sum = self
            .vertices
            .iter()
            .fold([0.0; 3], |acc, &v| geom::add(acc, v));
        geom::scale(sum, 1.0 / n)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        geom::dist(lo, hi)
    }

    /// Sizes of the edge-connected face components, largest first.
    pub fn component_sizes(&self) -> Vec<usize> {
        let n = self.face_count();
        let mut seen = vec![false; n];
        let mut sizes = Vec::new();
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut size = 0;
            while let Some(f) = stack.pop() {
                size += 1;
                for &g in &self.adjacency[f] {
                    if !seen[g] {
                        seen[g] = true;
                        stack.push(g);
                    }
                }
            }
            sizes.push(size);
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }
}

/// Parses mesh bytes in the given format and validates the result.
pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriangleMesh> {
    let (vertices, faces) = match format {
        MeshFormat::Obj => obj::parse(bytes)?,
        MeshFormat::Ply => ply::parse(bytes)?,
        MeshFormat::Stl => stl::parse(bytes)?,
    };
    TriangleMesh::new(vertices, faces)
}

/// Reads and parses a mesh file, picking the format from its extension.
pub fn load_mesh(path: &Path) -> anyhow::Result<TriangleMesh> {
    use anyhow::Context;
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| MeshError::UnsupportedFormat(path.display().to_string()))?;
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_mesh(&bytes, format).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
pub(crate) mod fixtures {
    pub const TETRA_OBJ: &str = "v 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\n\
        f 1 2 3\nf 1 4 2\nf 1 3 4\nf 2 4 3\n";
}
