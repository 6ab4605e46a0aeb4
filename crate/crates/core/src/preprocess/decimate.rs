//! Shortest-edge collapse decimation with manifold and normal-flip guards.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use super::PreprocessError;
use crate::geom::{self, Vec3};
use crate::mesh_io::{TriangleMesh, DEGENERATE_AREA_SQ};

/// Keeps the dense eigensolver in `spectral` within its size cap.
pub const DEFAULT_TARGET_FACES: usize = 3000;

/// Minimum cosine between a face normal before and after a collapse.
const MAX_NORMAL_TURN_COS: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct Decimated {
    pub mesh: TriangleMesh,
    /// `false` when every remaining collapse was rejected by a guard before
    /// the face target was reached.
    pub reached_target: bool,
}

#[derive(Clone, Copy, PartialEq)]
struct Len(f64);

impl Eq for Len {}

impl PartialOrd for Len {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Len {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Collapser {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_alive: Vec<bool>,
    vert_faces: Vec<Vec<usize>>,
    live_faces: usize,
}

impl Collapser {
    fn new(mesh: &TriangleMesh) -> Self {
        let mut vert_faces = vec![Vec::new(); mesh.vertex_count()];
        for (fi, f) in mesh.faces().iter().enumerate() {
            for &v in f {
                vert_faces[v].push(fi);
            }
        }
        Collapser {
            pos: mesh.vertices().to_vec(),
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; mesh.face_count()],
            vert_alive: vec![true; mesh.vertex_count()],
            vert_faces,
            live_faces: mesh.face_count(),
        }
    }

    fn live_faces_of(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.vert_faces[v]
            .iter()
            .copied()
            .filter(move |&f| self.face_alive[f])
    }

    fn neighbours(&self, v: usize) -> BTreeSet<usize> {
        self.live_faces_of(v)
            .flat_map(|f| self.faces[f])
            .filter(|&u| u != v)
            .collect()
    }

    fn edge_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.live_faces_of(a)
            .filter(|&f| self.faces[f].contains(&b))
            .collect()
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        let mut count: HashMap<usize, usize> = HashMap::new();
        for f in self.live_faces_of(v) {
            for u in self.faces[f] {
                if u != v {
                    *count.entry(u).or_default() += 1;
                }
            }
        }
        count.values().any(|&c| c == 1)
    }

    fn face_normal_with(&self, face: [usize; 3], moved: usize, p: Vec3) -> Vec3 {
        let at = |v: usize| if v == moved { p } else { self.pos[v] };
        geom::area_vector(at(face[0]), at(face[1]), at(face[2]))
    }

    /// Collapses `b` into `a` when every guard passes. Returns whether the
    /// mesh changed.
    fn try_collapse(&mut self, a: usize, b: usize) -> bool {
        let shared = self.edge_faces(a, b);
        if shared.is_empty() || shared.len() > 2 {
            return false;
        }
        let opposite: BTreeSet<usize> = shared
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&v| v != a && v != b)
            .collect();
        let common: BTreeSet<usize> = self
            .neighbours(a)
            .intersection(&self.neighbours(b))
            .copied()
            .collect();
        if common != opposite {
            return false;
        }

        let boundary_edge = shared.len() == 1;
        let (ba, bb) = (self.is_boundary_vertex(a), self.is_boundary_vertex(b));
        if !boundary_edge && ba && bb {
            return false;
        }
        let p = match (ba, bb) {
            (true, false) => self.pos[a],
            (false, true) => self.pos[b],
            _ => geom::midpoint(self.pos[a], self.pos[b]),
        };

        // faces that survive, with b renamed to a
        let mut touched = Vec::new();
        let mut keys = BTreeSet::new();
        let ring: BTreeSet<usize> = self.live_faces_of(a).chain(self.live_faces_of(b)).collect();
        for &f in &ring {
            if shared.contains(&f) {
                continue;
            }
            let old = self.faces[f];
            let new = old.map(|v| if v == b { a } else { v });
            let before = geom::area_vector(self.pos[old[0]], self.pos[old[1]], self.pos[old[2]]);
            let after = self.face_normal_with(new, a, p);
            let after_sq = geom::dot(after, after);
            if after_sq / 4.0 < DEGENERATE_AREA_SQ {
                return false;
            }
            let cos = geom::dot(before, after) / (geom::norm(before) * after_sq.sqrt());
            if cos < MAX_NORMAL_TURN_COS {
                return false;
            }
            let mut key = new;
            key.sort_unstable();
            if !keys.insert(key) {
                return false;
            }
            touched.push((f, new));
        }
        for &f in &shared {
            self.face_alive[f] = false;
            self.live_faces -= 1;
        }
        for (f, new) in touched {
            self.faces[f] = new;
        }
        let moved: Vec<usize> = self.vert_faces[b].drain(..).collect();
        self.vert_faces[a].extend(moved);
        self.vert_faces[a].retain(|&f| self.face_alive[f]);
        self.vert_faces[a].sort_unstable();
        self.vert_faces[a].dedup();
        self.vert_alive[b] = false;
        self.pos[a] = p;
        true
    }

    fn finish(self) -> Result<TriangleMesh, PreprocessError> {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut vertices = Vec::new();
        let mut faces = Vec::with_capacity(self.live_faces);
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            let mut out = [0; 3];
            for k in 0..3 {
                let v = f[k];
                if remap[v] == usize::MAX {
                    remap[v] = vertices.len();
                    vertices.push(self.pos[v]);
                }
                out[k] = remap[v];
            }
            faces.push(out);
        }
        Ok(TriangleMesh::new(vertices, faces)?)
    }
}

/// Reduces the face count to at most `target_faces` by collapsing the
/// shortest admissible edge first. Meshes already at or below the target
/// are returned unchanged.
pub fn decimate(mesh: &TriangleMesh, target_faces: usize) -> Result<Decimated, PreprocessError> {
    if target_faces < 4 {
        return Err(PreprocessError::TargetTooSmall(target_faces));
    }
    if mesh.face_count() <= target_faces {
        return Ok(Decimated {
            mesh: mesh.clone(),
            reached_target: true,
        });
    }

    let mut c = Collapser::new(mesh);
    let mut heap = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<_>, c: &Collapser, a: usize, b: usize| {
        let (a, b) = (a.min(b), a.max(b));
        heap.push(Reverse((Len(geom::dist(c.pos[a], c.pos[b])), a, b)));
    };
    let edges: BTreeSet<(usize, usize)> = mesh
        .faces()
        .iter()
        .flat_map(|f| (0..3).map(move |k| (f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3]))))
        .collect();
    for (a, b) in edges {
        push(&mut heap, &c, a, b);
    }

    // edges that failed a guard are retried once the heap drains, as long as
    // some collapse succeeded in between
    let mut rejected: Vec<(usize, usize)> = Vec::new();
    let mut progressed = false;
    while c.live_faces > target_faces {
        let Some(Reverse((Len(len), a, b))) = heap.pop() else {
            if !progressed || rejected.is_empty() {
                break;
            }
            progressed = false;
            for (x, y) in rejected.drain(..) {
                if c.vert_alive[x] && c.vert_alive[y] {
                    push(&mut heap, &c, x, y);
                }
            }
            continue;
        };
        if !c.vert_alive[a] || !c.vert_alive[b] || geom::dist(c.pos[a], c.pos[b]) != len {
            continue;
        }
        if c.try_collapse(a, b) {
            progressed = true;
            for u in c.neighbours(a) {
                push(&mut heap, &c, a, u);
            }
        } else {
            rejected.push((a, b));
        }
    }

    let reached_target = c.live_faces <= target_faces;
    if !reached_target {
        log::warn!(
            "decimation stopped at {} faces, target was {target_faces}",
            c.live_faces
        );
    }
    Ok(Decimated {
        mesh: c.finish()?,
        reached_target,
    })
}
