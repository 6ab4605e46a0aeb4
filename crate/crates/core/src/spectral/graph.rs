//! Face dual graph, per-edge geodesic and angular distances, and all-pairs
//! shortest paths over the combined edge weight.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use ndarray::Array2;
use rayon::prelude::*;

use super::{SpectralConfig, SpectralError};
use crate::geom;
use crate::mesh_io::TriangleMesh;

/// One dual edge: two faces sharing a mesh edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualEdge {
    pub a: usize,
    pub b: usize,
    /// Centroid to shared-edge midpoint to centroid.
    pub geo: f64,
    /// `w * (1 - cos(dihedral))`, `w = eta` on convex edges and 1 on concave.
    pub ang: f64,
}

#[derive(Debug, Clone)]
pub struct DualGraph {
    nodes: usize,
    edges: Vec<DualEdge>,
    /// Per node: `(neighbour, edge index)`.
    incident: Vec<Vec<(usize, usize)>>,
}

impl DualGraph {
    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[DualEdge] {
        &self.edges
    }

    pub fn incident(&self, node: usize) -> &[(usize, usize)] {
        &self.incident[node]
    }

    /// Combined per-edge weight
    /// `delta * geo / mean_geo + (1 - delta) * ang / mean_ang`, where the
    /// angular mean falls back to 1 when every angular term is 0.
    pub fn edge_weights(&self, delta: f64) -> Vec<f64> {
        let m = self.edges.len().max(1) as f64;
        let mean_geo = self.edges.iter().map(|e| e.geo).sum::<f64>() / m;
        let mean_ang = self.edges.iter().map(|e| e.ang).sum::<f64>() / m;
        let mean_geo = if mean_geo > 0.0 { mean_geo } else { 1.0 };
        let mean_ang = if mean_ang > 0.0 { mean_ang } else { 1.0 };
        self.edges
            .iter()
            .map(|e| delta * e.geo / mean_geo + (1.0 - delta) * e.ang / mean_ang)
            .collect()
    }
}

/// Angular distance between two faces that share an edge.
///
/// Returns `w * (1 - n_i . n_j)` with `w = eta` when the edge is convex and
/// `w = 1` when it is concave. The edge is concave when face `j`'s centroid
/// lies on the positive side of face `i`'s plane.
pub fn angle_distance(
    mesh: &TriangleMesh,
    i: usize,
    j: usize,
    eta: f64,
) -> Result<f64, SpectralError> {
    if !mesh.adjacency()[i].contains(&j) {
        return Err(SpectralError::NotAdjacent { i, j });
    }
    let (ni, nj) = (mesh.normals()[i], mesh.normals()[j]);
    let cos = geom::dot(ni, nj).clamp(-1.0, 1.0);
    let rise = geom::dot(geom::sub(mesh.face_centroid(j), mesh.face_centroid(i)), ni);
    let w = if rise > 0.0 { 1.0 } else { eta };
    Ok(w * (1.0 - cos))
}

/// Builds the dual graph; the mesh must have at least two faces and be a
/// single edge-connected component.
pub fn build_dual_graph(mesh: &TriangleMesh, eta: f64) -> Result<DualGraph, SpectralError> {
    let n = mesh.face_count();
    if n < 2 {
        return Err(SpectralError::TooFewFaces {
            faces: n,
            needed: 2,
        });
    }
    let sizes = mesh.component_sizes();
    if sizes.len() > 1 {
        return Err(SpectralError::Disconnected {
            component_sizes: sizes,
        });
    }
    let mut edges = Vec::with_capacity(mesh.shared_edges().len());
    let mut incident = vec![Vec::new(); n];
    for se in mesh.shared_edges() {
        let (a, b) = se.faces;
        let mid = geom::midpoint(mesh.vertices()[se.verts.0], mesh.vertices()[se.verts.1]);
        let geo = geom::dist(mesh.face_centroid(a), mid) + geom::dist(mid, mesh.face_centroid(b));
        let ang = angle_distance(mesh, a, b, eta)?;
        incident[a].push((b, edges.len()));
        incident[b].push((a, edges.len()));
        edges.push(DualEdge { a, b, geo, ang });
    }
    Ok(DualGraph {
        nodes: n,
        edges,
        incident,
    })
}

#[derive(Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn dijkstra(graph: &DualGraph, weights: &[f64], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.nodes];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Reverse((Dist(0.0), source)));
    while let Some(Reverse((Dist(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, e) in &graph.incident[u] {
            let nd = d + weights[e];
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((Dist(nd), v)));
            }
        }
    }
    dist
}

/// All-pairs shortest-path distances over the combined edge weights, one
/// Dijkstra run per source. The result is exactly symmetric: entry `(i, j)`
/// and `(j, i)` both come from the run rooted at `min(i, j)`.
pub fn pairwise_distance(
    graph: &DualGraph,
    cfg: &SpectralConfig,
) -> Result<Array2<f64>, SpectralError> {
    let n = graph.nodes;
    let weights = graph.edge_weights(cfg.delta);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| dijkstra(graph, &weights, s))
        .collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let d = rows[i][j];
            if !d.is_finite() {
                return Err(SpectralError::Disconnected {
                    component_sizes: vec![],
                });
            }
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_io::{parse_mesh, MeshFormat};

    const TETRA: &str =
        "v 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\nf 1 2 3\nf 1 4 2\nf 1 3 4\nf 2 4 3\n";

    fn strip() -> TriangleMesh {
        // three coplanar triangles in a row
        TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [1.0, 1.0, 0.0],
                [2.0, 0.0, 0.0],
            ],
            vec![[0, 1, 2], [1, 3, 2], [1, 4, 3]],
        )
        .unwrap()
    }

    /// A unit floor square in z=0 and a wall square hanging off its y=0
    /// edge, either above the floor (valley) or below it (ridge).
    fn hinge(fold_up: bool) -> TriangleMesh {
        let z = if fold_up { 1.0 } else { -1.0 };
        TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [1.0, 1.0, 0.0],
                [0.0, 0.0, z],
                [1.0, 0.0, z],
            ],
            vec![[0, 1, 2], [1, 3, 2], [0, 4, 1], [1, 4, 5]],
        )
        .unwrap()
    }

    #[test]
    fn tetra_dual_graph() {
        let m = parse_mesh(TETRA.as_bytes(), MeshFormat::Obj).unwrap();
        let g = build_dual_graph(&m, 0.15).unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edges().len(), 6);
    }

    #[test]
    fn strip_dual_graph() {
        let g = build_dual_graph(&strip(), 0.15).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges().len(), 2);
    }

    #[test]
    fn disjoint_triangles_are_disconnected() {
        let m = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [5.0, 0.0, 0.0],
                [6.0, 0.0, 0.0],
                [5.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        match build_dual_graph(&m, 0.15) {
            Err(SpectralError::Disconnected { component_sizes }) => {
                assert_eq!(component_sizes, vec![1, 1])
            }
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn coplanar_faces_have_zero_angle_distance() {
        let m = strip();
        assert_eq!(angle_distance(&m, 0, 1, 0.15).unwrap(), 0.0);
    }

    #[test]
    fn perpendicular_convex_and_concave() {
        // face 0 lies in z=0 with normal +z; face 2 is in the y=0 plane.
        // Folding the wall below the floor makes a convex (ridge) edge,
        // above it a concave (valley) edge.
        let down = hinge(false);
        let up = hinge(true);
        let n0 = down.normals()[0];
        assert!((n0[2] - 1.0).abs() < 1e-15);
        let convex = angle_distance(&down, 0, 2, 0.15).unwrap();
        let concave = angle_distance(&up, 0, 2, 0.15).unwrap();
        assert!((convex - 0.15).abs() < 1e-12, "{convex}");
        assert!((concave - 1.0).abs() < 1e-12, "{concave}");
    }

    #[test]
    fn non_adjacent_faces_rejected() {
        assert!(matches!(
            angle_distance(&strip(), 0, 2, 0.15),
            Err(SpectralError::NotAdjacent { i: 0, j: 2 })
        ));
    }

    #[test]
    fn coplanar_pair_distance_is_geodesic_share() {
        let m = strip();
        let g = build_dual_graph(&m, 0.15).unwrap();
        let cfg = SpectralConfig {
            k: 2,
            ..SpectralConfig::default()
        };
        let d = pairwise_distance(&g, &cfg).unwrap();
        let mean_geo = g.edges().iter().map(|e| e.geo).sum::<f64>() / 2.0;
        let e01 = g.edges().iter().find(|e| (e.a, e.b) == (0, 1)).unwrap();
        assert!((d[[0, 1]] - cfg.delta * e01.geo / mean_geo).abs() < 1e-15);
        // the only path from 0 to 2 runs through 1
        assert!((d[[0, 2]] - (d[[0, 1]] + d[[1, 2]])).abs() < 1e-15);
        assert_eq!(d[[0, 0]], 0.0);
        assert_eq!(d[[2, 0]], d[[0, 2]]);
    }
}
