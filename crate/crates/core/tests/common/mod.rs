//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};

use archseg::geom;
use archseg::mesh_io::TriangleMesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `max |a - n| / max(max |a|, max |n|)`, the worst error relative to the
/// gradient scale.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let worst = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Combined edge weight between adjacent faces computed from first
/// principles: centroid to shared-edge midpoint to centroid, and the convex
/// or concave angle term.
fn raw_terms(mesh: &TriangleMesh, i: usize, j: usize, eta: f64) -> (f64, f64) {
    let fi = mesh.faces()[i];
    let fj = mesh.faces()[j];
    let shared: Vec<usize> = fi.iter().copied().filter(|v| fj.contains(v)).collect();
    assert_eq!(shared.len(), 2);
    let v = mesh.vertices();
    let mid = geom::midpoint(v[shared[0]], v[shared[1]]);
    let ci = mesh.face_centroid(i);
    let cj = mesh.face_centroid(j);
    let geo = geom::dist(ci, mid) + geom::dist(mid, cj);
    let ni = mesh.normals()[i];
    let nj = mesh.normals()[j];
    let cos = geom::dot(ni, nj).clamp(-1.0, 1.0);
    let concave = geom::dot(geom::sub(cj, ci), ni) > 0.0;
    let w = if concave { 1.0 } else { eta };
    (geo, w * (1.0 - cos))
}

/// All-pairs shortest paths by Floyd–Warshall over the dual graph.
pub fn floyd_warshall(mesh: &TriangleMesh, delta: f64, eta: f64) -> Vec<Vec<f64>> {
    let n = mesh.face_count();
    let mut edges = Vec::new();
    for i in 0..n {
        for &j in &mesh.adjacency()[i] {
            if i < j {
                let (g, a) = raw_terms(mesh, i, j, eta);
                edges.push((i, j, g, a));
            }
        }
    }
    let m = edges.len() as f64;
    let mean_g = edges.iter().map(|e| e.2).sum::<f64>() / m;
    let mean_a = edges.iter().map(|e| e.3).sum::<f64>() / m;
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(i, j, g, a) in &edges {
        let mut w = 0.0;
        if mean_g > 0.0 {
            w += delta * g / mean_g;
        }
        if mean_a > 0.0 {
            w += (1.0 - delta) * a / mean_a;
        }
        d[i][j] = d[i][j].min(w);
        d[j][i] = d[j][i].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// A random connected mesh of 2 to `max_faces` faces: a jittered grid with
/// random heights and diagonals, cut to a patch grown by BFS from a random
/// face.
pub fn random_patch(rng: &mut ChaCha8Rng, max_faces: usize) -> TriangleMesh {
    let cols = 4usize;
    let rows = 4usize;
    let mut verts = Vec::new();
    for r in 0..=rows {
        for c in 0..=cols {
            let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.2..0.2);
            verts.push([
                c as f64 + jitter(rng),
                r as f64 + jitter(rng),
                rng.random_range(-0.6..0.6),
            ]);
        }
    }
    let id = |r: usize, c: usize| r * (cols + 1) + c;
    let mut all = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let (a, b, cc, d) = (id(r, c), id(r, c + 1), id(r + 1, c + 1), id(r + 1, c));
            if rng.random_bool(0.5) {
                all.push([a, b, cc]);
                all.push([a, cc, d]);
            } else {
                all.push([a, b, d]);
                all.push([b, cc, d]);
            }
        }
    }
    let target = rng.random_range(2..=max_faces);
    let full = TriangleMesh::new(verts.clone(), all.clone()).unwrap();
    let mut keep = vec![false; all.len()];
    let mut queue = VecDeque::from([rng.random_range(0..all.len())]);
    let mut taken = 0;
    while let Some(f) = queue.pop_front() {
        if keep[f] || taken == target {
            continue;
        }
        keep[f] = true;
        taken += 1;
        let mut nb = full.adjacency()[f].clone();
        nb.sort();
        for g in nb {
            if !keep[g] {
                queue.push_back(g);
            }
        }
    }
    let faces: Vec<[usize; 3]> = all
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(f, _)| *f)
        .collect();
    let used: BTreeSet<usize> = faces.iter().flatten().copied().collect();
    let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(n, &o)| (o, n)).collect();
    let v2 = used.iter().map(|&o| verts[o]).collect();
    let f2 = faces
        .iter()
        .map(|f| [remap[&f[0]], remap[&f[1]], remap[&f[2]]])
        .collect();
    TriangleMesh::new(v2, f2).unwrap()
}

/// Whether the faces with `member[f] == true` form one edge-connected piece.
pub fn edge_connected(mesh: &TriangleMesh, member: &[bool]) -> bool {
    let Some(start) = member.iter().position(|&m| m) else {
        return true;
    };
    let mut seen = vec![false; member.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut count = 0;
    while let Some(f) = queue.pop_front() {
        count += 1;
        for &g in &mesh.adjacency()[f] {
            if member[g] && !seen[g] {
                seen[g] = true;
                queue.push_back(g);
            }
        }
    }
    count == member.iter().filter(|&&m| m).count()
}

/// Mesh edges `(a, b)` with `a < b` whose two faces carry different ids.
pub fn boundary_edges(mesh: &TriangleMesh, ids: &[u32]) -> BTreeSet<(usize, usize)> {
    mesh.shared_edges()
        .iter()
        .filter(|e| ids[e.faces.0] != ids[e.faces.1])
        .map(|e| e.verts)
        .collect()
}

/// Cluster violations on a labeled arch: clusters that are not
/// edge-connected and clusters whose faces carry more than one label.
pub fn arch_violations(
    mesh: &TriangleMesh,
    labels: &[u32],
    comps: &[u32],
    k: usize,
) -> (usize, usize) {
    let mut disconnected = 0;
    let mut mixed = 0;
    for c in 0..k as u32 {
        let member: Vec<bool> = comps.iter().map(|&x| x == c).collect();
        if !edge_connected(mesh, &member) {
            disconnected += 1;
        }
        let kinds: BTreeSet<u32> = comps
            .iter()
            .zip(labels)
            .filter(|(&x, _)| x == c)
            .map(|(_, &l)| l)
            .collect();
        if kinds.len() > 1 {
            mixed += 1;
        }
    }
    (disconnected, mixed)
}

/// Faces and per-face colors from the ASCII colored PLY writer's output.
pub fn ply_face_colors(text: &str) -> Vec<[u8; 3]> {
    let mut lines = text.lines();
    let mut faces = 0usize;
    let mut vertices = 0usize;
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() == 3 && t[0] == "element" && t[1] == "vertex" {
            vertices = t[2].parse().unwrap();
        }
        if t.len() == 3 && t[0] == "element" && t[1] == "face" {
            faces = t[2].parse().unwrap();
        }
        if line == "end_header" {
            break;
        }
    }
    lines
        .skip(vertices)
        .take(faces)
        .map(|l| {
            let t: Vec<u8> = l
                .split_whitespace()
                .skip(4)
                .map(|x| x.parse().unwrap())
                .collect();
            [t[0], t[1], t[2]]
        })
        .collect()
}

/// Symmetric random matrix with entries in [-1, 1].
pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> ndarray::Array2<f64> {
    let mut a = ndarray::Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let x = rng.random_range(-1.0..1.0);
            a[[i, j]] = x;
            a[[j, i]] = x;
        }
    }
    a
}

pub fn frobenius(a: &ndarray::Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub mod grad {
    use super::{central_diff, max_rel_error, rng};
    use archseg::losses::{contrastive_loss_on_pairs, generalized_dice_loss, sample_pairs, Pair};
    use archseg::model::{backward, forward, forward_cached, Dims, ModelParams};
    use archseg::spectral::ClusterAssignment;
    use ndarray::{Array2, ArrayView2};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub const STEP: f64 = 1e-6;

    fn random_matrix(
        r: &mut ChaCha8Rng,
        rows: usize,
        cols: usize,
        lo: f64,
        hi: f64,
    ) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| r.random_range(lo..hi))
    }

    /// Components with every id in `0..k` used at least once.
    fn random_components(r: &mut ChaCha8Rng, n: usize, k: usize) -> ClusterAssignment {
        let mut component: Vec<u32> = (0..n)
            .map(|i| {
                if i < k {
                    i as u32
                } else {
                    r.random_range(0..k as u32)
                }
            })
            .collect();
        for i in (1..n).rev() {
            component.swap(i, r.random_range(0..=i));
        }
        ClusterAssignment { component, k }
    }

    fn view(x: &[f64], shape: (usize, usize)) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(shape, x).unwrap()
    }

    /// Worst error of the dice gradient over random instances.
    pub fn dice(instances: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        (0..instances)
            .map(|_| {
                let n = r.random_range(2..12);
                let c = r.random_range(2..5);
                let probs = random_matrix(&mut r, n, c, 0.01, 1.0);
                let labels: Vec<u32> = (0..n).map(|_| r.random_range(0..c as u32)).collect();
                let eps = 1e-6;
                let a = generalized_dice_loss(probs.view(), &labels, eps)
                    .unwrap()
                    .grad;
                let x: Vec<f64> = probs.iter().copied().collect();
                let num = central_diff(&x, STEP, |p| {
                    generalized_dice_loss(view(p, (n, c)), &labels, eps)
                        .unwrap()
                        .value
                });
                max_rel_error(a.as_slice().unwrap(), &num)
            })
            .fold(0.0, f64::max)
    }

    /// Worst error of the contrastive gradient over random instances.
    pub fn contrastive(instances: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        (0..instances)
            .map(|t| {
                let n = r.random_range(4..16);
                let e = r.random_range(2..6);
                let k = r.random_range(2..4);
                let embed = random_matrix(&mut r, n, e, -0.6, 0.6);
                let comps = random_components(&mut r, n, k);
                let pairs = sample_pairs(&comps, 32, t as u64).unwrap();
                let margin = 1.0;
                let a = contrastive_loss_on_pairs(embed.view(), &pairs, margin).grad;
                let x: Vec<f64> = embed.iter().copied().collect();
                let num = central_diff(&x, STEP, |p| {
                    contrastive_loss_on_pairs(view(p, (n, e)), &pairs, margin).value
                });
                max_rel_error(a.as_slice().unwrap(), &num)
            })
            .fold(0.0, f64::max)
    }

    fn joint(
        params: &ModelParams,
        x: &Array2<f64>,
        labels: &[u32],
        pairs: &[Pair],
        lambda: f64,
    ) -> f64 {
        let p = forward(params, x.view()).unwrap();
        let sup = generalized_dice_loss(p.probs.view(), labels, 1e-6)
            .unwrap()
            .value;
        let own = contrastive_loss_on_pairs(p.embed.view(), pairs, 1.0).value;
        sup + lambda * own
    }

    /// Worst error of `dice + lambda * contrastive` differentiated through
    /// the network, over every parameter of a 10-face toy. Each instance
    /// draws its own layer widths; `full_size` forces the default widths.
    pub fn through_model(instances: usize, seed: u64, full_size: bool) -> f64 {
        let mut r = rng(seed);
        (0..instances)
            .map(|t| {
                let n = 10;
                let dims = if full_size {
                    Dims::new(3)
                } else {
                    Dims {
                        features: archseg::preprocess::FEATURE_DIM,
                        hidden: r.random_range(3..10),
                        classes: r.random_range(2..5),
                        embed: r.random_range(2..5),
                    }
                };
                let mut params = ModelParams::init(dims, r.random());
                // nonzero biases so the check also covers them
                for v in &mut params.data {
                    *v += r.random_range(-0.05..0.05);
                }
                let x = random_matrix(&mut r, n, dims.features, -1.0, 1.0);
                let labels: Vec<u32> = (0..n).map(|i| (i % dims.classes) as u32).collect();
                let comps = random_components(&mut r, n, 3);
                let pairs = sample_pairs(&comps, 24, t as u64).unwrap();
                let lambda = 10.0;

                let (pred, cache) = forward_cached(&params, x.view()).unwrap();
                let d_probs = generalized_dice_loss(pred.probs.view(), &labels, 1e-6)
                    .unwrap()
                    .grad;
                let d_embed =
                    contrastive_loss_on_pairs(pred.embed.view(), &pairs, 1.0).grad * lambda;
                let a = backward(&params, &cache, d_probs.view(), d_embed.view()).unwrap();
                let mut probe = params.clone();
                let num = central_diff(&params.data, STEP, |p| {
                    probe.data.copy_from_slice(p);
                    joint(&probe, &x, &labels, &pairs, lambda)
                });
                max_rel_error(&a.data, &num)
            })
            .fold(0.0, f64::max)
    }
}
