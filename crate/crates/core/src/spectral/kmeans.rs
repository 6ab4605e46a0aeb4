//! k-means with k-means++ seeding and Lloyd iterations.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::SpectralError;

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centers: Array2<f64>,
    /// Objective after the assignment step of every iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_centers(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` just short of `target`
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // fewer distinct points than clusters: take any unused index
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut centers = Array2::zeros((k, points.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centers.row_mut(c).assign(&points.row(i));
    }
    centers
}

/// Nearest center for each point; a point keeps its current center unless
/// another one is strictly closer. Returns whether anything moved.
fn assign(
    points: ArrayView2<f64>,
    centers: &Array2<f64>,
    assignment: &mut [usize],
    first: bool,
) -> bool {
    let k = centers.nrows();
    let updated: Vec<usize> = (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut best = if first { 0 } else { assignment[i] };
            let mut best_d = sq_dist(p, centers.row(best));
            for c in 0..k {
                let d = sq_dist(p, centers.row(c));
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    let changed = first || updated.iter().zip(assignment.iter()).any(|(a, b)| a != b);
    assignment.copy_from_slice(&updated);
    changed
}

/// Gives every empty cluster the point farthest from its own center, taken
/// from a cluster with at least two members. Returns whether anything moved.
fn repair_empty(
    points: ArrayView2<f64>,
    centers: &mut Array2<f64>,
    assignment: &mut [usize],
) -> bool {
    let k = centers.nrows();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    let mut repaired = false;
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &a) in assignment.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(points.row(i), centers.row(a));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= n guarantees a cluster with two members");
        sizes[assignment[i]] -= 1;
        assignment[i] = empty;
        sizes[empty] = 1;
        centers.row_mut(empty).assign(&points.row(i));
        repaired = true;
    }
    repaired
}

fn objective(points: ArrayView2<f64>, centers: &Array2<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(points.row(i), centers.row(a)))
        .sum()
}

fn update_centers(points: ArrayView2<f64>, centers: &mut Array2<f64>, assignment: &[usize]) {
    let k = centers.nrows();
    let mut sums = Array2::<f64>::zeros(centers.dim());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        sums.row_mut(a).scaled_add(1.0, &points.row(i));
        counts[a] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            let mean = sums.row(c).mapv(|x| x / counts[c] as f64);
            centers.row_mut(c).assign(&mean);
        }
    }
}

/// Clusters the rows of `points` into exactly `k` nonempty groups.
///
/// Seeding picks the first center uniformly and each further center with
/// probability proportional to its squared distance from the nearest chosen
/// one. Lloyd iterations then run to an assignment fixpoint or
/// [`MAX_LLOYD_ITERATIONS`]. Deterministic for a given seed.
pub fn kmeans_pp(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeans, SpectralError> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(SpectralError::TooFewFaces {
            faces: n,
            needed: k.max(1),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(points, k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    for it in 0..MAX_LLOYD_ITERATIONS {
        iterations = it + 1;
        let moved = assign(points, &centers, &mut assignment, it == 0);
        let repaired = repair_empty(points, &mut centers, &mut assignment);
        history.push(objective(points, &centers, &assignment));
        if !moved && !repaired {
            break;
        }
        update_centers(points, &mut centers, &assignment);
    }
    Ok(KMeans {
        assignment,
        centers,
        objective_history: history,
        iterations,
    })
}
