//! Dense symmetric eigensolver.
//!
//! Householder reduction to tridiagonal form, then implicit-shift QL on the
//! tridiagonal. [`symmetric_eigen`] accumulates every eigenvector;
//! [`symmetric_eigen_top`] computes only the leading `m` pairs, recovering
//! their tridiagonal eigenvectors by shifted inverse iteration and mapping
//! them back through the stored reflectors.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SpectralError;

/// QL sweeps allowed per eigenvalue before giving up.
const MAX_QL_SWEEPS: usize = 60;
const INVERSE_ITERATIONS: usize = 4;

/// Eigenpairs in descending eigenvalue order; column `j` of `vectors` is the
/// unit eigenvector for `values[j]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

struct Tridiagonal {
    diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`; the last entry is 0.
    off: Vec<f64>,
    /// Unit Householder vectors acting on indices `k + 1..n`.
    reflectors: Vec<Option<Vec<f64>>>,
}

impl Tridiagonal {
    fn norm_inf(&self) -> f64 {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                left + self.diag[i].abs() + self.off[i].abs()
            })
            .fold(0.0, f64::max)
    }

    /// `y <- Q y` where `Q^T A Q` is the tridiagonal matrix.
    fn back_transform(&self, y: &mut [f64]) {
        for (k, refl) in self.reflectors.iter().enumerate().rev() {
            if let Some(v) = refl {
                let seg = &mut y[k + 1..];
                let s = 2.0 * dot(v, seg);
                for (x, &vi) in seg.iter_mut().zip(v) {
                    *x -= s * vi;
                }
            }
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            out[i] = s;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable without reassociation
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn check_input(a: &Array2<f64>) -> Result<usize, SpectralError> {
    let (n, m) = a.dim();
    if n != m || n == 0 {
        return Err(SpectralError::InvalidMatrix(format!(
            "expected a nonempty square matrix, got {n}x{m}"
        )));
    }
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if !scale.is_finite() {
        return Err(SpectralError::InvalidMatrix(
            "matrix has non-finite entries".into(),
        ));
    }
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-12 * scale {
                return Err(SpectralError::InvalidMatrix(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(n)
}

/// Householder tridiagonalization of a full symmetric matrix stored
/// row-major. The trailing block is updated in full (both triangles) so that
/// every access is a contiguous row.
fn tridiagonalize(mut a: Vec<f64>, n: usize) -> Tridiagonal {
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        diag[k] = a[k * n + k];
        let x = &a[k * n + k + 1..(k + 1) * n];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            off[k] = 0.0;
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vn = dot(&v, &v).sqrt();
        for vi in &mut v {
            *vi /= vn;
        }
        off[k] = alpha;

        let lo = k + 1;
        let m = n - lo;
        let p = &mut p[..m];
        for (r, pr) in p.iter_mut().enumerate() {
            let row = &a[(lo + r) * n + lo..(lo + r + 1) * n];
            *pr = 2.0 * dot(row, &v);
        }
        // A' = A - v w^T - w v^T with w = p - (v . p) v, since p = 2 A v
        let vp = dot(&v, p);
        for (pr, &vr) in p.iter_mut().zip(&v) {
            *pr -= vp * vr;
        }
        for r in 0..m {
            let (vr, wr) = (v[r], p[r]);
            let row = &mut a[(lo + r) * n + lo..(lo + r + 1) * n];
            for ((x, &vc), &wc) in row.iter_mut().zip(&v).zip(p.iter()) {
                *x -= vr * wc + wr * vc;
            }
        }
        reflectors.push(Some(v));
    }
    if n >= 2 {
        diag[n - 2] = a[(n - 2) * n + n - 2];
        off[n - 2] = a[(n - 2) * n + n - 1];
    }
    diag[n - 1] = a[n * n - 1];
    off[n - 1] = 0.0;
    Tridiagonal {
        diag,
        off,
        reflectors,
    }
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. When `vectors` is
/// given (row `i` holds eigenvector `i`, length `n` each), the rotations are
/// accumulated into it.
fn tridiagonal_ql(
    diag: &mut [f64],
    off: &mut [f64],
    mut vectors: Option<&mut [f64]>,
) -> Result<(), SpectralError> {
    let n = diag.len();
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_QL_SWEEPS {
                let residual = off[l..m].iter().map(|e| e * e).sum::<f64>().sqrt();
                return Err(SpectralError::EigenNoConvergence { residual });
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = vectors.as_deref_mut() {
                    let (head, tail) = z.split_at_mut((i + 1) * n);
                    let zi = &mut head[i * n..];
                    let zi1 = &mut tail[..n];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let f = *b;
                        *b = s * *a + c * f;
                        *a = c * *a - s * f;
                    }
                }
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    order
}

/// All eigenpairs of a dense symmetric matrix, eigenvalues descending.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<SymmetricEigen, SpectralError> {
    let n = check_input(a)?;
    let tri = tridiagonalize(a.iter().copied().collect(), n);
    let mut diag = tri.diag.clone();
    let mut off = tri.off.clone();
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    tridiagonal_ql(&mut diag, &mut off, Some(&mut z))?;

    let order = descending_order(&diag);
    let mut vectors = Array2::zeros((n, n));
    let mut values = Vec::with_capacity(n);
    for (col, &idx) in order.iter().enumerate() {
        let mut y = z[idx * n..(idx + 1) * n].to_vec();
        tri.back_transform(&mut y);
        fix_sign(&mut y);
        for (r, x) in y.into_iter().enumerate() {
            vectors[[r, col]] = x;
        }
        values.push(diag[idx]);
    }
    Ok(SymmetricEigen { values, vectors })
}

/// LU factorization with partial pivoting of `T - shift I`.
struct ShiftedLu {
    dl: Vec<f64>,
    dd: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl ShiftedLu {
    fn new(tri: &Tridiagonal, shift: f64, tiny: f64) -> Self {
        let n = tri.diag.len();
        let mut dd: Vec<f64> = tri.diag.iter().map(|d| d - shift).collect();
        let mut dl = tri.off[..n.saturating_sub(1)].to_vec();
        let mut du = dl.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if dd[i].abs() >= dl[i].abs() {
                if dd[i] == 0.0 {
                    dd[i] = tiny;
                }
                let fact = dl[i] / dd[i];
                dl[i] = fact;
                dd[i + 1] -= fact * du[i];
            } else {
                swapped[i] = true;
                let fact = dd[i] / dl[i];
                dd[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = dd[i + 1];
                dd[i + 1] = temp - fact * dd[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
            }
        }
        for d in &mut dd {
            if d.abs() < tiny {
                *d = if *d < 0.0 { -tiny } else { tiny };
            }
        }
        ShiftedLu {
            dl,
            dd,
            du,
            du2,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let t = b[i];
                b[i] = b[i + 1];
                b[i + 1] = t - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.dd[n - 1];
        if n >= 2 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.dd[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.dd[i];
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let nrm = dot(v, v).sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    nrm
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let c = dot(u, v);
        for (x, &ui) in v.iter_mut().zip(u) {
            *x -= c * ui;
        }
    }
}

/// Eigenvectors of the tridiagonal for the given eigenvalues (descending).
/// Eigenvalues closer than `1e-3 * ||T||` form a cluster whose vectors are
/// kept mutually orthogonal; coincident shifts are separated slightly.
fn inverse_iteration(tri: &Tridiagonal, values: &[f64]) -> Result<Vec<Vec<f64>>, SpectralError> {
    let n = tri.diag.len();
    let tnorm = tri.norm_inf().max(f64::MIN_POSITIVE);
    let ortho_tol = 1e-3 * tnorm;
    let sep = 10.0 * f64::EPSILON * tnorm;
    let tiny = f64::EPSILON * tnorm;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e16e);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(values.len());
    let mut cluster_start = 0;
    let mut last_shift = f64::INFINITY;
    let mut scratch = vec![0.0; n];
    for (j, &lambda) in values.iter().enumerate() {
        if j > 0 && values[j - 1] - lambda > ortho_tol {
            cluster_start = j;
        }
        let mut shift = lambda;
        if j > cluster_start && last_shift - shift < sep {
            shift = last_shift - sep;
        }
        last_shift = shift;
        let lu = ShiftedLu::new(tri, shift, tiny);
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut x);
        let peers = &out[cluster_start..j];
        for _ in 0..INVERSE_ITERATIONS {
            lu.solve(&mut x);
            orthogonalize(&mut x, peers);
            if normalize(&mut x) == 0.0 || !x[0].is_finite() {
                return Err(SpectralError::EigenNoConvergence { residual: f64::NAN });
            }
        }
        orthogonalize(&mut x, peers);
        normalize(&mut x);

        tri.apply(&x, &mut scratch);
        let residual = scratch
            .iter()
            .zip(&x)
            .map(|(tx, xi)| (tx - lambda * xi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual > 1e-9 * tnorm {
            return Err(SpectralError::EigenNoConvergence { residual });
        }
        out.push(x);
    }
    Ok(out)
}

/// The `m` eigenpairs of largest eigenvalue of a dense symmetric matrix.
pub fn symmetric_eigen_top(a: &Array2<f64>, m: usize) -> Result<SymmetricEigen, SpectralError> {
    let n = check_input(a)?;
    if m == 0 || m > n {
        return Err(SpectralError::InvalidConfig(format!(
            "requested {m} eigenpairs of a {n}x{n} matrix"
        )));
    }
    let tri = tridiagonalize(a.iter().copied().collect(), n);
    let mut diag = tri.diag.clone();
    let mut off = tri.off.clone();
    tridiagonal_ql(&mut diag, &mut off, None)?;
    let order = descending_order(&diag);
    let values: Vec<f64> = order[..m].iter().map(|&i| diag[i]).collect();

    let tri_vectors = inverse_iteration(&tri, &values)?;
    let mut vectors = Array2::zeros((n, m));
    for (col, mut y) in tri_vectors.into_iter().enumerate() {
        tri.back_transform(&mut y);
        fix_sign(&mut y);
        for (r, x) in y.into_iter().enumerate() {
            vectors[[r, col]] = x;
        }
    }
    Ok(SymmetricEigen { values, vectors })
}
