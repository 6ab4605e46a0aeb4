//! Mesh preparation before clustering and training: coordinate
//! normalization, similarity-transform augmentation, edge-collapse
//! decimation, and per-face feature extraction.

mod decimate;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Vec3};
use crate::mesh_io::{MeshError, TriangleMesh};

pub use decimate::{decimate, Decimated, DEFAULT_TARGET_FACES};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cannot normalize: all vertices coincide (standard deviation is 0)")]
    ZeroSpread,
    #[error("decimation target must be at least 4 faces, got {0}")]
    TargetTooSmall(usize),
    #[error("augmentation scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid augmentation range: {0}")]
    InvalidRange(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// The affine map applied by [`normalize`]: `v' = (v - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec3,
    pub std: f64,
}

impl Normalization {
    pub fn apply(&self, v: Vec3) -> Vec3 {
        geom::scale(geom::sub(v, self.mean), 1.0 / self.std)
    }

    pub fn invert(&self, v: Vec3) -> Vec3 {
        geom::add(geom::scale(v, self.std), self.mean)
    }
}

/// Per-axis mean and scalar standard deviation of a point cloud; the
/// deviation is the RMS over all `3N` centered coordinates.
pub fn normalization_of(points: &[Vec3]) -> Result<Normalization, PreprocessError> {
    let n = points.len() as f64;
    let mean = geom::scale(
        points.iter().fold([0.0; 3], |acc, &v| geom::add(acc, v)),
        1.0 / n,
    );
    let sq: f64 = points
        .iter()
        .map(|&v| {
            let d = geom::sub(v, mean);
            geom::dot(d, d)
        })
        .sum();
    let std = (sq / (3.0 * n)).sqrt();
    if std == 0.0 || !std.is_finite() {
        return Err(PreprocessError::ZeroSpread);
    }
    Ok(Normalization { mean, std })
}

/// Centers vertices on their per-axis mean and divides by a single scalar
/// standard deviation, which keeps the aspect ratio of the arch.
pub fn normalize(mesh: &TriangleMesh) -> Result<(TriangleMesh, Normalization), PreprocessError> {
    let t = normalization_of(mesh.vertices())?;
    let vertices = mesh.vertices().iter().map(|&v| t.apply(v)).collect();
    Ok((mesh.with_vertices(vertices)?, t))
}

/// A concrete similarity transform `v -> scale * R(axis, angle) * v + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub axis: Vec3,
    pub angle: f64,
    pub translation: Vec3,
    pub scale: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            axis: [0.0, 0.0, 1.0],
            angle: 0.0,
            translation: [0.0; 3],
            scale: 1.0,
        }
    }
}

/// Ranges that augmentation parameters are sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentRanges {
    pub rotation_max_rad: f64,
    pub translation_max: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            rotation_max_rad: std::f64::consts::PI / 9.0,
            translation_max: 0.1,
            scale_range: (0.9, 1.1),
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(PreprocessError::InvalidRange(format!(
                "scale_range ({lo}, {hi})"
            )));
        }
        if !(self.rotation_max_rad >= 0.0) || !(self.translation_max >= 0.0) {
            return Err(PreprocessError::InvalidRange(
                "rotation_max_rad and translation_max must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Draws parameters; the axis is uniform on the unit sphere and the
    /// other quantities uniform in their ranges. Same seed, same result.
    pub fn sample(&self, seed: u64) -> AugmentParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: f64 = rng.random_range(-1.0..=1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = (1.0 - z * z).max(0.0).sqrt();
        let axis = [r * phi.cos(), r * phi.sin(), z];
        let angle = sym_uniform(&mut rng, self.rotation_max_rad);
        let translation = [
            sym_uniform(&mut rng, self.translation_max),
            sym_uniform(&mut rng, self.translation_max),
            sym_uniform(&mut rng, self.translation_max),
        ];
        let (lo, hi) = self.scale_range;
        let scale = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        AugmentParams {
            axis,
            angle,
            translation,
            scale,
        }
    }
}

fn sym_uniform(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..=max)
    } else {
        0.0
    }
}

/// Applies the similarity transform to every vertex; faces are untouched and
/// normals recomputed.
pub fn augment(
    mesh: &TriangleMesh,
    params: &AugmentParams,
) -> Result<TriangleMesh, PreprocessError> {
    if !(params.scale > 0.0) {
        return Err(PreprocessError::NonPositiveScale(params.scale));
    }
    let rot = geom::rotation_matrix(params.axis, params.angle);
    let vertices = mesh
        .vertices()
        .iter()
        .map(|&v| {
            geom::add(
                geom::scale(geom::mat_vec(&rot, v), params.scale),
                params.translation,
            )
        })
        .collect();
    Ok(mesh.with_vertices(vertices)?)
}

pub const FEATURE_DIM: usize = 15;

/// Classifier input: one row of [`FEATURE_DIM`] values per face.
///
/// Columns 0..9 are the face's three vertex positions, starting at the
/// lexicographically smallest vertex and following the face winding;
/// columns 9..12 the unit normal; columns 12..15 the face centroid minus the
/// mesh vertex mean.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFeatures(pub Array2<f64>);

impl FaceFeatures {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn view(&self) -> ndarray::ArrayView2<'_, f64> {
        self.0.view()
    }
}

fn lex_less(a: Vec3, b: Vec3) -> bool {
    for k in 0..3 {
        match a[k].total_cmp(&b[k]) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

pub fn extract_features(mesh: &TriangleMesh) -> FaceFeatures {
    let center = mesh.vertex_mean();
    let mut out = Array2::zeros((mesh.face_count(), FEATURE_DIM));
    for (fi, mut row) in out.rows_mut().into_iter().enumerate() {
        let corners = mesh.face_vertices(fi);
        let start = (0..3).fold(0, |best, k| {
            if lex_less(corners[k], corners[best]) {
                k
            } else {
                best
            }
        });
        for k in 0..3 {
            let v = corners[(start + k) % 3];
            for c in 0..3 {
                row[3 * k + c] = v[c];
            }
        }
        let n = mesh.normals()[fi];
        let rel = geom::sub(mesh.face_centroid(fi), center);
        for c in 0..3 {
            row[9 + c] = n[c];
            row[12 + c] = rel[c];
        }
    }
    FaceFeatures(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_io::{parse_mesh, MeshFormat};

    const TETRA: &str =
        "v 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\nf 1 2 3\nf 1 4 2\nf 1 3 4\nf 2 4 3\n";

    fn segment_mesh(a: Vec3, b: Vec3) -> TriangleMesh {
        // triangle whose vertex set is {a, b, midpoint offset}; used for normalize checks
        TriangleMesh::new(vec![a, b, [a[0], b[1], a[2] + 0.5]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn normalize_hand_example() {
        let t = normalization_of(&[[1.0; 3], [3.0; 3]]).unwrap();
        assert_eq!(t.mean, [2.0; 3]);
        assert_eq!(t.std, 1.0);
        assert_eq!(t.apply([1.0; 3]), [-1.0; 3]);
        assert_eq!(t.apply([3.0; 3]), [1.0; 3]);
    }

    #[test]
    fn normalize_moments() {
        let m = segment_mesh([1.0, 5.0, -3.0], [7.0, -2.0, 10.0]);
        let (out, t) = normalize(&m).unwrap();
        let mean = out.vertex_mean();
        let rms =
            (out.vertices().iter().map(|&v| geom::dot(v, v)).sum::<f64>() / (3.0 * 3.0)).sqrt();
        for k in 0..3 {
            assert!(mean[k].abs() < 1e-9);
        }
        assert!((rms - 1.0).abs() < 1e-9);
        for (a, b) in m.vertices().iter().zip(out.vertices()) {
            assert!(geom::dist(*a, t.invert(*b)) < 1e-12);
        }
    }

    #[test]
    fn normalize_is_a_fixed_point_on_normalized_input() {
        let m = parse_mesh(TETRA.as_bytes(), MeshFormat::Obj).unwrap();
        let (once, _) = normalize(&m).unwrap();
        let (twice, _) = normalize(&once).unwrap();
        for (a, b) in once.vertices().iter().zip(twice.vertices()) {
            assert!(geom::dist(*a, *b) < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero_spread() {
        assert!(matches!(
            normalization_of(&[[2.0, -1.0, 0.5]; 3]),
            Err(PreprocessError::ZeroSpread)
        ));
    }

    #[test]
    fn identity_augment_is_exact() {
        let m = parse_mesh(TETRA.as_bytes(), MeshFormat::Obj).unwrap();
        let out = augment(&m, &AugmentParams::identity()).unwrap();
        assert_eq!(out.vertices(), m.vertices());
    }

    #[test]
    fn scale_two_doubles_bbox_diagonal() {
        let m = parse_mesh(TETRA.as_bytes(), MeshFormat::Obj).unwrap();
        let p = AugmentParams {
            scale: 2.0,
            ..AugmentParams::identity()
        };
        let out = augment(&m, &p).unwrap();
        assert_eq!(out.bbox_diagonal(), 2.0 * m.bbox_diagonal());
    }

    #[test]
    fn sampled_augmentation_is_seed_deterministic() {
        let ranges = AugmentRanges::default();
        let m = parse_mesh(TETRA.as_bytes(), MeshFormat::Obj).unwrap();
        let a = augment(&m, &ranges.sample(42)).unwrap();
        let b = augment(&m, &ranges.sample(42)).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        let p = ranges.sample(42);
        assert!(p.angle.abs() <= ranges.rotation_max_rad);
        assert!(p.scale >= 0.9 && p.scale <= 1.1);
        assert!(p.translation.iter().all(|t| t.abs() <= 0.1));
        assert!((geom::norm(p.axis) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn augment_preserves_normal_angles() {
        let m = parse_mesh(TETRA.as_bytes(), MeshFormat::Obj).unwrap();
        let p = AugmentParams {
            axis: [0.3, -1.0, 0.4],
            angle: 0.3,
            translation: [0.05, -0.02, 0.07],
            scale: 1.07,
        };
        let out = augment(&m, &p).unwrap();
        assert_eq!(out.faces(), m.faces());
        for i in 0..4 {
            for j in 0..4 {
                let before = geom::dot(m.normals()[i], m.normals()[j]);
                let after = geom::dot(out.normals()[i], out.normals()[j]);
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn right_triangle_features() {
        let m = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let f = extract_features(&m);
        assert_eq!(f.rows(), 1);
        let row = f.0.row(0);
        assert_eq!(&row.to_vec()[9..12], &[0.0, 0.0, 1.0]);
        for c in 12..15 {
            assert!(row[c].abs() < 1e-15);
        }
    }

    #[test]
    fn features_ignore_translation_after_normalization() {
        let m = parse_mesh(TETRA.as_bytes(), MeshFormat::Obj).unwrap();
        let moved = augment(
            &m,
            &AugmentParams {
                translation: [10.0, -4.0, 2.5],
                ..AugmentParams::identity()
            },
        )
        .unwrap();
        let fa = extract_features(&normalize(&m).unwrap().0);
        let fb = extract_features(&normalize(&moved).unwrap().0);
        for (a, b) in fa.0.iter().zip(fb.0.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn features_invariant_to_vertex_relabeling() {
        let m = parse_mesh(TETRA.as_bytes(), MeshFormat::Obj).unwrap();
        // reverse the vertex array and rotate each face's cycle
        let n = m.vertex_count();
        let vertices: Vec<Vec3> = m.vertices().iter().rev().copied().collect();
        let faces: Vec<[usize; 3]> = m
            .faces()
            .iter()
            .map(|f| [n - 1 - f[1], n - 1 - f[2], n - 1 - f[0]])
            .collect();
        let relabeled = TriangleMesh::new(vertices, faces).unwrap();
        assert_eq!(extract_features(&m), extract_features(&relabeled));
    }
}
