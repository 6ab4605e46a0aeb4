//! Spectral clustering of mesh faces into geometric components.
//!
//! Pipeline: dual graph, all-pairs combined geodesic/angular distance,
//! Gaussian affinity, degree-normalized eigen-embedding, k-means++.

mod eigen;
mod graph;
mod kmeans;
mod repair;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh_io::TriangleMesh;

pub use eigen::{symmetric_eigen, symmetric_eigen_top, SymmetricEigen};
pub use graph::{angle_distance, build_dual_graph, pairwise_distance, DualEdge, DualGraph};
pub use kmeans::{kmeans_pp, KMeans, MAX_LLOYD_ITERATIONS};
pub use repair::repair_connectivity;

/// Largest face count the dense eigensolver accepts.
pub const MAX_EIGEN_FACES: usize = 3000;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid spectral config: {0}")]
    InvalidConfig(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("eigensolver did not converge (residual {residual:e})")]
    EigenNoConvergence { residual: f64 },
    #[error("faces {i} and {j} do not share an edge")]
    NotAdjacent { i: usize, j: usize },
    #[error("need at least {needed} faces, mesh has {faces}")]
    TooFewFaces { faces: usize, needed: usize },
    #[error("mesh has {faces} faces, the eigensolver accepts at most {max}; decimate first")]
    TooManyFaces { faces: usize, max: usize },
    #[error("mesh is not edge-connected (component sizes {component_sizes:?})")]
    Disconnected { component_sizes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub k: usize,
    pub delta: f64,
    pub eta: f64,
    /// Number of eigenvectors fed to k-means; `None` means `max(2, ceil(k / 4))`.
    pub embed_dims: Option<usize>,
    pub seed: u64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            k: 60,
            delta: 0.03,
            eta: 0.15,
            embed_dims: None,
            seed: 0,
        }
    }
}

impl SpectralConfig {
    pub fn embed_dims(&self) -> usize {
        self.embed_dims.unwrap_or(self.k.div_ceil(4).max(2))
    }

    /// Checks ranges against a mesh of `faces` faces.
    pub fn validate(&self, faces: usize) -> Result<(), SpectralError> {
        let bad = |m: String| Err(SpectralError::InvalidConfig(m));
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if self.embed_dims() == 0 {
            return bad("embed_dims must be at least 1".into());
        }
        if faces > MAX_EIGEN_FACES {
            return Err(SpectralError::TooManyFaces {
                faces,
                max: MAX_EIGEN_FACES,
            });
        }
        if self.k > faces {
            return Err(SpectralError::TooFewFaces {
                faces,
                needed: self.k,
            });
        }
        if self.embed_dims() > faces {
            return bad(format!(
                "embed_dims {} exceeds face count {faces}",
                self.embed_dims()
            ));
        }
        Ok(())
    }
}

/// Bandwidth used by [`affinity`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SigmaMode {
    /// Mean of the off-diagonal distances.
    #[default]
    MeanDistance,
    Fixed(f64),
}

/// Gaussian affinity `exp(-d^2 / (2 sigma^2))`. A zero bandwidth (every
/// distance zero) yields an all-ones matrix.
pub fn affinity(dist: &Array2<f64>, mode: SigmaMode) -> Result<Array2<f64>, SpectralError> {
    let n = dist.nrows();
    if n != dist.ncols() {
        return Err(SpectralError::InvalidMatrix(format!(
            "distance matrix is {n}x{}",
            dist.ncols()
        )));
    }
    let sigma = match mode {
        SigmaMode::MeanDistance if n > 1 => {
            let total: f64 = dist
                .indexed_iter()
                .filter(|((i, j), _)| i != j)
                .map(|(_, &d)| d)
                .sum();
            total / (n * (n - 1)) as f64
        }
        SigmaMode::MeanDistance => 0.0,
        SigmaMode::Fixed(s) => s,
    };
    if sigma == 0.0 {
        return Ok(Array2::ones((n, n)));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            1.0
        } else {
            (-dist[[i, j]] * dist[[i, j]] * inv).exp()
        }
    }))
}

/// Spectral embedding of an affinity matrix.
#[derive(Debug, Clone)]
pub struct Embedding {
    /// Descending eigenvalues of the normalized affinity.
    pub values: Vec<f64>,
    /// One unit-length row per face (rows that vanish stay zero).
    pub rows: Array2<f64>,
}

/// Top `m` eigenvectors of `D^-1/2 W D^-1/2`, stacked as columns, with each
/// row then scaled to unit length.
pub fn eigen_embed(w: &Array2<f64>, m: usize) -> Result<Embedding, SpectralError> {
    let n = w.nrows();
    let deg: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
    if let Some(i) = deg.iter().position(|&d| !(d > 0.0)) {
        return Err(SpectralError::InvalidMatrix(format!(
            "row {i} has non-positive degree"
        )));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let normalized = Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * w[[i, j]] * inv_sqrt[j]);
    let eig = symmetric_eigen_top(&normalized, m)?;
    let mut rows = eig.vectors;
    for mut row in rows.rows_mut() {
        let len = row.dot(&row).sqrt();
        if len > f64::EPSILON {
            row.mapv_inplace(|x| x / len);
        } else {
            row.fill(0.0);
        }
    }
    Ok(Embedding {
        values: eig.values,
        rows,
    })
}

/// Per-face component ids in `0..k`, every id used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub component: Vec<u32>,
    pub k: usize,
}

impl From<&KMeans> for ClusterAssignment {
    fn from(km: &KMeans) -> Self {
        ClusterAssignment {
            component: km.assignment.iter().map(|&a| a as u32).collect(),
            k: km.centers.nrows(),
        }
    }
}

/// Full pipeline from mesh to components. K-means clusters are made
/// edge-connected afterwards by [`repair_connectivity`].
pub fn cluster_mesh(
    mesh: &TriangleMesh,
    cfg: &SpectralConfig,
) -> Result<ClusterAssignment, SpectralError> {
    cfg.validate(mesh.face_count())?;
    let graph = build_dual_graph(mesh, cfg.eta)?;
    let dist = pairwise_distance(&graph, cfg)?;
    let w = affinity(&dist, SigmaMode::MeanDistance)?;
    drop(dist);
    let emb = eigen_embed(&w, cfg.embed_dims())?;
    drop(w);
    let mut km = kmeans_pp(emb.rows.view(), cfg.k, cfg.seed)?;
    repair_connectivity(
        &graph,
        &graph.edge_weights(cfg.delta),
        &mut km.assignment,
        cfg.k,
    );
    Ok(ClusterAssignment::from(&km))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn affinity_hand_example() {
        // distances 1, 2, 3 between three points; sigma = 2
        let d = array![[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]];
        let w = affinity(&d, SigmaMode::MeanDistance).unwrap();
        assert_eq!(w[[0, 0]], 1.0);
        assert!((w[[0, 1]] - (-1.0f64 / 8.0).exp()).abs() < 1e-15);
        assert!((w[[0, 2]] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((w[[1, 2]] - (-9.0f64 / 8.0).exp()).abs() < 1e-15);
        assert_eq!(w, w.t());
    }

    #[test]
    fn distance_equal_to_sigma() {
        let d = array![[0.0, 1.0], [1.0, 0.0]];
        let w = affinity(&d, SigmaMode::MeanDistance).unwrap();
        assert!((w[[0, 1]] - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn all_zero_distance_gives_ones() {
        let w = affinity(&Array2::zeros((3, 3)), SigmaMode::MeanDistance).unwrap();
        assert!(w.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn identity_embedding() {
        let e = eigen_embed(&Array2::eye(3), 3).unwrap();
        for v in &e.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
        for r in e.rows.rows() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let cfg = SpectralConfig::default();
        assert!(cfg.validate(100).is_ok());
        assert!(matches!(
            cfg.validate(10),
            Err(SpectralError::TooFewFaces { .. })
        ));
        assert!(matches!(
            cfg.validate(3001),
            Err(SpectralError::TooManyFaces { .. })
        ));
        let bad_eta = SpectralConfig {
            eta: 0.0,
            ..cfg.clone()
        };
        assert!(bad_eta.validate(100).is_err());
        let bad_delta = SpectralConfig {
            delta: 1.5,
            ..cfg.clone()
        };
        assert!(bad_delta.validate(100).is_err());
        let bad_k = SpectralConfig { k: 1, ..cfg };
        assert!(bad_k.validate(100).is_err());
    }

    #[test]
    fn config_toml_defaults() {
        let cfg: SpectralConfig = toml::from_str("k = 8").unwrap();
        assert_eq!(cfg.k, 8);
        assert_eq!(cfg.embed_dims(), 2);
        assert_eq!(SpectralConfig::default().embed_dims(), 15);
        let two: SpectralConfig = toml::from_str("k = 2").unwrap();
        assert_eq!(two.embed_dims(), 2);
        assert_eq!(cfg.delta, 0.03);
        assert!(toml::from_str::<SpectralConfig>("kk = 8").is_err());
    }
}
