//! Labeled, unlabeled and test pools, the synthetic benchmark, and cached
//! spectral components for unlabeled meshes.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{derive_seed, generate_synthetic_arch, ArchSpec, HarnessError, SyntheticArch};
use crate::mesh_io::{read_labels, write_labels, FaceLabels, TriangleMesh};
use crate::spectral::{cluster_mesh, ClusterAssignment, SpectralConfig};

/// SHA-256 over vertex coordinate bits and face indices.
pub fn mesh_hash(mesh: &TriangleMesh) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((mesh.vertex_count() as u64).to_le_bytes());
    h.update((mesh.face_count() as u64).to_le_bytes());
    for v in mesh.vertices() {
        for c in v {
            h.update(c.to_bits().to_le_bytes());
        }
    }
    for f in mesh.faces() {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct LabeledArch {
    pub name: String,
    pub mesh: TriangleMesh,
    pub labels: FaceLabels,
    pub missing_teeth: bool,
}

impl LabeledArch {
    pub fn new(
        name: impl Into<String>,
        mesh: TriangleMesh,
        labels: FaceLabels,
        missing_teeth: bool,
    ) -> Result<Self, HarnessError> {
        let name = name.into();
        labels
            .check_attach(&mesh)
            .map_err(|e| HarnessError::InvalidDataset(format!("{name}: {e}")))?;
        Ok(LabeledArch {
            name,
            mesh,
            labels,
            missing_teeth,
        })
    }

    /// Tooth positions `1..C` that no face carries.
    pub fn absent_teeth(&self) -> Vec<u32> {
        let mut seen = vec![false; self.labels.num_classes() as usize];
        for &l in self.labels.labels() {
            seen[l as usize] = true;
        }
        (1..seen.len() as u32)
            .filter(|&c| !seen[c as usize])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct UnlabeledArch {
    pub name: String,
    pub mesh: TriangleMesh,
    pub components: ClusterAssignment,
}

/// Labeled pool X^L, unlabeled pool X^U with components, and test arches.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub labeled: Vec<LabeledArch>,
    pub unlabeled: Vec<UnlabeledArch>,
    pub test: Vec<LabeledArch>,
}

impl DatasetSplit {
    /// Checks that no mesh appears twice across the pools, that every
    /// unlabeled mesh has a matching component assignment and that labeled
    /// arches agree on the class count.
    pub fn new(
        labeled: Vec<LabeledArch>,
        unlabeled: Vec<UnlabeledArch>,
        test: Vec<LabeledArch>,
    ) -> Result<Self, HarnessError> {
        let mut seen = HashSet::new();
        let names = labeled
            .iter()
            .map(|a| (&a.name, &a.mesh))
            .chain(unlabeled.iter().map(|a| (&a.name, &a.mesh)))
            .chain(test.iter().map(|a| (&a.name, &a.mesh)));
        for (name, mesh) in names {
            if !seen.insert(mesh_hash(mesh)) {
                return Err(HarnessError::InvalidDataset(format!(
                    "{name} appears in more than one pool"
                )));
            }
        }
        for a in &unlabeled {
            if a.components.component.len() != a.mesh.face_count() {
                return Err(HarnessError::InvalidDataset(format!(
                    "{}: {} component ids for {} faces",
                    a.name,
                    a.components.component.len(),
                    a.mesh.face_count()
                )));
            }
        }
        if let Some(first) = labeled.first().or(test.first()) {
            let c = first.labels.num_classes();
            if let Some(bad) = labeled
                .iter()
                .chain(&test)
                .find(|a| a.labels.num_classes() != c)
            {
                return Err(HarnessError::InvalidDataset(format!(
                    "{} has {} classes, expected {c}",
                    bad.name,
                    bad.labels.num_classes()
                )));
            }
        }
        Ok(DatasetSplit {
            labeled,
            unlabeled,
            test,
        })
    }

    pub fn num_classes(&self) -> Option<u32> {
        self.labeled
            .first()
            .or(self.test.first())
            .map(|a| a.labels.num_classes())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

/// Bumped whenever clustering output changes for an unchanged config.
const CACHE_VERSION: &[u8] = b"clusters-v2";

/// Cache key: mesh content plus the full spectral config, with the
/// eigenvector count resolved so a changed default misses.
fn cache_key(mesh_digest: &[u8; 32], cfg: &SpectralConfig) -> String {
    let resolved = SpectralConfig {
        embed_dims: Some(cfg.embed_dims()),
        ..cfg.clone()
    };
    let mut h = Sha256::new();
    h.update(CACHE_VERSION);
    h.update(mesh_digest);
    h.update(serde_json::to_vec(&resolved).expect("config serializes"));
    hex(&h.finalize())
}

/// Seed used for one mesh: the config seed xor the leading bytes of the
/// mesh hash.
pub fn mesh_seed(cfg: &SpectralConfig, mesh: &TriangleMesh) -> u64 {
    let h = mesh_hash(mesh);
    cfg.seed ^ u64::from_le_bytes(h[..8].try_into().unwrap())
}

fn read_cached(path: &Path, mesh: &TriangleMesh, k: usize) -> Option<ClusterAssignment> {
    let bytes = fs::read(path).ok()?;
    let component = read_labels(&bytes).ok()?;
    let valid = component.len() == mesh.face_count() && component.iter().all(|&c| (c as usize) < k);
    valid.then_some(ClusterAssignment { component, k })
}

/// Clusters each mesh with a per-mesh seed, reusing results stored under
/// `cache_dir` when the mesh and config are unchanged.
pub fn prepare_unlabeled(
    meshes: &[TriangleMesh],
    cfg: &SpectralConfig,
    cache_dir: Option<&Path>,
) -> Result<(Vec<ClusterAssignment>, CacheStats), HarnessError> {
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let results: Vec<Result<(ClusterAssignment, bool), HarnessError>> = meshes
        .par_iter()
        .map(|mesh| {
            let digest = mesh_hash(mesh);
            let path: Option<PathBuf> =
                cache_dir.map(|d| d.join(format!("{}.components.txt", cache_key(&digest, cfg))));
            if let Some(hit) = path.as_deref().and_then(|p| read_cached(p, mesh, cfg.k)) {
                return Ok((hit, true));
            }
            let seeded = SpectralConfig {
                seed: mesh_seed(cfg, mesh),
                ..cfg.clone()
            };
            let assignment = cluster_mesh(mesh, &seeded)?;
            if let Some(p) = path {
                fs::write(&p, write_labels(&assignment.component))
                    .map_err(|source| HarnessError::Io { path: p, source })?;
            }
            Ok((assignment, false))
        })
        .collect();
    let mut stats = CacheStats::default();
    let mut out = Vec::with_capacity(meshes.len());
    for r in results {
        let (a, hit) = r?;
        if hit {
            stats.hits += 1;
        } else {
            stats.misses += 1;
        }
        out.push(a);
    }
    Ok((out, stats))
}

/// Sizes and generation settings of a synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub seed: u64,
    pub teeth: usize,
    pub max_faces: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    /// How many unlabeled arches lack a tooth.
    pub unlabeled_missing: usize,
    /// How many test arches lack a tooth.
    pub test_missing: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            seed: 2024,
            teeth: 14,
            max_faces: 2000,
            labeled: 2,
            unlabeled: 8,
            test: 4,
            unlabeled_missing: 3,
            test_missing: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkArch {
    pub name: String,
    pub spec: ArchSpec,
    pub arch: SyntheticArch,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub labeled: Vec<BenchmarkArch>,
    pub unlabeled: Vec<BenchmarkArch>,
    pub test: Vec<BenchmarkArch>,
}

/// Generates the three pools. Arches with a missing tooth come first in
/// their pool; the missing position is drawn from the seed.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark, HarnessError> {
    if spec.unlabeled_missing > spec.unlabeled || spec.test_missing > spec.test {
        return Err(HarnessError::InvalidSpec(
            "more arches with missing teeth than arches".into(),
        ));
    }
    let mut index = 0u64;
    let mut pool = |prefix: &str,
                    count: usize,
                    with_missing: usize|
     -> Result<Vec<BenchmarkArch>, HarnessError> {
        (0..count)
            .map(|i| {
                let seed = derive_seed(spec.seed, &[index]);
                index += 1;
                let missing = if i < with_missing {
                    vec![1 + (derive_seed(seed, &[1]) % spec.teeth as u64) as u32]
                } else {
                    vec![]
                };
                let arch_spec = ArchSpec {
                    teeth: spec.teeth,
                    missing,
                    max_faces: spec.max_faces,
                    seed,
                };
                let arch = generate_synthetic_arch(&arch_spec)?;
                Ok(BenchmarkArch {
                    name: format!("{prefix}_{i:03}"),
                    spec: arch_spec,
                    arch,
                })
            })
            .collect()
    };
    Ok(Benchmark {
        labeled: pool("labeled", spec.labeled, 0)?,
        unlabeled: pool("unlabeled", spec.unlabeled, spec.unlabeled_missing)?,
        test: pool("test", spec.test, spec.test_missing)?,
    })
}
