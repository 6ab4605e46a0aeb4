//! Run configuration, dataset directories and run outputs.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::{
    evaluate, prepare_unlabeled, train, Benchmark, CacheStats, DatasetSplit, EvalReport,
    HarnessError, LabeledArch, TrainConfig, TrainOutput, UnlabeledArch,
};
use crate::mesh_io::{
    parse_mesh, write_labels, write_obj, FaceLabels, MeshFormat, TriangleMesh, DEFAULT_NUM_CLASSES,
};
use crate::model::Checkpoint;
use crate::preprocess::{decimate, normalize, DEFAULT_TARGET_FACES};
use crate::spectral::SpectralConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub labeled: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabeled: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

/// Everything a `train` run reads. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_classes")]
    pub num_classes: u32,
    #[serde(default = "default_target")]
    pub target_faces: usize,
    pub data: DataPaths,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_classes() -> u32 {
    DEFAULT_NUM_CLASSES
}

fn default_target() -> usize {
    DEFAULT_TARGET_FACES
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| HarnessError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.out_dir);
        if let Some(p) = cfg.cache_dir.as_mut() {
            fix(p);
        }
        fix(&mut cfg.data.labeled);
        if let Some(p) = cfg.data.unlabeled.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.data.test.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Mesh files in `dir` sorted by name, with their stems.
fn mesh_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, HarnessError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && MeshFormat::from_path(&path).is_some() {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

fn read_mesh(path: &Path) -> Result<TriangleMesh, HarnessError> {
    let format = MeshFormat::from_path(path).ok_or_else(|| {
        HarnessError::InvalidDataset(format!("{}: unsupported mesh format", path.display()))
    })?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_mesh(&bytes, format)
        .map_err(|e| HarnessError::InvalidDataset(format!("{}: {e}", path.display())))
}

/// Label sidecar next to a mesh: `<stem>.labels.txt`.
pub fn labels_path(mesh_path: &Path) -> PathBuf {
    let stem = mesh_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    mesh_path.with_file_name(format!("{stem}.labels.txt"))
}

/// Loads labeled arches. Labels cannot follow decimation, so meshes above
/// `target_faces` are rejected.
pub fn load_labeled_dir(
    dir: &Path,
    num_classes: u32,
    target_faces: usize,
) -> Result<Vec<LabeledArch>, HarnessError> {
    mesh_files(dir)?
        .into_iter()
        .map(|(name, path)| {
            let mesh = read_mesh(&path)?;
            if mesh.face_count() > target_faces {
                return Err(HarnessError::InvalidDataset(format!(
                    "{name}: {} faces exceeds target {target_faces}; labeled meshes must be decimated beforehand",
                    mesh.face_count()
                )));
            }
            let lp = labels_path(&path);
            let bytes = fs::read(&lp).map_err(io_err(&lp))?;
            let labels = FaceLabels::parse(&bytes, num_classes)
                .map_err(|e| HarnessError::InvalidDataset(format!("{name}: {e}")))?;
            let (mesh, _) = normalize(&mesh)?;
            let mut arch = LabeledArch::new(name, mesh, labels, false)?;
            arch.missing_teeth = !arch.absent_teeth().is_empty();
            Ok(arch)
        })
        .collect()
}

/// Loads unlabeled meshes, decimated to `target_faces` and normalized.
pub fn load_unlabeled_dir(
    dir: &Path,
    target_faces: usize,
) -> Result<Vec<(String, TriangleMesh)>, HarnessError> {
    mesh_files(dir)?
        .into_iter()
        .map(|(name, path)| {
            let mut mesh = read_mesh(&path)?;
            if mesh.face_count() > target_faces {
                let d = decimate(&mesh, target_faces)?;
                if !d.reached_target {
                    return Err(HarnessError::InvalidDataset(format!(
                        "{name}: decimation stopped at {} faces above target {target_faces}",
                        d.mesh.face_count()
                    )));
                }
                mesh = d.mesh;
            }
            Ok((name, normalize(&mesh)?.0))
        })
        .collect()
}

/// Loads all pools and clusters the unlabeled meshes.
pub fn load_split(cfg: &RunConfig) -> Result<(DatasetSplit, CacheStats), HarnessError> {
    let labeled = load_labeled_dir(&cfg.data.labeled, cfg.num_classes, cfg.target_faces)?;
    let test = match &cfg.data.test {
        Some(d) => load_labeled_dir(d, cfg.num_classes, cfg.target_faces)?,
        None => Vec::new(),
    };
    let raw = match &cfg.data.unlabeled {
        Some(d) => load_unlabeled_dir(d, cfg.target_faces)?,
        None => Vec::new(),
    };
    let meshes: Vec<TriangleMesh> = raw.iter().map(|(_, m)| m.clone()).collect();
    let (components, stats) = prepare_unlabeled(&meshes, &cfg.spectral, cfg.cache_dir.as_deref())?;
    let unlabeled = raw
        .into_iter()
        .zip(components)
        .map(|((name, mesh), components)| UnlabeledArch {
            name,
            mesh,
            components,
        })
        .collect();
    Ok((DatasetSplit::new(labeled, unlabeled, test)?, stats))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub train: TrainOutput,
    pub report: Option<EvalReport>,
    pub cache: CacheStats,
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(&path, contents).map_err(|source| HarnessError::Io { path, source })
}

impl RunConfig {
    /// Loads data, trains, evaluates on the test pool when present and
    /// writes `config.toml`, `checkpoint.json`, `losses.csv`, `epochs.csv`
    /// and, with a test pool, `report.csv` and `report.txt` to `out_dir`.
    pub fn run(&self) -> Result<RunOutput, HarnessError> {
        self.train.validate()?;
        fs::create_dir_all(&self.out_dir).map_err(io_err(&self.out_dir))?;
        write(self.out_dir.join("config.toml"), self.to_toml())?;
        let (split, cache) = load_split(self)?;
        info!(
            "{} labeled, {} unlabeled, {} test arches; cluster cache {} hits, {} misses",
            split.labeled.len(),
            split.unlabeled.len(),
            split.test.len(),
            cache.hits,
            cache.misses
        );
        let out = train(&split, &self.train)?;
        let ckpt = Checkpoint::new(out.params.clone(), out.optim.clone());
        write(self.out_dir.join("checkpoint.json"), ckpt.to_json())?;
        write(self.out_dir.join("losses.csv"), out.losses_csv())?;
        write(self.out_dir.join("epochs.csv"), out.epoch_csv())?;
        let report = if split.test.is_empty() {
            None
        } else {
            let r = evaluate(&out.params, &split.test)?;
            write(self.out_dir.join("report.csv"), r.to_csv())?;
            write(self.out_dir.join("report.txt"), r.table())?;
            Some(r)
        };
        Ok(RunOutput {
            train: out,
            report,
            cache,
        })
    }
}

/// Writes `labeled/`, `unlabeled/` and `test/` under `dir`: one OBJ per
/// arch, plus a label sidecar for labeled and test arches.
pub fn write_benchmark(b: &Benchmark, dir: &Path) -> Result<(), HarnessError> {
    for (sub, pool, with_labels) in [
        ("labeled", &b.labeled, true),
        ("unlabeled", &b.unlabeled, false),
        ("test", &b.test, true),
    ] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
        for a in pool {
            write(d.join(format!("{}.obj", a.name)), write_obj(&a.arch.mesh))?;
            if with_labels {
                write(
                    d.join(format!("{}.labels.txt", a.name)),
                    write_labels(a.arch.labels.labels()),
                )?;
            }
        }
    }
    Ok(())
}

/// Distinct colors for ids: hues stepped by the golden angle, with
/// alternating saturation and value.
pub fn palette(id: u32) -> [u8; 3] {
    let h = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = if id % 2 == 0 {
        (0.65, 0.95)
    } else {
        (0.85, 0.75)
    };
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}
