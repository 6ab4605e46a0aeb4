//! Datasets, synthetic arches, the semi-supervised training loop and
//! evaluation.

mod dataset;
mod eval;
mod run;
mod synth;
mod train;

use thiserror::Error;

use crate::losses::LossError;
use crate::mesh_io::{LabelError, MeshError};
use crate::model::ModelError;
use crate::preprocess::PreprocessError;
use crate::spectral::SpectralError;

pub use dataset::{
    generate_benchmark, mesh_hash, mesh_seed, prepare_unlabeled, Benchmark, BenchmarkArch,
    BenchmarkSpec, CacheStats, DatasetSplit, LabeledArch, UnlabeledArch,
};
pub use eval::{dsc, evaluate, EvalReport, EvalRow};
pub use run::{
    labels_path, load_labeled_dir, load_split, load_unlabeled_dir, palette, write_benchmark,
    DataPaths, RunConfig, RunOutput,
};
pub use synth::{crease_plates, generate_synthetic_arch, ArchSpec, SyntheticArch};
pub use train::{train, EpochLoss, Pool, Schedule, StepRecord, TrainConfig, TrainOutput};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of tags into an independent stream
/// seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |s, &t| splitmix64(s ^ splitmix64(t)))
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Mesh(#[from] MeshError),
    #[error("{0}")]
    Labels(#[from] LabelError),
    #[error("{0}")]
    Preprocess(#[from] PreprocessError),
    #[error("{0}")]
    Spectral(#[from] SpectralError),
    #[error("{0}")]
    Loss(#[from] LossError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("non-finite loss at step {step} (epoch {epoch}, step seed {seed})")]
    NonFiniteLoss {
        step: usize,
        epoch: usize,
        seed: u64,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}
