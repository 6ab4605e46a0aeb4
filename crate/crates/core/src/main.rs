use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use archseg::harness::{
    evaluate, generate_benchmark, load_labeled_dir, palette, write_benchmark, BenchmarkSpec,
    RunConfig,
};
use archseg::mesh_io::{
    export_colored_ply, load_mesh, read_labels, write_labels, write_obj, TriangleMesh,
};
use archseg::model::Checkpoint;
use archseg::preprocess::{decimate, normalize, DEFAULT_TARGET_FACES};
use archseg::spectral::{cluster_mesh, SpectralConfig};

#[derive(Parser)]
#[command(
    name = "archseg",
    version,
    about = "Spectral clustering and semi-supervised segmentation of dental arch meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster mesh faces; writes a component sidecar and a colored PLY.
    Cluster {
        mesh: PathBuf,
        #[arg(long, default_value_t = 60)]
        k: usize,
        #[arg(long, default_value_t = 0.03)]
        delta: f64,
        #[arg(long, default_value_t = 0.15)]
        eta: f64,
        /// Eigenvectors fed to k-means [default: max(2, ceil(k / 4))]
        #[arg(long)]
        embed_dims: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Meshes above this face count are decimated first.
        #[arg(long, default_value_t = DEFAULT_TARGET_FACES)]
        target_faces: usize,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Decimate and normalize a mesh; writes OBJ.
    Preprocess {
        mesh: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TARGET_FACES)]
        target_faces: usize,
        /// Output file [default: <stem>.preprocessed.obj in the current directory]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic benchmark from a TOML spec.
    GenData {
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train from a TOML run config; writes checkpoint, loss curves and report.
    Train { config: PathBuf },
    /// Evaluate a checkpoint on a directory of labeled meshes.
    Eval {
        checkpoint: PathBuf,
        test_dir: PathBuf,
        /// Directory for report.csv and report.txt.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TARGET_FACES)]
        target_faces: usize,
    },
    /// Write a PLY colored by per-face labels or components.
    ExportColored {
        mesh: PathBuf,
        labels: PathBuf,
        /// Output file [default: <stem>.colored.ply in the current directory]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mesh")
        .to_string()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn colors(ids: &[u32]) -> Vec<[u8; 3]> {
    ids.iter().map(|&i| palette(i)).collect()
}

fn decimated(mesh: TriangleMesh, target: usize) -> Result<TriangleMesh> {
    if mesh.face_count() <= target {
        return Ok(mesh);
    }
    let d = decimate(&mesh, target)?;
    if !d.reached_target {
        log::warn!(
            "decimation stopped at {} faces, above target {target}",
            d.mesh.face_count()
        );
    }
    Ok(d.mesh)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cluster {
            mesh,
            k,
            delta,
            eta,
            embed_dims,
            seed,
            target_faces,
            out,
        } => {
            let m = load_mesh(&mesh).context("stage load")?;
            let m = decimated(m, target_faces).context("stage decimate")?;
            let cfg = SpectralConfig {
                k,
                delta,
                eta,
                embed_dims,
                seed,
            };
            let a = cluster_mesh(&m, &cfg).context("stage cluster")?;
            let name = stem(&mesh);
            let (sidecar, ply) = (
                out.join(format!("{name}.components.txt")),
                out.join(format!("{name}.clusters.ply")),
            );
            (|| -> Result<()> {
                fs::create_dir_all(&out)?;
                write(&sidecar, write_labels(&a.component))?;
                write(&ply, export_colored_ply(&m, &colors(&a.component))?)
            })()
            .context("stage write")?;
            println!(
                "{} faces, {k} components -> {}, {}",
                m.face_count(),
                sidecar.display(),
                ply.display()
            );
        }
        Command::Preprocess {
            mesh,
            target_faces,
            out,
        } => {
            let m = load_mesh(&mesh).context("stage load")?;
            let before = m.face_count();
            let m = decimated(m, target_faces).context("stage decimate")?;
            let (m, t) = normalize(&m).context("stage normalize")?;
            let out =
                out.unwrap_or_else(|| PathBuf::from(format!("{}.preprocessed.obj", stem(&mesh))));
            write(&out, write_obj(&m)).context("stage write")?;
            println!(
                "{before} -> {} faces, mean {:?}, scale {} -> {}",
                m.face_count(),
                t.mean,
                t.std,
                out.display()
            );
        }
        Command::GenData { spec, out_dir } => {
            let text = fs::read_to_string(&spec)
                .with_context(|| format!("stage read spec {}", spec.display()))?;
            let s: BenchmarkSpec = toml::from_str(&text)
                .with_context(|| format!("stage parse spec {}", spec.display()))?;
            let b = generate_benchmark(&s).context("stage generate")?;
            (|| -> Result<()> {
                write_benchmark(&b, &out_dir)?;
                write(&out_dir.join("benchmark.toml"), toml::to_string(&s)?)
            })()
            .context("stage write")?;
            println!(
                "{} labeled, {} unlabeled, {} test arches -> {}",
                b.labeled.len(),
                b.unlabeled.len(),
                b.test.len(),
                out_dir.display()
            );
        }
        Command::Train { config } => {
            let cfg = RunConfig::load(&config).context("stage config")?;
            let out = cfg.run().context("stage train")?;
            let last = out.train.epoch_losses().pop();
            if let Some(e) = last {
                println!("final epoch {}: mean loss {}", e.epoch, e.total);
            }
            if let Some(r) = &out.report {
                print!("{}", r.table());
            }
            println!("outputs in {}", cfg.out_dir.display());
        }
        Command::Eval {
            checkpoint,
            test_dir,
            out,
            target_faces,
        } => {
            let text = fs::read_to_string(&checkpoint)
                .with_context(|| format!("stage load checkpoint {}", checkpoint.display()))?;
            let ckpt = Checkpoint::from_json(&text).context("stage load checkpoint")?;
            let classes = ckpt.params.dims.classes as u32;
            let test = load_labeled_dir(&test_dir, classes, target_faces)
                .context("stage load test set")?;
            let report = evaluate(&ckpt.params, &test).context("stage evaluate")?;
            (|| -> Result<()> {
                fs::create_dir_all(&out)?;
                write(&out.join("report.csv"), report.to_csv())?;
                write(&out.join("report.txt"), report.table())
            })()
            .context("stage write")?;
            print!("{}", report.table());
        }
        Command::ExportColored { mesh, labels, out } => {
            let m = load_mesh(&mesh).context("stage load mesh")?;
            let bytes = fs::read(&labels)
                .with_context(|| format!("stage load labels {}", labels.display()))?;
            let ids = read_labels(&bytes)
                .with_context(|| format!("stage load labels {}", labels.display()))?;
            let ply = export_colored_ply(&m, &colors(&ids)).context("stage export")?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.colored.ply", stem(&mesh))));
            write(&out, ply).context("stage write")?;
            println!("{} faces -> {}", m.face_count(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
