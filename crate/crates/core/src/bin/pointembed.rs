use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pointembed::dataset::{make_toy_dataset, ToyDatasetSpec};
use pointembed::embedder::offsets_csv;
use pointembed::geometry::{farthest_point_sample, normalize_unit_sphere};
use pointembed::io::{read_cloud, write_cloud, CloudMeta};
use pointembed::losses::metrics_csv;
use pointembed::pipeline::{embed_cloud, restore_cloud, DEFAULT_PATCH_SIZE};
use pointembed::training::{evaluate, log_csv, perturb_csv, perturbation_experiment, Trainer};
use pointembed::{Checkpoint, Error, PointCloud, Result, TrainConfig};

/// Embed dense point clouds into self-embedded sparse sets and restore them.
#[derive(Debug, Parser)]
#[command(name = "pointembed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a procedural toy dataset, one XYZ file per shape.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train both networks jointly and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV; printed to stdout when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Encode a dense cloud into its self-embedded sparse set.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the learned offsets as dx,dy,dz rows.
        #[arg(long)]
        export_offsets: Option<PathBuf>,
    },
    /// Restore a dense cloud from a self-embedded sparse set.
    Restore {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dense points per patch for oversized inputs.
        #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
        patch_size: usize,
        /// Restore the whole input at once.
        #[arg(long)]
        no_patch: bool,
    },
    /// Embed, restore and score every cloud in a directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Plain farthest point sampling.
    Sample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Index of the first sample.
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
    /// Compare restorations from Q, from Q with permuted offsets and from Q'.
    Perturb {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Every `.xyz`/`.ply` file in `dir`, sorted by name, keyed by file stem.
fn read_dir_clouds(dir: &Path) -> Result<Vec<(String, PointCloud)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| {
        matches!(
            p.extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase)
                .as_deref(),
            Some("xyz" | "ply")
        )
    });
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .xyz or .ply files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, read_cloud(p)?.0))
        })
        .collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { spec, out, seed } => {
            let mut spec: ToyDatasetSpec = serde_json::from_str(&std::fs::read_to_string(&spec)?)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            std::fs::create_dir_all(&out)?;
            let shapes = make_toy_dataset(&spec)?;
            for s in &shapes {
                write_cloud(
                    &out.join(format!("{}.xyz", s.id)),
                    &s.cloud,
                    &CloudMeta::default(),
                )?;
            }
            println!("wrote {} shapes to {}", shapes.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            log,
            seed,
            threads,
            resume,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            cfg.validate()?;
            let clouds: Vec<PointCloud> = read_dir_clouds(&data)?.into_iter().map(|(_, c)| c).collect();
            let mut trainer = match resume {
                Some(path) => {
                    let mut ckpt = Checkpoint::load(&path)?;
                    ckpt.config.epochs = cfg.epochs;
                    ckpt.config.threads = cfg.threads;
                    Trainer::from_checkpoint(&ckpt)?
                }
                None => Trainer::new(cfg)?,
            };
            let rows = trainer.run(&clouds, |row| {
                eprintln!(
                    "epoch {:>4}  lr {:.2e}  loss {:.6}  shape {:.6}  dist {:.6}  conform {:.6}",
                    row.epoch, row.lr, row.total, row.shape, row.dist, row.conform
                );
            })?;
            trainer.checkpoint().save(&out)?;
            match log {
                Some(path) => std::fs::write(path, log_csv(&rows))?,
                None => print!("{}", log_csv(&rows)),
            }
        }
        Command::Embed {
            ckpt,
            input,
            out,
            export_offsets,
        } => {
            let model = Checkpoint::load(&ckpt)?.model();
            let (cloud, _) = read_cloud(&input)?;
            let e = embed_cloud(&model, &cloud)?;
            write_cloud(&out, &e.q, &e.meta)?;
            if let Some(path) = export_offsets {
                std::fs::write(path, offsets_csv(&e.result.delta_q))?;
            }
        }
        Command::Restore {
            ckpt,
            input,
            out,
            patch_size,
            no_patch,
        } => {
            let model = Checkpoint::load(&ckpt)?.model();
            let (q, meta) = read_cloud(&input)?;
            let patch = (!no_patch).then_some(patch_size);
            let r = restore_cloud(&model, &q, &meta, patch)?;
            write_cloud(&out, &r, &CloudMeta::default())?;
        }
        Command::Eval { ckpt, data, report } => {
            let model = Checkpoint::load(&ckpt)?.model();
            let shapes: Vec<_> = read_dir_clouds(&data)?
                .into_iter()
                .map(|(id, c)| (id, normalize_unit_sphere(&c).0))
                .collect();
            let ev = evaluate(&model, &shapes)?;
            std::fs::write(&report, metrics_csv(&ev.metrics_rows()))?;
            println!(
                "mean emd {:.6}  hd {:.6}  cd {:.6}  |dQ| mean {:.3e} max {:.3e}  cd(Q,Q') {:.3e}",
                ev.mean.emd, ev.mean.hd, ev.mean.cd, ev.mean_dq, ev.max_dq, ev.mean_cd_q_qprime
            );
        }
        Command::Sample { input, n, out, start } => {
            let (cloud, _) = read_cloud(&input)?;
            let idx = farthest_point_sample(&cloud, n, start)?;
            write_cloud(&out, &cloud.select(&idx), &CloudMeta::default())?;
        }
        Command::Perturb {
            ckpt,
            input,
            seed,
            report,
        } => {
            let model = Checkpoint::load(&ckpt)?.model();
            let (cloud, _) = read_cloud(&input)?;
            let (cloud, _) = normalize_unit_sphere(&cloud);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let id = input.file_stem().unwrap_or_default().to_string_lossy();
            let row = perturbation_experiment(&model, &id, &cloud, &mut rng)?;
            std::fs::write(&report, perturb_csv(std::slice::from_ref(&row)))?;
            println!(
                "cd(Q) {:.6}  cd(perturbed) {:.6}  cd(Q') {:.6}",
                row.cd_q, row.cd_perturbed, row.cd_q_prime
            );
        }
    }
    Ok(())
}
