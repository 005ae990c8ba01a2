//! Command-line interface for the MBD toolkit: melt generation, dataset
//! generation, training, evaluation, prediction, Hessian profiles, and a
//! throughput benchmark.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mbdnet::dataset::{generate_dataset, read_dataset, write_dataset};
use mbdnet::eval::{
    format_metric_report, format_profile, hessian_profile_mbd, hessian_profile_pw,
    hessian_profile_surrogate, metric_report,
};
use mbdnet::geometry::{
    extract_cluster, generate_synthetic_melt, read_xyz, write_xyz, Cluster, MeltSpec,
    PeriodicCell, PolymerKind, SpeciesTable,
};
use mbdnet::mbd::{Damping, DispersionParams};
use mbdnet::parallel::par_map;
use mbdnet::surrogate::{
    build_trimmed_graph, load_checkpoint, predict_force, save_checkpoint, ModelConfig, ModelParams,
};
use mbdnet::train::{train, BatchingMode, TrainConfig};
use mbdnet::BOHR_PER_ANGSTROM;

#[derive(Parser)]
#[command(
    name = "mbdnet",
    about = "Many-body dispersion oracle and graph-convolutional force surrogate",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic amorphous polymer melt and write it as extended XYZ.
    GenMelt(GenMeltArgs),
    /// Extract cutoff clusters from a structure and label center forces with the MBD engine.
    GenData(GenDataArgs),
    /// Train the surrogate on a dataset; writes best/final checkpoints and a history log.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a labeled dataset and print the metric report.
    Eval(EvalArgs),
    /// Predict the center-atom MBD force for one cluster (Hartree/Bohr).
    Predict(PredictArgs),
    /// Condensed-Hessian distance profile with a fitted tail decay exponent.
    Hessian(HessianArgs),
    /// Time surrogate inference over a batch of clusters.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct GenMeltArgs {
    /// Polymer kind: pe, pp, or pvc.
    #[arg(long)]
    polymer: String,
    #[arg(long, default_value_t = 8)]
    chains: usize,
    #[arg(long, default_value_t = 20)]
    monomers: usize,
    /// Cubic cell edge in Angstrom.
    #[arg(long, default_value_t = 30.0)]
    cell: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct GenDataArgs {
    /// Extended XYZ structure to draw centers from.
    #[arg(long)]
    structure: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Cluster size (center plus nearest neighbors).
    #[arg(long, default_value_t = 1000)]
    n_cut: usize,
    /// Dispersion parameter file; omitted means the synthetic table.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Range-separation beta for the synthetic table.
    #[arg(long, default_value_t = 2.56)]
    beta: f64,
    /// Label only this many centers, chosen by seed; default is every atom.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; default is one per logical CPU.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for best.ckpt, final.ckpt, and history.log.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 36)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr_initial: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr_final: f64,
    /// Epoch (0-based) at which the learning rate switches to lr_final.
    #[arg(long, default_value_t = 50)]
    lr_switch_epoch: usize,
    #[arg(long, default_value_t = 0.004)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Batch by chemical repeat unit instead of uniformly at random.
    #[arg(long, default_value_t = false)]
    unit_batching: bool,
    #[arg(long, default_value_t = 32)]
    embed_width: usize,
    #[arg(long, default_value_t = 100)]
    n_rbf: usize,
    /// Fully connected prefix size of the trimmed graph.
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Extra forward neighbors per fully connected atom.
    #[arg(long, default_value_t = 50)]
    n_extra: usize,
    /// Force scale applied to targets during training.
    #[arg(long, default_value_t = 1e3)]
    force_scale: f64,
    /// Freeze the radial basis centers and widths.
    #[arg(long, default_value_t = false)]
    rbf_fixed: bool,
    /// Worker threads; default is one per logical CPU.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

/// Cluster input shared by predict and hessian: either a standalone XYZ
/// whose first atom is the center, or a structure plus a center index.
#[derive(clap::Args)]
struct ClusterInput {
    /// Cluster as extended XYZ; the first atom is the center.
    #[arg(long, conflicts_with_all = ["structure", "center"])]
    cluster: Option<PathBuf>,
    /// Structure to extract a cluster from (requires --center).
    #[arg(long, requires = "center")]
    structure: Option<PathBuf>,
    /// Center atom index into --structure.
    #[arg(long)]
    center: Option<usize>,
    /// Cluster size when extracting from --structure.
    #[arg(long, default_value_t = 1000)]
    n_cut: usize,
}

impl ClusterInput {
    fn load(&self) -> Result<(Cluster, SpeciesTable)> {
        match (&self.cluster, &self.structure, self.center) {
            (Some(path), None, None) => read_cluster(path),
            (None, Some(path), Some(center)) => {
                let sys =
                    read_xyz(path).with_context(|| format!("reading {}", path.display()))?;
                let cluster = extract_cluster(&sys, center, self.n_cut)?;
                Ok((cluster, sys.table))
            }
            _ => bail!("give either --cluster, or --structure with --center"),
        }
    }
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: ClusterInput,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HessianEngine {
    Mbd,
    Pw,
    Model,
}

#[derive(clap::Args)]
struct HessianArgs {
    #[command(flatten)]
    input: ClusterInput,
    #[arg(long, value_enum)]
    engine: HessianEngine,
    /// Checkpoint, required for --engine model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dispersion parameter file for mbd/pw; omitted means the synthetic table.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 2.56)]
    beta: f64,
    /// Write the profile here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of random clusters to time.
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenMelt(args) => gen_melt(args),
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Predict(args) => run_predict(args),
        Command::Hessian(args) => run_hessian(args),
        Command::Bench(args) => run_bench(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Pin the global rayon pool size when requested. A no-op without the
/// parallel feature.
fn configure_workers(workers: Option<usize>) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("failed to configure worker pool")?;
    }
    #[cfg(not(feature = "parallel"))]
    if let Some(n) = workers {
        eprintln!("note: built without the parallel feature; --workers {n} ignored");
    }
    Ok(())
}

fn load_dispersion(params: &Option<PathBuf>, beta: f64) -> Result<DispersionParams> {
    match params {
        Some(path) => {
            let p = DispersionParams::from_file(path)
                .with_context(|| format!("reading {}", path.display()))?;
            eprintln!("dispersion params: {} (beta {})", path.display(), p.beta);
            Ok(p)
        }
        None => {
            eprintln!("dispersion params: synthetic table, beta {beta}");
            Ok(DispersionParams::synthetic(beta))
        }
    }
}

/// Read a cluster stored as XYZ: atom 0 is the center and is moved to the
/// origin.
fn read_cluster(path: &Path) -> Result<(Cluster, SpeciesTable)> {
    let sys = read_xyz(path).with_context(|| format!("reading {}", path.display()))?;
    if sys.is_empty() {
        bail!("{}: empty structure", path.display());
    }
    let center = sys.positions[0];
    let positions = sys
        .positions
        .iter()
        .map(|p| [p[0] - center[0], p[1] - center[1], p[2] - center[2]])
        .collect();
    Ok((
        Cluster {
            positions,
            species: sys.species.clone(),
            center_source_index: 0,
        },
        sys.table,
    ))
}

fn gen_melt(args: GenMeltArgs) -> Result<()> {
    let kind = PolymerKind::parse(&args.polymer)?;
    eprintln!(
        "gen-melt: polymer {} chains {} monomers {} cell {} A seed {}",
        args.polymer, args.chains, args.monomers, args.cell, args.seed
    );
    let spec = MeltSpec::new(
        kind,
        args.chains,
        args.monomers,
        PeriodicCell::cubic(args.cell * BOHR_PER_ANGSTROM),
        args.seed,
    );
    let sys = generate_synthetic_melt(&spec)?;
    write_xyz(&sys, &args.out)?;
    eprintln!("wrote {} atoms to {}", sys.len(), args.out.display());
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    configure_workers(args.workers)?;
    let params = load_dispersion(&args.params, args.beta)?;
    let sys = read_xyz(&args.structure)
        .with_context(|| format!("reading {}", args.structure.display()))?;
    eprintln!(
        "gen-data: {} atoms, n_cut {}, sample {}, seed {}",
        sys.len(),
        args.n_cut,
        args.sample.map_or("all".into(), |k| k.to_string()),
        args.seed
    );
    let outcome = generate_dataset(&sys, &params, args.n_cut, args.sample, args.seed)?;
    for (center, reason) in &outcome.skipped {
        eprintln!("skipped center {center}: {reason}");
    }
    write_dataset(&args.out, args.n_cut, &sys.table, &outcome.records)?;
    eprintln!(
        "wrote {} records ({} skipped) to {}",
        outcome.records.len(),
        outcome.skipped.len(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    configure_workers(args.workers)?;
    let (header, records) = read_dataset(&args.data)?;
    let model = ModelConfig {
        embed_width: args.embed_width,
        n_rbf: args.n_rbf,
        p: args.p,
        n_extra: args.n_extra,
        n_cut: header.n_cut,
        rbf_trainable: !args.rbf_fixed,
        proj_hidden: 16,
        force_scale: args.force_scale,
        n_species: header.table.len(),
        ..ModelConfig::reference_default()
    };
    model.validate()?;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr_initial: args.lr_initial,
        lr_final: args.lr_final,
        lr_switch_epoch: args.lr_switch_epoch,
        weight_decay: args.weight_decay,
        force_scale: args.force_scale,
        val_fraction: args.val_fraction,
        seed: args.seed,
        batching_mode: if args.unit_batching {
            BatchingMode::UnitSpecific
        } else {
            BatchingMode::Normal
        },
    };
    eprintln!(
        "train: {} records, n_cut {}, embed {} rbf {} p {} n_extra {}",
        records.len(),
        header.n_cut,
        model.embed_width,
        model.n_rbf,
        model.p,
        model.n_extra
    );
    eprintln!(
        "train: epochs {} batch {} lr {}->{} at {} wd {} val {} seed {} batching {:?}",
        config.epochs,
        config.batch_size,
        config.lr_initial,
        config.lr_final,
        config.lr_switch_epoch,
        config.weight_decay,
        config.val_fraction,
        config.seed,
        config.batching_mode
    );

    std::fs::create_dir_all(&args.out_dir)?;
    let history_path = args.out_dir.join("history.log");
    let mut history = std::fs::File::create(&history_path)?;
    use std::io::Write as _;
    writeln!(history, "# epoch train_loss val_loss lr wall_seconds")?;

    let trimmed = build_trimmed_graph(&model)?;
    let initial = ModelParams::init(&model, args.seed)?;
    let outcome = train(&records, initial, &model, &trimmed, &config, |s| {
        eprintln!(
            "epoch {:4}  train {:.6e}  val {:.6e}  lr {:.1e}  {:.1}s",
            s.epoch, s.train_loss, s.val_loss, s.lr, s.wall_seconds
        );
        let _ = writeln!(
            history,
            "{} {:.12e} {:.12e} {:.6e} {:.3}",
            s.epoch, s.train_loss, s.val_loss, s.lr, s.wall_seconds
        );
    })?;
    if outcome.batching_fallback {
        eprintln!("warning: unit-specific batching fell back to normal batching");
    }
    if let Some(epoch) = outcome.diverged_at {
        eprintln!("warning: training diverged at epoch {epoch}; checkpoints hold the last finite state");
    }
    save_checkpoint(&args.out_dir.join("best.ckpt"), &model, &outcome.best_params)?;
    save_checkpoint(&args.out_dir.join("final.ckpt"), &model, &outcome.final_params)?;
    eprintln!(
        "best validation loss {:.6e}; checkpoints in {}",
        outcome.best_val_loss,
        args.out_dir.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    configure_workers(args.workers)?;
    let (header, records) = read_dataset(&args.data)?;
    let (model, params) = load_checkpoint(&args.model)?;
    if model.n_cut != header.n_cut {
        bail!(
            "model n_cut {} does not match dataset n_cut {}",
            model.n_cut,
            header.n_cut
        );
    }
    let trimmed = build_trimmed_graph(&model)?;
    let predictions: Vec<mbdnet::Result<[f64; 3]>> = par_map(&records, |r| {
        let f = predict_force(&r.cluster, &params, &model, &trimmed)?;
        Ok([
            f[0] / model.force_scale,
            f[1] / model.force_scale,
            f[2] / model.force_scale,
        ])
    });
    let predictions: Vec<[f64; 3]> = predictions.into_iter().collect::<mbdnet::Result<_>>()?;
    let references: Vec<[f64; 3]> = records.iter().map(|r| r.target_force).collect();
    let species: Vec<_> = records
        .iter()
        .map(|r| r.cluster.species[0])
        .collect();
    let report = metric_report(&predictions, &references, &species, &header.table)?;
    print!("{}", format_metric_report(&report));
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let (model, params) = load_checkpoint(&args.model)?;
    let (cluster, _) = args.input.load()?;
    if cluster.len() != model.n_cut {
        bail!(
            "cluster has {} atoms, model expects n_cut {}",
            cluster.len(),
            model.n_cut
        );
    }
    let trimmed = build_trimmed_graph(&model)?;
    let f = predict_force(&cluster, &params, &model, &trimmed)?;
    println!(
        "{:.12e} {:.12e} {:.12e}",
        f[0] / model.force_scale,
        f[1] / model.force_scale,
        f[2] / model.force_scale
    );
    Ok(())
}

fn run_hessian(args: HessianArgs) -> Result<()> {
    let (cluster, table) = args.input.load()?;
    let profile = match args.engine {
        HessianEngine::Mbd => {
            let params = load_dispersion(&args.params, args.beta)?;
            hessian_profile_mbd(&cluster, &table, &params)?
        }
        HessianEngine::Pw => {
            let params = load_dispersion(&args.params, args.beta)?;
            hessian_profile_pw(&cluster, &table, &params, Damping::None)?
        }
        HessianEngine::Model => {
            let path = args
                .model
                .as_ref()
                .context("--engine model requires --model")?;
            let (model, params) = load_checkpoint(path)?;
            if cluster.len() != model.n_cut {
                bail!(
                    "cluster has {} atoms, model expects n_cut {}",
                    cluster.len(),
                    model.n_cut
                );
            }
            let trimmed = build_trimmed_graph(&model)?;
            hessian_profile_surrogate(&cluster, &params, &model, &trimmed)?
        }
    };
    let text = format_profile(&profile);
    match args.out {
        Some(path) => {
            std::fs::write(&path, text)?;
            eprintln!(
                "wrote profile ({} points, tail exponent {:.4}) to {}",
                profile.points.len(),
                profile.tail_exponent,
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    configure_workers(args.workers)?;
    let (model, params) = load_checkpoint(&args.model)?;
    let trimmed = build_trimmed_graph(&model)?;
    let clusters: Vec<Cluster> = (0..args.batch)
        .map(|i| random_cluster(model.n_cut, args.seed.wrapping_add(i as u64)))
        .collect();
    // Warm-up pass so allocation and pool startup stay out of the timing.
    for c in clusters.iter().take(1) {
        predict_force(c, &params, &model, &trimmed)?;
    }
    let start = Instant::now();
    let forces: Vec<mbdnet::Result<[f64; 3]>> =
        par_map(&clusters, |c| predict_force(c, &params, &model, &trimmed));
    let elapsed = start.elapsed().as_secs_f64();
    for f in forces {
        f?;
    }
    let atoms = (args.batch * model.n_cut) as f64;
    println!(
        "bench: {} clusters of {} atoms in {:.3} s ({:.4} ms/atom, {:.1} clusters/s)",
        args.batch,
        model.n_cut,
        elapsed,
        elapsed * 1e3 / atoms,
        args.batch as f64 / elapsed
    );
    Ok(())
}

/// Random well-separated cluster for throughput timing only.
fn random_cluster(n: usize, seed: u64) -> Cluster {
    use mbdnet::geometry::{norm, sub, Species};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = 2.0 * (n as f64).cbrt() * 1.8;
    let mut positions: Vec<[f64; 3]> = vec![[0.0; 3]];
    while positions.len() < n {
        let p = [
            (rng.gen::<f64>() * 2.0 - 1.0) * spread,
            (rng.gen::<f64>() * 2.0 - 1.0) * spread,
            (rng.gen::<f64>() * 2.0 - 1.0) * spread,
        ];
        if positions.iter().all(|q| norm(sub(p, *q)) > 1.8) {
            positions.push(p);
        }
    }
    let species = (0..n).map(|i| Species((i % 2) as u8)).collect();
    Cluster {
        positions,
        species,
        center_source_index: 0,
    }
}
