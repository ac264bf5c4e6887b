//! `lion` — command-line entry point for the sparse-voxel linear-RNN
//! backbone.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, unreadable input paths),
//! 2 contract violation (malformed file content, invariant breach, NaN).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lion_core::config::RunConfig;
use lion_core::error::CoreError;
use lion_core::formats;
use lion_core::harness::{self, Model};
use lion_core::linalg::Mat;
use lion_core::linear_rnn::{scan_forward, LinearRnnParams, OperatorKind};
use lion_core::params;
use lion_core::voxelgen::bev_response_grid;
use lion_core::voxelgrid::voxelize;
use lion_core::windowing::{partition, sort_key, Axis};

#[derive(Parser)]
#[command(name = "lion", version, about = "Sparse-voxel linear group RNN backbone")]
struct Cli {
    /// Cap internal parallelism at this many threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its point cloud.
    GenScene(GenSceneArgs),
    /// Voxelize a point-cloud file and write the voxel dump.
    Voxelize(VoxelizeArgs),
    /// Dump the window partition table for a point cloud.
    PartitionDump(PartitionDumpArgs),
    /// Run the backbone over a point cloud and write the output features.
    Forward(ForwardArgs),
    /// Export per-block BEV response heatmaps (PGM image + text matrix).
    Heatmap(HeatmapArgs),
    /// Train on synthetic scenes and write a metrics trace.
    Train(TrainArgs),
    /// Check analytic gradients against finite differences.
    GradCheck(GradCheckArgs),
    /// Measure scan wall-times over a range of sequence lengths.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the run configuration file.
    #[arg(long, default_value = "default.cfg")]
    config: PathBuf,
    /// Seed override (falls back to LION_SEED, then the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Operator override: mamba | retnet | rwkv.
    #[arg(long)]
    operator: Option<String>,
}

#[derive(Args)]
struct GenSceneArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Number of objects to place.
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VoxelizeArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PartitionDumpArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    input: PathBuf,
    /// Block whose window shape and group size to use (1-based).
    #[arg(long, default_value_t = 1)]
    block: usize,
    /// Partition axis: x | y.
    #[arg(long, default_value = "x")]
    axis: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ForwardArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Load parameters from a checkpoint instead of seeded init.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    input: PathBuf,
    /// Directory for blockN.pgm / blockN.txt outputs.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    steps: Option<usize>,
    /// Train the identity-operator baseline instead.
    #[arg(long)]
    identity: bool,
    /// Metrics trace output (line-delimited: step, loss, recall).
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    save_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[command(flatten)]
    cfg: ConfigArg,
}

#[derive(Args)]
struct BenchArgs {
    /// Operator: mamba | retnet | rwkv.
    #[arg(long)]
    op: String,
    /// Comma-separated sequence lengths.
    #[arg(long, default_value = "1024,2048,4096")]
    t: String,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    state: usize,
    #[arg(long)]
    seed: Option<u64>,
}

enum CliError {
    Usage(String),
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("{e}");
            std::process::exit(1);
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("--threads must be >= 1");
            std::process::exit(1);
        }
        // Ignore the error if a pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let result = match cli.command {
        Command::GenScene(a) => gen_scene(a),
        Command::Voxelize(a) => cmd_voxelize(a),
        Command::PartitionDump(a) => partition_dump(a),
        Command::Forward(a) => forward(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Train(a) => train(a),
        Command::GradCheck(a) => grad_check(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(&arg.config)
        .map_err(|e| CliError::Usage(format!("--config: cannot read {:?}: {e}", arg.config)))?;
    let mut cfg = RunConfig::parse_file(&text)?;
    if let Some(op) = &arg.operator {
        cfg.operator = OperatorKind::parse(op)?;
    }
    cfg.seed = resolve_seed(arg.seed, cfg.seed)?;
    Ok(cfg)
}

fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("LION_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::Usage(format!("LION_SEED: not an integer: {v}"))),
        Err(_) => Ok(config_seed),
    }
}

fn open_input(path: &Path, flag: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("{flag}: cannot read {path:?}: {e}")))
}

fn create_output(path: &Path, flag: &str) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("{flag}: cannot create {path:?}: {e}")))
}

fn gen_scene(a: GenSceneArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.cfg)?;
    let objects = a.objects.unwrap_or(cfg.objects);
    let scene = harness::make_scene(cfg.seed, objects, &cfg.geom);
    let mut out = create_output(&a.out, "--out")?;
    formats::write_pointcloud(&mut out, &scene.cloud)?;
    out.flush().map_err(CoreError::Io)?;
    println!(
        "wrote {:?}: {} points, {} objects (seed {})",
        a.out,
        scene.cloud.points.len(),
        scene.boxes.len(),
        cfg.seed
    );
    Ok(())
}

fn cmd_voxelize(a: VoxelizeArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.cfg)?;
    let pc = formats::read_pointcloud(&mut open_input(&a.input, "--input")?)?;
    let vs = voxelize(&pc, &cfg.geom, cfg.init_dim)?;
    let mut out = create_output(&a.out, "--out")?;
    formats::write_voxeldump(&mut out, &vs)?;
    out.flush().map_err(CoreError::Io)?;
    println!("wrote {:?}: L={} C={}", a.out, vs.len(), vs.dim());
    Ok(())
}

fn partition_dump(a: PartitionDumpArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.cfg)?;
    if a.block == 0 || a.block > cfg.blocks.len() {
        return Err(CliError::Usage(format!(
            "--block: {} outside 1..={}",
            a.block,
            cfg.blocks.len()
        )));
    }
    let axis = match a.axis.as_str() {
        "x" => Axis::XMajor,
        "y" => Axis::YMajor,
        other => return Err(CliError::Usage(format!("--axis: expected x|y, got {other}"))),
    };
    let pc = formats::read_pointcloud(&mut open_input(&a.input, "--input")?)?;
    let vs = voxelize(&pc, &cfg.geom, cfg.init_dim)?;
    let settings = cfg.blocks[a.block - 1];
    let wp = partition(&vs, &settings.window, settings.group_size, axis)?;

    let mut table = String::new();
    table.push_str("slot\tgroup\tvoxel\tcx\tcy\tcz\twx\twy\twz\tpad\n");
    for slot in 0..wp.padded_len() {
        let voxel = wp.slot_voxel(slot);
        let c = vs.coord(voxel);
        let (w, _) = settings.window.split(c);
        let _ = sort_key(c, &settings.window, axis);
        table.push_str(&format!(
            "{slot}\t{}\t{voxel}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            slot / settings.group_size,
            c[0],
            c[1],
            c[2],
            w[0],
            w[1],
            w[2],
            if wp.pad_mask[slot] { 1 } else { 0 },
        ));
    }
    match &a.out {
        Some(path) => {
            let mut f = create_output(path, "--out")?;
            f.write_all(table.as_bytes()).map_err(CoreError::Io)?;
            f.flush().map_err(CoreError::Io)?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn build_model(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<Model, CliError> {
    let mut model = Model::init(cfg, cfg.seed, false);
    if let Some(path) = checkpoint {
        let mut r = open_input(path, "--checkpoint")?;
        params::read_checkpoint(&mut r, &mut model)?;
    }
    Ok(model)
}

fn forward(a: ForwardArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.cfg)?;
    let model = build_model(&cfg, &a.checkpoint)?;
    let pc = formats::read_pointcloud(&mut open_input(&a.input, "--input")?)?;
    let out_vs = model.backbone.forward(&pc)?;
    let mut out = create_output(&a.out, "--out")?;
    formats::write_voxeldump(&mut out, &out_vs)?;
    out.flush().map_err(CoreError::Io)?;
    println!("wrote {:?}: L={} C={}", a.out, out_vs.len(), out_vs.dim());
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.cfg)?;
    let model = build_model(&cfg, &a.checkpoint)?;
    let pc = formats::read_pointcloud(&mut open_input(&a.input, "--input")?)?;
    let vs = voxelize(&pc, &cfg.geom, cfg.init_dim)?;
    let (_, traces) = model.backbone.forward_voxels_traced(&vs)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Usage(format!("--out-dir: cannot create {:?}: {e}", a.out_dir)))?;
    for (i, (block_vs, resp)) in traces.iter().enumerate() {
        let grid = bev_response_grid(block_vs, resp, &cfg.geom);
        let pgm_path = a.out_dir.join(format!("block{}.pgm", i + 1));
        let txt_path = a.out_dir.join(format!("block{}.txt", i + 1));
        let mut pgm = create_output(&pgm_path, "--out-dir")?;
        formats::write_pgm(&mut pgm, &grid)?;
        pgm.flush().map_err(CoreError::Io)?;
        let mut txt = create_output(&txt_path, "--out-dir")?;
        formats::write_text_matrix(&mut txt, &grid)?;
        txt.flush().map_err(CoreError::Io)?;
        println!("wrote {:?} and {:?}", pgm_path, txt_path);
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    let outcome = harness::train(&cfg, a.identity)?;

    let mut out = create_output(&a.metrics, "--metrics")?;
    writeln!(out, "# step\tloss\trecall").map_err(CoreError::Io)?;
    for r in &outcome.records {
        writeln!(out, "{}\t{:.12e}\t{:.6}", r.step, r.loss, r.recall).map_err(CoreError::Io)?;
    }
    out.flush().map_err(CoreError::Io)?;

    println!(
        "steps {}: loss {:.6} -> {:.6}, recall {:.3} -> {:.3}",
        outcome.records.len(),
        outcome.initial_loss,
        outcome.final_loss,
        outcome.initial_recall,
        outcome.final_recall
    );

    if let Some(path) = &a.save_checkpoint {
        let mut out = create_output(path, "--save-checkpoint")?;
        params::write_checkpoint(&mut out, &outcome.model)?;
        out.flush().map_err(CoreError::Io)?;
        println!("saved checkpoint to {path:?}");
    }
    Ok(())
}

fn grad_check(a: GradCheckArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.cfg)?;
    let report = harness::grad_check(&cfg, cfg.seed)?;
    println!("gradient check on {} voxels (step {:.0e}):", report.voxel_count, harness::gradcheck::FD_STEP);
    for b in &report.blocks {
        println!("  {:<40} {:.3e}", b.name, b.rel_err);
    }
    println!("max rel err: {:.3e}", report.max_rel_err);
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let kind = OperatorKind::parse(&a.op)?;
    let seed = resolve_seed(a.seed, 0)?;
    let lengths: Vec<usize> = a
        .t
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--t: not an integer: {s}")))
        })
        .collect::<Result<_, _>>()?;
    if lengths.is_empty() {
        return Err(CliError::Usage("--t: need at least one length".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = LinearRnnParams::init(kind, a.dim, a.state, &mut rng);
    println!("op {} dim {} state {}", kind.name(), a.dim, a.state);
    println!("{:>8} {:>12} {:>12} {:>10}", "T", "seconds", "ns/elem", "x-linear");
    let mut prev: Option<(usize, f64)> = None;
    for &t in &lengths {
        let seq = Mat::from_fn(t, a.dim, |r, c| {
            (((r * 31 + c * 7 + seed as usize) % 1000) as f64 / 500.0) - 1.0
        });
        // Warm up, then take the fastest of five runs.
        for _ in 0..2 {
            let _ = scan_forward(&seq, &p)?;
        }
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let start = Instant::now();
            let out = scan_forward(&seq, &p)?;
            let secs = start.elapsed().as_secs_f64();
            std::hint::black_box(&out);
            best = best.min(secs);
        }
        let per_elem = best / t as f64 * 1e9;
        let ratio = match prev {
            Some((t0, s0)) => (best / s0) / (t as f64 / t0 as f64),
            None => 1.0,
        };
        println!("{t:>8} {best:>12.6} {per_elem:>12.1} {ratio:>10.3}");
        prev = Some((t, best));
    }
    Ok(())
}
