use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use kpfusion::data::{
    generate_scene, read_kitti_labels, read_kitti_scan, write_kitti_labels, write_ply,
    PlyAttribute, Split,
};
use kpfusion::geometry::{radius_neighbors, PointCloud};
use kpfusion::gradsuite::{run_suite, CaseKind};
use kpfusion::loss::pga_field;
use kpfusion::train::{
    ablation_table, class_names, evaluate, grid_rows, load_network, load_split, remap_table,
    run_ablation, vote_probabilities, AblationGrid, NetworkConfig, Trainer,
};

#[derive(Parser, Debug)]
#[command(
    name = "kpfusion",
    version,
    about = "Point-cloud segmentation with kernel-point convolution and self-attention"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set optimizer.steps=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Random seed (weights, crop sampling and synthetic scenes).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write checkpoint, log and resolved config.
    Train {
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the validation split with voting.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Label one KITTI scan.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Velodyne `.bin` scan.
        #[arg(long)]
        scan: PathBuf,
        /// Output `.label` file (raw ids).
        #[arg(long)]
        out: PathBuf,
        /// Also write a class-coloured PLY.
        #[arg(long)]
        ply: Option<PathBuf>,
    },
    /// Train and evaluate a grid of variants.
    Ablate {
        /// base, components, combine, kernels or theta.
        #[arg(long, default_value = "components")]
        grid: String,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a PLY heat map of boundary scores.
    PgaScore {
        /// Output PLY.
        #[arg(long)]
        out: PathBuf,
        /// Score this scan instead of a synthetic scene (needs --labels).
        #[arg(long, requires = "labels")]
        scan: Option<PathBuf>,
        #[arg(long, requires = "scan")]
        labels: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        /// Number of seeds per case.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Time radius search with and without data parallelism.
    BenchNeighbors {
        #[arg(long, default_value_t = 50_000)]
        points: usize,
        #[arg(long, default_value_t = 0.15)]
        radius: f64,
        #[arg(long, default_value_t = 40)]
        cap: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] kpfusion::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_config() => 2,
            _ => 1,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(g: &GlobalArgs) -> CliResult<NetworkConfig> {
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
        overrides.push(format!("data.scene_seed={seed}"));
    }
    NetworkConfig::load(g.config.as_deref(), &overrides).map_err(|e| match e {
        kpfusion::Error::Io { path, source } => kpfusion::Error::Config(format!(
            "cannot read config {}: {source}",
            path.display()
        )),
        e => e,
    })
    .map_err(CliError::from)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Gradcheck { seeds } => gradcheck(seeds),
        Command::BenchNeighbors {
            points,
            radius,
            cap,
            repeats,
        } => bench_neighbors(points, radius, cap, repeats, cli.global.seed.unwrap_or(0)),
        command => {
            let config = load_config(&cli.global)?;
            match command {
                Command::Train { out } => train(&config, &out),
                Command::Eval { checkpoint } => eval(&config, &checkpoint),
                Command::Predict {
                    checkpoint,
                    scan,
                    out,
                    ply,
                } => predict(&config, &checkpoint, &scan, &out, ply.as_deref()),
                Command::Ablate { grid, out } => ablate(&config, &grid, out.as_deref()),
                Command::PgaScore { out, scan, labels } => {
                    pga_score(&config, &out, scan.as_deref().zip(labels.as_deref()))
                }
                Command::Gradcheck { .. } | Command::BenchNeighbors { .. } => unreachable!(),
            }
        }
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Failed(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text)
        .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn train(config: &NetworkConfig, out: &Path) -> CliResult {
    create_dir(out)?;
    let train_clouds = load_split(config, Split::Train)?;
    let validation = load_split(config, Split::Validation)?;
    write_text(&out.join("config.toml"), &config.to_toml())?;
    let ckpt = out.join("checkpoint.bin");
    let mut trainer = Trainer::new(config.clone())?.with_checkpoint(&ckpt);
    let result = trainer.run(&train_clouds, &validation);
    trainer.log.write(&out.join("train_log.tsv"))?;
    result?;
    let names = class_names(config)?;
    let report = evaluate(
        &trainer.net,
        &validation,
        config.sphere_radius(),
        config.sampling.votes,
    )?;
    print!("{}", report.to_table(&names));
    println!(
        "steps\t{}\tinitial_loss\t{:.5}\tfinal_loss\t{:.5}",
        trainer.steps_done(),
        trainer.log.initial_loss().unwrap_or(f64::NAN),
        trainer.log.tail_loss(1).unwrap_or(f64::NAN),
    );
    println!("checkpoint\t{}", ckpt.display());
    Ok(())
}

fn eval(config: &NetworkConfig, checkpoint: &Path) -> CliResult {
    let net = load_network(config, checkpoint)?;
    let validation = load_split(config, Split::Validation)?;
    let report = evaluate(&net, &validation, config.sphere_radius(), config.sampling.votes)?;
    print!("{}", report.to_table(&class_names(config)?));
    Ok(())
}

fn predict(
    config: &NetworkConfig,
    checkpoint: &Path,
    scan: &Path,
    out: &Path,
    ply: Option<&Path>,
) -> CliResult {
    let net = load_network(config, checkpoint)?;
    let remap = remap_table(&config.data)?;
    let cloud = read_kitti_scan(scan)?;
    let votes = vote_probabilities(&net, &cloud, config.sphere_radius(), config.sampling.votes)?;
    let predicted = votes.predictions();
    let raw = predicted
        .iter()
        .map(|&c| {
            remap.inverse(c).ok_or_else(|| {
                CliError::Failed(format!("class {c} has no raw id in the remap table"))
            })
        })
        .collect::<CliResult<Vec<u32>>>()?;
    write_kitti_labels(out, &raw)?;
    if let Some(p) = ply {
        write_ply(p, &cloud, PlyAttribute::Labels(&predicted))?;
    }
    println!("points\t{}\tcrops\t{}", cloud.len(), votes.n_crops);
    Ok(())
}

fn ablate(config: &NetworkConfig, grid: &str, out: Option<&Path>) -> CliResult {
    let grid: AblationGrid = grid.parse()?;
    let rows = grid_rows(config, grid)?;
    let train_clouds = load_split(config, Split::Train)?;
    let validation = load_split(config, Split::Validation)?;
    let results = run_ablation(&rows, &train_clouds, &validation)?;
    let table = ablation_table(&results, &class_names(config)?);
    print!("{table}");
    if let Some(p) = out {
        write_text(p, &table)?;
    }
    Ok(())
}

fn pga_score(config: &NetworkConfig, out: &Path, scan: Option<(&Path, &Path)>) -> CliResult {
    let cloud: PointCloud = match scan {
        Some((scan, labels)) => {
            let mut cloud = read_kitti_scan(scan)?;
            let read = read_kitti_labels(labels, &remap_table(&config.data)?, Some((scan, cloud.len())))?;
            cloud.labels = Some(read.labels);
            cloud
        }
        None => generate_scene(&config.data.scene.clone().with_seed(config.data.scene_seed))?,
    };
    let pga = &config.pga;
    let field = pga_field(&cloud, pga.k, pga.eta, pga.effective_theta())?;
    let scores: Vec<f64> = field.scores.iter().map(|&s| s as f64).collect();
    write_ply(out, &cloud, PlyAttribute::Scalar(&scores))?;
    let boundary = field.scores.iter().filter(|&&s| s > 0).count();
    let max = field.scores.iter().copied().max().unwrap_or(0);
    println!(
        "points\t{}\tboundary\t{boundary}\tmax_score\t{max}\tk\t{}",
        cloud.len(),
        field.k
    );
    Ok(())
}

fn gradcheck(seeds: u64) -> CliResult {
    let seeds: Vec<u64> = (0..seeds).collect();
    let results = run_suite(&seeds)?;
    let mut worst = [0.0f64; 2];
    println!("case\tkind\tmax_rel_error\ttolerance\tworst_seed\tstatus");
    for r in &results {
        let k = usize::from(r.kind == CaseKind::Composed);
        worst[k] = worst[k].max(r.max_rel_error);
        println!(
            "{}\t{:?}\t{:.3e}\t{:.0e}\t{}\t{}",
            r.name,
            r.kind,
            r.max_rel_error,
            r.kind.tolerance(),
            r.worst_seed,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    println!("max error: op {:.3e}, composed {:.3e}", worst[0], worst[1]);
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn bench_neighbors(points: usize, radius: f64, cap: usize, repeats: usize, seed: u64) -> CliResult {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // Density of a LiDAR crop: about `points` in a 4 m cube.
    let pts: Vec<[f64; 3]> = (0..points)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.0..4.0)))
        .collect();
    let time = |label: &str, sequential: bool| -> CliResult<f64> {
        let mut best = f64::INFINITY;
        let mut pairs = 0;
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            let nb = if sequential {
                kpfusion::par::sequential(|| radius_neighbors(&pts, &pts, radius, cap))?
            } else {
                radius_neighbors(&pts, &pts, radius, cap)?
            };
            best = best.min(t.elapsed().as_secs_f64());
            pairs = nb.n_pairs();
        }
        println!("{label}\t{:.3} ms\t{pairs} pairs", best * 1e3);
        Ok(best)
    };
    let par = time("parallel", false)?;
    let seq = time("sequential", true)?;
    println!(
        "threads\t{}\tspeedup\t{:.2}",
        std::thread::available_parallelism().map_or(1, |n| n.get()),
        seq / par
    );
    Ok(())
}
