use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use parsfm::graphalgo::{extract_wcds, normalized_cut};
use parsfm::io;
use parsfm::merge::merge_all;
use parsfm::pipeline::{
    self, build_tcn, engine_options, evaluate, generate_synthetic, load_dataset, merge_options, run_monolithic, run_on,
    CameraPattern, LoadedDataset, MatchingMode, PipelineConfig, SynthConfig, WORKERS_ENV,
};
use parsfm::sfm::{incremental_reconstruct, SceneData};
use parsfm::{ImageId, Reconstruction};

#[derive(Parser)]
#[command(name = "parsfm", version, about = "Parallel structure from motion over a match-graph skeleton")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic aerial dataset.
    Synth(SynthArgs),
    /// Build the match graph and write its edges.
    Graph(StageArgs),
    /// Extract the skeleton vertex set.
    Wcds(StageArgs),
    /// Partition the match graph.
    Cluster(StageArgs),
    /// Incremental reconstruction of all images or of one subset.
    Reconstruct(ReconstructArgs),
    /// Merge cluster models into a base model.
    Merge(MergeArgs),
    /// Run every stage and write all artifacts to --out.
    Pipeline(PipelineArgs),
    /// Compare a model (or a fresh monolithic run) with the ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 120)]
    images: usize,
    #[arg(long, default_value_t = 4000)]
    points: usize,
    #[arg(long, default_value_t = 0.4)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value = "nadir")]
    pattern: CameraPattern,
    #[arg(long, default_value_t = 0)]
    gcps: usize,
    #[arg(long, default_value_t = 3)]
    controls: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Flags shared by every stage that reads a dataset.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Dataset directory (dataset.txt plus optional matches/truth/gcps).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    r_ew: f64,
    #[arg(long, default_value_t = 0.5)]
    r_vw: f64,
    #[arg(long, default_value_t = 50)]
    min_matches: usize,
    #[arg(long, default_value_t = 1500)]
    index_features: usize,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    #[arg(long, default_value_t = 100)]
    cluster_max_size: usize,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 1.8)]
    merge_threshold_px: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// auto, supplied or retrieval
    #[arg(long, default_value = "auto", value_parser = parse_matching)]
    matching: MatchingMode,
}

fn parse_matching(s: &str) -> Result<MatchingMode, String> {
    match s {
        "auto" => Ok(MatchingMode::Auto),
        "supplied" => Ok(MatchingMode::Supplied),
        "retrieval" => Ok(MatchingMode::Retrieval),
        _ => Err(format!("unknown matching mode {s}")),
    }
}

impl ConfigArgs {
    fn config(&self, output: Option<PathBuf>) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            r_ew: self.r_ew,
            r_vw: self.r_vw,
            min_matches: self.min_matches,
            index_features: self.index_features,
            top_k: self.top_k,
            cluster_max_size: self.cluster_max_size,
            worker_count: self.workers.unwrap_or_else(pipeline::default_worker_count),
            merge_threshold_px: self.merge_threshold_px,
            rng_seed: self.seed,
            matching: self.matching,
            dataset: Some(self.dataset.clone()),
            output,
            ..PipelineConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self) -> Result<LoadedDataset> {
        load_dataset(&self.dataset).with_context(|| format!("loading {}", self.dataset.display()))
    }
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// A WCDS or CLUSTER file restricting the images used.
    #[arg(long)]
    subset: Option<PathBuf>,
    /// Cluster index when --subset holds clusters.
    #[arg(long)]
    cluster: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Model the others are merged into, usually the skeleton.
    #[arg(long)]
    base: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Merge report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Model to score; without it a monolithic run is scored.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn matched_scene(args: &ConfigArgs, data: &LoadedDataset) -> Result<(PipelineConfig, pipeline::Tcn, SceneData)> {
    let cfg = args.config(None)?;
    let tcn = build_tcn(&data.scene, &cfg)?;
    let work = SceneData { matches: tcn.store.clone(), ..data.scene.clone() };
    Ok((cfg, tcn, work))
}

fn read_model(path: &Path, scene: &SceneData) -> Result<Reconstruction> {
    let text = io::read_file(path)?;
    io::read_reconstruction(&text, scene).with_context(|| format!("reading {}", path.display()))
}

fn subset(args: &ReconstructArgs, all: BTreeSet<ImageId>) -> Result<BTreeSet<ImageId>> {
    let Some(path) = &args.subset else { return Ok(all) };
    let text = io::read_file(path)?;
    if text.trim_start().starts_with("WCDS") {
        return Ok(io::read_wcds(&text)?.into_iter().collect());
    }
    let clusters = io::read_clusters(&text)?;
    let Some(k) = args.cluster else { bail!("{} holds clusters; pass --cluster", path.display()) };
    clusters.get(k).cloned().with_context(|| format!("no cluster {k} among {}", clusters.len()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                pattern: a.pattern,
                image_count: a.images,
                point_count: a.points,
                pixel_noise: a.noise,
                outlier_rate: a.outliers,
                gcp_count: a.gcps,
                gcp_controls: a.controls,
                seed: a.seed,
                ..SynthConfig::standard()
            };
            std::fs::create_dir_all(&a.out)?;
            let ds = generate_synthetic(&cfg);
            ds.write(&a.out)?;
            info!("{} images, {} match pairs", ds.scene.metas.len(), ds.scene.matches.len());
        }
        Command::Graph(a) => {
            let data = a.config.load()?;
            let (_, tcn, _) = matched_scene(&a.config, &data)?;
            io::write_file(&a.out, &io::write_graph(&tcn.graph))?;
        }
        Command::Wcds(a) => {
            let data = a.config.load()?;
            let (cfg, tcn, _) = matched_scene(&a.config, &data)?;
            let w = extract_wcds(&tcn.graph, cfg.r_vw)?;
            io::write_file(&a.out, &io::write_wcds(&w.selected_vertices))?;
            info!("{} of {} images selected", w.selected_vertices.len(), tcn.graph.vertex_count());
        }
        Command::Cluster(a) => {
            let data = a.config.load()?;
            let (cfg, tcn, _) = matched_scene(&a.config, &data)?;
            let c = normalized_cut(&tcn.graph, cfg.cluster_max_size)?;
            io::write_file(&a.out, &io::write_clusters(&c))?;
        }
        Command::Reconstruct(a) => {
            let data = a.config.load()?;
            let (cfg, tcn, work) = matched_scene(&a.config, &data)?;
            let images = subset(&a, tcn.graph.vertices().clone())?;
            let r = incremental_reconstruct(&images, &work, &engine_options(&cfg))?;
            io::write_file(&a.out, &io::write_reconstruction(&r.reconstruction))?;
            info!("registered {} of {} images", r.reconstruction.camera_count(), images.len());
        }
        Command::Merge(a) => {
            let data = a.config.load()?;
            let (cfg, tcn, _) = matched_scene(&a.config, &data)?;
            let base = read_model(&a.base, &data.scene)?;
            let models = a.models.iter().map(|p| read_model(p, &data.scene)).collect::<Result<Vec<_>>>()?;
            let (merged, report) = merge_all(base, &models, &tcn.store, &merge_options(&cfg));
            io::write_file(&a.out, &io::write_reconstruction(&merged))?;
            if let Some(p) = &a.report {
                io::write_file(p, &serde_json::to_string_pretty(&report)?)?;
            }
            info!("merged {} steps, dropped {:?}", report.steps.len(), report.dropped);
        }
        Command::Pipeline(a) => {
            std::fs::create_dir_all(&a.out)?;
            let cfg = a.config.config(Some(a.out.clone()))?;
            let data = a.config.load()?;
            let out = run_on(&data.scene, data.truth.as_ref(), &data.gcps, &cfg)?;
            println!("{}", std::fs::read_to_string(a.out.join("report.txt"))?);
            info!("{} of {} images registered", out.metrics.registered_images, out.metrics.total_images);
        }
        Command::Eval(a) => {
            let data = a.config.load()?;
            let Some(truth) = &data.truth else { bail!("{} has no truth.txt", a.config.dataset.display()) };
            let metrics = match &a.model {
                Some(p) => evaluate(&read_model(p, &data.scene)?, truth),
                None => run_monolithic(&data.scene, Some(truth), &a.config.config(None)?)?.metrics,
            };
            println!("{}", metrics.to_json());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
