//! `lamp`: patch selection, layout graphs, training, evaluation and scoring.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lamp_core::harness::{self, PipelineConfig};
use lamp_core::imaging::load_image;
use lamp_core::layout::{build_attribute_graph, load_detections, vectorize_graph, AttributeGraph, LayoutVector};
use lamp_core::net::{self, ModelConfig, ModelParams, Stage, TrainConfig};
use lamp_core::{Error, ErrorKind};
use log::info;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "lamp", version, about = "Layout-aware multi-patch photo aesthetics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Choose the patch set for one image and write it as JSON.
    SelectPatches {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the attribute graph and layout vector from detections.
    BuildGraph {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a manifest and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = StageArg::MpOnly)]
        stage: StageArg,
        /// Starting checkpoint; required for the fused stage.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score every manifest image and print accuracy and F-measure as JSON.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Count unreadable images instead of aborting.
        #[arg(long)]
        skip_errors: bool,
    },
    /// Print the high-quality probability of one image as JSON.
    Score {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the saliency map as a grayscale PNG.
        #[arg(long)]
        dump_saliency: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    MpOnly,
    Fused,
    /// Multi-patch-only training followed by fused fine-tuning.
    Both,
}

/// Contents of a `--config` JSON file. Every section is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    pipeline: PipelineConfig,
    model: ModelConfig,
    train: TrainConfig,
}

#[derive(Debug)]
struct Failure {
    kind: ErrorKind,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { kind: e.kind(), msg: e.to_string() }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { kind: ErrorKind::Io, msg: format!("{}: {e}", path.display()) }
}

fn lift<T, E: Into<Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::from(e.into()))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure { kind: ErrorKind::Usage, msg: format!("config {}: {e}", path.display()) })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("output serializes"));
}

#[derive(Serialize)]
struct PatchOut {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    saliency: f64,
}

#[derive(Serialize)]
struct PatchesFile<'a> {
    image: &'a Path,
    window: u32,
    members: Vec<PatchOut>,
    indices: &'a [usize],
    objective: f64,
    solver: lamp_core::Solver,
}

#[derive(Serialize)]
struct GraphFile<'a> {
    image: &'a Path,
    width: u32,
    height: u32,
    #[serde(flatten)]
    graph: &'a AttributeGraph,
    vector: &'a LayoutVector,
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::SelectPatches { image, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let img = lift(load_image(&image))?;
            let (_, set) = harness::select_patches(&img, &cfg.pipeline)?;
            let members = set
                .members
                .iter()
                .map(|c| PatchOut { x: c.rect.x, y: c.rect.y, w: c.rect.w, h: c.rect.h, saliency: c.saliency })
                .collect();
            let file = PatchesFile {
                image: &image,
                window: cfg.pipeline.selector.window,
                members,
                indices: &set.indices,
                objective: set.objective,
                solver: set.solver,
            };
            write_json(&out, &file)
        }
        Command::BuildGraph { image, dets, out } => {
            let img = lift(load_image(&image))?;
            let dets = lift(load_detections(&dets))?;
            let graph = lift(build_attribute_graph(&dets, img.dims()))?;
            let vector = vectorize_graph(&graph);
            let file = GraphFile { image: &image, width: img.width(), height: img.height(), graph: &graph, vector: &vector };
            write_json(&out, &file)
        }
        Command::Train { manifest, out, stage, init, config } => {
            let cfg = load_config(config.as_deref())?;
            let init = init.map(|p| lift(net::load_checkpoint(&p, Some(&cfg.model)))).transpose()?;
            let entries = lift(harness::load_manifest(&manifest))?;
            info!("loading {} images", entries.len());
            let data = harness::load_examples(&entries, &cfg.pipeline, cfg.model.extractor.input_side)?;
            let params = match stage {
                StageArg::MpOnly => lift(net::train(&data, &cfg.model, &cfg.train, Stage::MpOnly, init.as_ref()))?.params,
                StageArg::Fused => lift(net::train(&data, &cfg.model, &cfg.train, Stage::Fused, init.as_ref()))?.params,
                StageArg::Both => {
                    let first = lift(net::train(&data, &cfg.model, &cfg.train, Stage::MpOnly, init.as_ref()))?;
                    lift(net::train(&data, &cfg.model, &cfg.train, Stage::Fused, Some(&first.params)))?.params
                }
            };
            lift(net::save_checkpoint(&params, &out))?;
            info!("wrote {}", out.display());
            Ok(())
        }
        Command::Evaluate { manifest, checkpoint, config, skip_errors } => {
            let cfg = load_config(config.as_deref())?;
            let params = lift(net::load_checkpoint(&checkpoint, None))?;
            let entries = lift(harness::load_manifest(&manifest))?;
            let report = harness::evaluate(&params, &entries, &cfg.pipeline, skip_errors)?;
            print_json(&report);
            Ok(())
        }
        Command::Score { image, dets, checkpoint, config, dump_saliency } => {
            let cfg = load_config(config.as_deref())?;
            let params: ModelParams = lift(net::load_checkpoint(&checkpoint, None))?;
            let img = lift(load_image(&image))?;
            let dets = lift(load_detections(&dets))?;
            let prep = harness::prepare(&img, &dets, &cfg.pipeline, params.config.extractor.input_side)?;
            if let Some(path) = dump_saliency {
                lift(prep.saliency.save_png(&path))?;
            }
            let score = lift(net::forward(&prep.patches, &prep.layout, &params))?;
            if !score.is_finite() {
                return Err(Failure { kind: ErrorKind::Numeric, msg: format!("score is {score}") });
            }
            print_json(&serde_json::json!({ "score": score }));
            Ok(())
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Io => 2,
        ErrorKind::Numeric => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
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
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(exit_code(f.kind))
        }
    }
}
