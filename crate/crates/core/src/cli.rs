//! The `gazetarget` command line.
//!
//! Every relative path is resolved against `--workdir`. Flags can also be set
//! through `GAZETARGET_*` environment variables, listed in `--help`. Exit codes:
//! 0 on success, 1 on a runtime failure, 2 on a usage error.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Deserialize;

use crate::data::convert::{convert, ConvertOptions, SourceFormat};
use crate::data::{generate_dataset, load_annotations, write_annotations, LoadOptions, SceneRef, SceneSample, SynthConfig};
use crate::error::Error;
use crate::harness::{
    predict, prepare_scenes, read_loss_csv, write_loss_csv, Checkpoint, LogRow, TrainConfig, Trainer,
};
use crate::metrics::{evaluate_scenes, oracle_predictions, MetricOptions, ScenePredictions};
use crate::model::{BackbonePreset, ModelConfig};
use crate::postprocess::to_instances;
use crate::viz::instance_panel;

#[derive(Debug, Parser)]
#[command(name = "gazetarget", version, about = "Multi-person gaze target detection")]
pub struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, env = "GAZETARGET_WORKDIR", default_value = ".")]
    pub workdir: PathBuf,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (PNG images plus annotations.jsonl).
    Generate(GenerateArgs),
    /// Train a model on an annotation file.
    Train(TrainArgs),
    /// Score a checkpoint, the ground-truth oracle, or a prediction dump.
    Eval(EvalArgs),
    /// Write per-instance PNG panels: scene, head, gaze and connection maps.
    Visualize(VisualizeArgs),
    /// Convert GazeFollow or VideoAttentionTarget annotations to JSON lines.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long, env = "GAZETARGET_OUT", default_value = "data")]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long, env = "GAZETARGET_SCENES", default_value_t = 100)]
    pub scenes: u64,
    /// Generator seed.
    #[arg(long, env = "GAZETARGET_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Image side length in pixels.
    #[arg(long, env = "GAZETARGET_IMAGE_SIZE", default_value_t = 128)]
    pub image_size: usize,
    /// Maximum people per scene.
    #[arg(long, env = "GAZETARGET_MAX_PEOPLE", default_value_t = 2)]
    pub max_people: usize,
    /// Probability that a person looks out of frame.
    #[arg(long, env = "GAZETARGET_P_OOF", default_value_t = 0.2)]
    pub p_oof: f64,
    /// Minimum target objects per scene.
    #[arg(long, env = "GAZETARGET_MIN_OBJECTS", default_value_t = 1)]
    pub min_objects: usize,
    /// Maximum target objects per scene.
    #[arg(long, env = "GAZETARGET_MAX_OBJECTS", default_value_t = 3)]
    pub max_objects: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Annotation file (JSON lines).
    #[arg(long, env = "GAZETARGET_DATA")]
    pub data: Option<PathBuf>,
    /// TOML file with `[model]` and `[train]` tables; flags override it.
    #[arg(long, env = "GAZETARGET_CONFIG")]
    pub config: Option<PathBuf>,
    /// Model preset: tiny, compact or standard.
    #[arg(long, env = "GAZETARGET_BACKBONE")]
    pub backbone: Option<BackbonePreset>,
    #[arg(long, env = "GAZETARGET_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "GAZETARGET_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Peak learning rate of the one-cycle schedule.
    #[arg(long, env = "GAZETARGET_MAX_LR")]
    pub max_lr: Option<f64>,
    #[arg(long, env = "GAZETARGET_WEIGHT_DECAY")]
    pub weight_decay: Option<f64>,
    #[arg(long, env = "GAZETARGET_SEED")]
    pub seed: Option<u64>,
    /// Stop after this many optimizer steps.
    #[arg(long, env = "GAZETARGET_MAX_STEPS")]
    pub max_steps: Option<usize>,
    /// Drop the connection-map loss term.
    #[arg(long)]
    pub no_connection_loss: bool,
    /// Feed zeros instead of the head feature to the proposal heads.
    #[arg(long)]
    pub no_head_reinjection: bool,
    /// Keep every n-th image of the annotation file.
    #[arg(long, env = "GAZETARGET_STRIDE", default_value_t = 1)]
    pub stride: usize,
    /// Output directory for checkpoints and loss.csv.
    #[arg(long, env = "GAZETARGET_OUT", default_value = "run")]
    pub out: PathBuf,
    /// Continue from a checkpoint; its training config is reused.
    #[arg(long, env = "GAZETARGET_RESUME")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, env = "GAZETARGET_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Annotation file (JSON lines).
    #[arg(long, env = "GAZETARGET_DATA")]
    pub data: Option<PathBuf>,
    /// Score predictions built from the ground truth instead of a model.
    #[arg(long)]
    pub oracle: bool,
    /// Score a file written by --dump-predictions instead of running a model.
    #[arg(long, env = "GAZETARGET_RESCORE")]
    pub rescore: Option<PathBuf>,
    /// Write per-scene predictions as JSON lines.
    #[arg(long, env = "GAZETARGET_DUMP_PREDICTIONS")]
    pub dump_predictions: Option<PathBuf>,
    /// Radius in heatmap pixels of the AUC ground-truth disc.
    #[arg(long, env = "GAZETARGET_AUC_GT_RADIUS", default_value_t = 0)]
    pub auc_gt_radius: usize,
    /// Heatmap side length for --oracle.
    #[arg(long, default_value_t = 64)]
    pub heatmap_size: usize,
    #[arg(long, env = "GAZETARGET_STRIDE", default_value_t = 1)]
    pub stride: usize,
    /// Where to write the JSON report.
    #[arg(long, env = "GAZETARGET_REPORT", default_value = "report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long, env = "GAZETARGET_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "GAZETARGET_DATA")]
    pub data: Option<PathBuf>,
    /// Scene to render (its image path in the annotation file); repeatable.
    /// Defaults to the first scene.
    #[arg(long = "scene-id")]
    pub scene_ids: Vec<String>,
    /// At most this many instances per scene.
    #[arg(long)]
    pub max_instances: Option<usize>,
    /// Side length of each panel in pixels.
    #[arg(long, default_value_t = 256)]
    pub panel_size: u32,
    #[arg(long, env = "GAZETARGET_OUT", default_value = "viz")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Source format: gazefollow or videoattentiontarget.
    #[arg(long)]
    pub format: SourceFormat,
    /// Source annotation files; repeatable.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Directory the source image paths are relative to.
    #[arg(long)]
    pub image_root: PathBuf,
    /// Image size (WxH) used when an image cannot be read.
    #[arg(long, value_parser = parse_size)]
    pub fallback_size: Option<(u32, u32)>,
    /// Keep every n-th frame.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Output annotation file.
    #[arg(long, default_value = "annotations.jsonl")]
    pub out: PathBuf,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    Ok((
        w.parse().map_err(|e| format!("{e}"))?,
        h.parse().map_err(|e| format!("{e}"))?,
    ))
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Ctx {
    workdir: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn existing(&self, p: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
        let p = p.ok_or_else(|| CliError::Usage(format!("--{what} is required")))?;
        let full = self.path(p);
        if !full.exists() {
            return Err(CliError::Usage(format!("{what} {} does not exist", full.display())));
        }
        Ok(full)
    }

    fn out_dir(&self, p: &Path) -> CliResult<PathBuf> {
        let dir = self.path(p);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

fn load_scenes(path: &Path, stride: usize, input_size: usize) -> CliResult<Vec<SceneSample>> {
    let refs = load_annotations(path, LoadOptions { stride, require_images: true })?;
    Ok(refs.iter().map(|r| r.load(input_size)).collect::<crate::Result<_>>()?)
}

fn generate(ctx: &Ctx, a: &GenerateArgs) -> CliResult<()> {
    if a.min_objects > a.max_objects {
        return Err(CliError::Usage("--min-objects exceeds --max-objects".into()));
    }
    let config = SynthConfig {
        image_size: a.image_size,
        max_people: a.max_people,
        p_out_of_frame: a.p_oof,
        object_count_range: (a.min_objects, a.max_objects),
        rng_seed: a.seed,
    };
    if !(0.0..=1.0).contains(&a.p_oof) {
        return Err(CliError::Usage("--p-oof must lie in [0, 1]".into()));
    }
    let out = ctx.out_dir(&a.out)?;
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut refs = Vec::new();
    let (mut instances, mut oof) = (0, 0);
    for i in 0..a.scenes {
        let scene = generate_dataset(&config, i..i + 1).remove(0);
        let rel = format!("images/{}.png", scene.scene_id);
        scene.image.save_png(&out.join(&rel))?;
        instances += scene.annotations.len();
        oof += scene.annotations.iter().filter(|a| a.out_of_frame).count();
        refs.push(SceneRef {
            resolved_path: out.join(&rel),
            image_path: rel,
            annotations: scene.annotations,
        });
    }
    write_annotations(&out.join("annotations.jsonl"), &refs)?;
    println!("scenes {}, instances {instances} ({oof} out of frame)", a.scenes);
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: Option<TrainConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    backbone: Option<BackbonePreset>,
    num_proposals: Option<usize>,
    reinject_head: Option<bool>,
}

fn train_configs(ctx: &Ctx, a: &TrainArgs) -> CliResult<(ModelConfig, TrainConfig)> {
    let file: FileConfig = match &a.config {
        Some(p) => {
            let path = ctx.existing(Some(p), "config")?;
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let preset = a.backbone.or(file.model.backbone).unwrap_or(BackbonePreset::Compact);
    let mut model = ModelConfig::preset(preset);
    if let Some(n) = file.model.num_proposals {
        model.num_proposals = n;
    }
    model.reinject_head = file.model.reinject_head.unwrap_or(true) && !a.no_head_reinjection;

    let mut train = file.train.unwrap_or_default();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { train.$f = v; })* };
    }
    set!(epochs, batch_size, max_lr, weight_decay, seed);
    if a.max_steps.is_some() {
        train.max_steps = a.max_steps;
    }
    if a.no_connection_loss {
        train.loss_weights.connection = 0.0;
    }
    model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((model, train))
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> CliResult<()> {
    let data_path = ctx.existing(a.data.as_ref(), "data")?;
    let (model, config) = train_configs(ctx, a)?;
    let out = ctx.out_dir(&a.out)?;
    let log_path = out.join("loss.csv");

    let (mut trainer, mut rows) = match &a.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(&ctx.existing(Some(p), "resume")?)?;
            ckpt.ensure_model(&model)?;
            let mut rows: Vec<LogRow> = if log_path.exists() { read_loss_csv(&log_path)? } else { Vec::new() };
            rows.retain(|r| r.step <= ckpt.step);
            (Trainer::from_checkpoint(&ckpt)?, rows)
        }
        None => (Trainer::new(model, config)?, Vec::new()),
    };
    let scenes = load_scenes(&data_path, a.stride, trainer.model.config().input_size)?;
    let data = prepare_scenes(&scenes, trainer.model.config())?;
    let total = trainer.total_steps(data.len());
    log::info!(
        "training {} scenes, {} parameters, {} steps",
        data.len(),
        trainer.model.num_parameters(),
        total
    );
    let mut on_row = |r: &LogRow| log::info!("step {}/{total} loss {:.5} lr {:.2e}", r.step, r.total, r.lr);
    let mut on_ckpt = |epoch: usize, c: &Checkpoint| {
        c.save(&out.join(format!("checkpoint-epoch-{epoch:03}.json")))?;
        c.save(&out.join("last.json"))
    };
    let new_rows = trainer.run(&data, None, &mut on_row, &mut on_ckpt);
    if let Ok(r) = &new_rows {
        rows.extend_from_slice(r);
    }
    write_loss_csv(&log_path, &rows)?;
    new_rows?;
    if let Some(last) = rows.last() {
        println!("trained {} steps, final loss {:.5}", last.step, last.total);
    }
    println!("checkpoint {}", out.join("last.json").display());
    Ok(())
}

fn read_dump(path: &Path) -> CliResult<Vec<ScenePredictions>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_dump(path: &Path, scenes: &[ScenePredictions]) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in scenes {
        serde_json::to_writer(&mut w, s).map_err(Error::from)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn eval_cmd(ctx: &Ctx, a: &EvalArgs) -> CliResult<()> {
    let scenes = if let Some(p) = &a.rescore {
        read_dump(&ctx.existing(Some(p), "rescore")?)?
    } else if a.oracle {
        let data = ctx.existing(a.data.as_ref(), "data")?;
        load_annotations(&data, LoadOptions { stride: a.stride, require_images: false })?
            .into_iter()
            .map(|r| {
                let gts = crate::data::group_instances(&r.annotations);
                ScenePredictions {
                    scene_id: r.image_path,
                    predictions: oracle_predictions(&gts, a.heatmap_size),
                    ground_truth: gts,
                }
            })
            .collect()
    } else {
        let ckpt = Checkpoint::load(&ctx.existing(a.checkpoint.as_ref(), "checkpoint")?)?;
        let data = ctx.existing(a.data.as_ref(), "data")?;
        let model = ckpt.to_model()?;
        predict(&model, &load_scenes(&data, a.stride, ckpt.model.input_size)?)?
    };
    if let Some(p) = &a.dump_predictions {
        write_dump(&ctx.path(p), &scenes)?;
    }
    let report = evaluate_scenes(&scenes, &MetricOptions { auc_gt_radius: a.auc_gt_radius })?;
    println!("{report}");
    let path = ctx.path(&a.report);
    fs::write(&path, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn file_stem(scene_id: &str) -> String {
    scene_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn visualize_cmd(ctx: &Ctx, a: &VisualizeArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&ctx.existing(a.checkpoint.as_ref(), "checkpoint")?)?;
    let data = ctx.existing(a.data.as_ref(), "data")?;
    let refs = load_annotations(&data, LoadOptions::default())?;
    let chosen: Vec<&SceneRef> = if a.scene_ids.is_empty() {
        refs.iter().take(1).collect()
    } else {
        a.scene_ids
            .iter()
            .map(|id| {
                refs.iter()
                    .find(|r| &r.image_path == id)
                    .ok_or_else(|| CliError::Usage(format!("unknown scene id {id:?}")))
            })
            .collect::<CliResult<_>>()?
    };
    let model = ckpt.to_model()?;
    let out = ctx.out_dir(&a.out)?;
    let mut written = 0;
    for r in chosen {
        let scene = r.load(ckpt.model.input_size)?;
        let (_, proposals) = model.forward(&scene.image)?;
        let instances = to_instances(&proposals);
        for (k, inst) in instances.iter().take(a.max_instances.unwrap_or(usize::MAX)).enumerate() {
            let path = out.join(format!("{}_{k:02}.png", file_stem(&scene.scene_id)));
            instance_panel(&scene.image, &proposals, inst, a.panel_size)
                .save(&path)
                .map_err(|e| Error::Image { path: path.clone(), source: e })?;
            written += 1;
        }
    }
    println!("wrote {written} panels to {}", out.display());
    Ok(())
}

fn convert_cmd(ctx: &Ctx, a: &ConvertArgs) -> CliResult<()> {
    let inputs = a
        .inputs
        .iter()
        .map(|p| ctx.existing(Some(p), "input"))
        .collect::<CliResult<Vec<_>>>()?;
    let opts = ConvertOptions {
        format: a.format,
        image_root: ctx.path(&a.image_root),
        fallback_size: a.fallback_size,
        stride: a.stride,
    };
    let scenes = convert(&inputs, &opts)?;
    write_annotations(&ctx.path(&a.out), &scenes)?;
    let rows: usize = scenes.iter().map(|s| s.annotations.len()).sum();
    println!("converted {} images, {rows} annotations", scenes.len());
    Ok(())
}

/// Runs a parsed invocation.
pub fn execute(cli: &Cli) -> CliResult<()> {
    let ctx = Ctx {
        workdir: cli.workdir.clone(),
    };
    match &cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Visualize(a) => visualize_cmd(&ctx, a),
        Command::Convert(a) => convert_cmd(&ctx, a),
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            let name = match &cli.command {
                Command::Generate(_) => "generate",
                Command::Train(_) => "train",
                Command::Eval(_) => "eval",
                Command::Visualize(_) => "visualize",
                Command::Convert(_) => "convert",
            };
            let mut cmd = Cli::command();
            let usage = cmd
                .find_subcommand_mut(name)
                .map(|c| c.render_usage().to_string())
                .unwrap_or_default();
            eprintln!("error: {msg}\n\n{usage}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
