//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 when work fails at run time, 2 for usage
//! errors (bad flags, missing inputs, invalid settings). Failures also print
//! one JSON object on standard error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use numpro_core::design::grid_search;
use numpro_core::overlay::{
    NumberingMode, OverlayConfig, Position, Rgb, SamplingMode, SamplingPlan, SamplingRatio,
    DEFAULT_CANVAS_SIZE,
};
use numpro_core::parse::{parse_moment, parse_saliency};
use numpro_core::prompt::Task;
use serde_json::json;

use crate::client::{self, BatchOptions, Decoding, EndpointConfig, HttpTransport, InferenceJob, ResponseCache};
use crate::config::{self, pick, EndpointFile, RunConfig};
use crate::dataset::{self, BuildOptions, InstructionRecord, VideoSource};
use crate::decode::DecodeHook;
use crate::eval::{self, MetricReport, ParseTally, PredictionRow};
use crate::frames;
use crate::jsonl;
use crate::provider::ProviderConfig;
use crate::retry::RetryPolicy;
use crate::search::{self, CandidateAxes, ProbeImages};

#[derive(Debug, Parser)]
#[command(name = "numpro", version, about = "Numbered-frame prompting toolkit for video temporal grounding")]
pub struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Square canvas side frames are resized to.
    #[arg(long, global = true)]
    pub canvas: Option<u32>,
    /// Seed for random frame sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// Worker threads for parallel steps; 0 uses every core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OverlayArgs {
    /// Font size in pixels.
    #[arg(long)]
    pub size: Option<u32>,
    /// Color name, #rrggbb or r,g,b.
    #[arg(long)]
    pub color: Option<String>,
    /// top_left, top_right, bottom_left, bottom_right or center.
    #[arg(long)]
    pub position: Option<String>,
    /// Gap in pixels between the label and the nearest edges.
    #[arg(long)]
    pub margin: Option<u32>,
    /// frame (frame index) or timestamp (MM:SS).
    #[arg(long)]
    pub mode: Option<String>,
    /// Fraction of frames to label, in (0, 1].
    #[arg(long)]
    pub ratio: Option<f64>,
    /// all, uniform or random.
    #[arg(long)]
    pub sampling: Option<String>,
    /// Shell command extracting frames from a container, with {input},
    /// {fps} and {out_dir} placeholders.
    #[arg(long)]
    pub decode_cmd: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw frame numbers onto a directory of frames.
    Annotate {
        /// Directory of frame_NNNNNN images, a directory of such
        /// directories, or a video file when --decode-cmd is given.
        frames_dir: PathBuf,
        #[command(flatten)]
        overlay: OverlayArgs,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score overlay designs by embedding similarity.
    DesignSearch {
        /// JSON Lines of {size, color, position} or a TOML file of axes;
        /// defaults to 4 sizes x 4 colors x 5 positions.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// JSON Lines of {image_id, caption, true_number?}.
        #[arg(long)]
        probes: Option<PathBuf>,
        /// Directory holding the probe images.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Provider TOML.
        #[arg(long)]
        provider: Option<PathBuf>,
        /// Score table CSV; the Pareto front goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the first probe rendered with each candidate here.
        #[arg(long)]
        export_renders: Option<PathBuf>,
    },
    /// Build the instruction manifest and annotated frame tree.
    BuildDataset {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        frames_root: Option<PathBuf>,
        /// Containers to decode when a video has no frame directory.
        #[arg(long)]
        videos_dir: Option<PathBuf>,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overlay: OverlayArgs,
    },
    /// Query a chat-completions endpoint for every manifest record.
    Infer {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Endpoint TOML with url, model, api_key_env and [decoding].
        #[arg(long)]
        endpoint: Option<PathBuf>,
        /// moment or highlight.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        max_in_flight: Option<usize>,
        /// Response cache directory.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Predictions JSON Lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-job transcripts.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        max_tokens: Option<u32>,
        #[arg(long)]
        max_attempts: Option<u32>,
        #[arg(long)]
        base_delay_ms: Option<u64>,
        #[arg(long)]
        max_payload_bytes: Option<usize>,
    },
    /// Moment retrieval metrics: R@{0.3,0.5,0.7} and mIoU.
    EvalMoment {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Frame rate for predictions that carry none.
        #[arg(long)]
        fps: Option<f64>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Highlight detection metrics: mAP and HIT@1.
    EvalHighlight {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Clips with ground-truth saliency at or above this are relevant.
        #[arg(long)]
        threshold: Option<f64>,
        /// Clip length in seconds.
        #[arg(long)]
        clip_len: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Most common predicted intervals.
    AnalyzeDistribution {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        /// CSV of start,end,count,share.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse one answer and print the outcome as JSON.
    Parse {
        /// Answer text; `-` reads standard input.
        text: String,
        /// Frames in the video (moment) or clips (highlight).
        #[arg(long)]
        n_frames: Option<usize>,
        #[arg(long)]
        fps: Option<f64>,
        /// moment or highlight.
        #[arg(long)]
        task: Option<String>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Runtime(e) => ("runtime", format!("{e:#}")),
        };
        json!({"status": "error", "kind": kind, "exit_code": self.exit_code(), "message": message})
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args`, runs the command and returns the process exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            let message = match e.kind() {
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => "a subcommand is required".to_string(),
                _ => {
                    let rendered = e.to_string();
                    let head: Vec<&str> = rendered.lines().take_while(|l| !l.trim().is_empty()).map(str::trim).collect();
                    head.join(" ").trim_start_matches("error: ").to_string()
                }
            };
            report_error(&usage(message));
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            e.exit_code()
        }
    }
}

fn report_error(e: &CliError) {
    let stderr = io::stderr();
    let mut lock = stderr.lock();
    let _ = writeln!(lock, "{}", e.to_json());
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| usage(format!("--{flag} is required (flag or config file)")))
}

fn existing(path: PathBuf, what: &str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn check_fps(fps: f64) -> CliResult<f64> {
    if fps.is_finite() && fps > 0.0 {
        Ok(fps)
    } else {
        Err(usage(format!("fps must be positive, got {fps}")))
    }
}

fn parse_task(s: &str) -> CliResult<Task> {
    match s.trim().to_ascii_lowercase().as_str() {
        "moment" => Ok(Task::Moment),
        "highlight" => Ok(Task::Highlight),
        other => Err(usage(format!("unknown task {other:?}; expected moment or highlight"))),
    }
}

fn init_logging(level: &str) -> CliResult {
    let filter: log::LevelFilter = level.parse().map_err(|_| usage(format!("unknown log level {level:?}")))?;
    // tests may initialize twice in one process
    let _ = env_logger::Builder::new().filter_level(filter).format_timestamp(None).try_init();
    Ok(())
}

fn init_threads(jobs: usize) {
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
}

/// Resolved overlay and sampling settings.
struct OverlayResolved {
    config: OverlayConfig,
    plan: SamplingPlan,
    decode: Option<DecodeHook>,
    echo: config::OverlaySection,
}

fn resolve_overlay(flags: &OverlayArgs, file: &config::OverlaySection, seed: u64) -> CliResult<OverlayResolved> {
    let d = OverlayConfig::default();
    let size = pick(flags.size, file.size, d.font_size_px);
    let color_s = pick(flags.color.clone(), file.color.clone(), d.color.to_string());
    let position_s = pick(flags.position.clone(), file.position.clone(), d.position.as_str().to_owned());
    let margin = pick(flags.margin, file.margin, d.margin_px);
    let mode_s = pick(flags.mode.clone(), file.mode.clone(), "frame".to_owned());
    let ratio = pick(flags.ratio, file.ratio, 1.0);
    let ratio = SamplingRatio::new(ratio).map_err(usage)?;
    let default_sampling = if ratio.get() < 1.0 { "uniform" } else { "all" };
    let sampling_s = pick(flags.sampling.clone(), file.sampling.clone(), default_sampling.to_owned());
    let decode_cmd = flags.decode_cmd.clone().or(file.decode_cmd.clone());

    let color: Rgb = color_s.parse().map_err(usage)?;
    let position: Position = position_s.parse().map_err(usage)?;
    let numbering_mode: NumberingMode = mode_s.parse().map_err(usage)?;
    let config = OverlayConfig {
        font_size_px: size,
        color,
        position,
        margin_px: margin,
        numbering_mode,
    };
    config.validate().map_err(usage)?;
    let mode = match sampling_s.trim().to_ascii_lowercase().as_str() {
        "all" => SamplingMode::All,
        "uniform" => SamplingMode::Uniform,
        "random" => SamplingMode::Random,
        other => return Err(usage(format!("unknown sampling {other:?}; expected all, uniform or random"))),
    };
    if mode == SamplingMode::All && ratio.get() < 1.0 {
        return Err(usage("--sampling all labels every frame; use uniform or random with --ratio below 1"));
    }
    let plan = SamplingPlan { mode, ratio, seed };
    let decode = decode_cmd.clone().map(DecodeHook::new).transpose().map_err(usage)?;
    Ok(OverlayResolved {
        config,
        plan,
        decode,
        echo: config::OverlaySection {
            size: Some(size),
            color: Some(color.to_string()),
            position: Some(position.as_str().to_owned()),
            margin: Some(margin),
            mode: Some(mode_s),
            ratio: Some(ratio.get()),
            sampling: Some(sampling_s),
            decode_cmd,
        },
    })
}

/// Global settings after precedence is applied.
struct Globals {
    file: RunConfig,
    canvas: u32,
    seed: u64,
    log_level: String,
    jobs: usize,
    out_root: PathBuf,
}

impl Globals {
    /// The resolved config carrying the global values, for echoing.
    fn echo(&self) -> RunConfig {
        RunConfig {
            canvas: Some(self.canvas),
            seed: Some(self.seed),
            log_level: Some(self.log_level.clone()),
            jobs: Some(self.jobs),
            out: Some(self.out_root.clone()),
            ..Default::default()
        }
    }

    fn fps(&self, flag: Option<f64>) -> CliResult<f64> {
        check_fps(pick(flag, self.file.fps, 1.0))
    }
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> CliResult {
    let path = cfg
        .echo_into(dir)
        .with_context(|| format!("writing resolved config into {}", dir.display()))?;
    log::debug!("resolved config written to {}", path.display());
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn execute(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(path) => RunConfig::load(&existing(path.clone(), "config file")?).map_err(usage)?,
        None => RunConfig::default(),
    };
    let g = Globals {
        canvas: pick(cli.canvas, file.canvas, DEFAULT_CANVAS_SIZE),
        seed: pick(cli.seed, file.seed, 0),
        log_level: pick(cli.log_level.clone(), file.log_level.clone(), "warn".to_owned()),
        jobs: pick(cli.jobs, file.jobs, 0),
        out_root: file.out.clone().unwrap_or_else(|| PathBuf::from("numpro_out")),
        file,
    };
    if g.canvas == 0 {
        return Err(usage("--canvas must be positive"));
    }
    init_logging(&g.log_level)?;
    init_threads(g.jobs);

    match cli.command {
        Command::Annotate {
            frames_dir,
            overlay,
            fps,
            out,
        } => cmd_annotate(&g, frames_dir, &overlay, fps, out),
        Command::DesignSearch {
            candidates,
            probes,
            images,
            provider,
            out,
            export_renders,
        } => cmd_design_search(&g, candidates, probes, images, provider, out, export_renders),
        Command::BuildDataset {
            annotations,
            frames_root,
            videos_dir,
            fps,
            out,
            overlay,
        } => cmd_build_dataset(&g, annotations, frames_root, videos_dir, fps, out, &overlay),
        Command::Infer {
            manifest,
            endpoint,
            task,
            max_in_flight,
            cache,
            out,
            transcripts,
            temperature,
            max_tokens,
            max_attempts,
            base_delay_ms,
            max_payload_bytes,
        } => {
            let f = &g.file.infer;
            let flags = InferFlags {
                manifest: manifest.or(f.manifest.clone()),
                endpoint: endpoint.or(f.endpoint.clone()),
                task: task.or(f.task.clone()),
                max_in_flight: max_in_flight.or(f.max_in_flight),
                cache: cache.or(f.cache.clone()),
                out,
                transcripts: transcripts.or(f.transcripts.clone()),
                temperature: temperature.or(f.temperature),
                max_tokens: max_tokens.or(f.max_tokens),
                max_attempts: max_attempts.or(f.max_attempts),
                base_delay_ms: base_delay_ms.or(f.base_delay_ms),
                max_payload_bytes: max_payload_bytes.or(f.max_payload_bytes),
            };
            cmd_infer(&g, flags)
        }
        Command::EvalMoment { preds, gt, fps, out } => cmd_eval_moment(&g, preds, gt, fps, out),
        Command::EvalHighlight {
            preds,
            gt,
            threshold,
            clip_len,
            out,
        } => cmd_eval_highlight(&g, preds, gt, threshold, clip_len, out),
        Command::AnalyzeDistribution { preds, top_k, out } => cmd_distribution(&g, preds, top_k, out),
        Command::Parse {
            text,
            n_frames,
            fps,
            task,
        } => cmd_parse(&g, text, n_frames, fps, task),
    }
}

fn has_frames(dir: &Path) -> bool {
    frames::list_frames(dir).is_ok()
}

fn cmd_annotate(g: &Globals, input: PathBuf, flags: &OverlayArgs, fps: Option<f64>, out: Option<PathBuf>) -> CliResult {
    let ov = resolve_overlay(flags, &g.file.overlay, g.seed)?;
    let fps = g.fps(fps)?;
    let input = existing(input, "input")?;
    let out = out.unwrap_or_else(|| g.out_root.join("annotated"));

    // (source directory, destination directory) pairs
    let mut jobs: Vec<(PathBuf, PathBuf)> = Vec::new();
    if input.is_file() {
        let hook = ov
            .decode
            .as_ref()
            .ok_or_else(|| usage(format!("{} is a file; pass --decode-cmd to extract its frames", input.display())))?;
        let decoded = out.join(".decoded");
        hook.run(&input, fps, &decoded).map_err(runtime)?;
        jobs.push((decoded, out.clone()));
    } else if has_frames(&input) {
        jobs.push((input.clone(), out.clone()));
    } else {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(&input)
            .with_context(|| format!("reading {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && has_frames(p))
            .collect();
        subdirs.sort();
        if subdirs.is_empty() {
            return Err(usage(format!("{} holds no frame_NNNNNN images", input.display())));
        }
        for dir in subdirs {
            let name = dir.file_name().expect("read_dir entries have names").to_owned();
            jobs.push((dir, out.join(name)));
        }
    }

    let mut summary = Vec::new();
    for (src, dst) in &jobs {
        let done = frames::annotate_dir(src, dst, &ov.plan, &ov.config, fps, g.canvas)
            .with_context(|| format!("annotating {}", src.display()))?;
        summary.push(json!({
            "input": src,
            "output": dst,
            "frames": done.frames.len(),
            "annotated": done.annotations.len(),
            "copied": done.copied,
        }));
    }
    if input.is_file() {
        let _ = fs::remove_dir_all(out.join(".decoded"));
    }
    let mut echo = g.echo();
    echo.fps = Some(fps);
    echo.overlay = ov.echo;
    echo_config(&echo, &out)?;
    println!("{}", json!({"status": "ok", "command": "annotate", "directories": summary}));
    Ok(())
}

fn cmd_design_search(
    g: &Globals,
    candidates: Option<PathBuf>,
    probes: Option<PathBuf>,
    images: Option<PathBuf>,
    provider: Option<PathBuf>,
    out: Option<PathBuf>,
    export: Option<PathBuf>,
) -> CliResult {
    let f = &g.file.design_search;
    let candidates = candidates.or(f.candidates.clone()).map(|p| existing(p, "candidates file")).transpose()?;
    let probes = existing(require(probes.or(f.probes.clone()), "probes")?, "probes file")?;
    let images = existing(require(images.or(f.images.clone()), "images")?, "images directory")?;
    let provider_path = existing(require(provider.or(f.provider.clone()), "provider")?, "provider config")?;
    let export = export.or(f.export_renders.clone());
    let out = out.unwrap_or_else(|| g.out_root.join("design_scores.csv"));

    let configs = match &candidates {
        Some(path) => search::load_candidates(path).map_err(runtime)?,
        None => CandidateAxes::standard().configs().map_err(|e| runtime(anyhow::anyhow!(e)))?,
    };
    let probe_set = search::load_probes(&probes).map_err(runtime)?;
    let provider_cfg = ProviderConfig::load(&provider_path).map_err(usage)?;
    let mut provider = provider_cfg.build().map_err(runtime)?;
    let images = ProbeImages::load(&images, &probe_set, g.canvas).map_err(runtime)?;
    log::info!("scoring {} candidates on {} probes", configs.len(), probe_set.len());

    if let Some(dir) = &export {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, c) in configs.iter().enumerate() {
            let img = images.render(&probe_set[0], c).map_err(runtime)?;
            let name = format!("{i:03}_{}_{}_{}.png", c.font_size_px, c.color, c.position.as_str());
            frames::save(&dir.join(name.replace('#', "")), &img).map_err(runtime)?;
        }
    }

    let result = grid_search(&configs, &probe_set, &mut provider, |p, c| images.render(p, c));
    let (ranked, failure) = match result {
        Ok(r) => (r, None),
        Err(numpro_core::design::SearchError::Partial { ranked, failures }) => {
            let names: Vec<String> = failures.iter().map(|(i, cause)| format!("candidate {i}: {cause}")).collect();
            (ranked, Some(names))
        }
        Err(e) => return Err(runtime(anyhow::anyhow!("{e}"))),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let pareto = search::write_scores(&out, &ranked).with_context(|| format!("writing {}", out.display()))?;
    let mut echo = g.echo();
    echo.design_search = config::DesignSearchSection {
        candidates,
        probes: Some(probes),
        images: None,
        provider: Some(provider_path),
        export_renders: export,
    };
    echo_config(&echo, &parent_dir(&out))?;

    println!("{:>4}  {:>4}  {:<8} {:<13} {:>8} {:>8} {:>8}", "rank", "size", "color", "position", "number", "caption", "combined");
    for (k, r) in ranked.iter().take(10).enumerate() {
        let c = &r.scored.config;
        println!(
            "{:>4}  {:>4}  {:<8} {:<13} {:>8.4} {:>8.4} {:>8.4}",
            k + 1,
            c.font_size_px,
            c.color.to_string(),
            c.position.as_str(),
            r.scored.number_accuracy,
            r.scored.caption_accuracy,
            r.scored.combined
        );
    }
    println!(
        "{}",
        json!({"status": if failure.is_some() { "partial" } else { "ok" }, "command": "design-search",
               "scored": ranked.len(), "candidates": configs.len(), "scores": out, "pareto": pareto})
    );
    match failure {
        None => Ok(()),
        Some(names) => Err(runtime(anyhow::anyhow!("{} candidate(s) unscored: {}", names.len(), names.join("; ")))),
    }
}

fn cmd_build_dataset(
    g: &Globals,
    annotations: Option<PathBuf>,
    frames_root: Option<PathBuf>,
    videos_dir: Option<PathBuf>,
    fps: Option<f64>,
    out: Option<PathBuf>,
    flags: &OverlayArgs,
) -> CliResult {
    let f = &g.file.build_dataset;
    let annotations = existing(require(annotations.or(f.annotations.clone()), "annotations")?, "annotations file")?;
    let frames_root = existing(require(frames_root.or(f.frames_root.clone()), "frames-root")?, "frames root")?;
    let videos_dir = videos_dir.or(f.videos_dir.clone()).map(|p| existing(p, "videos directory")).transpose()?;
    let ov = resolve_overlay(flags, &g.file.overlay, g.seed)?;
    let fps = g.fps(fps)?;
    let out = out.unwrap_or_else(|| g.out_root.clone());
    let decode = match (videos_dir.clone(), ov.decode.clone()) {
        (Some(videos_dir), Some(hook)) => Some(VideoSource { videos_dir, hook }),
        (Some(_), None) => return Err(usage("--videos-dir needs --decode-cmd")),
        _ => None,
    };
    let opts = BuildOptions {
        config: ov.config,
        plan: ov.plan,
        fps,
        canvas: g.canvas,
        decode,
    };
    let summary = dataset::build_dataset(&annotations, &frames_root, &out, &opts).map_err(runtime)?;
    let mut echo = g.echo();
    echo.fps = Some(fps);
    echo.overlay = ov.echo;
    echo.build_dataset = config::BuildDatasetSection {
        annotations: Some(annotations),
        frames_root: Some(frames_root),
        videos_dir,
    };
    echo_config(&echo, &out)?;
    let mut report = serde_json::to_value(&summary).map_err(runtime)?;
    report["status"] = json!("ok");
    report["command"] = json!("build-dataset");
    println!("{report}");
    Ok(())
}

struct InferFlags {
    manifest: Option<PathBuf>,
    endpoint: Option<PathBuf>,
    task: Option<String>,
    max_in_flight: Option<usize>,
    cache: Option<PathBuf>,
    out: Option<PathBuf>,
    transcripts: Option<PathBuf>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    max_attempts: Option<u32>,
    base_delay_ms: Option<u64>,
    max_payload_bytes: Option<usize>,
}

fn cmd_infer(g: &Globals, f: InferFlags) -> CliResult {
    let manifest = existing(require(f.manifest, "manifest")?, "manifest")?;
    let endpoint_path = existing(require(f.endpoint, "endpoint")?, "endpoint config")?;
    let endpoint_file = EndpointFile::load(&endpoint_path).map_err(usage)?;
    let task_s = f.task.unwrap_or_else(|| "moment".into());
    let task = parse_task(&task_s)?;
    let max_in_flight = f.max_in_flight.unwrap_or(4);
    if max_in_flight == 0 {
        return Err(usage("--max-in-flight must be at least 1"));
    }
    let base = endpoint_file.decoding.unwrap_or_default();
    let decoding = Decoding {
        temperature: f.temperature.unwrap_or(base.temperature),
        max_tokens: f.max_tokens.unwrap_or(base.max_tokens),
    };
    if !(decoding.temperature.is_finite() && decoding.temperature >= 0.0) {
        return Err(usage("--temperature must be >= 0"));
    }
    let defaults = RetryPolicy::default();
    let retry = RetryPolicy {
        max_attempts: f.max_attempts.unwrap_or(defaults.max_attempts).max(1),
        base_delay_ms: f.base_delay_ms.unwrap_or(defaults.base_delay_ms),
        max_delay_ms: defaults.max_delay_ms,
    };
    let out = f.out.unwrap_or_else(|| g.out_root.join("predictions.jsonl"));
    let cache_dir = f.cache.clone().unwrap_or_else(|| g.out_root.join("cache"));
    let endpoint = EndpointConfig {
        url: endpoint_file.url.clone(),
        model: endpoint_file.model.clone(),
        api_key_env: endpoint_file.api_key_env.clone(),
        timeout_s: endpoint_file.timeout_s.unwrap_or(120),
    };

    let base_dir = parent_dir(&manifest);
    let records: Vec<InstructionRecord> = jsonl::read(&manifest)
        .map_err(runtime)?
        .into_iter()
        .map(|l| l.value)
        .collect();
    let jobs: Vec<InferenceJob> = records
        .iter()
        .map(|r| InferenceJob {
            id: r.id.clone(),
            frames: r.frame_paths.iter().map(|p| base_dir.join(p)).collect(),
            task,
            query: r.query.clone(),
            endpoint: endpoint.clone(),
            decoding,
        })
        .collect();
    let options = BatchOptions {
        max_in_flight,
        retry,
        max_payload_bytes: f.max_payload_bytes.unwrap_or(BatchOptions::default().max_payload_bytes),
        transcripts: f.transcripts.clone(),
    };
    let transport = HttpTransport::new(Duration::from_secs(endpoint.timeout_s));
    let cache = ResponseCache::new(&cache_dir);
    let results = client::run_batch(&jobs, &transport, &cache, &options).map_err(usage)?;

    let mut failed = Vec::new();
    let mut cached = 0;
    let rows: Vec<PredictionRow> = results
        .iter()
        .zip(&records)
        .map(|(res, rec)| {
            let (raw_text, error) = match &res.outcome {
                Ok(r) => {
                    cached += r.cached as usize;
                    (Some(r.raw_text.clone()), None)
                }
                Err(e) => {
                    failed.push(format!("{}: {e}", res.id));
                    (None, Some(e.to_string()))
                }
            };
            PredictionRow {
                id: res.id.clone(),
                raw_text,
                n_frames: Some(rec.frame_paths.len()),
                fps: Some(rec.fps),
                pred_saliency: None,
                error,
            }
        })
        .collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    jsonl::write(&out, &rows).with_context(|| format!("writing {}", out.display()))?;
    let mut echo = g.echo();
    echo.infer = config::InferSection {
        manifest: Some(manifest),
        endpoint: Some(endpoint_path),
        task: Some(task_s),
        max_in_flight: Some(max_in_flight),
        cache: Some(cache_dir),
        transcripts: f.transcripts,
        temperature: Some(decoding.temperature),
        max_tokens: Some(decoding.max_tokens),
        max_attempts: Some(retry.max_attempts),
        base_delay_ms: Some(retry.base_delay_ms),
        max_payload_bytes: Some(options.max_payload_bytes),
    };
    echo_config(&echo, &parent_dir(&out))?;
    println!(
        "{}",
        json!({"status": if failed.is_empty() { "ok" } else { "partial" }, "command": "infer",
               "jobs": jobs.len(), "cached": cached, "failed": failed.len(), "predictions": out})
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(runtime(anyhow::anyhow!("{} job(s) failed: {}", failed.len(), failed.join("; "))))
    }
}

fn emit_report(report: &MetricReport, tally: &ParseTally, out: Option<PathBuf>, echo: RunConfig) -> CliResult {
    print!("{}", report.table(tally));
    let line = serde_json::to_string(report).map_err(runtime)?;
    println!("{line}");
    if let Some(out) = out {
        let dir = parent_dir(&out);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut text = serde_json::to_string_pretty(report).map_err(runtime)?;
        text.push('\n');
        fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
        echo_config(&echo, &dir)?;
    }
    Ok(())
}

fn cmd_eval_moment(g: &Globals, preds: PathBuf, gt: PathBuf, fps: Option<f64>, out: Option<PathBuf>) -> CliResult {
    let preds = existing(preds, "predictions file")?;
    let gt = existing(gt, "ground-truth file")?;
    let fps = g.fps(fps)?;
    let e = eval::eval_moment(&preds, &gt, fps).map_err(runtime)?;
    let mut echo = g.echo();
    echo.fps = Some(fps);
    emit_report(&e.report, &e.tally, out, echo)
}

fn cmd_eval_highlight(
    g: &Globals,
    preds: PathBuf,
    gt: PathBuf,
    threshold: Option<f64>,
    clip_len: Option<f64>,
    out: Option<PathBuf>,
) -> CliResult {
    let preds = existing(preds, "predictions file")?;
    let gt = existing(gt, "ground-truth file")?;
    let threshold = pick(threshold, g.file.eval.threshold, numpro_core::metrics::DEFAULT_RELEVANCE_THRESHOLD);
    let clip_len = pick(clip_len, g.file.eval.clip_len, eval::DEFAULT_CLIP_LEN);
    if !threshold.is_finite() {
        return Err(usage("--threshold must be finite"));
    }
    if !(clip_len.is_finite() && clip_len > 0.0) {
        return Err(usage("--clip-len must be positive"));
    }
    let e = eval::eval_highlight(&preds, &gt, threshold, clip_len).map_err(runtime)?;
    let mut echo = g.echo();
    echo.eval.threshold = Some(threshold);
    echo.eval.clip_len = Some(clip_len);
    emit_report(&e.report, &e.tally, out, echo)
}

fn cmd_distribution(g: &Globals, preds: PathBuf, top_k: Option<usize>, out: Option<PathBuf>) -> CliResult {
    let preds = existing(preds, "predictions file")?;
    let k = pick(top_k, g.file.eval.top_k, 10);
    if k == 0 {
        return Err(usage("--top-k must be at least 1"));
    }
    let d = eval::analyze_distribution(&preds, k).map_err(runtime)?;
    println!("{:>4}  {:>8}  {:>8}  {:>8}  {:>8}", "rank", "start", "end", "count", "share");
    for (i, s) in d.top.iter().enumerate() {
        println!(
            "{:>4}  {:>8}  {:>8}  {:>8}  {:>7.2}%",
            i + 1,
            s.start,
            s.end,
            s.count,
            s.share * 100.0
        );
    }
    if let Some(out) = &out {
        let dir = parent_dir(out);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        eval::write_distribution_csv(out, &d.top).with_context(|| format!("writing {}", out.display()))?;
        let mut echo = g.echo();
        echo.eval.top_k = Some(k);
        echo_config(&echo, &dir)?;
    }
    let top: Vec<_> = d
        .top
        .iter()
        .map(|s| json!({"start": s.start, "end": s.end, "count": s.count, "share": s.share,
                        "share_pct": format!("{:.2}%", s.share * 100.0)}))
        .collect();
    println!(
        "{}",
        json!({"status": "ok", "command": "analyze-distribution", "total": d.total, "malformed": d.malformed, "top": top})
    );
    Ok(())
}

fn cmd_parse(g: &Globals, text: String, n_frames: Option<usize>, fps: Option<f64>, task: Option<String>) -> CliResult {
    let text = if text == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading standard input")?;
        s
    } else {
        text
    };
    let task = parse_task(task.as_deref().unwrap_or("moment"))?;
    let fps = g.fps(fps)?;
    let value = match task {
        Task::Moment => serde_json::to_value(parse_moment(&text, n_frames.unwrap_or(usize::MAX), fps)),
        Task::Highlight => {
            let clips = require(n_frames, "n-frames")?;
            if clips == 0 {
                return Err(usage("--n-frames must be at least 1"));
            }
            serde_json::to_value(parse_saliency(&text, clips))
        }
    }
    .map_err(runtime)?;
    println!("{value}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_precedence_and_validation() {
        let file = config::OverlaySection {
            size: Some(60),
            color: Some("blue".into()),
            ..Default::default()
        };
        let flags = OverlayArgs {
            color: Some("green".into()),
            ratio: Some(0.2),
            ..Default::default()
        };
        let r = resolve_overlay(&flags, &file, 9).unwrap();
        assert_eq!(r.config.font_size_px, 60);
        assert_eq!(r.config.color, Rgb::GREEN);
        assert_eq!(r.plan.mode, SamplingMode::Uniform);
        assert_eq!(r.plan.seed, 9);
        let bad = OverlayArgs {
            sampling: Some("all".into()),
            ratio: Some(0.5),
            ..Default::default()
        };
        assert!(matches!(resolve_overlay(&bad, &Default::default(), 0), Err(CliError::Usage(_))));
        let bad = OverlayArgs {
            size: Some(4),
            ..Default::default()
        };
        assert!(matches!(resolve_overlay(&bad, &Default::default(), 0), Err(CliError::Usage(_))));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["numpro", "annotate"]), 2);
        assert_eq!(run(["numpro", "frobnicate"]), 2);
        assert_eq!(run(["numpro", "annotate", "/definitely/missing"]), 2);
        assert_eq!(run(["numpro", "parse", "From 1 to 2", "--task", "neither"]), 2);
    }

    #[test]
    fn error_json_shape() {
        let e = usage("bad flag");
        assert_eq!(e.to_json()["exit_code"], 2);
        assert_eq!(e.to_json()["kind"], "usage");
        assert_eq!(runtime(anyhow::anyhow!("x")).to_json()["exit_code"], 1);
    }
}
