//! `beltrack` command-line tool.

mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{error, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use beltrack::aggregation::AggregationConfig;
use beltrack::io::{ingest_detections, load_ground_truth, load_tracks, load_verdicts, IngestOptions, InputFormat};
use beltrack::io::{save_detections, save_ground_truth, VerdictRecord};
use beltrack::metrics::MetricsConfig;
use beltrack::pipeline::{evaluate, run_pipeline, InputSource, OutputPaths, PipelineRun, RunSummary};
use beltrack::sim::{generate_scene, scene_statistics, SimConfig};
use beltrack::tracker::TrackerConfig;

use config::Settings;

#[derive(Debug)]
pub enum Failure {
    /// Unreadable or malformed input data. Exit code 1.
    Input(String),
    /// Bad configuration or conflicting arguments. Exit code 2.
    Config(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Config(_) => 2,
        }
    }

    fn context(self, what: impl fmt::Display) -> Self {
        match self {
            Failure::Input(m) => Failure::Input(format!("{what}: {m}")),
            Failure::Config(m) => Failure::Config(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Config(m) => f.write_str(m),
        }
    }
}

impl From<beltrack::Error> for Failure {
    fn from(e: beltrack::Error) -> Self {
        match e {
            beltrack::Error::Config(m) => Failure::Config(m),
            other => Failure::Input(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "beltrack", version, about = "Conveyor-belt fruit tracking with track-level quality grading")]
struct Cli {
    /// TOML config file (defaults to $BELTRACK_CONFIG). Its values override flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Increase logging (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track detection streams and grade every track.
    Track(TrackArgs),
    /// Generate a synthetic conveyor scene, optionally tracking it too.
    Simulate(SimulateArgs),
    /// Score a tracks file against ground truth.
    Evaluate(EvaluateArgs),
    /// Summarize one or more verdict files.
    Report(ReportArgs),
}

#[derive(Args, Serialize, Default)]
struct TrackerFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    high_score_threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    low_score_threshold: Option<f64>,
    /// Largest 1 - IoU accepted when matching high-score detections.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    match_threshold_first: Option<f64>,
    /// Largest 1 - IoU accepted when matching low-score detections.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    match_threshold_second: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    new_track_min_score: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_frames_lost: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_hits_to_activate: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_track_length_report: Option<usize>,
}

#[derive(Args, Serialize, Default)]
struct AggregationFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    num_categories: Option<usize>,
    #[arg(long, value_parser = ["prefer_defect", "lowest_index"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    tie_break: Option<String>,
    #[arg(long, value_parser = ["vote_then_collapse", "collapse_then_vote"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    vote_order: Option<String>,
}

#[derive(Args, Default)]
struct MetricsFlags {
    /// Which frame decides a track in the frame-wise baseline.
    #[arg(long, value_parser = ["last_frame", "first_frame", "random_frame"])]
    frame_decision: Option<String>,
    /// Seed for `--frame-decision random_frame`.
    #[arg(long)]
    frame_seed: Option<u64>,
    /// Count label changes on binary or on category labels.
    #[arg(long, value_parser = ["binary", "category"])]
    stability_labels: Option<String>,
}

#[derive(Serialize)]
struct FrameRule {
    rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct MetricsTable {
    #[serde(skip_serializing_if = "Option::is_none")]
    frame_decision: Option<FrameRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stability_labels: Option<String>,
}

impl MetricsFlags {
    fn table(&self) -> Result<MetricsTable, Failure> {
        let frame_decision = match (&self.frame_decision, self.frame_seed) {
            (None, None) => None,
            (Some(rule), seed) if rule == "random_frame" => Some(FrameRule {
                rule: rule.clone(),
                seed: Some(seed.unwrap_or(0)),
            }),
            (Some(rule), None) => Some(FrameRule {
                rule: rule.clone(),
                seed: None,
            }),
            (None, Some(seed)) => Some(FrameRule {
                rule: "random_frame".into(),
                seed: Some(seed),
            }),
            (Some(rule), Some(_)) => {
                return Err(Failure::Config(format!(
                    "--frame-seed only applies to random_frame, not {rule}"
                )))
            }
        };
        Ok(MetricsTable {
            frame_decision,
            stability_labels: self.stability_labels.clone(),
        })
    }
}

#[derive(Args, Serialize, Default)]
struct InputFlags {
    /// Detection file format.
    #[arg(long, value_parser = ["jsonl", "mot"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    format: Option<String>,
    /// Skip malformed lines with a warning instead of failing.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    skip_malformed: bool,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default)]
struct InputConfig {
    format: InputFormat,
    skip_malformed: bool,
}

#[derive(Args, Serialize, Default)]
struct SimFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_lanes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lane_spacing: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    belt_velocity: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spawn_interval_frames: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spawn_jitter_frames: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    box_size_mean: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    box_size_std: Option<f64>,
    /// Spawn horizon in frames.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_frames: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_objects: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    frame_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    frame_height: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    defect_probability: Option<f64>,
    /// Comma-separated weights of the defect categories.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    defect_category_weights: Vec<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    detection_dropout_prob: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    bbox_jitter_std: Option<f64>,
    /// Expected false positives per frame.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    false_positive_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    score_mean_true: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    score_std_true: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    score_mean_fp: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    score_std_fp: Option<f64>,
    /// Per-frame probability that the category observation is wrong.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    label_flip_prob: Option<f64>,
}

#[derive(Args)]
struct TrackArgs {
    /// Detection files; several files are processed in parallel.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for `<stem>.verdicts.jsonl`, `<stem>.summary.json` and `<stem>.tracks.jsonl`.
    #[arg(short, long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write `<stem>.stream.jsonl` with the running majority per frame.
    #[arg(long)]
    stream: bool,
    #[command(flatten)]
    input: InputFlags,
    #[command(flatten)]
    tracker: TrackerFlags,
    #[command(flatten)]
    aggregation: AggregationFlags,
    #[command(flatten)]
    metrics: MetricsFlags,
}

#[derive(Args)]
struct SimulateArgs {
    /// Directory for `detections.jsonl` and `ground_truth.jsonl`.
    #[arg(short, long, default_value = ".")]
    out_dir: PathBuf,
    /// Track the scene as well and write verdicts, tracks and a summary.
    #[arg(long)]
    track: bool,
    /// With `--track`, also write `stream.jsonl`.
    #[arg(long, requires = "track")]
    stream: bool,
    #[command(flatten)]
    sim: SimFlags,
    #[command(flatten)]
    tracker: TrackerFlags,
    #[command(flatten)]
    aggregation: AggregationFlags,
    #[command(flatten)]
    metrics: MetricsFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Tracks file written by `track` or `simulate --track`.
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Detections to score with average precision.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    input: InputFlags,
    #[command(flatten)]
    aggregation: AggregationFlags,
    #[command(flatten)]
    metrics: MetricsFlags,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    verdicts: Vec<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

struct Resolved {
    input: InputConfig,
    tracker: TrackerConfig,
    aggregation: AggregationConfig,
    metrics: MetricsConfig,
}

fn resolve(
    settings: &mut Settings,
    input: Option<&InputFlags>,
    tracker: Option<&TrackerFlags>,
    aggregation: &AggregationFlags,
    metrics: &MetricsFlags,
) -> Result<Resolved, Failure> {
    if let Some(flags) = input {
        settings.add_flags("input", flags)?;
    }
    if let Some(flags) = tracker {
        settings.add_flags("tracker", flags)?;
    }
    settings.add_flags("aggregation", aggregation)?;
    settings.add_flags("metrics", &metrics.table()?)?;
    let resolved = Resolved {
        input: settings.resolve("input")?,
        tracker: settings.resolve("tracker")?,
        aggregation: settings.resolve("aggregation")?,
        metrics: settings.resolve("metrics")?,
    };
    resolved.tracker.validate()?;
    resolved.aggregation.validate()?;
    Ok(resolved)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn describe(summary: &RunSummary) -> String {
    match (&summary.aggregated, &summary.frame_wise) {
        (Some(a), Some(f)) => format!(
            "{} frames, {} tracks ({} graded); defect ratio {:.3} (frame-wise {:.3}); mean stability {:.3} (frame-wise {:.3})",
            summary.n_frames,
            summary.n_tracks,
            summary.n_tracks_with_predictions,
            a.defect_ratio,
            f.defect_ratio,
            a.mean_stability,
            f.mean_stability
        ),
        _ => format!(
            "{} frames, {} tracks, no category predictions",
            summary.n_frames, summary.n_tracks
        ),
    }
}

fn run_outputs(dir: &Path, prefix: &str, stream: bool) -> OutputPaths {
    OutputPaths {
        verdicts: Some(dir.join(format!("{prefix}verdicts.jsonl"))),
        summary: Some(dir.join(format!("{prefix}summary.json"))),
        tracks: Some(dir.join(format!("{prefix}tracks.jsonl"))),
        stream: stream.then(|| dir.join(format!("{prefix}stream.jsonl"))),
        ..Default::default()
    }
}

fn track(args: &TrackArgs, settings: &mut Settings) -> Result<(), Failure> {
    let cfg = resolve(
        settings,
        Some(&args.input),
        Some(&args.tracker),
        &args.aggregation,
        &args.metrics,
    )?;
    let mut stems = BTreeSet::new();
    for input in &args.inputs {
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !stems.insert(stem.clone()) {
            return Err(Failure::Config(format!(
                "two inputs share the name `{stem}`; their outputs would collide"
            )));
        }
    }
    create_dir(&args.out_dir)?;

    let results: Vec<(PathBuf, Result<RunSummary, Failure>)> = args
        .inputs
        .par_iter()
        .map(|input| {
            let stem = input.file_stem().unwrap_or_default().to_string_lossy();
            let run = PipelineRun {
                input: InputSource::File {
                    path: input.clone(),
                    format: cfg.input.format,
                },
                tracker: cfg.tracker,
                aggregation: cfg.aggregation,
                metrics: cfg.metrics,
                skip_malformed: cfg.input.skip_malformed,
                outputs: run_outputs(&args.out_dir, &format!("{stem}."), args.stream),
            };
            let result = run_pipeline(&run)
                .map(|o| o.summary)
                .map_err(|e| Failure::from(e).context(input.display()));
            (input.clone(), result)
        })
        .collect();

    let mut worst: Option<Failure> = None;
    for (input, result) in results {
        match result {
            Ok(summary) => println!("{}: {}", input.display(), describe(&summary)),
            Err(failure) => {
                if args.inputs.len() > 1 {
                    error!("{failure}");
                }
                if worst.as_ref().is_none_or(|w| failure.code() > w.code()) {
                    worst = Some(failure);
                }
            }
        }
    }
    match worst {
        Some(f) if args.inputs.len() > 1 => Err(f.context("at least one input failed")),
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn simulate(args: &SimulateArgs, settings: &mut Settings) -> Result<(), Failure> {
    settings.add_flags("sim", &args.sim)?;
    if let Some(n) = args.aggregation.num_categories {
        settings.add_flags("sim", &toml::Table::from_iter([("num_categories".to_owned(), toml::Value::from(n as i64))]))?;
    }
    let tracker = args.track.then_some(&args.tracker);
    let cfg = resolve(settings, None, tracker, &args.aggregation, &args.metrics)?;
    let sim: SimConfig = settings.resolve("sim")?;
    create_dir(&args.out_dir)?;

    let detections = args.out_dir.join("detections.jsonl");
    let ground_truth = args.out_dir.join("ground_truth.jsonl");
    if args.track {
        let mut outputs = run_outputs(&args.out_dir, "", args.stream);
        outputs.detections = Some(detections);
        outputs.ground_truth = Some(ground_truth);
        let run = PipelineRun {
            input: InputSource::Simulated(sim),
            tracker: cfg.tracker,
            aggregation: cfg.aggregation,
            metrics: cfg.metrics,
            skip_malformed: false,
            outputs,
        };
        let outcome = run_pipeline(&run)?;
        let gt = outcome.ground_truth.as_ref().expect("simulated input has ground truth");
        print_scene(&scene_statistics(gt));
        println!("{}", describe(&outcome.summary));
    } else {
        let (gt, frames) = generate_scene(&sim)?;
        save_detections(&frames, &detections)?;
        save_ground_truth(&gt, &ground_truth)?;
        print_scene(&scene_statistics(&gt));
        println!("{} frames written to {}", frames.len(), detections.display());
    }
    Ok(())
}

fn print_scene(stats: &beltrack::sim::SceneStatistics) {
    println!(
        "{} objects, {} defect ({:.3}), mean lifetime {:.1} frames",
        stats.object_count, stats.defect_count, stats.defect_fraction, stats.mean_lifetime
    );
}

fn write_json<T: Serialize>(value: &T, output: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    match output {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| io_failure(path, e)),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Input(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}

fn run_evaluate(args: &EvaluateArgs, settings: &mut Settings) -> Result<(), Failure> {
    let cfg = resolve(settings, Some(&args.input), None, &args.aggregation, &args.metrics)?;
    if !(0.0..=1.0).contains(&args.iou_threshold) {
        return Err(Failure::Config(format!("--iou-threshold {} is outside [0, 1]", args.iou_threshold)));
    }
    let c = cfg.aggregation.num_categories;
    let tracks = load_tracks(&args.tracks, c).map_err(|e| Failure::from(e).context(args.tracks.display()))?;
    let gt = load_ground_truth(&args.ground_truth, c).map_err(|e| Failure::from(e).context(args.ground_truth.display()))?;
    let detections = match &args.detections {
        Some(path) => {
            let options = IngestOptions {
                format: cfg.input.format,
                num_categories: c,
                skip_malformed: cfg.input.skip_malformed,
            };
            Some(ingest_detections(path, &options).map_err(|e| Failure::from(e).context(path.display()))?.frames)
        }
        None => None,
    };
    let report = evaluate(
        &tracks,
        &gt,
        detections.as_deref(),
        &cfg.aggregation,
        &cfg.metrics,
        args.iou_threshold,
    )?;
    write_json(&report, args.output.as_deref())
}

#[derive(Debug, Serialize)]
struct VerdictSummary {
    source: String,
    n_tracks: usize,
    n_defect_tracks: usize,
    defect_ratio: Option<f64>,
    mean_stability_frame_wise: Option<f64>,
    mean_track_length: Option<f64>,
    category_counts: Vec<usize>,
}

fn summarize(source: String, records: &[&VerdictRecord]) -> VerdictSummary {
    let n = records.len();
    let n_defect = records.iter().filter(|r| r.binary == "defect").count();
    let width = records.iter().map(|r| r.votes.len().max(r.category + 1)).max().unwrap_or(0);
    let mut category_counts = vec![0; width];
    for r in records {
        category_counts[r.category] += 1;
    }
    let mean = |f: &dyn Fn(&VerdictRecord) -> f64| (n > 0).then(|| records.iter().map(|r| f(r)).sum::<f64>() / n as f64);
    VerdictSummary {
        source,
        n_tracks: n,
        n_defect_tracks: n_defect,
        defect_ratio: (n > 0).then(|| n_defect as f64 / n as f64),
        mean_stability_frame_wise: mean(&|r| r.stability_frame_wise),
        mean_track_length: mean(&|r| r.k as f64),
        category_counts,
    }
}

#[derive(Debug, Serialize)]
struct Report {
    files: Vec<VerdictSummary>,
    combined: VerdictSummary,
}

fn report(args: &ReportArgs) -> Result<(), Failure> {
    let mut all = Vec::new();
    for path in &args.verdicts {
        let records = load_verdicts(path).map_err(|e| Failure::from(e).context(path.display()))?;
        all.push((path.display().to_string(), records));
    }
    let files = all
        .iter()
        .map(|(name, records)| summarize(name.clone(), &records.iter().collect::<Vec<_>>()))
        .collect();
    let combined: Vec<&VerdictRecord> = all.iter().flat_map(|(_, r)| r).collect();
    let report = Report {
        files,
        combined: summarize("combined".into(), &combined),
    };
    write_json(&report, args.output.as_deref())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);

    let result = Settings::new(cli.config.as_deref()).and_then(|mut settings| match &cli.command {
        Command::Track(args) => track(args, &mut settings),
        Command::Simulate(args) => simulate(args, &mut settings),
        Command::Evaluate(args) => run_evaluate(args, &mut settings),
        Command::Report(args) => report(args),
    });
    match result {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            let kind = match failure {
                Failure::Input(_) => "input error",
                Failure::Config(_) => "config error",
            };
            eprintln!("beltrack: {kind}: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
