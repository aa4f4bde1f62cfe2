//! End-to-end runs: ingest a detection stream, track, buffer per-track
//! predictions, vote, and report in both scoring modes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::aggregation::{majority_vote, AggregationConfig, PredictionBuffer, RunningVote, TrackVerdict};
use crate::error::{Error, Result};
use crate::io::{
    ingest_detections, save_detections, save_ground_truth, save_tracks, save_verdicts, IngestOptions,
    InputFormat, VerdictRecord,
};
use crate::metrics::{
    classification_metrics, count_id_switches, detection_map, frame_wise_decision, match_tracks_to_objects,
    stability_report, track_stability, ClassificationMetrics, FrameDecision, MetricsConfig, StabilityMode, VideoQualityReport,
};
use crate::model::{to_binary, BinaryQuality, FrameDetections, Track, TrackId};
use crate::sim::{generate_scene, SceneGroundTruth, SimConfig};
use crate::tracker::{ByteTracker, TrackerConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    File { path: PathBuf, format: InputFormat },
    Simulated(SimConfig),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputPaths {
    pub verdicts: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub tracks: Option<PathBuf>,
    /// Per-frame running-majority events for live displays.
    pub stream: Option<PathBuf>,
    /// Simulated inputs only: where to save the generated detections.
    pub detections: Option<PathBuf>,
    /// Simulated inputs only: where to save the generated ground truth.
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub input: InputSource,
    pub tracker: TrackerConfig,
    pub aggregation: AggregationConfig,
    pub metrics: MetricsConfig,
    pub skip_malformed: bool,
    pub outputs: OutputPaths,
}

impl PipelineRun {
    pub fn new(input: InputSource) -> Self {
        Self {
            input,
            tracker: TrackerConfig::default(),
            aggregation: AggregationConfig::default(),
            metrics: MetricsConfig::default(),
            skip_malformed: false,
            outputs: OutputPaths::default(),
        }
    }
}

/// Running-majority event emitted whenever a track receives a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub frame: u64,
    pub track_id: TrackId,
    pub category: usize,
    pub binary: BinaryQuality,
    pub votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_frames: usize,
    pub n_tracks: usize,
    pub n_tracks_with_predictions: usize,
    pub tracker: TrackerConfig,
    pub aggregation: AggregationConfig,
    pub metrics: MetricsConfig,
    pub aggregated: Option<VideoQualityReport>,
    pub frame_wise: Option<VideoQualityReport>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub tracks: Vec<Track>,
    pub verdicts: Vec<TrackVerdict>,
    pub records: Vec<VerdictRecord>,
    pub summary: RunSummary,
    pub stream: Vec<StreamEvent>,
    /// Present when the input came from the simulator.
    pub ground_truth: Option<SceneGroundTruth>,
}

impl PipelineOutcome {
    pub fn verdict_for(&self, track_id: TrackId) -> Option<&TrackVerdict> {
        self.verdicts.iter().find(|v| v.track_id == track_id)
    }
}

/// Runs tracking and aggregation over frames sorted by strictly increasing index.
pub fn process_stream(
    frames: &[FrameDetections],
    tracker_config: &TrackerConfig,
    aggregation: &AggregationConfig,
    metrics: &MetricsConfig,
) -> Result<PipelineOutcome> {
    aggregation.validate()?;
    let mut tracker = ByteTracker::new(*tracker_config)?;
    let mut running: BTreeMap<TrackId, RunningVote> = BTreeMap::new();
    let mut stream = Vec::new();

    for frame in frames {
        let output = tracker.step(frame)?;
        for active in &output.active_tracks {
            let det = &frame.detections[active.detection_index];
            if let Some(label) = det.category_observation {
                let vote = running
                    .entry(active.track_id)
                    .or_insert_with(|| RunningVote::new(*aggregation));
                let current = vote.observe(label);
                stream.push(StreamEvent {
                    frame: frame.frame_index,
                    track_id: active.track_id,
                    category: current.index(),
                    binary: to_binary(current),
                    votes: vote.total(),
                });
            }
        }
    }

    let tracks = tracker.finalize();
    let buffers: Vec<PredictionBuffer> = tracks
        .iter()
        .filter(|t| !t.predictions().is_empty())
        .map(|t| t.predictions().clone())
        .collect();
    let without = tracks.len() - buffers.len();
    if without > 0 {
        info!("{without} track(s) carry no category predictions and get no verdict");
    }

    let mut verdicts = Vec::with_capacity(buffers.len());
    let mut records = Vec::with_capacity(buffers.len());
    for buffer in &buffers {
        let verdict = majority_vote(buffer, aggregation)?;
        records.push(VerdictRecord::new(&verdict, track_stability(buffer, metrics)?));
        verdicts.push(verdict);
    }

    let (aggregated, frame_wise) = if buffers.is_empty() {
        (None, None)
    } else {
        (
            Some(stability_report(&buffers, StabilityMode::Aggregated, aggregation, metrics)?),
            Some(stability_report(&buffers, StabilityMode::FrameWise, aggregation, metrics)?),
        )
    };

    let summary = RunSummary {
        n_frames: frames.len(),
        n_tracks: tracks.len(),
        n_tracks_with_predictions: buffers.len(),
        tracker: *tracker_config,
        aggregation: *aggregation,
        metrics: *metrics,
        aggregated,
        frame_wise,
    };
    Ok(PipelineOutcome {
        tracks,
        verdicts,
        records,
        summary,
        stream,
        ground_truth: None,
    })
}

fn write_json_line<T: Serialize, W: Write>(writer: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn save_summary(summary: &RunSummary, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, summary)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn save_stream(events: &[StreamEvent], path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for event in events {
        write_json_line(&mut file, event)?;
    }
    file.flush()?;
    Ok(())
}

/// Loads or generates the input, runs it, and writes every requested output.
pub fn run_pipeline(run: &PipelineRun) -> Result<PipelineOutcome> {
    let (frames, ground_truth) = match &run.input {
        InputSource::File { path, format } => {
            let options = IngestOptions {
                format: *format,
                num_categories: run.aggregation.num_categories,
                skip_malformed: run.skip_malformed,
            };
            let ingested = ingest_detections(path, &options)?;
            if !ingested.skipped.is_empty() {
                warn!("{}: skipped {} malformed line(s)", path.display(), ingested.skipped.len());
            }
            (ingested.frames, None)
        }
        InputSource::Simulated(config) => {
            if config.num_categories != run.aggregation.num_categories {
                return Err(Error::Config(format!(
                    "simulator uses {} categories but aggregation expects {}",
                    config.num_categories, run.aggregation.num_categories
                )));
            }
            let (gt, frames) = generate_scene(config)?;
            if let Some(path) = &run.outputs.detections {
                save_detections(&frames, path)?;
            }
            if let Some(path) = &run.outputs.ground_truth {
                save_ground_truth(&gt, path)?;
            }
            (frames, Some(gt))
        }
    };

    let mut outcome = process_stream(&frames, &run.tracker, &run.aggregation, &run.metrics)?;
    outcome.ground_truth = ground_truth;

    let outputs = &run.outputs;
    if let Some(path) = &outputs.verdicts {
        save_verdicts(&outcome.records, path)?;
    }
    if let Some(path) = &outputs.summary {
        save_summary(&outcome.summary, path)?;
    }
    if let Some(path) = &outputs.tracks {
        save_tracks(&outcome.tracks, path)?;
    }
    if let Some(path) = &outputs.stream {
        save_stream(&outcome.stream, path)?;
    }
    Ok(outcome)
}

/// Track-level decisions compared against simulator or annotated ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_objects: usize,
    pub n_tracks: usize,
    /// Tracks that overlap no ground-truth object.
    pub n_unmatched_tracks: usize,
    pub id_switches: usize,
    pub detection_ap: Option<f64>,
    /// Majority-vote decisions of matched tracks.
    pub aggregated: Option<ClassificationMetrics>,
    /// Single-frame decisions of matched tracks under the configured frame rule.
    pub frame_wise: Option<ClassificationMetrics>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackDecisions {
    pub truth: Vec<BinaryQuality>,
    pub aggregated: Vec<BinaryQuality>,
    pub frame_wise: Vec<BinaryQuality>,
}

/// Pairs each track that has predictions and a ground-truth owner with its
/// true label and both decisions.
pub fn track_decisions(
    tracks: &[Track],
    gt: &SceneGroundTruth,
    aggregation: &AggregationConfig,
    frame_decision: FrameDecision,
) -> Result<TrackDecisions> {
    let owners = match_tracks_to_objects(tracks, gt);
    let mut out = TrackDecisions::default();
    for track in tracks {
        let buffer = track.predictions();
        let Some(Some(owner)) = owners.get(&track.id()) else {
            continue;
        };
        if buffer.is_empty() {
            continue;
        }
        let object = gt.object(*owner).expect("owner comes from ground truth");
        out.truth.push(to_binary(object.true_category));
        out.aggregated.push(majority_vote(buffer, aggregation)?.final_binary);
        let label = frame_wise_decision(buffer, frame_decision);
        out.frame_wise.push(to_binary(label));
    }
    Ok(out)
}

pub fn evaluate(
    tracks: &[Track],
    gt: &SceneGroundTruth,
    detections: Option<&[FrameDetections]>,
    aggregation: &AggregationConfig,
    metrics: &MetricsConfig,
    iou_threshold: f64,
) -> Result<EvaluationReport> {
    let owners = match_tracks_to_objects(tracks, gt);
    let decisions = track_decisions(tracks, gt, aggregation, metrics.frame_decision)?;
    let classify = |pred: &[BinaryQuality]| {
        if pred.is_empty() {
            Ok(None)
        } else {
            classification_metrics(pred, &decisions.truth).map(Some)
        }
    };
    let detection_ap = match detections {
        Some(dets) => Some(detection_map(dets, &gt.frames(), iou_threshold)?),
        None => None,
    };
    Ok(EvaluationReport {
        n_objects: gt.objects.len(),
        n_tracks: tracks.len(),
        n_unmatched_tracks: owners.values().filter(|o| o.is_none()).count(),
        id_switches: count_id_switches(tracks, gt),
        detection_ap,
        aggregated: classify(&decisions.aggregated)?,
        frame_wise: classify(&decisions.frame_wise)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CategoryLabel;

    fn noiseless_scene(objects: usize) -> SimConfig {
        SimConfig {
            n_lanes: 1,
            max_objects: Some(objects),
            detection_dropout_prob: 0.0,
            bbox_jitter_std: 0.0,
            false_positive_rate: 0.0,
            label_flip_prob: 0.0,
            defect_probability: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_single_object() {
        let (gt, frames) = generate_scene(&noiseless_scene(1)).unwrap();
        let outcome = process_stream(
            &frames,
            &TrackerConfig::default(),
            &AggregationConfig::default(),
            &MetricsConfig::default(),
        )
        .unwrap();
        assert_eq!(outcome.verdicts.len(), 1);
        assert_eq!(outcome.verdicts[0].final_category, gt.objects[0].true_category);
        let summary = &outcome.summary;
        assert_eq!(summary.aggregated.as_ref().unwrap().mean_stability, 1.0);
        assert_eq!(summary.frame_wise.as_ref().unwrap().mean_stability, 1.0);
        assert_eq!(outcome.records[0].k, gt.objects[0].boxes.len());
    }

    #[test]
    fn stream_events_end_on_final_verdict() {
        let config = SimConfig {
            label_flip_prob: 0.3,
            ..noiseless_scene(3)
        };
        let (_, frames) = generate_scene(&config).unwrap();
        let outcome = process_stream(
            &frames,
            &TrackerConfig::default(),
            &AggregationConfig::default(),
            &MetricsConfig::default(),
        )
        .unwrap();
        for verdict in &outcome.verdicts {
            let last = outcome
                .stream
                .iter()
                .rev()
                .find(|e| e.track_id == verdict.track_id)
                .unwrap();
            assert_eq!(last.category, verdict.final_category.index());
            assert_eq!(last.votes, verdict.track_length);
        }
    }

    #[test]
    fn tracks_without_predictions_get_no_verdict() {
        let (_, mut frames) = generate_scene(&noiseless_scene(1)).unwrap();
        for f in &mut frames {
            for d in &mut f.detections {
                d.category_observation = None;
            }
        }
        let outcome = process_stream(
            &frames,
            &TrackerConfig::default(),
            &AggregationConfig::default(),
            &MetricsConfig::default(),
        )
        .unwrap();
        assert_eq!(outcome.tracks.len(), 1);
        assert!(outcome.verdicts.is_empty());
        assert!(outcome.summary.aggregated.is_none());
    }

    #[test]
    fn evaluation_on_clean_scene() {
        let (gt, frames) = generate_scene(&noiseless_scene(6)).unwrap();
        let outcome = process_stream(
            &frames,
            &TrackerConfig::default(),
            &AggregationConfig::default(),
            &MetricsConfig::default(),
        )
        .unwrap();
        let report = evaluate(
            &outcome.tracks,
            &gt,
            Some(&frames),
            &AggregationConfig::default(),
            &MetricsConfig::default(),
            0.5,
        )
        .unwrap();
        assert_eq!(report.id_switches, 0);
        assert_eq!(report.n_tracks, 6);
        assert_eq!(report.n_unmatched_tracks, 0);
        assert_eq!(report.detection_ap, Some(1.0));
        assert_eq!(report.aggregated.unwrap().accuracy, 1.0);
        assert_eq!(report.frame_wise.unwrap().accuracy, 1.0);
    }

    #[test]
    fn simulated_category_mismatch_is_a_config_error() {
        let mut run = PipelineRun::new(InputSource::Simulated(SimConfig::default()));
        run.aggregation.num_categories = 5;
        assert!(matches!(run_pipeline(&run), Err(Error::Config(_))));
    }

    #[test]
    fn verdict_k_counts_votes() {
        let (_, frames) = generate_scene(&noiseless_scene(2)).unwrap();
        let outcome = process_stream(
            &frames,
            &TrackerConfig::default(),
            &AggregationConfig::default(),
            &MetricsConfig::default(),
        )
        .unwrap();
        for (v, r) in outcome.verdicts.iter().zip(&outcome.records) {
            assert_eq!(r.votes.iter().sum::<usize>(), r.k);
            assert_eq!(r.category, v.final_category.index());
            assert!(v.final_category == CategoryLabel::FRESH || v.final_category.is_defect());
        }
    }
}
