//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes and returns JSON strings. The `*_json` functions hold
//! the logic and are plain Rust so they can be tested natively.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use beltrack::aggregation::{majority_vote, record_prediction, AggregationConfig, PredictionBuffer, RunningVote, TieBreak, VoteOrder};
use beltrack::io::VerdictRecord;
use beltrack::metrics::{temporal_stability, FrameDecision, MetricsConfig};
use beltrack::pipeline::{evaluate, process_stream, track_decisions, EvaluationReport, RunSummary};
use beltrack::sim::{generate_scene, SimConfig};
use beltrack::tracker::TrackerConfig;
use beltrack::{to_binary, BinaryQuality, CategoryLabel, TrackId};

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn round(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Serialize)]
struct PlaybackTrack {
    id: TrackId,
    bbox: [f64; 4],
    /// Category observed on this frame, if any.
    observed: Option<usize>,
    /// Running majority after this frame.
    running: Option<usize>,
}

#[derive(Serialize)]
struct PlaybackFrame {
    frame: u64,
    detections: Vec<[f64; 5]>,
    tracks: Vec<PlaybackTrack>,
}

#[derive(Serialize)]
struct Playback {
    width: f64,
    height: f64,
    frames: Vec<PlaybackFrame>,
    verdicts: Vec<VerdictRecord>,
    summary: RunSummary,
    evaluation: EvaluationReport,
}

/// Simulates a scene from a (partial) `SimConfig` and tracks it, returning
/// per-frame boxes for playback plus the verdicts and reports.
pub fn simulate_scene_json(config: &str) -> Result<String, String> {
    let sim: SimConfig = serde_json::from_str(if config.trim().is_empty() { "{}" } else { config })
        .map_err(|e| format!("bad scene config: {e}"))?;
    let (gt, frames) = generate_scene(&sim).map_err(|e| e.to_string())?;
    let aggregation = AggregationConfig {
        num_categories: sim.num_categories,
        ..Default::default()
    };
    let metrics = MetricsConfig::default();
    let outcome = process_stream(&frames, &TrackerConfig::default(), &aggregation, &metrics).map_err(|e| e.to_string())?;

    let running: BTreeMap<(u64, TrackId), usize> = outcome
        .stream
        .iter()
        .map(|e| ((e.frame, e.track_id), e.category))
        .collect();
    let mut latest: BTreeMap<TrackId, usize> = BTreeMap::new();
    let mut by_frame: BTreeMap<u64, Vec<PlaybackTrack>> = BTreeMap::new();
    let mut observations: Vec<(u64, TrackId, [f64; 4], Option<usize>)> = Vec::new();
    for track in &outcome.tracks {
        let predictions: BTreeMap<u64, usize> = track
            .predictions()
            .entries()
            .iter()
            .map(|(f, c)| (*f, c.index()))
            .collect();
        for (frame, b) in track.history() {
            let bbox = [round(b.x()), round(b.y()), round(b.w()), round(b.h())];
            observations.push((*frame, track.id(), bbox, predictions.get(frame).copied()));
        }
    }
    observations.sort_by_key(|o| (o.0, o.1));
    for (frame, id, bbox, observed) in observations {
        if let Some(&c) = running.get(&(frame, id)) {
            latest.insert(id, c);
        }
        by_frame.entry(frame).or_default().push(PlaybackTrack {
            id,
            bbox,
            observed,
            running: latest.get(&id).copied(),
        });
    }

    let playback_frames = frames
        .iter()
        .map(|f| PlaybackFrame {
            frame: f.frame_index,
            detections: f
                .detections
                .iter()
                .map(|d| [round(d.bbox.x()), round(d.bbox.y()), round(d.bbox.w()), round(d.bbox.h()), round(d.score)])
                .collect(),
            tracks: by_frame.remove(&f.frame_index).unwrap_or_default(),
        })
        .collect();
    let evaluation =
        evaluate(&outcome.tracks, &gt, Some(&frames), &aggregation, &metrics, 0.5).map_err(|e| e.to_string())?;
    to_json(&Playback {
        width: sim.frame_width,
        height: sim.frame_height,
        frames: playback_frames,
        verdicts: outcome.records,
        summary: outcome.summary,
        evaluation,
    })
}

#[derive(Deserialize)]
#[serde(default)]
struct SweepRequest {
    seed: u64,
    objects: usize,
    /// Frames each object stays in view.
    track_length: u64,
    defect_probability: f64,
    max_flip: f64,
    steps: usize,
}

impl Default for SweepRequest {
    fn default() -> Self {
        Self {
            seed: 7,
            objects: 100,
            track_length: 21,
            defect_probability: 0.0,
            max_flip: 0.5,
            steps: 10,
        }
    }
}

#[derive(Serialize)]
struct SweepPoint {
    q: f64,
    aggregated_accuracy: f64,
    last_frame_accuracy: f64,
    frame_wise_stability: f64,
    /// Probability that a strict majority of `k` independent frames is right.
    binomial_majority: f64,
    /// Expected frame-wise stability when every flip changes the binary label.
    expected_stability: f64,
}

fn binomial_majority(k: u64, p: f64) -> f64 {
    ((k / 2 + 1)..=k)
        .map(|i| {
            let choose: f64 = (0..i).map(|j| (k - j) as f64 / (j + 1) as f64).product();
            choose * p.powi(i as i32) * (1.0 - p).powi((k - i) as i32)
        })
        .sum()
}

fn accuracy(pred: &[BinaryQuality], truth: &[BinaryQuality]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// Aggregated versus last-frame accuracy and stability as the flip
/// probability grows, next to the analytic curves.
pub fn flip_sweep_json(request: &str) -> Result<String, String> {
    let req: SweepRequest = serde_json::from_str(if request.trim().is_empty() { "{}" } else { request })
        .map_err(|e| format!("bad sweep request: {e}"))?;
    if req.track_length == 0 || req.steps == 0 || req.objects == 0 {
        return Err("track_length, steps and objects must be positive".into());
    }
    if !(0.0..=1.0).contains(&req.max_flip) {
        return Err("max_flip must lie in [0, 1]".into());
    }
    let mut base = SimConfig {
        seed: req.seed,
        box_size_std: 0.0,
        max_objects: Some(req.objects),
        n_frames: 1_000_000,
        defect_probability: req.defect_probability,
        detection_dropout_prob: 0.0,
        false_positive_rate: 0.0,
        ..Default::default()
    };
    let seen = base.visible_frames(base.box_size_mean) as f64;
    base.frame_width += (req.track_length as f64 - seen) * base.belt_velocity;
    if base.frame_width <= 0.0 {
        return Err("track_length too short for the default belt".into());
    }

    let aggregation = AggregationConfig::default();
    let metrics = MetricsConfig::default();
    let k = req.track_length as f64;
    let mut points = Vec::with_capacity(req.steps + 1);
    for step in 0..=req.steps {
        let q = req.max_flip * step as f64 / req.steps as f64;
        let config = SimConfig {
            label_flip_prob: q,
            ..base.clone()
        };
        let (gt, frames) = generate_scene(&config).map_err(|e| e.to_string())?;
        let outcome = process_stream(&frames, &TrackerConfig::default(), &aggregation, &metrics).map_err(|e| e.to_string())?;
        let d = track_decisions(&outcome.tracks, &gt, &aggregation, FrameDecision::LastFrame).map_err(|e| e.to_string())?;
        points.push(SweepPoint {
            q,
            aggregated_accuracy: accuracy(&d.aggregated, &d.truth),
            last_frame_accuracy: accuracy(&d.frame_wise, &d.truth),
            frame_wise_stability: outcome.summary.frame_wise.map_or(1.0, |r| r.mean_stability),
            binomial_majority: binomial_majority(req.track_length, 1.0 - q),
            expected_stability: 1.0 - 2.0 * q * (1.0 - q) * (k - 1.0) / k,
        });
    }
    to_json(&points)
}

fn parse_label(token: &str) -> Result<CategoryLabel, String> {
    let index = match token.to_ascii_lowercase().as_str() {
        "f" | "fresh" | "n" | "normal" => 0,
        "b" | "bruise" => 1,
        "r" | "rot" => 2,
        "s" | "scab" => 3,
        other => other.parse().map_err(|_| format!("unknown label `{token}`"))?,
    };
    CategoryLabel::new(index, 4).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Step {
    label: usize,
    running: usize,
    running_name: &'static str,
}

#[derive(Serialize)]
struct VoteResult {
    category: usize,
    name: &'static str,
    binary: BinaryQuality,
    votes: Vec<usize>,
    stability_binary: f64,
    stability_category: f64,
    label_changes: usize,
    steps: Vec<Step>,
}

/// Majority vote and stability for a label sequence such as `"f f r b r"` or
/// `"0,0,2,1,2"`.
pub fn vote_json(labels: &str, tie_break: &str, vote_order: &str) -> Result<String, String> {
    let labels: Vec<CategoryLabel> = labels
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(parse_label)
        .collect::<Result<_, _>>()?;
    if labels.is_empty() {
        return Err("enter at least one label".into());
    }
    let config = AggregationConfig {
        tie_break: match tie_break {
            "" | "prefer_defect" => TieBreak::PreferDefect,
            "lowest_index" => TieBreak::LowestIndex,
            other => return Err(format!("unknown tie break `{other}`")),
        },
        vote_order: match vote_order {
            "" | "vote_then_collapse" => VoteOrder::VoteThenCollapse,
            "collapse_then_vote" => VoteOrder::CollapseThenVote,
            other => return Err(format!("unknown vote order `{other}`")),
        },
        ..Default::default()
    };

    let mut buffer = PredictionBuffer::new(1);
    let mut running = RunningVote::new(config);
    let mut steps = Vec::with_capacity(labels.len());
    for (t, &label) in labels.iter().enumerate() {
        record_prediction(&mut buffer, t as u64, label).map_err(|e| e.to_string())?;
        let current = running.observe(label);
        steps.push(Step {
            label: label.index(),
            running: current.index(),
            running_name: current.name(),
        });
    }
    let verdict = majority_vote(&buffer, &config).map_err(|e| e.to_string())?;
    let binary: Vec<BinaryQuality> = labels.iter().copied().map(to_binary).collect();
    to_json(&VoteResult {
        category: verdict.final_category.index(),
        name: verdict.final_category.name(),
        binary: verdict.final_binary,
        votes: verdict.vote_counts,
        stability_binary: temporal_stability(&binary).map_err(|e| e.to_string())?,
        stability_category: temporal_stability(&labels).map_err(|e| e.to_string())?,
        label_changes: binary.windows(2).filter(|w| w[0] != w[1]).count(),
        steps,
    })
}

#[wasm_bindgen]
pub fn simulate_scene(config: &str) -> Result<String, JsError> {
    simulate_scene_json(config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn flip_sweep(request: &str) -> Result<String, JsError> {
    flip_sweep_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn vote(labels: &str, tie_break: &str, vote_order: &str) -> Result<String, JsError> {
    vote_json(labels, tie_break, vote_order).map_err(|e| JsError::new(&e))
}
