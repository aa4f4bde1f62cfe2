//! Evaluation metrics: video-level quality indicators, classification scores,
//! detection AP and identity-switch counting.

mod classification;
mod detection;
mod tracking;

pub use classification::{classification_metrics, ClassificationMetrics};
pub use detection::detection_map;
pub use tracking::{count_id_switches, match_tracks_to_objects, ID_SWITCH_IOU};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{majority_vote, AggregationConfig, PredictionBuffer, TrackVerdict};
use crate::error::{Error, Result};
use crate::model::{to_binary, BinaryQuality, CategoryLabel, TrackId};

/// Fraction of tracks whose final decision is defect.
pub fn defect_ratio(verdicts: &[TrackVerdict]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::EmptyInput("defect ratio"));
    }
    let defects = verdicts
        .iter()
        .filter(|v| v.final_binary == BinaryQuality::Defect)
        .count();
    Ok(defects as f64 / verdicts.len() as f64)
}

/// `1 - changes / k` where `changes` counts adjacent positions with different
/// labels and `k` is the sequence length. A maximally unstable sequence scores
/// `1/k`, not 0.
pub fn temporal_stability<T: PartialEq>(labels: &[T]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("temporal stability"));
    }
    let changes = labels.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(1.0 - changes as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMode {
    /// Raw per-frame labels, the no-aggregation baseline.
    FrameWise,
    /// The post-vote label repeated over the track.
    Aggregated,
}

/// Which single frame decides a track in the frame-wise baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum FrameDecision {
    #[default]
    LastFrame,
    FirstFrame,
    RandomFrame {
        seed: u64,
    },
}

/// Label granularity used when counting label changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityLabels {
    #[default]
    Binary,
    Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub frame_decision: FrameDecision,
    pub stability_labels: StabilityLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoQualityReport {
    pub defect_ratio: f64,
    pub per_track_stability: BTreeMap<TrackId, f64>,
    pub mean_stability: f64,
    pub n_total_tracks: usize,
    pub n_defect_tracks: usize,
}

/// The single per-frame label that decides a track in the frame-wise baseline.
/// `buffer` must be non-empty.
pub fn frame_wise_decision(buffer: &PredictionBuffer, rule: FrameDecision) -> CategoryLabel {
    let labels = buffer.entries();
    let index = match rule {
        FrameDecision::LastFrame => labels.len() - 1,
        FrameDecision::FirstFrame => 0,
        FrameDecision::RandomFrame { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ buffer.track_id().rotate_left(32));
            rng.random_range(0..labels.len())
        }
    };
    labels[index].1
}

fn frame_wise_stability(buffer: &PredictionBuffer, granularity: StabilityLabels) -> Result<f64> {
    match granularity {
        StabilityLabels::Binary => {
            let labels: Vec<BinaryQuality> = buffer.labels().map(to_binary).collect();
            temporal_stability(&labels)
        }
        StabilityLabels::Category => {
            let labels: Vec<CategoryLabel> = buffer.labels().collect();
            temporal_stability(&labels)
        }
    }
}

/// Frame-wise stability of a single track under the configured granularity.
pub fn track_stability(buffer: &PredictionBuffer, config: &MetricsConfig) -> Result<f64> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer(buffer.track_id()));
    }
    frame_wise_stability(buffer, config.stability_labels)
}

/// Video-level report over all tracks in one of the two scoring modes.
pub fn stability_report(
    buffers: &[PredictionBuffer],
    mode: StabilityMode,
    aggregation: &AggregationConfig,
    config: &MetricsConfig,
) -> Result<VideoQualityReport> {
    if buffers.is_empty() {
        return Err(Error::EmptyInput("stability report"));
    }
    let mut per_track_stability = BTreeMap::new();
    let mut n_defect_tracks = 0;
    for buffer in buffers {
        let (stability, decision) = match mode {
            StabilityMode::FrameWise => (
                track_stability(buffer, config)?,
                to_binary(frame_wise_decision(buffer, config.frame_decision)),
            ),
            StabilityMode::Aggregated => {
                let verdict = majority_vote(buffer, aggregation)?;
                let constant = vec![verdict.final_category; verdict.track_length];
                (temporal_stability(&constant)?, verdict.final_binary)
            }
        };
        if decision == BinaryQuality::Defect {
            n_defect_tracks += 1;
        }
        per_track_stability.insert(buffer.track_id(), stability);
    }
    let n_total_tracks = buffers.len();
    let mean_stability = per_track_stability.values().sum::<f64>() / n_total_tracks as f64;
    Ok(VideoQualityReport {
        defect_ratio: n_defect_tracks as f64 / n_total_tracks as f64,
        per_track_stability,
        mean_stability,
        n_total_tracks,
        n_defect_tracks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::record_prediction;
    use proptest::prelude::*;
    use BinaryQuality::{Defect as D, Normal as N};

    fn buffer(id: TrackId, labels: &[CategoryLabel]) -> PredictionBuffer {
        let mut b = PredictionBuffer::new(id);
        for (t, &l) in labels.iter().enumerate() {
            record_prediction(&mut b, t as u64, l).unwrap();
        }
        b
    }

    fn verdict(binary: BinaryQuality) -> TrackVerdict {
        let category = match binary {
            N => CategoryLabel::FRESH,
            D => CategoryLabel::ROT,
        };
        TrackVerdict {
            track_id: 0,
            final_category: category,
            final_binary: binary,
            vote_counts: vec![],
            track_length: 1,
        }
    }

    #[test]
    fn defect_ratio_examples() {
        let mut vs: Vec<_> = (0..8).map(|_| verdict(N)).collect();
        vs.extend([verdict(D), verdict(D)]);
        assert_eq!(defect_ratio(&vs).unwrap(), 0.2);
        assert_eq!(defect_ratio(&vs[..8]).unwrap(), 0.0);
        assert!(defect_ratio(&[]).is_err());
    }

    #[test]
    fn stability_examples() {
        assert_eq!(temporal_stability(&[D, D, D, D]).unwrap(), 1.0);
        assert_eq!(temporal_stability(&[D, N, D, N]).unwrap(), 0.25);
        assert_eq!(temporal_stability(&[N]).unwrap(), 1.0);
        assert!(temporal_stability::<BinaryQuality>(&[]).is_err());
    }

    #[test]
    fn report_modes() {
        let (f, r) = (CategoryLabel::FRESH, CategoryLabel::ROT);
        let buffers = vec![buffer(1, &[r, f, r, f]), buffer(2, &[f, f, f])];
        let agg = AggregationConfig::default();
        let cfg = MetricsConfig::default();

        let fw = stability_report(&buffers[..1], StabilityMode::FrameWise, &agg, &cfg).unwrap();
        assert_eq!(fw.mean_stability, 0.25);
        // Last frame of track 1 is fresh.
        assert_eq!(fw.n_defect_tracks, 0);

        let first = MetricsConfig {
            frame_decision: FrameDecision::FirstFrame,
            ..cfg
        };
        let fw = stability_report(&buffers, StabilityMode::FrameWise, &agg, &first).unwrap();
        assert_eq!(fw.n_defect_tracks, 1);
        assert_eq!(fw.defect_ratio, 0.5);
        assert_eq!(fw.per_track_stability[&2], 1.0);

        let ag = stability_report(&buffers, StabilityMode::Aggregated, &agg, &cfg).unwrap();
        assert_eq!(ag.mean_stability, 1.0);
        // Track 1 ties 2-2 and the tie goes to the defect.
        assert_eq!(ag.n_defect_tracks, 1);
        assert_eq!(ag.n_total_tracks, 2);

        assert!(stability_report(&[], StabilityMode::Aggregated, &agg, &cfg).is_err());
        assert!(stability_report(&[PredictionBuffer::new(9)], StabilityMode::FrameWise, &agg, &cfg).is_err());
    }

    #[test]
    fn category_granularity_counts_defect_to_defect_changes() {
        let b = buffer(1, &[CategoryLabel::ROT, CategoryLabel::SCAB]);
        let binary = track_stability(&b, &MetricsConfig::default()).unwrap();
        let category = track_stability(
            &b,
            &MetricsConfig {
                stability_labels: StabilityLabels::Category,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(binary, 1.0);
        assert_eq!(category, 0.5);
    }

    #[test]
    fn random_frame_rule_is_deterministic() {
        let b = buffer(4, &[CategoryLabel::FRESH, CategoryLabel::ROT, CategoryLabel::BRUISE]);
        let rule = FrameDecision::RandomFrame { seed: 11 };
        assert_eq!(frame_wise_decision(&b, rule), frame_wise_decision(&b, rule));
    }

    proptest! {
        #[test]
        fn stability_bounds(bits in proptest::collection::vec(any::<bool>(), 1..60)) {
            let k = bits.len() as f64;
            let s = temporal_stability(&bits).unwrap();
            prop_assert!(s >= 1.0 - (k - 1.0) / k - 1e-12 && s <= 1.0);
            let constant = bits.iter().all(|&b| b == bits[0]);
            prop_assert_eq!(s == 1.0, constant);
        }

        #[test]
        fn aggregated_mode_is_always_one(
            tracks in proptest::collection::vec(proptest::collection::vec(0usize..4, 1..30), 1..10)
        ) {
            let buffers: Vec<_> = tracks
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let labels: Vec<_> = t.iter().map(|&c| CategoryLabel::new(c, 4).unwrap()).collect();
                    buffer(i as TrackId + 1, &labels)
                })
                .collect();
            let r = stability_report(
                &buffers,
                StabilityMode::Aggregated,
                &AggregationConfig::default(),
                &MetricsConfig::default(),
            )
            .unwrap();
            prop_assert_eq!(r.mean_stability, 1.0);
        }
    }
}
