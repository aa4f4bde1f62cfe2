//! BYTE two-stage association and track lifecycle.
//!
//! Each frame the tracker splits detections into high- and low-score sets,
//! matches high-score detections against every live track, then gives the
//! still-unmatched active tracks a second chance against the low-score set.
//! Only high-score detections may start new tracks.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::aggregation::{record_prediction, PredictionBuffer};
use crate::assignment::{build_cost_matrix, solve_assignment};
use crate::error::{Error, Result};
use crate::kalman::{kf_initiate, kf_predict, kf_update, state_to_box, KalmanParams};
use crate::model::{BoundingBox, Detection, FrameDetections, Track, TrackId, TrackStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub high_score_threshold: f64,
    pub low_score_threshold: f64,
    /// Maximum IoU cost accepted in the high-score stage.
    pub match_threshold_first: f64,
    /// Maximum IoU cost accepted in the low-score stage.
    pub match_threshold_second: f64,
    pub new_track_min_score: f64,
    pub max_frames_lost: u64,
    pub min_hits_to_activate: usize,
    pub min_track_length_report: usize,
    pub kalman: KalmanParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            high_score_threshold: 0.6,
            low_score_threshold: 0.1,
            match_threshold_first: 0.8,
            match_threshold_second: 0.5,
            new_track_min_score: 0.6,
            max_frames_lost: 30,
            min_hits_to_activate: 1,
            min_track_length_report: 1,
            kalman: KalmanParams::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        unit("high_score_threshold", self.high_score_threshold)?;
        unit("low_score_threshold", self.low_score_threshold)?;
        unit("match_threshold_first", self.match_threshold_first)?;
        unit("match_threshold_second", self.match_threshold_second)?;
        unit("new_track_min_score", self.new_track_min_score)?;
        if self.low_score_threshold > self.high_score_threshold {
            return Err(Error::Config(
                "low_score_threshold must not exceed high_score_threshold".into(),
            ));
        }
        if self.max_frames_lost < 1 {
            return Err(Error::Config("max_frames_lost must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTrack {
    pub track_id: TrackId,
    /// Filtered box after this frame's update.
    pub bbox: BoundingBox,
    /// Index into the frame's detection list that this track matched.
    pub detection_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerOutput {
    pub frame_index: u64,
    pub active_tracks: Vec<ActiveTrack>,
    pub newly_removed_track_ids: Vec<TrackId>,
}

#[derive(Debug, Clone)]
pub struct ByteTracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: TrackId,
    last_frame: Option<u64>,
}

impl ByteTracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Every track created so far, in creation order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn step(&mut self, frame: &FrameDetections) -> Result<TrackerOutput> {
        tracker_step(self, frame)
    }

    pub fn finalize(self) -> Vec<Track> {
        finalize(self)
    }
}

fn is_live(status: TrackStatus) -> bool {
    status != TrackStatus::Removed
}

/// Matches `track_idx` rows against `det_idx` columns; returns matched pairs
/// and leaves the unmatched remainder in the input vectors.
fn associate(
    predicted: &[Option<BoundingBox>],
    track_idx: &mut Vec<usize>,
    detections: &[Detection],
    det_idx: &mut Vec<usize>,
    max_cost: f64,
) -> Vec<(usize, usize)> {
    if track_idx.is_empty() || det_idx.is_empty() {
        return Vec::new();
    }
    let track_boxes: Vec<BoundingBox> = track_idx
        .iter()
        .map(|&i| predicted[i].expect("live tracks have a predicted box"))
        .collect();
    let det_boxes: Vec<BoundingBox> = det_idx.iter().map(|&j| detections[j].bbox).collect();
    let result = solve_assignment(&build_cost_matrix(&track_boxes, &det_boxes), max_cost);

    let pairs = result
        .matches
        .iter()
        .map(|&(r, c)| (track_idx[r], det_idx[c]))
        .collect();
    *track_idx = result.unmatched_tracks.iter().map(|&r| track_idx[r]).collect();
    *det_idx = result.unmatched_detections.iter().map(|&c| det_idx[c]).collect();
    pairs
}

/// Advances the tracker by one frame.
pub fn tracker_step(tracker: &mut ByteTracker, frame: &FrameDetections) -> Result<TrackerOutput> {
    let frame_index = frame.frame_index;
    let steps = match tracker.last_frame {
        Some(previous) if frame_index <= previous => {
            return Err(Error::OutOfOrderFrame {
                previous,
                got: frame_index,
            })
        }
        Some(previous) => frame_index - previous,
        None => 1,
    };
    tracker.last_frame = Some(frame_index);
    let config = tracker.config;
    let detections = &frame.detections;

    let mut high: Vec<usize> = Vec::new();
    let mut low: Vec<usize> = Vec::new();
    for (j, d) in detections.iter().enumerate() {
        if d.score >= config.high_score_threshold {
            high.push(j);
        } else if d.score >= config.low_score_threshold {
            low.push(j);
        }
    }

    let mut newly_removed = Vec::new();

    // Predict every live track forward to this frame.
    let mut predicted: Vec<Option<BoundingBox>> = vec![None; tracker.tracks.len()];
    for (i, track) in tracker.tracks.iter_mut().enumerate() {
        if !is_live(track.status) {
            continue;
        }
        for _ in 0..steps {
            track.state = kf_predict(&track.state, &config.kalman);
        }
        match state_to_box(&track.state) {
            Ok(b) => predicted[i] = Some(b),
            Err(e) => {
                warn!("track {} removed: {e}", track.id);
                track.status = TrackStatus::Removed;
                newly_removed.push(track.id);
            }
        }
    }

    let previously_active: Vec<bool> = tracker
        .tracks
        .iter()
        .map(|t| t.status == TrackStatus::Active)
        .collect();

    // Stage one: all live tracks against high-score detections.
    let mut pool: Vec<usize> = (0..tracker.tracks.len())
        .filter(|&i| predicted[i].is_some())
        .collect();
    let mut matches = associate(
        &predicted,
        &mut pool,
        detections,
        &mut high,
        config.match_threshold_first,
    );

    // Stage two: tracks active last frame against low-score detections.
    let mut second_pool: Vec<usize> = pool.iter().copied().filter(|&i| previously_active[i]).collect();
    matches.extend(associate(
        &predicted,
        &mut second_pool,
        detections,
        &mut low,
        config.match_threshold_second,
    ));

    let mut matched = vec![false; tracker.tracks.len()];
    let mut active = Vec::new();
    for &(i, j) in &matches {
        matched[i] = true;
        let det = &detections[j];
        let track = &mut tracker.tracks[i];
        track.state = kf_update(&track.state, &det.bbox, &config.kalman);
        track.history.push((frame_index, det.bbox));
        if let Some(label) = det.category_observation {
            record_prediction(&mut track.predictions, frame_index, label)?;
        }
        track.hit_count += 1;
        track.last_update_frame = frame_index;
        track.status = match track.status {
            TrackStatus::Tentative if track.hit_count < config.min_hits_to_activate => {
                TrackStatus::Tentative
            }
            _ => TrackStatus::Active,
        };
        if track.status == TrackStatus::Active {
            active.push(ActiveTrack {
                track_id: track.id,
                bbox: state_to_box(&track.state).unwrap_or(det.bbox),
                detection_index: j,
            });
        }
    }

    for (i, track) in tracker.tracks.iter_mut().enumerate() {
        if matched[i] || !is_live(track.status) {
            continue;
        }
        let next = match track.status {
            TrackStatus::Tentative => TrackStatus::Removed,
            _ if frame_index - track.last_update_frame > config.max_frames_lost => TrackStatus::Removed,
            _ => TrackStatus::Lost,
        };
        if next == TrackStatus::Removed {
            newly_removed.push(track.id);
        }
        track.status = next;
    }

    // Spawn from leftover high-score detections only.
    for j in high {
        let det = &detections[j];
        if det.score < config.new_track_min_score {
            continue;
        }
        let id = tracker.next_id;
        tracker.next_id += 1;
        let mut predictions = PredictionBuffer::new(id);
        if let Some(label) = det.category_observation {
            record_prediction(&mut predictions, frame_index, label)?;
        }
        let status = if config.min_hits_to_activate <= 1 {
            TrackStatus::Active
        } else {
            TrackStatus::Tentative
        };
        tracker.tracks.push(Track {
            id,
            state: kf_initiate(&det.bbox, &config.kalman),
            status,
            history: vec![(frame_index, det.bbox)],
            predictions,
            last_update_frame: frame_index,
            hit_count: 1,
        });
        if status == TrackStatus::Active {
            active.push(ActiveTrack {
                track_id: id,
                bbox: det.bbox,
                detection_index: j,
            });
        }
    }

    active.sort_by_key(|a| a.track_id);
    newly_removed.sort_unstable();
    Ok(TrackerOutput {
        frame_index,
        active_tracks: active,
        newly_removed_track_ids: newly_removed,
    })
}

/// All tracks ever created, including removed ones, whose length reaches
/// `min_track_length_report`.
pub fn finalize(tracker: ByteTracker) -> Vec<Track> {
    let min_len = tracker.config.min_track_length_report;
    tracker
        .tracks
        .into_iter()
        .filter(|t| t.len() >= min_len)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: u64, x: f64, y: f64, score: f64) -> Detection {
        Detection::new(frame, BoundingBox::new(x, y, 40.0, 40.0).unwrap(), score, None).unwrap()
    }

    fn frame(frame_index: u64, dets: Vec<Detection>) -> FrameDetections {
        FrameDetections::new(frame_index, dets).unwrap()
    }

    fn tracker() -> ByteTracker {
        ByteTracker::new(TrackerConfig::default()).unwrap()
    }

    #[test]
    fn empty_first_frame() {
        let mut t = tracker();
        let out = t.step(&FrameDetections::empty(0)).unwrap();
        assert!(out.active_tracks.is_empty());
        assert!(t.finalize().is_empty());
    }

    #[test]
    fn no_frames_finalizes_empty() {
        assert!(tracker().finalize().is_empty());
    }

    #[test]
    fn rejects_out_of_order_frames() {
        let mut t = tracker();
        t.step(&FrameDetections::empty(5)).unwrap();
        assert!(matches!(
            t.step(&FrameDetections::empty(5)),
            Err(Error::OutOfOrderFrame { previous: 5, got: 5 })
        ));
        assert!(t.step(&FrameDetections::empty(4)).is_err());
    }

    #[test]
    fn single_object_keeps_one_id() {
        let mut t = tracker();
        for f in 0..10 {
            let out = t.step(&frame(f, vec![det(f, 10.0 + 6.0 * f as f64, 50.0, 0.9)])).unwrap();
            assert_eq!(out.active_tracks.len(), 1);
            assert_eq!(out.active_tracks[0].track_id, 1);
        }
        let tracks = t.finalize();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 10);
        assert_eq!(tracks[0].id(), 1);
    }

    #[test]
    fn low_score_detection_keeps_track_active() {
        let mut t = tracker();
        t.step(&frame(0, vec![det(0, 0.0, 0.0, 0.9)])).unwrap();
        // Shifted by 7 px on a 40 px box: IoU = 33/47 > 0.7.
        let out = t.step(&frame(1, vec![det(1, 7.0, 0.0, 0.3)])).unwrap();
        assert_eq!(out.active_tracks.len(), 1);
        assert_eq!(t.tracks()[0].status(), TrackStatus::Active);

        let mut t = tracker();
        t.step(&frame(0, vec![det(0, 0.0, 0.0, 0.9)])).unwrap();
        let out = t.step(&FrameDetections::empty(1)).unwrap();
        assert!(out.active_tracks.is_empty());
        assert_eq!(t.tracks()[0].status(), TrackStatus::Lost);
    }

    #[test]
    fn low_score_detections_never_spawn() {
        let mut t = tracker();
        t.step(&frame(0, vec![det(0, 0.0, 0.0, 0.5)])).unwrap();
        assert!(t.tracks().is_empty());
    }

    #[test]
    fn lost_track_is_refound_then_removed() {
        let mut t = tracker();
        t.step(&frame(0, vec![det(0, 0.0, 0.0, 0.9)])).unwrap();
        t.step(&FrameDetections::empty(1)).unwrap();
        let out = t.step(&frame(2, vec![det(2, 0.0, 0.0, 0.9)])).unwrap();
        assert_eq!(out.active_tracks[0].track_id, 1);
        assert_eq!(t.tracks()[0].history().iter().map(|h| h.0).collect::<Vec<_>>(), vec![0, 2]);

        let out = t.step(&FrameDetections::empty(2 + 31)).unwrap();
        assert_eq!(out.newly_removed_track_ids, vec![1]);
        assert_eq!(t.tracks()[0].status(), TrackStatus::Removed);
    }

    #[test]
    fn tentative_tracks_need_hits() {
        let config = TrackerConfig {
            min_hits_to_activate: 3,
            ..Default::default()
        };
        let mut t = ByteTracker::new(config).unwrap();
        for f in 0..2 {
            let out = t.step(&frame(f, vec![det(f, 0.0, 0.0, 0.9)])).unwrap();
            assert!(out.active_tracks.is_empty());
        }
        let out = t.step(&frame(2, vec![det(2, 0.0, 0.0, 0.9)])).unwrap();
        assert_eq!(out.active_tracks.len(), 1);

        // An unconfirmed track that misses a frame is dropped.
        let mut t = ByteTracker::new(config).unwrap();
        t.step(&frame(0, vec![det(0, 0.0, 0.0, 0.9)])).unwrap();
        let out = t.step(&FrameDetections::empty(1)).unwrap();
        assert_eq!(out.newly_removed_track_ids, vec![1]);
    }

    #[test]
    fn ids_follow_spawn_order() {
        let mut t = tracker();
        t.step(&frame(0, vec![det(0, 0.0, 0.0, 0.9)])).unwrap();
        t.step(&frame(1, vec![det(1, 0.0, 0.0, 0.9), det(1, 0.0, 200.0, 0.9)])).unwrap();
        let ids: Vec<_> = t.finalize().iter().map(Track::id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn predictions_recorded_from_matched_detections() {
        use crate::model::CategoryLabel;
        let mut t = tracker();
        for f in 0..4 {
            let mut d = det(f, 0.0, 0.0, 0.9);
            if f != 2 {
                d.category_observation = Some(CategoryLabel::ROT);
            }
            t.step(&frame(f, vec![d])).unwrap();
        }
        let track = &t.tracks()[0];
        let frames: Vec<u64> = track.predictions().entries().iter().map(|e| e.0).collect();
        assert_eq!(frames, vec![0, 1, 3]);
        assert!(frames.iter().all(|f| track.box_at(*f).is_some()));
    }

    #[test]
    fn config_validation() {
        let bad = TrackerConfig {
            low_score_threshold: 0.7,
            ..Default::default()
        };
        assert!(ByteTracker::new(bad).is_err());
        let bad = TrackerConfig {
            max_frames_lost: 0,
            ..Default::default()
        };
        assert!(ByteTracker::new(bad).is_err());
        let bad = TrackerConfig {
            match_threshold_first: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
