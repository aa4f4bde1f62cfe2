//! Shared domain vocabulary: boxes, detections, categories and tracks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::PredictionBuffer;
use crate::error::{Error, Result};
use crate::kalman::KalmanState;

/// Number of categories in the default grading scheme.
pub const DEFAULT_NUM_CATEGORIES: usize = 4;

/// Axis-aligned box in pixel coordinates, top-left corner plus size.
///
/// Construction through [`BoundingBox::new`] rejects non-finite coordinates and
/// non-positive sizes, so every other module can assume a valid box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox { x, y, w, h, reason };
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(invalid("width and height must be positive"));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Same box shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    fn intersection_area(&self, other: &Self) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn iou(&self, other: &Self) -> f64 {
        iou(self, other)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x: f64,
            y: f64,
            w: f64,
            h: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        BoundingBox::new(raw.x, raw.y, raw.w, raw.h).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Category index into the grading scheme: 0 = fresh, 1 = bruise, 2 = rot, 3 = scab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryLabel(usize);

impl CategoryLabel {
    pub const FRESH: Self = Self(0);
    pub const BRUISE: Self = Self(1);
    pub const ROT: Self = Self(2);
    pub const SCAB: Self = Self(3);

    pub fn new(index: usize, num_categories: usize) -> Result<Self> {
        if index >= num_categories {
            return Err(Error::InvalidCategory {
                index,
                num_categories,
            });
        }
        Ok(Self(index))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_defect(self) -> bool {
        self.0 != 0
    }

    /// Display name under the default four-category scheme.
    pub fn name(self) -> &'static str {
        match self.0 {
            0 => "fresh",
            1 => "bruise_defect",
            2 => "rot_defect",
            3 => "scab_defect",
            _ => "unknown",
        }
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryQuality {
    Normal,
    Defect,
}

impl BinaryQuality {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Defect => "defect",
        }
    }
}

/// Collapses a category into the normal/defect decision: only fresh is normal.
pub fn to_binary(label: CategoryLabel) -> BinaryQuality {
    if label.is_defect() {
        BinaryQuality::Defect
    } else {
        BinaryQuality::Normal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u64,
    pub bbox: BoundingBox,
    pub score: f64,
    pub category_observation: Option<CategoryLabel>,
}

impl Detection {
    pub fn new(
        frame_index: u64,
        bbox: BoundingBox,
        score: f64,
        category_observation: Option<CategoryLabel>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            frame_index,
            bbox,
            score,
            category_observation,
        })
    }
}

/// All detections reported for one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub detections: Vec<Detection>,
}

impl FrameDetections {
    pub fn new(frame_index: u64, detections: Vec<Detection>) -> Result<Self> {
        if let Some(d) = detections.iter().find(|d| d.frame_index != frame_index) {
            return Err(Error::FrameMismatch {
                frame: frame_index,
                detection: d.frame_index,
            });
        }
        Ok(Self {
            frame_index,
            detections,
        })
    }

    pub fn empty(frame_index: u64) -> Self {
        Self {
            frame_index,
            detections: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

pub type TrackId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
    Removed,
}

/// A persistent object identity with its motion state, box history and
/// per-frame category predictions.
#[derive(Debug, Clone)]
pub struct Track {
    pub(crate) id: TrackId,
    pub(crate) state: KalmanState,
    pub(crate) status: TrackStatus,
    pub(crate) history: Vec<(u64, BoundingBox)>,
    pub(crate) predictions: PredictionBuffer,
    pub(crate) last_update_frame: u64,
    pub(crate) hit_count: usize,
}

impl Track {
    /// Rebuilds a finished track from stored observations, e.g. a track file.
    /// The motion state is re-initiated from the last box.
    pub fn from_observations(
        id: TrackId,
        history: Vec<(u64, BoundingBox)>,
        predictions: PredictionBuffer,
    ) -> Result<Self> {
        let Some(&(last_frame, last_box)) = history.last() else {
            return Err(Error::EmptyInput("track history"));
        };
        if let Some(w) = history.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::OutOfOrderFrame {
                previous: w[0].0,
                got: w[1].0,
            });
        }
        if let Some(&(f, _)) = predictions
            .entries()
            .iter()
            .find(|(f, _)| history.binary_search_by_key(f, |h| h.0).is_err())
        {
            return Err(Error::Config(format!(
                "track {id} has a prediction on frame {f} without a box"
            )));
        }
        Ok(Self {
            id,
            state: crate::kalman::kf_initiate(&last_box, &Default::default()),
            status: TrackStatus::Removed,
            hit_count: history.len(),
            last_update_frame: last_frame,
            history,
            predictions,
        })
    }

    pub fn id(&self) -> TrackId {
        self.id
    }

    pub fn state(&self) -> &KalmanState {
        &self.state
    }

    pub fn status(&self) -> TrackStatus {
        self.status
    }

    /// Observed boxes on the frames where the track was matched.
    pub fn history(&self) -> &[(u64, BoundingBox)] {
        &self.history
    }

    pub fn predictions(&self) -> &PredictionBuffer {
        &self.predictions
    }

    pub fn last_update_frame(&self) -> u64 {
        self.last_update_frame
    }

    pub fn hit_count(&self) -> usize {
        self.hit_count
    }

    /// Track length `k`: number of frames the track was observed on.
    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn box_at(&self, frame_index: u64) -> Option<&BoundingBox> {
        self.history
            .binary_search_by_key(&frame_index, |(f, _)| *f)
            .ok()
            .map(|i| &self.history[i].1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(0., 0., 2., 2.)), 1.0);
        assert_eq!(iou(&bb(0., 0., 1., 1.), &bb(5., 5., 1., 1.)), 0.0);
        assert!((iou(&bb(0., 0., 2., 2.), &bb(1., 0., 2., 2.)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn touching_edges_do_not_overlap() {
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(2., 0., 2., 2.)), 0.0);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoundingBox::new(0., 0., 0., 1.).is_err());
        assert!(BoundingBox::new(0., 0., 1., -1.).is_err());
        assert!(BoundingBox::new(f64::NAN, 0., 1., 1.).is_err());
        assert!(BoundingBox::new(0., f64::INFINITY, 1., 1.).is_err());
    }

    #[test]
    fn deserialize_validates() {
        let ok: BoundingBox = serde_json::from_str(r#"{"x":1,"y":2,"w":3,"h":4}"#).unwrap();
        assert_eq!(ok, bb(1., 2., 3., 4.));
        assert!(serde_json::from_str::<BoundingBox>(r#"{"x":1,"y":2,"w":0,"h":4}"#).is_err());
    }

    #[test]
    fn binary_collapse() {
        assert_eq!(to_binary(CategoryLabel::FRESH), BinaryQuality::Normal);
        assert_eq!(to_binary(CategoryLabel::BRUISE), BinaryQuality::Defect);
        assert_eq!(to_binary(CategoryLabel::ROT), BinaryQuality::Defect);
        assert_eq!(to_binary(CategoryLabel::SCAB), BinaryQuality::Defect);
    }

    #[test]
    fn category_range_checked() {
        assert!(CategoryLabel::new(3, 4).is_ok());
        assert!(CategoryLabel::new(4, 4).is_err());
        assert!(CategoryLabel::new(5, 6).is_ok());
    }

    #[test]
    fn score_range_checked() {
        let b = bb(0., 0., 1., 1.);
        assert!(Detection::new(0, b, 1.0, None).is_ok());
        assert!(Detection::new(0, b, 1.01, None).is_err());
        assert!(Detection::new(0, b, -0.1, None).is_err());
        assert!(Detection::new(0, b, f64::NAN, None).is_err());
    }

    #[test]
    fn frame_grouping_checked() {
        let d = Detection::new(3, bb(0., 0., 1., 1.), 0.5, None).unwrap();
        assert!(FrameDetections::new(3, vec![d.clone()]).is_ok());
        assert!(FrameDetections::new(4, vec![d]).is_err());
    }
}
