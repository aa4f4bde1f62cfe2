//! Line-oriented file formats.
//!
//! Detections, one per line:
//! `{"frame": 0, "x": 1.0, "y": 2.0, "w": 3.0, "h": 4.0, "score": 0.9, "category": 2}`
//! where `category` may be `null`. Ground truth uses the same box fields plus
//! `object_id` and `true_category`. Verdicts and per-frame track boxes are
//! written in the same style. A MOT-challenge text adapter reads
//! `frame,id,x,y,w,h,score,...` rows, which carry no category.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::aggregation::{record_prediction, PredictionBuffer, TrackVerdict};
use crate::error::{Error, Result};
use crate::model::{BoundingBox, CategoryLabel, Detection, FrameDetections, Track, TrackId};
use crate::sim::{GroundTruthObject, SceneGroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Jsonl,
    Mot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub format: InputFormat,
    pub num_categories: usize,
    /// Drop malformed lines with a warning instead of failing.
    pub skip_malformed: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            format: InputFormat::Jsonl,
            num_categories: crate::model::DEFAULT_NUM_CATEGORIES,
            skip_malformed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ingested {
    /// Detections grouped by frame, in increasing frame order.
    pub frames: Vec<FrameDetections>,
    /// `(line number, message)` for each skipped line.
    pub skipped: Vec<(usize, String)>,
    /// Whether the input had to be reordered by frame.
    pub reordered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: u64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub category: Option<usize>,
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection) -> Self {
        Self {
            frame: d.frame_index,
            x: d.bbox.x(),
            y: d.bbox.y(),
            w: d.bbox.w(),
            h: d.bbox.h(),
            score: d.score,
            category: d.category_observation.map(CategoryLabel::index),
        }
    }

    pub fn to_detection(&self, num_categories: usize) -> Result<Detection> {
        let bbox = BoundingBox::new(self.x, self.y, self.w, self.h)?;
        let category = self
            .category
            .map(|c| CategoryLabel::new(c, num_categories))
            .transpose()?;
        Detection::new(self.frame, bbox, self.score, category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub frame: u64,
    pub object_id: u64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub true_category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub track_id: TrackId,
    pub category: usize,
    pub binary: String,
    pub k: usize,
    pub votes: Vec<usize>,
    pub stability_frame_wise: f64,
}

impl VerdictRecord {
    pub fn new(verdict: &TrackVerdict, stability_frame_wise: f64) -> Self {
        Self {
            track_id: verdict.track_id,
            category: verdict.final_category.index(),
            binary: verdict.final_binary.as_str().to_owned(),
            k: verdict.track_length,
            votes: verdict.vote_counts.clone(),
            stability_frame_wise,
        }
    }
}

/// One observed track box with the category recorded on that frame, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: TrackId,
    pub frame: u64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub category: Option<usize>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Iterates over `(line_number, text)` for non-blank lines.
fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, line)| line.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

fn parse_jsonl_detection(text: &str, num_categories: usize) -> std::result::Result<Detection, String> {
    let record: DetectionRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
    record.to_detection(num_categories).map_err(|e| e.to_string())
}

fn parse_mot_detection(text: &str) -> std::result::Result<Detection, String> {
    let fields: Vec<&str> = text.split(',').map(str::trim).collect();
    if fields.len() < 7 {
        return Err(format!("expected at least 7 comma-separated fields, got {}", fields.len()));
    }
    let num = |i: usize, name: &str| {
        fields[i]
            .parse::<f64>()
            .map_err(|e| format!("field {name} ({:?}): {e}", fields[i]))
    };
    let frame = fields[0]
        .parse::<u64>()
        .map_err(|e| format!("field frame ({:?}): {e}", fields[0]))?;
    let bbox = BoundingBox::new(num(2, "x")?, num(3, "y")?, num(4, "w")?, num(5, "h")?).map_err(|e| e.to_string())?;
    Detection::new(frame, bbox, num(6, "score")?, None).map_err(|e| e.to_string())
}

/// Parses a detection stream and groups it by frame.
pub fn read_detections<R: BufRead>(reader: R, options: &IngestOptions) -> Result<Ingested> {
    let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut reordered = false;
    let mut last_frame: Option<u64> = None;
    for line in content_lines(reader) {
        let (number, text) = line?;
        if options.format == InputFormat::Mot && text.trim_start().starts_with('#') {
            continue;
        }
        let parsed = match options.format {
            InputFormat::Jsonl => parse_jsonl_detection(&text, options.num_categories),
            InputFormat::Mot => parse_mot_detection(&text),
        };
        match parsed {
            Ok(d) => {
                if last_frame.is_some_and(|f| d.frame_index < f) {
                    reordered = true;
                }
                last_frame = Some(d.frame_index);
                by_frame.entry(d.frame_index).or_default().push(d);
            }
            Err(message) if options.skip_malformed => {
                warn!("skipping line {number}: {message}");
                skipped.push((number, message));
            }
            Err(message) => return Err(Error::Parse { line: number, message }),
        }
    }
    if reordered {
        warn!("input frames were out of order and have been sorted in memory");
    }
    let frames = by_frame
        .into_iter()
        .map(|(frame_index, detections)| FrameDetections {
            frame_index,
            detections,
        })
        .collect();
    Ok(Ingested {
        frames,
        skipped,
        reordered,
    })
}

pub fn ingest_detections(path: impl AsRef<Path>, options: &IngestOptions) -> Result<Ingested> {
    read_detections(open(path.as_ref())?, options)
}

pub fn write_detections<W: Write>(frames: &[FrameDetections], mut writer: W) -> Result<()> {
    for frame in frames {
        for d in &frame.detections {
            serde_json::to_writer(&mut writer, &DetectionRecord::from_detection(d))?;
            writer.write_all(b"\n")?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn save_detections(frames: &[FrameDetections], path: impl AsRef<Path>) -> Result<()> {
    write_detections(frames, create(path.as_ref())?)
}

pub fn write_ground_truth<W: Write>(gt: &SceneGroundTruth, mut writer: W) -> Result<()> {
    let mut rows: Vec<GroundTruthRecord> = gt
        .objects
        .iter()
        .flat_map(|o| {
            o.boxes.iter().map(|(f, b)| GroundTruthRecord {
                frame: *f,
                object_id: o.object_id,
                x: b.x(),
                y: b.y(),
                w: b.w(),
                h: b.h(),
                true_category: o.true_category.index(),
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.object_id));
    for row in &rows {
        serde_json::to_writer(&mut writer, row)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_ground_truth(gt: &SceneGroundTruth, path: impl AsRef<Path>) -> Result<()> {
    write_ground_truth(gt, create(path.as_ref())?)
}

/// Reads a ground-truth file. Lane membership is not stored in the file and
/// comes back as lane 0.
pub fn read_ground_truth<R: BufRead>(reader: R, num_categories: usize) -> Result<SceneGroundTruth> {
    let mut objects: BTreeMap<u64, GroundTruthObject> = BTreeMap::new();
    for line in content_lines(reader) {
        let (number, text) = line?;
        let parse_err = |message: String| Error::Parse { line: number, message };
        let record: GroundTruthRecord = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        let bbox = BoundingBox::new(record.x, record.y, record.w, record.h).map_err(|e| parse_err(e.to_string()))?;
        let category =
            CategoryLabel::new(record.true_category, num_categories).map_err(|e| parse_err(e.to_string()))?;
        let object = objects.entry(record.object_id).or_insert_with(|| GroundTruthObject {
            object_id: record.object_id,
            true_category: category,
            lane: 0,
            boxes: Vec::new(),
        });
        if object.true_category != category {
            return Err(parse_err(format!(
                "object {} changes category from {} to {}",
                record.object_id, object.true_category, category
            )));
        }
        object.boxes.push((record.frame, bbox));
    }
    let mut objects: Vec<_> = objects.into_values().collect();
    for o in &mut objects {
        o.boxes.sort_by_key(|b| b.0);
        if o.boxes.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Parse {
                line: 0,
                message: format!("object {} has two boxes on one frame", o.object_id),
            });
        }
    }
    Ok(SceneGroundTruth { objects })
}

pub fn load_ground_truth(path: impl AsRef<Path>, num_categories: usize) -> Result<SceneGroundTruth> {
    read_ground_truth(open(path.as_ref())?, num_categories)
}

pub fn write_verdicts<W: Write>(verdicts: &[VerdictRecord], mut writer: W) -> Result<()> {
    for v in verdicts {
        serde_json::to_writer(&mut writer, v)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_verdicts(verdicts: &[VerdictRecord], path: impl AsRef<Path>) -> Result<()> {
    write_verdicts(verdicts, create(path.as_ref())?)
}

pub fn read_verdicts<R: BufRead>(reader: R) -> Result<Vec<VerdictRecord>> {
    content_lines(reader)
        .map(|line| {
            let (number, text) = line?;
            let record: VerdictRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: number,
                message: e.to_string(),
            })?;
            if record.binary != "normal" && record.binary != "defect" {
                return Err(Error::Parse {
                    line: number,
                    message: format!("binary must be \"normal\" or \"defect\", got {:?}", record.binary),
                });
            }
            Ok(record)
        })
        .collect()
}

pub fn load_verdicts(path: impl AsRef<Path>) -> Result<Vec<VerdictRecord>> {
    read_verdicts(open(path.as_ref())?)
}

pub fn write_tracks<W: Write>(tracks: &[Track], mut writer: W) -> Result<()> {
    for track in tracks {
        let mut predictions = track.predictions().entries().iter().peekable();
        for &(frame, b) in track.history() {
            while predictions.next_if(|(f, _)| *f < frame).is_some() {}
            let category = predictions.next_if(|(f, _)| *f == frame).map(|(_, c)| c.index());
            let record = TrackRecord {
                track_id: track.id(),
                frame,
                x: b.x(),
                y: b.y(),
                w: b.w(),
                h: b.h(),
                category,
            };
            serde_json::to_writer(&mut writer, &record)?;
            writer.write_all(b"\n")?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn save_tracks(tracks: &[Track], path: impl AsRef<Path>) -> Result<()> {
    write_tracks(tracks, create(path.as_ref())?)
}

pub fn read_tracks<R: BufRead>(reader: R, num_categories: usize) -> Result<Vec<Track>> {
    let mut rows: BTreeMap<TrackId, (Vec<(u64, BoundingBox)>, PredictionBuffer)> = BTreeMap::new();
    for line in content_lines(reader) {
        let (number, text) = line?;
        let parse_err = |message: String| Error::Parse { line: number, message };
        let record: TrackRecord = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        let bbox = BoundingBox::new(record.x, record.y, record.w, record.h).map_err(|e| parse_err(e.to_string()))?;
        let (history, predictions) = rows
            .entry(record.track_id)
            .or_insert_with(|| (Vec::new(), PredictionBuffer::new(record.track_id)));
        if history.last().is_some_and(|(f, _)| *f >= record.frame) {
            return Err(parse_err(format!("track {} frames must increase", record.track_id)));
        }
        history.push((record.frame, bbox));
        if let Some(c) = record.category {
            let label = CategoryLabel::new(c, num_categories).map_err(|e| parse_err(e.to_string()))?;
            record_prediction(predictions, record.frame, label).map_err(|e| parse_err(e.to_string()))?;
        }
    }
    rows.into_iter()
        .map(|(id, (history, predictions))| Track::from_observations(id, history, predictions))
        .collect()
}

pub fn load_tracks(path: impl AsRef<Path>, num_categories: usize) -> Result<Vec<Track>> {
    read_tracks(open(path.as_ref())?, num_categories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scene, SimConfig};

    fn read(text: &str, options: &IngestOptions) -> Result<Ingested> {
        read_detections(text.as_bytes(), options)
    }

    #[test]
    fn groups_valid_lines_by_frame() {
        let text = r#"{"frame":0,"x":1,"y":2,"w":3,"h":4,"score":0.9,"category":2}
{"frame":0,"x":10,"y":2,"w":3,"h":4,"score":0.5,"category":null}

{"frame":1,"x":1.5,"y":2,"w":3,"h":4,"score":0.8,"category":0}
"#;
        let ingested = read(text, &IngestOptions::default()).unwrap();
        assert_eq!(ingested.frames.len(), 2);
        assert_eq!(ingested.frames[0].len(), 2);
        assert_eq!(ingested.frames[0].detections[0].category_observation, Some(CategoryLabel::ROT));
        assert_eq!(ingested.frames[0].detections[1].category_observation, None);
        assert!(!ingested.reordered);
    }

    #[test]
    fn zero_width_rejected_with_line_number() {
        let text = r#"{"frame":0,"x":1,"y":2,"w":3,"h":4,"score":0.9,"category":2}
{"frame":1,"x":1,"y":2,"w":0,"h":4,"score":0.9,"category":2}
"#;
        match read(text, &IngestOptions::default()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("positive"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let lenient = IngestOptions {
            skip_malformed: true,
            ..Default::default()
        };
        let ingested = read(text, &lenient).unwrap();
        assert_eq!(ingested.skipped.len(), 1);
        assert_eq!(ingested.skipped[0].0, 2);
        assert_eq!(ingested.frames.len(), 1);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            r#"{"frame":0,"x":1,"y":2,"w":3,"h":4,"score":1.2,"category":0}"#,
            r#"{"frame":0,"x":1,"y":2,"w":3,"h":4,"score":0.5,"category":7}"#,
            r#"{"frame":0,"x":1,"y":2,"w":3,"h":4,"score":0.5,"category":0,"extra":1}"#,
            r#"{"frame":-1,"x":1,"y":2,"w":3,"h":4,"score":0.5,"category":0}"#,
            r#"not json"#,
        ];
        for line in bad {
            assert!(read(line, &IngestOptions::default()).is_err(), "{line}");
        }
    }

    #[test]
    fn out_of_order_frames_are_sorted() {
        let text = r#"{"frame":3,"x":1,"y":2,"w":3,"h":4,"score":0.9,"category":null}
{"frame":1,"x":1,"y":2,"w":3,"h":4,"score":0.9,"category":null}
"#;
        let ingested = read(text, &IngestOptions::default()).unwrap();
        assert!(ingested.reordered);
        let frames: Vec<u64> = ingested.frames.iter().map(|f| f.frame_index).collect();
        assert_eq!(frames, vec![1, 3]);
    }

    #[test]
    fn mot_adapter() {
        let text = "# frame,id,x,y,w,h,score\n1,-1,10,20,30,40,0.75,-1,-1,-1\n2,-1,12,20,30,40,0.5\n";
        let options = IngestOptions {
            format: InputFormat::Mot,
            ..Default::default()
        };
        let ingested = read(text, &options).unwrap();
        assert_eq!(ingested.frames.len(), 2);
        let d = &ingested.frames[0].detections[0];
        assert_eq!((d.frame_index, d.score, d.category_observation), (1, 0.75, None));
        assert_eq!(d.bbox, BoundingBox::new(10., 20., 30., 40.).unwrap());
        assert!(read("1,-1,10,20", &options).is_err());
    }

    #[test]
    fn simulated_scene_round_trips() {
        let (gt, frames) = generate_scene(&SimConfig {
            n_frames: 120,
            ..Default::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_detections(&frames, &mut buf).unwrap();
        let back = read_detections(buf.as_slice(), &IngestOptions::default()).unwrap();
        let non_empty: Vec<_> = frames.into_iter().filter(|f| !f.is_empty()).collect();
        assert_eq!(back.frames, non_empty);

        let mut buf = Vec::new();
        write_ground_truth(&gt, &mut buf).unwrap();
        let back = read_ground_truth(buf.as_slice(), 4).unwrap();
        assert_eq!(back.objects.len(), gt.objects.len());
        for (a, b) in back.objects.iter().zip(&gt.objects) {
            assert_eq!((a.object_id, a.true_category, &a.boxes), (b.object_id, b.true_category, &b.boxes));
        }
    }

    #[test]
    fn verdict_lines_have_exact_field_names() {
        let record = VerdictRecord {
            track_id: 3,
            category: 2,
            binary: "defect".into(),
            k: 4,
            votes: vec![1, 0, 3, 0],
            stability_frame_wise: 0.5,
        };
        let mut buf = Vec::new();
        write_verdicts(std::slice::from_ref(&record), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"track_id\":3,\"category\":2,\"binary\":\"defect\",\"k\":4,\"votes\":[1,0,3,0],\"stability_frame_wise\":0.5}\n"
        );
        assert_eq!(read_verdicts(buf.as_slice()).unwrap(), vec![record]);
        assert!(read_verdicts(&br#"{"track_id":1,"category":0,"binary":"ok","k":1,"votes":[1],"stability_frame_wise":1.0}"#[..]).is_err());
    }

    #[test]
    fn detection_lines_have_exact_field_names() {
        let d = Detection::new(5, BoundingBox::new(1.5, 2.0, 3.0, 4.0).unwrap(), 0.25, None).unwrap();
        let mut buf = Vec::new();
        write_detections(&[FrameDetections::new(5, vec![d]).unwrap()], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"frame\":5,\"x\":1.5,\"y\":2.0,\"w\":3.0,\"h\":4.0,\"score\":0.25,\"category\":null}\n"
        );
    }
}
