//! Seeded synthetic conveyor scenes.
//!
//! Objects ride a horizontal belt (x increases) in fixed lanes. Each object
//! enters at the left edge, moves exactly `belt_velocity` px per frame, and is
//! visible until its left edge passes the right border of the frame. The
//! detection stream is the ground truth passed through dropout, box jitter,
//! score noise, false positives and i.i.d. per-frame label flips.
//!
//! All randomness comes from a single `ChaCha8Rng` seeded with `seed`, drawn in
//! a fixed order, so a config always reproduces the same scene.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, CategoryLabel, Detection, FrameDetections, DEFAULT_NUM_CATEGORIES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub n_lanes: usize,
    /// Vertical distance between lane centers; lane `i` is centered at
    /// `lane_spacing * (i + 0.5)`.
    pub lane_spacing: f64,
    /// Pixels per frame along +x.
    pub belt_velocity: f64,
    pub spawn_interval_frames: u64,
    /// Uniform jitter in `[-j, +j]` frames added to each spawn interval.
    pub spawn_jitter_frames: u64,
    pub box_size_mean: f64,
    pub box_size_std: f64,
    /// Spawn horizon. Objects spawn only before this frame; the scene runs on
    /// until every spawned object has left the frame.
    pub n_frames: u64,
    pub max_objects: Option<usize>,
    pub frame_width: f64,
    pub frame_height: f64,
    pub num_categories: usize,
    pub defect_probability: f64,
    /// Relative weights of the defect categories `1..num_categories`.
    pub defect_category_weights: Vec<f64>,
    pub detection_dropout_prob: f64,
    pub bbox_jitter_std: f64,
    /// Expected false positives per frame.
    pub false_positive_rate: f64,
    pub score_mean_true: f64,
    pub score_std_true: f64,
    pub score_mean_fp: f64,
    pub score_std_fp: f64,
    pub label_flip_prob: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_lanes: 2,
            lane_spacing: 140.0,
            belt_velocity: 8.0,
            spawn_interval_frames: 24,
            spawn_jitter_frames: 4,
            box_size_mean: 60.0,
            box_size_std: 4.0,
            n_frames: 600,
            max_objects: None,
            frame_width: 640.0,
            frame_height: 480.0,
            num_categories: DEFAULT_NUM_CATEGORIES,
            defect_probability: 0.3,
            defect_category_weights: vec![1.0; DEFAULT_NUM_CATEGORIES - 1],
            detection_dropout_prob: 0.05,
            bbox_jitter_std: 1.0,
            false_positive_rate: 0.05,
            score_mean_true: 0.85,
            score_std_true: 0.08,
            score_mean_fp: 0.3,
            score_std_fp: 0.1,
            label_flip_prob: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let probs = [
            ("defect_probability", self.defect_probability),
            ("detection_dropout_prob", self.detection_dropout_prob),
            ("label_flip_prob", self.label_flip_prob),
            ("score_mean_true", self.score_mean_true),
            ("score_mean_fp", self.score_mean_fp),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        if !(self.lane_spacing > 0.0) {
            return fail("lane_spacing must be positive".into());
        }
        if !(self.belt_velocity > 0.0) {
            return fail("belt_velocity must be positive".into());
        }
        if self.n_lanes == 0 {
            return fail("n_lanes must be at least 1".into());
        }
        if self.n_lanes as f64 * self.lane_spacing > self.frame_height {
            return fail("lanes do not fit in frame_height".into());
        }
        if !(self.frame_width > 0.0 && self.frame_height > 0.0) {
            return fail("frame dimensions must be positive".into());
        }
        if self.spawn_interval_frames == 0 || self.spawn_jitter_frames >= self.spawn_interval_frames {
            return fail("spawn_interval_frames must be positive and exceed spawn_jitter_frames".into());
        }
        if !(self.box_size_mean >= 1.0) || !(self.box_size_std >= 0.0) {
            return fail("box_size_mean must be at least 1 and box_size_std non-negative".into());
        }
        if !(self.bbox_jitter_std >= 0.0 && self.score_std_true >= 0.0 && self.score_std_fp >= 0.0) {
            return fail("standard deviations must be non-negative".into());
        }
        if !(self.false_positive_rate >= 0.0) || !self.false_positive_rate.is_finite() {
            return fail("false_positive_rate must be a non-negative number".into());
        }
        if self.num_categories < 2 {
            return fail("num_categories must be at least 2".into());
        }
        if self.defect_category_weights.len() != self.num_categories - 1
            || self.defect_category_weights.iter().any(|w| !(*w >= 0.0))
            || self.defect_category_weights.iter().sum::<f64>() <= 0.0
        {
            return fail(format!(
                "defect_category_weights needs {} non-negative weights with a positive sum",
                self.num_categories - 1
            ));
        }
        Ok(())
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        self.lane_spacing * (lane as f64 + 0.5)
    }

    /// Bounds on sampled box sizes (mean ± 3 std, at least 1 px).
    pub fn box_size_range(&self) -> (f64, f64) {
        let lo = (self.box_size_mean - 3.0 * self.box_size_std).max(1.0);
        let hi = (self.box_size_mean + 3.0 * self.box_size_std).max(lo);
        (lo, hi)
    }

    /// Number of frames an object of width `w` stays visible on an unbounded scene.
    pub fn visible_frames(&self, w: f64) -> u64 {
        // Visible for j >= 0 while -w + v * (j + 1) < W.
        let mut j = ((self.frame_width + w) / self.belt_velocity - 1.0).ceil().max(0.0) as u64;
        while j > 0 && -w + self.belt_velocity * (j as f64) >= self.frame_width {
            j -= 1;
        }
        while -w + self.belt_velocity * ((j + 1) as f64) < self.frame_width {
            j += 1;
        }
        j
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub object_id: u64,
    pub true_category: CategoryLabel,
    pub lane: usize,
    /// True box on every frame the object is visible, in frame order.
    pub boxes: Vec<(u64, BoundingBox)>,
}

impl GroundTruthObject {
    pub fn box_at(&self, frame_index: u64) -> Option<&BoundingBox> {
        self.boxes
            .binary_search_by_key(&frame_index, |(f, _)| *f)
            .ok()
            .map(|i| &self.boxes[i].1)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneGroundTruth {
    pub objects: Vec<GroundTruthObject>,
}

impl SceneGroundTruth {
    pub fn object(&self, object_id: u64) -> Option<&GroundTruthObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    /// Ground truth as per-frame detections with score 1 and the true category,
    /// for detection evaluation.
    pub fn frames(&self) -> Vec<FrameDetections> {
        let mut by_frame: std::collections::BTreeMap<u64, Vec<Detection>> = Default::default();
        for o in &self.objects {
            for &(f, b) in &o.boxes {
                by_frame.entry(f).or_default().push(Detection {
                    frame_index: f,
                    bbox: b,
                    score: 1.0,
                    category_observation: Some(o.true_category),
                });
            }
        }
        by_frame
            .into_iter()
            .map(|(frame_index, detections)| FrameDetections {
                frame_index,
                detections,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneStatistics {
    pub object_count: usize,
    pub defect_count: usize,
    pub defect_fraction: f64,
    pub mean_lifetime: f64,
}

pub fn scene_statistics(gt: &SceneGroundTruth) -> SceneStatistics {
    let object_count = gt.objects.len();
    if object_count == 0 {
        return SceneStatistics {
            object_count: 0,
            defect_count: 0,
            defect_fraction: 0.0,
            mean_lifetime: 0.0,
        };
    }
    let defect_count = gt.objects.iter().filter(|o| o.true_category.is_defect()).count();
    let total_lifetime: usize = gt.objects.iter().map(|o| o.boxes.len()).sum();
    SceneStatistics {
        object_count,
        defect_count,
        defect_fraction: defect_count as f64 / object_count as f64,
        mean_lifetime: total_lifetime as f64 / object_count as f64,
    }
}

struct Spawn {
    frame: u64,
    lane: usize,
}

fn spawn_schedule(config: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Spawn> {
    let interval = config.spawn_interval_frames as i64;
    let jitter = config.spawn_jitter_frames as i64;
    let mut spawns = Vec::new();
    for lane in 0..config.n_lanes {
        let mut frame = rng.random_range(0..=interval) as u64;
        while frame < config.n_frames {
            spawns.push(Spawn { frame, lane });
            let step = interval + rng.random_range(-jitter..=jitter);
            frame += step as u64;
        }
    }
    spawns.sort_by_key(|s| (s.frame, s.lane));
    if let Some(max) = config.max_objects {
        spawns.truncate(max);
    }
    spawns
}

fn other_category(truth: CategoryLabel, num_categories: usize, rng: &mut ChaCha8Rng) -> CategoryLabel {
    let mut index = rng.random_range(0..num_categories - 1);
    if index >= truth.index() {
        index += 1;
    }
    CategoryLabel::new(index, num_categories).expect("index in range")
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("validated standard deviation")
}

/// Generates the ground truth and the noisy detection stream for one scene.
/// The stream contains one entry per frame, including empty frames.
pub fn generate_scene(config: &SimConfig) -> Result<(SceneGroundTruth, Vec<FrameDetections>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (size_lo, size_hi) = config.box_size_range();
    let size_dist = normal(config.box_size_mean, config.box_size_std);
    let defect_dist = WeightedIndex::new(&config.defect_category_weights)
        .map_err(|e| Error::Config(format!("defect_category_weights: {e}")))?;

    let mut objects = Vec::new();
    for (i, spawn) in spawn_schedule(config, &mut rng).into_iter().enumerate() {
        let size = size_dist.sample(&mut rng).clamp(size_lo, size_hi);
        let true_category = if rng.random_bool(config.defect_probability) {
            CategoryLabel::new(1 + defect_dist.sample(&mut rng), config.num_categories)?
        } else {
            CategoryLabel::FRESH
        };
        let y = config.lane_center(spawn.lane) - size / 2.0;
        let boxes = (0..config.visible_frames(size))
            .map(|j| {
                let x = -size + config.belt_velocity * (j + 1) as f64;
                BoundingBox::new(x, y, size, size).map(|b| (spawn.frame + j, b))
            })
            .collect::<Result<Vec<_>>>()?;
        objects.push(GroundTruthObject {
            object_id: i as u64 + 1,
            true_category,
            lane: spawn.lane,
            boxes,
        });
    }

    let last_frame = objects
        .iter()
        .filter_map(|o| o.boxes.last().map(|b| b.0 + 1))
        .max()
        .unwrap_or(0)
        .max(config.n_frames);

    let jitter = (config.bbox_jitter_std > 0.0).then(|| normal(0.0, config.bbox_jitter_std));
    let score_true = normal(config.score_mean_true, config.score_std_true);
    let score_fp = normal(config.score_mean_fp, config.score_std_fp);
    let fp_count = (config.false_positive_rate > 0.0)
        .then(|| Poisson::new(config.false_positive_rate).expect("validated rate"));

    // Per-object position in its box list.
    let mut frames = Vec::with_capacity(last_frame as usize);
    let mut cursor = vec![0usize; objects.len()];
    for frame in 0..last_frame {
        let mut detections = Vec::new();
        for (o, pos) in objects.iter().zip(cursor.iter_mut()) {
            let Some(&(f, truth)) = o.boxes.get(*pos) else {
                continue;
            };
            if f != frame {
                continue;
            }
            *pos += 1;
            if rng.random_bool(config.detection_dropout_prob) {
                continue;
            }
            let bbox = match &jitter {
                Some(n) => {
                    let (dx, dy) = (n.sample(&mut rng), n.sample(&mut rng));
                    let (dw, dh) = (n.sample(&mut rng), n.sample(&mut rng));
                    BoundingBox::new(
                        truth.x() + dx,
                        truth.y() + dy,
                        (truth.w() + dw).max(1.0),
                        (truth.h() + dh).max(1.0),
                    )?
                }
                None => truth,
            };
            let score = score_true.sample(&mut rng).clamp(0.0, 1.0);
            let observed = if config.label_flip_prob > 0.0 && rng.random_bool(config.label_flip_prob) {
                other_category(o.true_category, config.num_categories, &mut rng)
            } else {
                o.true_category
            };
            detections.push(Detection {
                frame_index: frame,
                bbox,
                score,
                category_observation: Some(observed),
            });
        }
        if let Some(poisson) = &fp_count {
            let n = poisson.sample(&mut rng) as usize;
            for _ in 0..n {
                let size = size_dist.sample(&mut rng).clamp(size_lo, size_hi);
                let x = rng.random_range(0.0..config.frame_width) - size / 2.0;
                let y = rng.random_range(0.0..config.frame_height) - size / 2.0;
                let score = score_fp.sample(&mut rng).clamp(0.0, 1.0);
                let category = CategoryLabel::new(rng.random_range(0..config.num_categories), config.num_categories)?;
                detections.push(Detection {
                    frame_index: frame,
                    bbox: BoundingBox::new(x, y, size, size)?,
                    score,
                    category_observation: Some(category),
                });
            }
        }
        frames.push(FrameDetections {
            frame_index: frame,
            detections,
        });
    }

    Ok((SceneGroundTruth { objects }, frames))
}
