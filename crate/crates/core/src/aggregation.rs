//! Per-track prediction buffers and track-level majority voting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{to_binary, BinaryQuality, CategoryLabel, TrackId, DEFAULT_NUM_CATEGORIES};

/// How to resolve equal vote counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Any defect category beats fresh; among defects the lowest index wins.
    #[default]
    PreferDefect,
    LowestIndex,
}

/// Whether the vote runs over the full category set or over binary labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteOrder {
    #[default]
    VoteThenCollapse,
    /// Binary majority first; the reported category is then the most voted
    /// category on the winning side.
    CollapseThenVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub num_categories: usize,
    pub tie_break: TieBreak,
    pub vote_order: VoteOrder,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            num_categories: DEFAULT_NUM_CATEGORIES,
            tie_break: TieBreak::default(),
            vote_order: VoteOrder::default(),
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 {
            return Err(Error::Config("num_categories must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionBuffer {
    track_id: TrackId,
    entries: Vec<(u64, CategoryLabel)>,
}

impl PredictionBuffer {
    pub fn new(track_id: TrackId) -> Self {
        Self {
            track_id,
            entries: Vec::new(),
        }
    }

    pub fn track_id(&self) -> TrackId {
        self.track_id
    }

    pub fn entries(&self) -> &[(u64, CategoryLabel)] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = CategoryLabel> + '_ {
        self.entries.iter().map(|&(_, l)| l)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<CategoryLabel> {
        self.entries.last().map(|&(_, l)| l)
    }
}

/// Appends a prediction; frame indices must strictly increase.
pub fn record_prediction(
    buffer: &mut PredictionBuffer,
    frame_index: u64,
    label: CategoryLabel,
) -> Result<()> {
    if let Some(&(previous, _)) = buffer.entries.last() {
        if frame_index <= previous {
            return Err(Error::OutOfOrderFrame {
                previous,
                got: frame_index,
            });
        }
    }
    buffer.entries.push((frame_index, label));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackVerdict {
    pub track_id: TrackId,
    pub final_category: CategoryLabel,
    pub final_binary: BinaryQuality,
    pub vote_counts: Vec<usize>,
    /// Number of predictions the vote ran over.
    pub track_length: usize,
}

fn vote_counts(labels: impl Iterator<Item = CategoryLabel>, num_categories: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_categories];
    for label in labels {
        if let Some(slot) = counts.get_mut(label.index()) {
            *slot += 1;
        } else {
            // Labels beyond the configured range widen the count vector.
            counts.resize(label.index() + 1, 0);
            counts[label.index()] += 1;
        }
    }
    counts
}

/// Index of the winning category among `candidates` (all with count > 0 or the full range).
fn argmax(counts: &[usize], candidates: impl Iterator<Item = usize>, tie_break: TieBreak) -> usize {
    let mut best: Option<usize> = None;
    for c in candidates {
        best = match best {
            None => Some(c),
            Some(b) if counts[c] > counts[b] => Some(c),
            Some(b) if counts[c] == counts[b] && tie_break == TieBreak::PreferDefect && b == 0 && c != 0 => {
                Some(c)
            }
            keep => keep,
        };
    }
    best.expect("non-empty candidate set")
}

fn decide(counts: &[usize], config: &AggregationConfig) -> CategoryLabel {
    let index = match config.vote_order {
        VoteOrder::VoteThenCollapse => argmax(counts, 0..counts.len(), config.tie_break),
        VoteOrder::CollapseThenVote => {
            let normal = counts[0];
            let defect: usize = counts[1..].iter().sum();
            let defect_wins = defect > normal
                || (defect == normal && config.tie_break == TieBreak::PreferDefect && defect > 0);
            if defect_wins {
                argmax(counts, 1..counts.len(), config.tie_break)
            } else {
                0
            }
        }
    };
    CategoryLabel::new(index, counts.len()).expect("index within counts")
}

/// Track-level label as the most frequent per-frame category.
pub fn majority_vote(buffer: &PredictionBuffer, config: &AggregationConfig) -> Result<TrackVerdict> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer(buffer.track_id));
    }
    let counts = vote_counts(buffer.labels(), config.num_categories);
    let final_category = decide(&counts, config);
    Ok(TrackVerdict {
        track_id: buffer.track_id,
        final_category,
        final_binary: to_binary(final_category),
        vote_counts: counts,
        track_length: buffer.len(),
    })
}

/// Per-frame binary labels with no aggregation.
pub fn frame_wise_verdicts(buffer: &PredictionBuffer) -> Result<Vec<BinaryQuality>> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer(buffer.track_id));
    }
    Ok(buffer.labels().map(to_binary).collect())
}

/// Incremental vote for live displays: re-reports the running majority after
/// each observation.
#[derive(Debug, Clone)]
pub struct RunningVote {
    config: AggregationConfig,
    counts: Vec<usize>,
    total: usize,
}

impl RunningVote {
    pub fn new(config: AggregationConfig) -> Self {
        Self {
            counts: vec![0; config.num_categories],
            config,
            total: 0,
        }
    }

    pub fn observe(&mut self, label: CategoryLabel) -> CategoryLabel {
        if label.index() >= self.counts.len() {
            self.counts.resize(label.index() + 1, 0);
        }
        self.counts[label.index()] += 1;
        self.total += 1;
        decide(&self.counts, &self.config)
    }

    pub fn current(&self) -> Option<CategoryLabel> {
        (self.total > 0).then(|| decide(&self.counts, &self.config))
    }

    pub fn total(&self) -> usize {
        self.total
    }
}
