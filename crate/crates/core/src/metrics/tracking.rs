use std::collections::BTreeMap;

use crate::model::{iou, BoundingBox, Track, TrackId};
use crate::sim::SceneGroundTruth;

/// Minimum IoU for a track box to cover a ground-truth box.
pub const ID_SWITCH_IOU: f64 = 0.5;

fn boxes_by_frame(tracks: &[Track]) -> BTreeMap<u64, Vec<(TrackId, BoundingBox)>> {
    let mut by_frame: BTreeMap<u64, Vec<(TrackId, BoundingBox)>> = BTreeMap::new();
    for track in tracks {
        for &(f, b) in track.history() {
            by_frame.entry(f).or_default().push((track.id(), b));
        }
    }
    by_frame
}

/// Best covering track for a box: highest IoU at or above the threshold, lowest id on ties.
fn best_cover(candidates: Option<&Vec<(TrackId, BoundingBox)>>, target: &BoundingBox) -> Option<TrackId> {
    let mut best: Option<(TrackId, f64)> = None;
    for &(id, b) in candidates.into_iter().flatten() {
        let overlap = iou(&b, target);
        if overlap < ID_SWITCH_IOU {
            continue;
        }
        best = match best {
            Some((bid, bo)) if bo > overlap || (bo == overlap && bid < id) => Some((bid, bo)),
            _ => Some((id, overlap)),
        };
    }
    best.map(|(id, _)| id)
}

/// Counts identity handoffs: for each ground-truth object, the number of
/// covered frames whose covering track differs from the previously covering one.
/// Frames with no covering track are skipped.
pub fn count_id_switches(tracks: &[Track], gt: &SceneGroundTruth) -> usize {
    let by_frame = boxes_by_frame(tracks);
    let mut switches = 0;
    for object in &gt.objects {
        let mut previous: Option<TrackId> = None;
        for (f, b) in &object.boxes {
            if let Some(id) = best_cover(by_frame.get(f), b) {
                if previous.is_some_and(|p| p != id) {
                    switches += 1;
                }
                previous = Some(id);
            }
        }
    }
    switches
}

/// Maps each track to the ground-truth object it overlaps (IoU ≥ 0.5) on the
/// most frames. Tracks that never overlap any object map to `None`.
pub fn match_tracks_to_objects(tracks: &[Track], gt: &SceneGroundTruth) -> BTreeMap<TrackId, Option<u64>> {
    let mut gt_by_frame: BTreeMap<u64, Vec<(u64, BoundingBox)>> = BTreeMap::new();
    for o in &gt.objects {
        for &(f, b) in &o.boxes {
            gt_by_frame.entry(f).or_default().push((o.object_id, b));
        }
    }
    tracks
        .iter()
        .map(|track| {
            let mut votes: BTreeMap<u64, usize> = BTreeMap::new();
            for (f, b) in track.history() {
                let best = gt_by_frame
                    .get(f)
                    .into_iter()
                    .flatten()
                    .map(|(oid, g)| (*oid, iou(b, g)))
                    .filter(|(_, o)| *o >= ID_SWITCH_IOU)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                if let Some((oid, _)) = best {
                    *votes.entry(oid).or_default() += 1;
                }
            }
            let owner = votes
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(oid, _)| oid);
            (track.id(), owner)
        })
        .collect()
}
