//! IoU cost matrices and optimal linear assignment (Kuhn-Munkres) with
//! post-hoc gating.

use crate::error::{Error, Result};
use crate::model::{iou, BoundingBox};

/// Dense row-major cost matrix, rows are tracks and columns are detections.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "cost matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("cost matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Config("ragged cost matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentResult {
    /// `(track_index, detection_index)` pairs, sorted by track index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl AssignmentResult {
    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(r, c)| costs.get(r, c)).sum()
    }
}

/// Entry `(i, j)` is `1 - iou(tracks[i], dets[j])`.
pub fn build_cost_matrix(track_boxes: &[BoundingBox], det_boxes: &[BoundingBox]) -> CostMatrix {
    let data = track_boxes
        .iter()
        .flat_map(|t| det_boxes.iter().map(move |d| 1.0 - iou(t, d)))
        .collect();
    CostMatrix {
        rows: track_boxes.len(),
        cols: det_boxes.len(),
        data,
    }
}

/// Minimum-cost one-to-one matching; matched pairs costing more than
/// `max_cost` are reported as unmatched. Pass `f64::INFINITY` to disable gating.
pub fn solve_assignment(costs: &CostMatrix, max_cost: f64) -> AssignmentResult {
    let mut result = AssignmentResult::default();
    let mut row_taken = vec![false; costs.rows];
    let mut col_taken = vec![false; costs.cols];

    if !costs.is_empty() {
        for (row, col) in hungarian(costs) {
            if costs.get(row, col) <= max_cost {
                row_taken[row] = true;
                col_taken[col] = true;
                result.matches.push((row, col));
            }
        }
    }
    result.unmatched_tracks = (0..costs.rows).filter(|&r| !row_taken[r]).collect();
    result.unmatched_detections = (0..costs.cols).filter(|&c| !col_taken[c]).collect();
    result
}

/// Shortest augmenting path Hungarian method on the matrix padded to square.
/// Returns the real (non-padding) pairs sorted by row.
fn hungarian(costs: &CostMatrix) -> Vec<(usize, usize)> {
    let n = costs.rows.max(costs.cols);
    let pad = costs.data.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let cost = |r: usize, c: usize| {
        if r < costs.rows && c < costs.cols {
            costs.get(r, c)
        } else {
            pad
        }
    };

    // 1-based potentials and matching; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let slack = cost(r0 - 1, col - 1) - u[r0] - v[col];
                if slack < min_slack[col] {
                    min_slack[col] = slack;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of_col[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of_col[col0] = row_of_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .map(|col| (row_of_col[col] - 1, col - 1))
        .filter(|&(r, c)| r < costs.rows && c < costs.cols)
        .collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    /// Exhaustive minimum over all maximum-cardinality matchings.
    fn brute_force_min(costs: &CostMatrix) -> f64 {
        fn go(costs: &CostMatrix, row: usize, used: &mut Vec<bool>, transposed: bool) -> f64 {
            let (rows, cols) = if transposed {
                (costs.cols(), costs.rows())
            } else {
                (costs.rows(), costs.cols())
            };
            if row == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for col in 0..cols {
                if used[col] {
                    continue;
                }
                used[col] = true;
                let c = if transposed { costs.get(col, row) } else { costs.get(row, col) };
                best = best.min(c + go(costs, row + 1, used, transposed));
                used[col] = false;
            }
            best
        }
        if costs.is_empty() {
            return 0.0;
        }
        let transposed = costs.rows() > costs.cols();
        let width = costs.rows().max(costs.cols());
        go(costs, 0, &mut vec![false; width], transposed)
    }

    #[test]
    fn cost_matrix_examples() {
        let m = build_cost_matrix(&[bb(0., 0., 2., 2.)], &[bb(0., 0., 2., 2.)]);
        assert_eq!(m.get(0, 0), 0.0);
        let m = build_cost_matrix(&[bb(0., 0., 1., 1.)], &[bb(5., 5., 1., 1.)]);
        assert_eq!(m.get(0, 0), 1.0);
        let m = build_cost_matrix(&[bb(0., 0., 2., 2.)], &[bb(1., 0., 2., 2.)]);
        assert!((m.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        let m = build_cost_matrix(&[], &[bb(0., 0., 1., 1.)]);
        assert_eq!((m.rows(), m.cols()), (0, 1));
    }

    #[test]
    fn anti_diagonal_beats_diagonal_and_gating_applies() {
        let m = CostMatrix::from_rows(&[vec![1., 2.], vec![2., 4.]]).unwrap();
        assert_eq!(brute_force_min(&m), 4.0);

        let open = solve_assignment(&m, 2.0);
        assert_eq!(open.matches, vec![(0, 1), (1, 0)]);
        assert_eq!(open.total_cost(&m), 4.0);

        let gated = solve_assignment(&m, 1.0);
        assert!(gated.matches.is_empty());
        assert_eq!(gated.unmatched_tracks, vec![0, 1]);
        assert_eq!(gated.unmatched_detections, vec![0, 1]);
    }

    #[test]
    fn single_and_empty() {
        let m = CostMatrix::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(solve_assignment(&m, 0.5).matches, vec![(0, 0)]);

        let empty = CostMatrix::new(0, 0, vec![]).unwrap();
        assert_eq!(solve_assignment(&empty, 0.5), AssignmentResult::default());

        let no_dets = CostMatrix::new(3, 0, vec![]).unwrap();
        let r = solve_assignment(&no_dets, 0.5);
        assert_eq!(r.unmatched_tracks, vec![0, 1, 2]);
        assert!(r.matches.is_empty() && r.unmatched_detections.is_empty());

        let no_tracks = CostMatrix::new(0, 2, vec![]).unwrap();
        assert_eq!(solve_assignment(&no_tracks, 0.5).unmatched_detections, vec![0, 1]);
    }

    #[test]
    fn rectangular_padding_reports_unmatched() {
        let m = CostMatrix::from_rows(&[vec![0.9, 0.1, 0.5]]).unwrap();
        let r = solve_assignment(&m, f64::INFINITY);
        assert_eq!(r.matches, vec![(0, 1)]);
        assert_eq!(r.unmatched_detections, vec![0, 2]);

        let m = CostMatrix::from_rows(&[vec![0.9], vec![0.2], vec![0.4]]).unwrap();
        let r = solve_assignment(&m, f64::INFINITY);
        assert_eq!(r.matches, vec![(1, 0)]);
        assert_eq!(r.unmatched_tracks, vec![0, 2]);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(CostMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(CostMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0]]).is_err());
        assert!(CostMatrix::from_rows(&[vec![f64::NAN]]).is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = CostMatrix> {
        (0usize..=7, 0usize..=7).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0.0f64..10.0, r * c)
                .prop_map(move |data| CostMatrix::new(r, c, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(m in matrix_strategy()) {
            let r = solve_assignment(&m, f64::INFINITY);
            prop_assert_eq!(r.matches.len(), m.rows().min(m.cols()));
            prop_assert!((r.total_cost(&m) - brute_force_min(&m)).abs() < 1e-9);
        }

        #[test]
        fn result_partitions_indices(m in matrix_strategy(), gate in 0.0f64..10.0) {
            let r = solve_assignment(&m, gate);
            let mut rows: Vec<usize> = r.matches.iter().map(|p| p.0).chain(r.unmatched_tracks.iter().copied()).collect();
            let mut cols: Vec<usize> = r.matches.iter().map(|p| p.1).chain(r.unmatched_detections.iter().copied()).collect();
            rows.sort_unstable();
            cols.sort_unstable();
            prop_assert_eq!(rows, (0..m.rows()).collect::<Vec<_>>());
            prop_assert_eq!(cols, (0..m.cols()).collect::<Vec<_>>());
            prop_assert!(r.matches.iter().all(|&(i, j)| m.get(i, j) <= gate));
        }

        #[test]
        fn row_shift_keeps_matching(
            (m, row) in matrix_strategy()
                .prop_filter("every row matched", |m| m.rows() >= 1 && m.rows() <= m.cols())
                .prop_flat_map(|m| { let r = m.rows(); (Just(m), 0..r) }),
            shift in -5.0f64..5.0,
        ) {
            let mut shifted = m.data.clone();
            for c in 0..m.cols() {
                shifted[row * m.cols() + c] += shift;
            }
            let shifted = CostMatrix::new(m.rows(), m.cols(), shifted).unwrap();
            let a = solve_assignment(&m, f64::INFINITY);
            let b = solve_assignment(&shifted, f64::INFINITY);
            prop_assert_eq!(a.matches, b.matches);
        }
    }
}
