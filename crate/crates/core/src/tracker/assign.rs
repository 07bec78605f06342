//! Gated minimum-cost assignment between predicted tracks and detections.

use std::collections::BTreeMap;

use super::{Track, TrackerConfig};
use crate::geometry::{iou, Detection};

/// Ties closer than this are broken toward lower row then lower column indices.
pub const TIE_EPS: f64 = 1e-12;
// Hungarian potentials accumulate rounding; forced re-solves within this of
// the optimum are accepted as ties.
const SOLVE_EPS: f64 = 1e-10;

/// Shortest-augmenting-path Hungarian method on a square matrix.
/// Returns the column assigned to each row.
fn hungarian_square(a: &[Vec<f64>]) -> Vec<usize> {
    let n = a.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Value of an assignment: number of admissible matches, then their summed cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentValue {
    pub matched: usize,
    pub cost: f64,
}

impl AssignmentValue {
    pub fn of(costs: &[Vec<Option<f64>>], assignment: &[Option<usize>]) -> Self {
        let mut matched = 0;
        let mut cost = 0.0;
        for (r, c) in assignment.iter().enumerate() {
            if let Some(c) = c {
                cost += costs[r][*c].expect("assignment uses admissible pairs only");
                matched += 1;
            }
        }
        Self { matched, cost }
    }

    fn at_least_as_good(&self, best: &AssignmentValue) -> bool {
        self.matched == best.matched && self.cost <= best.cost + SOLVE_EPS
    }
}

fn solve_unrefined(costs: &[Vec<Option<f64>>], n_cols: usize) -> Vec<Option<usize>> {
    let n_rows = costs.len();
    let n = n_rows.max(n_cols);
    if n == 0 {
        return Vec::new();
    }
    let max_cost = costs
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, c| m.max(c.abs()));
    // any extra admissible match outweighs every achievable cost difference
    let big = 2.0 * (max_cost + 1.0) * (n as f64 + 1.0);
    let square: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    if r < n_rows && c < n_cols {
                        costs[r][c].unwrap_or(big)
                    } else {
                        big
                    }
                })
                .collect()
        })
        .collect();
    let cols = hungarian_square(&square);
    (0..n_rows)
        .map(|r| {
            let c = cols[r];
            (c < n_cols && costs[r][c].is_some()).then_some(c)
        })
        .collect()
}

/// Optimal assignment for a rectangular matrix of admissible costs (`None` =
/// inadmissible). Maximizes the number of matches, then minimizes total cost;
/// among equal-cost optima, lower rows take lower columns.
pub fn solve_assignment(costs: &[Vec<Option<f64>>], n_cols: usize) -> Vec<Option<usize>> {
    let n_rows = costs.len();
    let best_assignment = solve_unrefined(costs, n_cols);
    let best = AssignmentValue::of(costs, &best_assignment);
    if best.matched == 0 {
        return vec![None; n_rows];
    }

    let mut work: Vec<Vec<Option<f64>>> = costs.to_vec();
    let mut result = vec![None; n_rows];
    for r in 0..n_rows {
        let candidates = (0..n_cols)
            .filter(|&c| work[r][c].is_some())
            .map(Some)
            .chain(std::iter::once(None));
        let mut chosen = None;
        for cand in candidates {
            let mut trial = work.clone();
            for c in 0..n_cols {
                if Some(c) != cand {
                    trial[r][c] = None;
                }
            }
            if let Some(c) = cand {
                for (rr, row) in trial.iter_mut().enumerate() {
                    if rr != r {
                        row[c] = None;
                    }
                }
            }
            let a = solve_unrefined(&trial, n_cols);
            if a[r] == cand && AssignmentValue::of(costs, &a).at_least_as_good(&best) {
                chosen = Some((cand, trial));
                break;
            }
        }
        let (cand, trial) = chosen.unwrap_or_else(|| (best_assignment[r], work.clone()));
        result[r] = cand;
        work = trial;
    }
    result
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Pair cost, or `None` when the pair fails the overlap gate.
pub fn pair_cost(track: &Track, det: &Detection, cfg: &TrackerConfig) -> Option<f64> {
    let overlap = iou(&track.bbox(), &det.bbox);
    if overlap < cfg.gate_iou_min {
        return None;
    }
    let appearance = match (&track.last_feature, &det.feature) {
        (Some(a), Some(b)) => Some(cosine_distance(a, b)),
        _ => None,
    };
    Some(match appearance {
        Some(d) => cfg.feature_weight * d + (1.0 - cfg.feature_weight) * (1.0 - overlap),
        None => 1.0 - overlap,
    })
}

/// Category-partitioned association of predicted tracks with one frame's
/// detections. Tracks are considered in ascending id order for tie-breaking.
pub fn associate(tracks: &[Track], detections: &[Detection], cfg: &TrackerConfig) -> Association {
    let mut groups: BTreeMap<_, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, t) in tracks.iter().enumerate() {
        groups.entry(t.category.clone()).or_default().0.push(i);
    }
    for (j, d) in detections.iter().enumerate() {
        groups.entry(d.category.clone()).or_default().1.push(j);
    }

    let mut out = Association::default();
    for (_, (mut rows, cols)) in groups {
        rows.sort_by_key(|&i| tracks[i].id);
        let costs: Vec<Vec<Option<f64>>> = rows
            .iter()
            .map(|&i| cols.iter().map(|&j| pair_cost(&tracks[i], &detections[j], cfg)).collect())
            .collect();
        let assignment = solve_assignment(&costs, cols.len());
        let mut used = vec![false; cols.len()];
        for (r, a) in assignment.iter().enumerate() {
            match a {
                Some(c) => {
                    used[*c] = true;
                    out.matches.push((rows[r], cols[*c]));
                }
                None => out.unmatched_tracks.push(rows[r]),
            }
        }
        out.unmatched_detections
            .extend(cols.iter().zip(&used).filter(|(_, u)| !**u).map(|(j, _)| *j));
    }
    out.matches.sort_unstable();
    out.unmatched_tracks.sort_unstable();
    out.unmatched_detections.sort_unstable();
    out
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full(m: &[&[f64]]) -> Vec<Vec<Option<f64>>> {
        m.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect()
    }

    #[test]
    fn crossed_pairs_take_the_cheaper_permutation() {
        let costs = full(&[&[0.9, 0.1], &[0.2, 0.8]]);
        assert_eq!(solve_assignment(&costs, 2), vec![Some(1), Some(0)]);
    }

    #[test]
    fn empty_inputs() {
        assert!(solve_assignment(&[], 0).is_empty());
        assert_eq!(solve_assignment(&[vec![], vec![]], 0), vec![None, None]);
    }

    #[test]
    fn cardinality_beats_cost() {
        // row 0 can only use col 0; taking the cheap (1,0) pair would strand it
        let costs = vec![vec![Some(0.9), None], vec![Some(0.0), Some(0.95)]];
        assert_eq!(solve_assignment(&costs, 2), vec![Some(0), Some(1)]);
    }

    #[test]
    fn ties_prefer_lower_indices() {
        let costs = full(&[&[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5]]);
        assert_eq!(solve_assignment(&costs, 3), vec![Some(0), Some(1)]);
        let costs = full(&[&[0.5], &[0.5], &[0.5]]);
        assert_eq!(solve_assignment(&costs, 1), vec![Some(0), None, None]);
    }

    fn cost_matrix() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
        (1usize..=6, 1usize..=6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(
                proptest::collection::vec(prop_oneof![3 => (0.0f64..1.5).prop_map(Some), 1 => Just(None)], c),
                r,
            )
        })
    }

    proptest! {
        #[test]
        fn matches_exhaustive_minimum(costs in cost_matrix()) {
            let n_cols = costs[0].len();
            let a = solve_assignment(&costs, n_cols);
            let got = AssignmentValue::of(&costs, &a);
            let want = oracle::brute_force(&costs, n_cols);
            prop_assert_eq!(got.matched, want.matched);
            prop_assert!((got.cost - want.cost).abs() < 1e-9, "{} vs {}", got.cost, want.cost);
            let mut seen = std::collections::HashSet::new();
            for c in a.iter().flatten() {
                prop_assert!(seen.insert(*c));
            }
        }
    }
}
