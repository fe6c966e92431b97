//! Heuristic association baseline: Hungarian assignment over weighted cue
//! costs, and a SORT-like frame-by-frame tracker built on it.
//!
//! The assignment solver is also the workhorse for score binarization and
//! for the per-frame matchings inside the metrics, so it lives here once.

use crate::error::{invalid, Result};
use crate::features::{giou, vdc};
use crate::track::{
    forecast_box, AggMode, Detection, TrackId, TrackSet, Trajectory, DEFAULT_VELOCITY_WINDOW,
};

/// Minimum-total-cost maximal matching on `min(n, m)` pairs.
///
/// Returns `(row, col)` pairs sorted by row. Deterministic: among equal-cost
/// optima the lexicographically smallest assignment (flattened pair
/// sequence) is chosen, which is what the exhaustive reference in the tests
/// produces. Costs must be finite; rows must have equal length.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    if m == 0 {
        return Vec::new();
    }

    // Square-pad with zero-cost dummies. Dummy slots are structurally forced
    // to absorb exactly the |n - m| leftover rows or columns, so every
    // solution still matches min(n, m) real pairs.
    let s = n.max(m);
    let sq: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            (0..s)
                .map(|j| if i < n && j < m { cost[i][j] } else { 0.0 })
                .collect()
        })
        .collect();

    let (u, v, col_to_row) = jv_square(&sq);
    let mut row_to_col = vec![usize::MAX; s];
    for (j, &i) in col_to_row.iter().enumerate() {
        row_to_col[i] = j;
    }

    // Optimal assignments are exactly the perfect matchings over tight
    // edges (zero reduced cost) of the square problem. The slack tolerance
    // is relative per cell, so one huge sentinel cost elsewhere in the
    // matrix cannot blur the distinction between ordinary-sized cells.
    let tight: Vec<Vec<bool>> = (0..s)
        .map(|i| {
            (0..s)
                .map(|j| {
                    let eps =
                        1e-9 * (1.0 + sq[i][j].abs() + u[i].abs() + v[j].abs());
                    sq[i][j] - u[i] - v[j] <= eps
                })
                .collect()
        })
        .collect();

    let unique = (0..n).all(|i| tight[i].iter().filter(|&&t| t).count() == 1);
    let chosen: Vec<usize> = if unique {
        row_to_col
    } else {
        lex_smallest_tight_matching(&tight, n, s)
    };

    (0..n)
        .filter(|&i| chosen[i] < m)
        .map(|i| (i, chosen[i]))
        .collect()
}

/// Classic Jonker-Volgenant shortest-augmenting-path solver on a square
/// matrix. Returns optimal dual potentials and the column-to-row matching.
fn jv_square(sq: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let s = sq.len();
    // 1-based working arrays; index 0 is the staging slot.
    let mut u = vec![0.0f64; s + 1];
    let mut v = vec![0.0f64; s + 1];
    let mut p = vec![0usize; s + 1];
    let mut way = vec![0usize; s + 1];
    for i in 1..=s {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; s + 1];
        let mut used = vec![false; s + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=s {
                if !used[j] {
                    let cur = sq[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=s {
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
    let col_to_row: Vec<usize> = (1..=s).map(|j| p[j] - 1).collect();
    (u[1..].to_vec(), v[1..].to_vec(), col_to_row)
}

/// Greedy lexicographic selection over the tight-edge graph: rows in
/// ascending order take their smallest feasible column, where feasible means
/// the remaining rows can still complete a perfect matching.
fn lex_smallest_tight_matching(tight: &[Vec<bool>], n_real: usize, s: usize) -> Vec<usize> {
    let mut fixed = vec![usize::MAX; s];
    let mut used_col = vec![false; s];
    for i in 0..n_real {
        let mut committed = false;
        for j in 0..s {
            if used_col[j] || !tight[i][j] {
                continue;
            }
            used_col[j] = true;
            fixed[i] = j;
            if completable(tight, &fixed, i + 1) {
                committed = true;
                break;
            }
            used_col[j] = false;
            fixed[i] = usize::MAX;
        }
        debug_assert!(committed, "tight graph lost feasibility");
        if !committed {
            // Fall back to any available tight column (cannot happen when
            // the duals are exact, but never leave a row dangling).
            for j in 0..s {
                if !used_col[j] && tight[i][j] {
                    used_col[j] = true;
                    fixed[i] = j;
                    break;
                }
            }
        }
    }
    fixed
}

/// Can rows `from..` all be matched over tight edges, leaving the already
/// fixed rows untouched?
fn completable(tight: &[Vec<bool>], fixed: &[usize], from: usize) -> bool {
    let s = tight.len();
    let mut match_of_col = vec![usize::MAX; s];
    for (i, &j) in fixed.iter().enumerate() {
        if j != usize::MAX {
            match_of_col[j] = i;
        }
    }
    fn augment(
        i: usize,
        tight: &[Vec<bool>],
        match_of_col: &mut [usize],
        visited: &mut [bool],
        from: usize,
    ) -> bool {
        for j in 0..tight.len() {
            if !tight[i][j] || visited[j] {
                continue;
            }
            // Columns held by fixed rows are immovable; columns matched
            // during this check can be re-augmented.
            if match_of_col[j] != usize::MAX && match_of_col[j] < from {
                continue;
            }
            visited[j] = true;
            if match_of_col[j] == usize::MAX
                || augment(match_of_col[j], tight, match_of_col, visited, from)
            {
                match_of_col[j] = i;
                return true;
            }
        }
        false
    }
    for i in from..s {
        let mut visited = vec![false; s];
        if !augment(i, tight, &mut match_of_col, &mut visited, from) {
            return false;
        }
    }
    true
}

/// Relative weights of the three association cues in [`combined_cost`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub w_app: f64,
    pub w_motion: f64,
    pub w_vdc: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            w_app: 4.0,
            w_motion: 1.0,
            w_vdc: 0.2,
        }
    }
}

/// Weighted association cost between a track and a candidate successor:
/// `w_app*(1 - app_sim) + w_motion*(1 - motion_giou)/2 + w_vdc*(vdc/pi)`.
/// Each term is normalized into [0, 1] first (negative appearance cosines
/// clamp to term 1), so the default weights bound the cost by 5.2.
pub fn combined_cost(src: &Trajectory, dst: &Trajectory, w: &CostWeights) -> Result<f64> {
    if src.last_frame() >= dst.first_frame() {
        return Err(invalid("combined_cost needs a time-ordered pair"));
    }
    let window = DEFAULT_VELOCITY_WINDOW;
    let app_sim = crate::track::dot(&src.appearance, &dst.appearance);
    let forecast = forecast_box(src, dst.first_frame(), window);
    let motion_giou = giou(&forecast, &dst.first().bbox);
    let angle = vdc(src, dst, window)?;
    Ok(w.w_app * (1.0 - app_sim.clamp(0.0, 1.0))
        + w.w_motion * (1.0 - motion_giou) / 2.0
        + w.w_vdc * angle / std::f64::consts::PI)
}

/// Configuration of the SORT-like baseline tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct SortConfig {
    pub weights: CostWeights,
    /// Pairs costlier than this are never matched.
    pub gate_cost: f64,
    /// Tracks idle for more than this many frames are terminated.
    pub retention: u32,
    /// EMA factor for the running appearance of a track.
    pub ema_alpha: f64,
}

impl Default for SortConfig {
    fn default() -> Self {
        SortConfig {
            weights: CostWeights::default(),
            gate_cost: 2.0,
            retention: 30,
            ema_alpha: 0.9,
        }
    }
}

const GATED: f64 = 1e9;

/// Frame-by-frame tracking: Hungarian assignment of active tracks to the
/// frame's detections under [`combined_cost`] with a cost gate; unmatched
/// detections found new tracks; idle tracks expire after `retention`
/// frames. Decisions are never revised.
pub fn sort_like_track(dets: &[Detection], cfg: &SortConfig) -> TrackSet {
    let mut by_frame: Vec<(u32, Vec<&Detection>)> = Vec::new();
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by_key(|d| (d.frame, d.id));
    for d in sorted {
        match by_frame.last_mut() {
            Some((f, v)) if *f == d.frame => v.push(d),
            _ => by_frame.push((d.frame, vec![d])),
        }
    }

    let mut active: Vec<Trajectory> = Vec::new();
    let mut done: Vec<Trajectory> = Vec::new();
    let mut next_id: TrackId = 1;
    for (frame, frame_dets) in by_frame {
        // Expire tracks idle beyond the retention window.
        let mut still = Vec::new();
        for t in active.drain(..) {
            if frame - t.last_frame() > cfg.retention {
                done.push(t);
            } else {
                still.push(t);
            }
        }
        active = still;

        let candidates: Vec<Trajectory> = frame_dets
            .iter()
            .map(|d| Trajectory::new(0, vec![(*d).clone()]).expect("single detection"))
            .collect();
        let cost: Vec<Vec<f64>> = active
            .iter()
            .map(|t| {
                candidates
                    .iter()
                    .map(|c| {
                        let v = combined_cost(t, c, &cfg.weights).expect("time-ordered");
                        if v > cfg.gate_cost {
                            GATED
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let mut det_taken = vec![false; candidates.len()];
        if !active.is_empty() && !candidates.is_empty() {
            for (i, j) in hungarian(&cost) {
                if cost[i][j] >= GATED {
                    continue;
                }
                let t = &mut active[i];
                t.detections.push(frame_dets[j].clone());
                t.reaggregate(AggMode::Ema(cfg.ema_alpha));
                det_taken[j] = true;
            }
        }
        for (j, d) in frame_dets.iter().enumerate() {
            if !det_taken[j] {
                let mut t = Trajectory::new(next_id, vec![(*d).clone()]).expect("single detection");
                t.reaggregate(AggMode::Ema(cfg.ema_alpha));
                next_id += 1;
                active.push(t);
            }
        }
    }
    done.extend(active);
    done.sort_by_key(|t| t.track_id);
    TrackSet::new(done).expect("ids are unique by construction")
}
