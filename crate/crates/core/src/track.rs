//! Core track-model types and operations.
//!
//! Everything downstream — feature extraction, graph building, inference,
//! metrics — speaks in terms of these types: axis-aligned boxes, detections
//! with optional appearance embeddings, trajectories (time-ordered detection
//! runs with an aggregated appearance vector), and track sets. The operations
//! here are the small deterministic pieces the tracker is assembled from:
//! cutting a sequence into subclips, estimating velocities, aggregating
//! appearance, forecasting boxes, and merging track sets.

use crate::error::{invalid, Result};

pub type FrameId = u32;
pub type DetId = u64;
pub type TrackId = u64;

/// Detections used for velocity fits and box forecasts unless a caller
/// overrides the window.
pub const DEFAULT_VELOCITY_WINDOW: usize = 5;

/// Axis-aligned box, top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection area with `other`; 0 when they do not overlap.
    pub fn intersection(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix > 0.0 && iy > 0.0 {
            ix * iy
        } else {
            0.0
        }
    }

    /// Intersection over union; 0 for degenerate unions.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// One detection. `embedding` is a unit vector, or empty/all-zero when the
/// source provided none (appearance similarity is masked in that case).
/// `interpolated` marks boxes synthesized by gap filling, never raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub id: DetId,
    pub frame: FrameId,
    pub bbox: BBox,
    pub confidence: f64,
    pub embedding: Vec<f64>,
    pub interpolated: bool,
}

impl Detection {
    pub fn new(id: DetId, frame: FrameId, bbox: BBox, confidence: f64) -> Self {
        Detection {
            id,
            frame,
            bbox,
            confidence,
            embedding: Vec::new(),
            interpolated: false,
        }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = embedding;
        self
    }
}

/// How a trajectory's per-detection embeddings are folded into one
/// appearance vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggMode {
    /// Plain mean, renormalized.
    Mean,
    /// Exponential moving average in frame order: `a = alpha*a + (1-alpha)*f`,
    /// renormalized after every step. Suits streaming trackers where the
    /// newest evidence should dominate slowly.
    Ema(f64),
}

/// A single identity: detections at strictly increasing frames plus the
/// aggregated appearance vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub track_id: TrackId,
    pub detections: Vec<Detection>,
    pub appearance: Vec<f64>,
}

impl Trajectory {
    /// Builds a trajectory, validating frame ordering. Appearance is the
    /// renormalized mean of the detection embeddings; callers with a
    /// different policy re-aggregate afterwards.
    pub fn new(track_id: TrackId, detections: Vec<Detection>) -> Result<Self> {
        if detections.is_empty() {
            return Err(invalid(format!("trajectory {track_id} has no detections")));
        }
        for pair in detections.windows(2) {
            if pair[1].frame <= pair[0].frame {
                return Err(invalid(format!(
                    "trajectory {track_id}: frames not strictly increasing ({} then {})",
                    pair[0].frame, pair[1].frame
                )));
            }
        }
        let appearance = aggregate_appearance(&detections, AggMode::Mean);
        Ok(Trajectory {
            track_id,
            detections,
            appearance,
        })
    }

    pub fn first(&self) -> &Detection {
        &self.detections[0]
    }

    pub fn last(&self) -> &Detection {
        self.detections.last().expect("non-empty by construction")
    }

    pub fn first_frame(&self) -> FrameId {
        self.first().frame
    }

    pub fn last_frame(&self) -> FrameId {
        self.last().frame
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Recomputes the appearance vector under `mode`.
    pub fn reaggregate(&mut self, mode: AggMode) {
        self.appearance = aggregate_appearance(&self.detections, mode);
    }
}

/// A set of trajectories with pairwise distinct ids. Exclusivity (no shared
/// detections between tracks) is a maintained invariant, checkable via
/// [`TrackSet::validate_exclusive`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: Vec<Trajectory>,
}

impl TrackSet {
    pub fn new(tracks: Vec<Trajectory>) -> Result<Self> {
        let set = TrackSet { tracks };
        let mut ids: Vec<TrackId> = set.tracks.iter().map(|t| t.track_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|p| p[0] == p[1]) {
            return Err(invalid("duplicate track_id in track set"));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn get(&self, id: TrackId) -> Option<&Trajectory> {
        self.tracks.iter().find(|t| t.track_id == id)
    }

    /// First and last covered frame, or `None` for an empty set.
    pub fn frame_range(&self) -> Option<(FrameId, FrameId)> {
        let first = self.tracks.iter().map(|t| t.first_frame()).min()?;
        let last = self.tracks.iter().map(|t| t.last_frame()).max()?;
        Some((first, last))
    }

    pub fn total_detections(&self) -> usize {
        self.tracks.iter().map(|t| t.len()).sum()
    }

    /// Errors if any (frame, detection id) pair appears in two tracks.
    pub fn validate_exclusive(&self) -> Result<()> {
        let mut seen: Vec<(FrameId, DetId)> = self
            .tracks
            .iter()
            .flat_map(|t| t.detections.iter().map(|d| (d.frame, d.id)))
            .collect();
        seen.sort_unstable();
        if let Some(p) = seen.windows(2).find(|p| p[0] == p[1]) {
            return Err(invalid(format!(
                "detection {} at frame {} assigned to two tracks",
                p[0].1, p[0].0
            )));
        }
        Ok(())
    }
}

/// Euclidean norm of a vector.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product; 0 when dimensions disagree (treating either side as absent).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n < 1e-12 {
        return vec![0.0; v.len()];
    }
    v.into_iter().map(|x| x / n).collect()
}

/// Cuts the inclusive frame range `[first, last]` into consecutive
/// non-overlapping subclips of `stride` frames; the final subclip may be
/// shorter. Every frame lands in exactly one subclip.
pub fn partition_sequence(first: FrameId, last: FrameId, stride: u32) -> Result<Vec<(FrameId, FrameId)>> {
    if stride == 0 {
        return Err(invalid("stride must be at least 1"));
    }
    if first > last {
        return Err(invalid(format!("empty frame range [{first}, {last}]")));
    }
    let mut out = Vec::new();
    let mut start = first;
    while start <= last {
        let end = last.min(start.saturating_add(stride - 1));
        out.push((start, end));
        if end == last {
            break;
        }
        start = end + 1;
    }
    Ok(out)
}

/// Least-squares slope of `value` against `t`; 0 when degenerate.
fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let vm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, v) in pts {
        num += (t - tm) * (v - vm);
        den += (t - tm) * (t - tm);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Per-frame velocities of a trajectory's box center, as
/// `(forward, backward)`.
///
/// Forward is the least-squares slope over the last `min(window, n)`
/// detections; backward is the same fit over the first `min(window, n)`
/// detections with time reversed, i.e. the motion per frame when walking the
/// track from its start toward earlier frames. A single detection yields
/// `(0, 0)` for both.
pub fn trajectory_velocity(t: &Trajectory, window: usize) -> ((f64, f64), (f64, f64)) {
    let window = window.max(1);
    let n = t.detections.len();
    if n < 2 {
        return ((0.0, 0.0), (0.0, 0.0));
    }
    let m = window.min(n);
    let tail = &t.detections[n - m..];
    let head = &t.detections[..m];
    let pts = |dets: &[Detection], axis: usize| -> Vec<(f64, f64)> {
        dets.iter()
            .map(|d| {
                let c = d.bbox.center();
                (d.frame as f64, if axis == 0 { c.0 } else { c.1 })
            })
            .collect()
    };
    let fwd = (ls_slope(&pts(tail, 0)), ls_slope(&pts(tail, 1)));
    // Reversing time negates the slope of the head fit.
    let bwd = (-ls_slope(&pts(head, 0)), -ls_slope(&pts(head, 1)));
    (fwd, bwd)
}

/// Folds detection embeddings into one unit appearance vector. Detections
/// without embeddings (empty or all-zero) contribute nothing; if no
/// detection carries an embedding the result is the zero vector.
pub fn aggregate_appearance(dets: &[Detection], mode: AggMode) -> Vec<f64> {
    let dim = dets
        .iter()
        .map(|d| d.embedding.len())
        .max()
        .unwrap_or(0);
    if dim == 0 {
        return Vec::new();
    }
    let live: Vec<&Detection> = dets
        .iter()
        .filter(|d| d.embedding.len() == dim && l2_norm(&d.embedding) > 1e-12)
        .collect();
    if live.is_empty() {
        return vec![0.0; dim];
    }
    match mode {
        AggMode::Mean => {
            let mut acc = vec![0.0; dim];
            for d in &live {
                for (a, x) in acc.iter_mut().zip(&d.embedding) {
                    *a += x;
                }
            }
            let inv = 1.0 / live.len() as f64;
            normalized(acc.into_iter().map(|x| x * inv).collect())
        }
        AggMode::Ema(alpha) => {
            let mut acc = normalized(live[0].embedding.clone());
            for d in &live[1..] {
                for (a, x) in acc.iter_mut().zip(&d.embedding) {
                    *a = alpha * *a + (1.0 - alpha) * x;
                }
                acc = normalized(acc);
            }
            acc
        }
    }
}

/// Predicts the trajectory's box at `target_frame` by linear center
/// extrapolation with the windowed velocities; width and height are held at
/// the temporally nearest detection. Targets inside the covered span
/// interpolate between the surrounding detections instead.
pub fn forecast_box(t: &Trajectory, target_frame: FrameId, window: usize) -> BBox {
    let (fwd, bwd) = trajectory_velocity(t, window);
    if target_frame >= t.last_frame() {
        let d = t.last();
        let (cx, cy) = d.bbox.center();
        let dt = (target_frame - d.frame) as f64;
        return BBox::new(
            cx + fwd.0 * dt - d.bbox.w / 2.0,
            cy + fwd.1 * dt - d.bbox.h / 2.0,
            d.bbox.w,
            d.bbox.h,
        );
    }
    if target_frame <= t.first_frame() {
        let d = t.first();
        let (cx, cy) = d.bbox.center();
        let dt = (d.frame - target_frame) as f64;
        return BBox::new(
            cx + bwd.0 * dt - d.bbox.w / 2.0,
            cy + bwd.1 * dt - d.bbox.h / 2.0,
            d.bbox.w,
            d.bbox.h,
        );
    }
    // Interior target: interpolate between the neighbors enclosing it.
    let after = t
        .detections
        .iter()
        .position(|d| d.frame >= target_frame)
        .expect("target inside span");
    let b = &t.detections[after];
    if b.frame == target_frame || after == 0 {
        return b.bbox;
    }
    let a = &t.detections[after - 1];
    let s = (target_frame - a.frame) as f64 / (b.frame - a.frame) as f64;
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    let near = if target_frame - a.frame <= b.frame - target_frame {
        a
    } else {
        b
    };
    BBox::new(
        ax + (bx - ax) * s - near.bbox.w / 2.0,
        ay + (by - ay) * s - near.bbox.h / 2.0,
        near.bbox.w,
        near.bbox.h,
    )
}

/// Merges `incoming` into `past` according to `matches` (pairs of
/// `(past track_id, incoming track_id)`).
///
/// Matched pairs are concatenated under the past id; unmatched past tracks
/// pass through untouched; unmatched incoming tracks receive fresh ids above
/// every past id, assigned in incoming order. Appearance of changed tracks
/// is re-aggregated (mean); callers with an EMA policy re-aggregate after.
pub fn merge_trajectories(
    past: &TrackSet,
    incoming: &TrackSet,
    matches: &[(TrackId, TrackId)],
) -> Result<TrackSet> {
    let mut used_past: Vec<TrackId> = Vec::new();
    let mut used_inc: Vec<TrackId> = Vec::new();
    for &(p, i) in matches {
        if used_past.contains(&p) || used_inc.contains(&i) {
            return Err(invalid(format!("duplicate track_id in matches ({p} -> {i})")));
        }
        if past.get(p).is_none() {
            return Err(invalid(format!("unknown past track_id {p} in matches")));
        }
        if incoming.get(i).is_none() {
            return Err(invalid(format!("unknown incoming track_id {i} in matches")));
        }
        used_past.push(p);
        used_inc.push(i);
    }

    let mut tracks = Vec::with_capacity(past.len() + incoming.len());
    for t in &past.tracks {
        if let Some(&(_, inc_id)) = matches.iter().find(|&&(p, _)| p == t.track_id) {
            let inc = incoming.get(inc_id).expect("validated above");
            if inc.first_frame() <= t.last_frame() {
                return Err(invalid(format!(
                    "merge {} -> {}: incoming starts at frame {} but past ends at {}",
                    t.track_id,
                    inc_id,
                    inc.first_frame(),
                    t.last_frame()
                )));
            }
            let mut dets = t.detections.clone();
            dets.extend(inc.detections.iter().cloned());
            tracks.push(Trajectory::new(t.track_id, dets)?);
        } else {
            tracks.push(t.clone());
        }
    }
    let mut next_id = past.tracks.iter().map(|t| t.track_id + 1).max().unwrap_or(0);
    for t in &incoming.tracks {
        if used_inc.contains(&t.track_id) {
            continue;
        }
        let mut fresh = t.clone();
        fresh.track_id = next_id;
        next_id += 1;
        tracks.push(fresh);
    }
    TrackSet::new(tracks)
}
