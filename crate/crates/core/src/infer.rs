//! Inference: score binarization, bottom-up subclip association, and the
//! streaming step that fuses each new subclip into the running tracks.
//!
//! A sequence is cut into non-overlapping subclips of `stride` frames.
//! Inside a subclip, detections are merged bottom-up through windows of
//! doubling length; between subclips, the surviving tracks are linked to
//! the subclip's tracklets by the same edge classifier. `stride = 1`
//! degenerates into a purely online tracker: single-frame subclips, a
//! bipartite association graph per frame, and decisions that are never
//! revisited.

use crate::baseline::hungarian;
use crate::error::{invalid, Result};
use crate::features::CueMask;
use crate::graph::{build_graph, plan_hierarchy, AssocGraph, GraphContext, GraphMode};
use crate::mpn::{forward, ModelParams};
use crate::par;
use crate::track::{
    merge_trajectories, partition_sequence, AggMode, Detection, FrameId, TrackId, TrackSet,
    Trajectory,
};

/// Retention default for frame-by-frame operation.
pub const ONLINE_RETENTION: u32 = 30;
/// Retention default for batched subclips.
pub const OFFLINE_RETENTION: u32 = 256;

/// How track appearance is aggregated after a merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppearanceMode {
    /// EMA when streaming frame by frame, plain mean otherwise.
    Auto,
    Mean,
    Ema,
}

/// How soft edge scores become accepted links.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchRule {
    /// Exact maximum-total-score assignment.
    Exact,
    /// Accept in descending score order while both endpoints are free.
    Greedy,
}

/// How subclip tracklets are fused into the running tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// The trained edge classifier.
    Learned,
    /// Hand-tuned motion/appearance costs with a gate.
    Heuristic,
}

/// Inference configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    /// Subclip length in frames; 1 = online.
    pub stride: u32,
    /// Connectivity of the streaming association graph. Forced to
    /// bipartite when `stride` is 1.
    pub mode: GraphMode,
    /// Maximum idle frames before a track is dropped; `None` picks 30
    /// online / 256 offline.
    pub retention: Option<u32>,
    /// Minimum link probability for an edge to be considered. Classifiers
    /// trained under a focusing loss push hard-but-correct links well below
    /// the naive 0.5 operating point, so the default sits lower.
    pub score_threshold: f64,
    pub match_rule: MatchRule,
    /// Cross-subclip fusion: learned classifier or heuristic costs.
    pub fusion: Fusion,
    pub appearance: AppearanceMode,
    pub ema_alpha: f64,
    /// Fill short gaps in final tracks with synthetic boxes.
    pub interpolate: bool,
    pub interp_max_gap: u32,
    pub knn: usize,
    pub velocity_window: usize,
    pub arena: (f64, f64),
    pub cues: CueMask,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            stride: 1,
            mode: GraphMode::Bipartite,
            retention: None,
            score_threshold: 0.2,
            match_rule: MatchRule::Exact,
            fusion: Fusion::Learned,
            appearance: AppearanceMode::Auto,
            ema_alpha: 0.9,
            interpolate: false,
            interp_max_gap: 20,
            knn: 10,
            velocity_window: 5,
            arena: (1280.0, 720.0),
            cues: CueMask::default(),
        }
    }
}

impl InferConfig {
    pub fn effective_mode(&self) -> GraphMode {
        if self.stride == 1 {
            GraphMode::Bipartite
        } else {
            self.mode
        }
    }

    pub fn effective_retention(&self) -> u32 {
        self.retention.unwrap_or(if self.stride == 1 {
            ONLINE_RETENTION
        } else {
            OFFLINE_RETENTION
        })
    }

    pub fn effective_agg(&self) -> AggMode {
        match self.appearance {
            AppearanceMode::Mean => AggMode::Mean,
            AppearanceMode::Ema => AggMode::Ema(self.ema_alpha),
            AppearanceMode::Auto => {
                if self.stride == 1 {
                    AggMode::Ema(self.ema_alpha)
                } else {
                    AggMode::Mean
                }
            }
        }
    }

    pub fn graph_ctx(&self) -> GraphContext {
        GraphContext {
            arena: self.arena,
            retention: self.effective_retention(),
            knn: self.knn,
            velocity_window: self.velocity_window,
            cues: self.cues,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(invalid("stride must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(invalid("score threshold must lie in [0, 1]"));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(invalid("ema alpha must lie in (0, 1]"));
        }
        if self.knn == 0 {
            return Err(invalid("knn must be at least 1"));
        }
        if self.arena.0 <= 0.0 || self.arena.1 <= 0.0 {
            return Err(invalid("arena dimensions must be positive"));
        }
        Ok(())
    }
}

/// Counters describing one tracking run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrackStats {
    pub frames_processed: u64,
    pub graphs_built: u64,
    pub matches: u64,
    pub births: u64,
    pub terminations: u64,
}

const FORBIDDEN: f64 = 1e6;

/// Turns soft edge scores into an accepted edge set: maximizes the sum of
/// accepted scores subject to every node keeping at most one outgoing and
/// one incoming edge, considering only edges scoring at least `threshold`.
/// Solved exactly as an assignment with a zero-cost skip option per source.
/// Returns accepted `(src, dst)` node pairs sorted by source.
pub fn binarize(g: &AssocGraph, probs: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    assert_eq!(probs.len(), g.edge_count());
    let cands: Vec<(usize, usize, f64)> = g
        .edges
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p >= threshold)
        .map(|(e, &p)| (e.src, e.dst, p))
        .collect();
    if cands.is_empty() {
        return Vec::new();
    }
    let mut rows: Vec<usize> = cands.iter().map(|c| c.0).collect();
    rows.sort_unstable();
    rows.dedup();
    let mut cols: Vec<usize> = cands.iter().map(|c| c.1).collect();
    cols.sort_unstable();
    cols.dedup();
    let n = rows.len();
    let m = cols.len();
    let row_of: std::collections::HashMap<usize, usize> =
        rows.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let col_of: std::collections::HashMap<usize, usize> =
        cols.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    // Real columns, then one private skip column per source.
    let mut cost = vec![vec![FORBIDDEN; m + n]; n];
    for (i, row) in cost.iter_mut().enumerate() {
        row[m + i] = 0.0;
    }
    for &(s, d, p) in &cands {
        cost[row_of[&s]][col_of[&d]] = -p;
    }
    let mut accepted: Vec<(usize, usize)> = hungarian(&cost)
        .into_iter()
        .filter(|&(i, j)| j < m && cost[i][j] < -0.0)
        .map(|(i, j)| (rows[i], cols[j]))
        .collect();
    accepted.sort_unstable();
    accepted
}

/// Greedy alternative to [`binarize`]: accepts candidates in descending
/// score order while both endpoints are still free. Same output contract,
/// but only an approximation of the exact objective.
pub fn binarize_greedy(g: &AssocGraph, probs: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    assert_eq!(probs.len(), g.edge_count());
    let mut cands: Vec<(usize, usize, f64)> = g
        .edges
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p >= threshold)
        .map(|(e, &p)| (e.src, e.dst, p))
        .collect();
    cands.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("probabilities are finite")
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let n = g.node_count();
    let mut out_used = vec![false; n];
    let mut in_used = vec![false; n];
    let mut accepted = Vec::new();
    for (s, d, _) in cands {
        if !out_used[s] && !in_used[d] {
            out_used[s] = true;
            in_used[d] = true;
            accepted.push((s, d));
        }
    }
    accepted.sort_unstable();
    accepted
}

fn binarize_with(rule: MatchRule, g: &AssocGraph, probs: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    match rule {
        MatchRule::Exact => binarize(g, probs, threshold),
        MatchRule::Greedy => binarize_greedy(g, probs, threshold),
    }
}

/// Decomposes an accepted edge set (at most one in/out edge per node) into
/// maximal chains; every node appears in exactly one chain.
fn chains(n: usize, accepted: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut succ = vec![usize::MAX; n];
    let mut has_pred = vec![false; n];
    for &(a, b) in accepted {
        succ[a] = b;
        has_pred[b] = true;
    }
    (0..n)
        .filter(|&v| !has_pred[v])
        .map(|v| {
            let mut chain = vec![v];
            let mut cur = v;
            while succ[cur] != usize::MAX {
                cur = succ[cur];
                chain.push(cur);
            }
            chain
        })
        .collect()
}

/// Merges each chain of tracklets into one trajectory that keeps the chain
/// head's id.
fn collapse(trajs: &[Trajectory], accepted: &[(usize, usize)]) -> Vec<Trajectory> {
    chains(trajs.len(), accepted)
        .into_iter()
        .map(|chain| {
            if chain.len() == 1 {
                trajs[chain[0]].clone()
            } else {
                let mut dets = Vec::new();
                for &v in &chain {
                    dets.extend(trajs[v].detections.iter().cloned());
                }
                Trajectory::new(trajs[chain[0]].track_id, dets).expect("chains are time-ordered")
            }
        })
        .collect()
}

/// Associates one subclip bottom-up: singleton detections are linked inside
/// windows of doubling length until one window spans the subclip. Returns
/// the subclip's tracklets and the number of graphs scored.
pub fn run_hierarchy(
    dets: &[Detection],
    sub: (FrameId, FrameId),
    params: &ModelParams,
    ctx: &GraphContext,
    threshold: f64,
    rule: MatchRule,
) -> Result<(Vec<Trajectory>, u64)> {
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by_key(|d| (d.frame, d.id));
    let mut current: Vec<Trajectory> = sorted
        .into_iter()
        .enumerate()
        .map(|(i, d)| Trajectory::new(i as TrackId + 1, vec![d.clone()]).expect("singleton"))
        .collect();
    let mut graphs_built = 0u64;
    let len = sub.1 - sub.0 + 1;
    for win in plan_hierarchy(len) {
        use std::collections::BTreeMap;
        let mut buckets: BTreeMap<u32, Vec<Trajectory>> = BTreeMap::new();
        for t in current.drain(..) {
            buckets.entry((t.first_frame() - sub.0) / win).or_default().push(t);
        }
        let groups: Vec<Vec<Trajectory>> = buckets.into_values().collect();
        let results: Vec<Result<(Vec<Trajectory>, u64)>> = par::map_slice(&groups, |group| {
            if group.len() < 2 {
                return Ok((group.clone(), 0));
            }
            let graph = build_graph(&[], group, GraphMode::Full, ctx)?;
            let probs = forward(params, &graph);
            let accepted = binarize_with(rule, &graph, &probs, threshold);
            Ok((collapse(group, &accepted), 1))
        });
        for r in results {
            let (ts, g) = r?;
            graphs_built += g;
            current.extend(ts);
        }
    }
    Ok((current, graphs_built))
}

struct OnlineState {
    active: Vec<Trajectory>,
    done: Vec<Trajectory>,
    next_id: TrackId,
    stats: TrackStats,
}

impl OnlineState {
    fn new() -> Self {
        OnlineState {
            active: Vec::new(),
            done: Vec::new(),
            next_id: 1,
            stats: TrackStats::default(),
        }
    }

    fn admit_births(&mut self, tracklets: Vec<Trajectory>, agg: AggMode) {
        for mut t in tracklets {
            t.track_id = self.next_id;
            self.next_id += 1;
            t.reaggregate(agg);
            self.stats.births += 1;
            self.active.push(t);
        }
    }
}

/// Bipartite track-to-tracklet links from hand-tuned costs with a gate;
/// the heuristic stand-in for the learned fusion step. Returns accepted
/// pairs in combined node numbering (past 0..n, incoming n..n+m).
fn heuristic_links(
    past: &[Trajectory],
    inc: &[Trajectory],
    retention: u32,
) -> Result<Vec<(usize, usize)>> {
    use crate::baseline::{combined_cost, SortConfig};
    let sc = SortConfig::default();
    let mut cost = vec![vec![FORBIDDEN; inc.len()]; past.len()];
    for (i, t) in past.iter().enumerate() {
        for (j, s) in inc.iter().enumerate() {
            if s.first_frame() > t.last_frame() && s.first_frame() - t.last_frame() <= retention {
                let c = combined_cost(t, s, &sc.weights)?;
                if c <= sc.gate_cost {
                    cost[i][j] = c;
                }
            }
        }
    }
    let mut accepted: Vec<(usize, usize)> = hungarian(&cost)
        .into_iter()
        .filter(|&(i, j)| cost[i][j] < FORBIDDEN / 2.0)
        .map(|(i, j)| (i, past.len() + j))
        .collect();
    accepted.sort_unstable();
    Ok(accepted)
}

/// One streaming step: retire idle tracks, link the subclip's tracklets to
/// the survivors, merge matches, and start new tracks for the rest.
fn alt_step(
    state: &mut OnlineState,
    incoming: Vec<Trajectory>,
    window_start: FrameId,
    params: &ModelParams,
    cfg: &InferConfig,
    ctx: &GraphContext,
) -> Result<()> {
    let retention = cfg.effective_retention();
    let agg = cfg.effective_agg();
    let mut keep = Vec::new();
    for t in state.active.drain(..) {
        if window_start - t.last_frame() > retention {
            state.stats.terminations += 1;
            state.done.push(t);
        } else {
            keep.push(t);
        }
    }
    state.active = keep;

    if incoming.is_empty() {
        return Ok(());
    }
    if state.active.is_empty() {
        state.admit_births(incoming, agg);
        return Ok(());
    }

    // Temporary subclip ids above every active id.
    let base = state.active.iter().map(|t| t.track_id).max().unwrap() + 1;
    let mut inc = incoming;
    for (i, t) in inc.iter_mut().enumerate() {
        t.track_id = base + i as TrackId;
    }

    let np = state.active.len();
    let n_nodes = np + inc.len();
    let accepted = match cfg.fusion {
        Fusion::Learned => {
            let graph = build_graph(&state.active, &inc, cfg.effective_mode(), ctx)?;
            state.stats.graphs_built += 1;
            let probs = forward(params, &graph);
            binarize_with(cfg.match_rule, &graph, &probs, cfg.score_threshold)
        }
        Fusion::Heuristic => heuristic_links(&state.active, &inc, retention)?,
    };

    // Each chain is a run of past tracks followed by a run of subclip
    // tracklets (edges only point forward in time). Past runs merge into
    // their earliest track, subclip runs into their first tracklet.
    let mut absorbed: Vec<Vec<usize>> = vec![Vec::new(); state.active.len()];
    let mut dropped = vec![false; state.active.len()];
    let mut matches: Vec<(TrackId, TrackId)> = Vec::new();
    let mut merged_incoming: Vec<Trajectory> = Vec::new();
    for chain in chains(n_nodes, &accepted) {
        let past_nodes: Vec<usize> = chain.iter().copied().filter(|&v| v < np).collect();
        let inc_nodes: Vec<usize> = chain
            .iter()
            .copied()
            .filter(|&v| v >= np)
            .map(|v| v - np)
            .collect();
        let inc_traj = if inc_nodes.is_empty() {
            None
        } else {
            let mut dets = Vec::new();
            for &v in &inc_nodes {
                dets.extend(inc[v].detections.iter().cloned());
            }
            Some(Trajectory::new(inc[inc_nodes[0]].track_id, dets).expect("time-ordered chain"))
        };
        if past_nodes.is_empty() {
            if let Some(t) = inc_traj {
                merged_incoming.push(t);
            }
            continue;
        }
        let head = past_nodes[0];
        for &other in &past_nodes[1..] {
            absorbed[head].push(other);
            dropped[other] = true;
        }
        if let Some(t) = inc_traj {
            matches.push((state.active[head].track_id, t.track_id));
            merged_incoming.push(t);
        }
    }

    let mut past_final: Vec<Trajectory> = Vec::new();
    for (i, t) in state.active.iter().enumerate() {
        if dropped[i] {
            continue;
        }
        if absorbed[i].is_empty() {
            past_final.push(t.clone());
        } else {
            let mut dets = t.detections.clone();
            for &other in &absorbed[i] {
                dets.extend(state.active[other].detections.iter().cloned());
            }
            past_final.push(Trajectory::new(t.track_id, dets)?);
        }
    }

    state.stats.matches += matches.len() as u64;
    let past_ids: Vec<TrackId> = past_final.iter().map(|t| t.track_id).collect();
    let merged = merge_trajectories(
        &TrackSet::new(past_final)?,
        &TrackSet::new(merged_incoming)?,
        &matches,
    )?;
    let mut next_active = Vec::with_capacity(merged.len());
    for mut t in merged.tracks {
        if !past_ids.contains(&t.track_id) {
            // A new track: give it the next global id so it can never
            // collide with a retired one.
            t.track_id = state.next_id;
            state.next_id += 1;
            state.stats.births += 1;
        }
        t.reaggregate(agg);
        next_active.push(t);
    }
    state.active = next_active;
    Ok(())
}

/// Tracks a whole detection sequence and reports run statistics.
pub fn track_sequence(
    dets: &[Detection],
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<(TrackSet, TrackStats)> {
    cfg.validate()?;
    if dets.is_empty() {
        return Ok((TrackSet::new(Vec::new())?, TrackStats::default()));
    }
    let first = dets.iter().map(|d| d.frame).min().unwrap();
    let last = dets.iter().map(|d| d.frame).max().unwrap();
    let ctx = cfg.graph_ctx();
    let mut state = OnlineState::new();
    for (si, &(a, b)) in partition_sequence(first, last, cfg.stride)?.iter().enumerate() {
        state.stats.frames_processed += (b - a + 1) as u64;
        let sub_dets: Vec<Detection> = dets
            .iter()
            .filter(|d| d.frame >= a && d.frame <= b)
            .cloned()
            .collect();
        let (tracklets, graphs) =
            run_hierarchy(&sub_dets, (a, b), params, &ctx, cfg.score_threshold, cfg.match_rule)?;
        state.stats.graphs_built += graphs;
        if si == 0 {
            state.admit_births(tracklets, cfg.effective_agg());
        } else {
            alt_step(&mut state, tracklets, a, params, cfg, &ctx)?;
        }
    }
    let mut all = state.done;
    all.extend(state.active);
    all.sort_by_key(|t| t.track_id);
    let mut set = TrackSet::new(all)?;
    if cfg.interpolate {
        interpolate_gaps(&mut set, cfg.interp_max_gap);
    }
    Ok((set, state.stats))
}

/// Fills gaps of at most `max_gap` missing frames inside each track with
/// linearly interpolated boxes. Synthetic detections carry fresh ids, the
/// mean endpoint confidence, the earlier endpoint's embedding, and the
/// `interpolated` flag.
pub fn interpolate_gaps(set: &mut TrackSet, max_gap: u32) {
    let mut next_det_id = set
        .tracks
        .iter()
        .flat_map(|t| t.detections.iter().map(|d| d.id))
        .max()
        .map_or(1, |m| m + 1);
    for t in set.tracks.iter_mut() {
        let mut filled: Vec<Detection> = Vec::with_capacity(t.len());
        for i in 0..t.detections.len() {
            if i > 0 {
                let a = &t.detections[i - 1];
                let b = &t.detections[i];
                let missing = b.frame - a.frame - 1;
                if missing >= 1 && missing <= max_gap {
                    for f in a.frame + 1..b.frame {
                        let w = (f - a.frame) as f64 / (b.frame - a.frame) as f64;
                        let lerp = |x: f64, y: f64| x + (y - x) * w;
                        let mut d = Detection::new(
                            next_det_id,
                            f,
                            crate::track::BBox::new(
                                lerp(a.bbox.x, b.bbox.x),
                                lerp(a.bbox.y, b.bbox.y),
                                lerp(a.bbox.w, b.bbox.w),
                                lerp(a.bbox.h, b.bbox.h),
                            ),
                            (a.confidence + b.confidence) / 2.0,
                        );
                        d.embedding = a.embedding.clone();
                        d.interpolated = true;
                        next_det_id += 1;
                        filled.push(d);
                    }
                }
            }
            filled.push(t.detections[i].clone());
        }
        *t = Trajectory::new(t.track_id, filled).expect("frames stay ordered");
        }
}

/// Frames a sliding-window scheme touches: a window of `window` frames
/// opens at every `hop` offset and is clipped at the sequence end. The
/// non-overlapping partition touches every frame exactly once, so the
/// ratio of the two is the redundancy the partition avoids.
pub fn sliding_window_frames(num_frames: u32, window: u32, hop: u32) -> u64 {
    assert!(window >= 1 && hop >= 1);
    let mut total = 0u64;
    let mut start = 0u32;
    while start < num_frames {
        total += window.min(num_frames - start) as u64;
        start += hop;
    }
    total
}
