//! Association graphs over trajectories: nodes are tracklets, directed
//! edges are time-ordered link hypotheses carrying cue features.
//!
//! Two shapes are built from the same code path: bipartite graphs (existing
//! tracks on one side, new tracklets on the other, as used for streaming
//! association) and full graphs (every time-compatible pair, as used inside
//! hierarchy windows and for batch association). Candidate edges are pruned
//! to each node's k best neighbours per direction under a cheap cue score.

use crate::error::{invalid, Result};
use crate::features::{edge_features, node_features, CueMask, EdgeFeatures, NodeFeatures};
use crate::track::{FrameId, TrackId, Trajectory};

/// Which input list a graph node came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Past,
    Incoming,
}

/// Connectivity rule for candidate edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// Only past -> incoming edges.
    Bipartite,
    /// Any time-ordered pair, regardless of side.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub side: Side,
    /// Position in the originating input slice.
    pub index: usize,
    pub track_id: TrackId,
    pub features: NodeFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    /// Node index of the temporally earlier endpoint.
    pub src: usize,
    /// Node index of the temporally later endpoint.
    pub dst: usize,
    /// Frames between src's last and dst's first detection (>= 1).
    pub gap: u32,
    pub features: EdgeFeatures,
}

/// A built association graph. Nodes list all past trajectories first, then
/// all incoming ones, in input order; edges are sorted by `(src, dst)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssocGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub n_past: usize,
}

impl AssocGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Shared knobs for graph construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphContext {
    /// Scene width/height used to normalize box sizes.
    pub arena: (f64, f64),
    /// Maximum frame gap an edge may bridge.
    pub retention: u32,
    /// Neighbours kept per node and direction during pruning.
    pub knn: usize,
    /// Detections used when estimating endpoint velocities.
    pub velocity_window: usize,
    /// Cue groups visible to the model.
    pub cues: CueMask,
}

impl Default for GraphContext {
    fn default() -> Self {
        GraphContext {
            arena: (1280.0, 720.0),
            retention: 30,
            knn: 10,
            velocity_window: 5,
            cues: CueMask::default(),
        }
    }
}

/// Builds the association graph between `past` and `incoming` trajectories.
///
/// Candidate pairs are time-ordered (source ends strictly before the
/// candidate starts) with a gap of at most `ctx.retention` frames. Each
/// node keeps its `ctx.knn` best outgoing and incoming candidates under a
/// mean of the appearance, motion-overlap, and velocity-alignment scores
/// (masked cues count as neutral); the union of both keep-lists survives.
/// Track ids must be unique across the two lists.
pub fn build_graph(
    past: &[Trajectory],
    incoming: &[Trajectory],
    mode: GraphMode,
    ctx: &GraphContext,
) -> Result<AssocGraph> {
    if ctx.retention == 0 {
        return Err(invalid("graph retention must be at least 1"));
    }
    if ctx.knn == 0 {
        return Err(invalid("graph knn must be at least 1"));
    }
    if ctx.arena.0 <= 0.0 || ctx.arena.1 <= 0.0 {
        return Err(invalid("graph arena dimensions must be positive"));
    }
    let mut nodes = Vec::with_capacity(past.len() + incoming.len());
    for (index, t) in past.iter().enumerate() {
        nodes.push(GraphNode {
            side: Side::Past,
            index,
            track_id: t.track_id,
            features: node_features(t, ctx.arena),
        });
    }
    for (index, t) in incoming.iter().enumerate() {
        nodes.push(GraphNode {
            side: Side::Incoming,
            index,
            track_id: t.track_id,
            features: node_features(t, ctx.arena),
        });
    }
    {
        let mut ids: Vec<TrackId> = nodes.iter().map(|n| n.track_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("graph requires unique track ids across inputs"));
        }
    }

    let traj = |node: &GraphNode| -> &Trajectory {
        match node.side {
            Side::Past => &past[node.index],
            Side::Incoming => &incoming[node.index],
        }
    };

    // Enumerate admissible candidates with raw (unmasked) features.
    struct Candidate {
        src: usize,
        dst: usize,
        gap: u32,
        features: EdgeFeatures,
        score: f64,
    }
    let raw_cues = CueMask::default();
    let mut candidates: Vec<Candidate> = Vec::new();
    for (a, na) in nodes.iter().enumerate() {
        for (b, nb) in nodes.iter().enumerate() {
            if a == b {
                continue;
            }
            if mode == GraphMode::Bipartite
                && !(na.side == Side::Past && nb.side == Side::Incoming)
            {
                continue;
            }
            let ta = traj(na);
            let tb = traj(nb);
            if ta.last_frame() >= tb.first_frame() {
                continue;
            }
            let gap = tb.first_frame() - ta.last_frame();
            if gap > ctx.retention {
                continue;
            }
            let f = edge_features(ta, tb, ctx.retention, ctx.velocity_window, raw_cues)?;
            let app = if ctx.cues.appearance {
                f.app_sim.clamp(0.0, 1.0)
            } else {
                0.5
            };
            let (overlap, align) = if ctx.cues.motion {
                (
                    (f.motion_giou + 1.0) / 2.0,
                    1.0 - f.vdc / std::f64::consts::PI,
                )
            } else {
                (0.5, 0.5)
            };
            candidates.push(Candidate {
                src: a,
                dst: b,
                gap,
                features: f,
                score: (app + overlap + align) / 3.0,
            });
        }
    }

    // Per-direction kNN: a candidate survives if it ranks within the top k
    // of its source's outgoing list or its destination's incoming list.
    let n = nodes.len();
    let mut keep = vec![false; candidates.len()];
    for node in 0..n {
        for outgoing in [true, false] {
            let mut ranked: Vec<usize> = (0..candidates.len())
                .filter(|&c| {
                    if outgoing {
                        candidates[c].src == node
                    } else {
                        candidates[c].dst == node
                    }
                })
                .collect();
            ranked.sort_by(|&x, &y| {
                let (cx, cy) = (&candidates[x], &candidates[y]);
                cy.score
                    .partial_cmp(&cx.score)
                    .unwrap()
                    .then(cx.gap.cmp(&cy.gap))
                    .then(nodes[cx.dst].track_id.cmp(&nodes[cy.dst].track_id))
                    .then(nodes[cx.src].track_id.cmp(&nodes[cy.src].track_id))
            });
            for &c in ranked.iter().take(ctx.knn) {
                keep[c] = true;
            }
        }
    }

    let mut edges: Vec<GraphEdge> = candidates
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(mut c, _)| {
            ctx.cues.apply(&mut c.features);
            GraphEdge {
                src: c.src,
                dst: c.dst,
                gap: c.gap,
                features: c.features,
            }
        })
        .collect();
    edges.sort_by_key(|e| (e.src, e.dst));
    Ok(AssocGraph {
        nodes,
        edges,
        n_past: past.len(),
    })
}

/// Window lengths of the association hierarchy for a subclip of `len`
/// frames: powers of two `2, 4, 8, ...` until a single window covers the
/// whole subclip. A single frame needs no hierarchy.
pub fn plan_hierarchy(len: u32) -> Vec<u32> {
    if len <= 1 {
        return Vec::new();
    }
    let mut windows = Vec::new();
    let mut w = 2u32;
    loop {
        windows.push(w);
        if w >= len {
            break;
        }
        w = w.saturating_mul(2);
    }
    windows
}

/// Splits `[first, last]` into consecutive windows of `window` frames (the
/// final window may be shorter) and returns, for each trajectory, the index
/// of the window containing its first frame. Windows at consecutive
/// hierarchy levels nest because both partitions start at `first` and the
/// lengths double.
pub fn window_of(
    tracklets: &[Trajectory],
    first: FrameId,
    window: u32,
) -> Vec<usize> {
    tracklets
        .iter()
        .map(|t| ((t.first_frame() - first) / window) as usize)
        .collect()
}
