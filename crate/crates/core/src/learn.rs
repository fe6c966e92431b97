//! Training: focal loss on edge classifications, Adam with decoupled
//! weight decay, teacher-forced instance sampling, and the progressive
//! schedule that activates one hierarchy level after another before the
//! streaming association layer joins.
//!
//! A training instance is cut from one simulated sequence: a past region
//! whose identity-grouped detections act as established tracks, a skipped
//! gap, and a subclip whose detections are regrouped into the ideal
//! tracklets every hierarchy level would see if all lower levels were
//! perfect. All graphs of an instance are scored by the same parameter
//! object, so every level trains the same shared weights.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::graph::{build_graph, plan_hierarchy, AssocGraph, GraphContext, GraphMode};
use crate::mpn::{backward, forward_trace, ModelParams, MpnConfig};
use crate::par;
use crate::sim::SimOutput;
use crate::track::{DetId, Detection, FrameId, TrackId, Trajectory};

/// Adam with decoupled weight decay over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One bias-corrected update; weight decay is applied directly to the
    /// parameters rather than mixed into the gradient.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, weight_decay: f64) {
        let g = grads.flatten();
        let mut p = params.flatten();
        assert_eq!(g.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS) + lr * weight_decay * p[i];
        }
        params.assign_from_flat(&p).expect("same shape");
    }
}

/// Focal binary cross-entropy. `gamma = 0` is plain cross-entropy; larger
/// values down-weight already well-classified edges.
pub fn focal_loss(p: f64, label: f64, gamma: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    if label >= 0.5 {
        -(1.0 - p).powf(gamma) * p.ln()
    } else {
        -p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Derivative of [`focal_loss`] with respect to the probability.
pub fn focal_loss_dp(p: f64, label: f64, gamma: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    if label >= 0.5 {
        gamma * (1.0 - p).powf(gamma - 1.0) * p.ln() - (1.0 - p).powf(gamma) / p
    } else {
        -gamma * p.powf(gamma - 1.0) * (1.0 - p).ln() + p.powf(gamma) / (1.0 - p)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Focal loss focusing exponent.
    pub gamma: f64,
    /// Frames per sampled subclip; sets the hierarchy depth.
    pub subclip_len: u32,
    /// Maximum number of frames skipped between past region and subclip.
    pub skip_max: u32,
    /// Iterations between activating the next hierarchy level.
    pub unfreeze_every: usize,
    /// Probability of dropping a whole past track (simulated births).
    pub drop_track_prob: f64,
    /// Probability of dropping a subclip detection (simulated misses).
    pub drop_det_prob: f64,
    /// Probability of keeping each past-region clutter detection as a
    /// singleton false track, mimicking the spurious births a running
    /// tracker accumulates in its active pool.
    pub clutter_prob: f64,
    /// Fraction of instances whose boundary is anchored right after an
    /// occlusion so long-gap re-entry decisions are oversampled.
    pub hard_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3500,
            batch_size: 8,
            lr: 3e-4,
            weight_decay: 1e-4,
            gamma: 2.0,
            subclip_len: 32,
            skip_max: 8,
            unfreeze_every: 500,
            drop_track_prob: 0.1,
            drop_det_prob: 0.1,
            clutter_prob: 0.3,
            hard_frac: 0.4,
            seed: 1,
        }
    }
}

/// One association graph with per-edge ground-truth labels.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub graph: AssocGraph,
    pub labels: Vec<f64>,
}

/// All graphs of one sampled training instance.
#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub graphs: Vec<LabeledGraph>,
    /// Frames skipped between the past region and the subclip.
    pub gap: u32,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub loss: f64,
    pub active_levels: usize,
    pub grad_norm: f64,
}

/// At most this many windows per hierarchy level enter an instance; the
/// rest carry no extra signal and only cost time.
const MAX_WINDOWS_PER_LEVEL: usize = 2;

fn identity_map(gt: &crate::track::TrackSet) -> HashMap<DetId, TrackId> {
    let mut map = HashMap::new();
    for t in &gt.tracks {
        for d in &t.detections {
            map.insert(d.id, t.track_id);
        }
    }
    map
}

/// Groups labelled detections into identity-pure tracklets per window of
/// `window` frames starting at `first`. Detections without identity stay
/// singletons.
fn fragments(
    dets: &[(Detection, Option<TrackId>)],
    first: FrameId,
    window: u32,
) -> Vec<(Trajectory, Option<TrackId>)> {
    use std::collections::BTreeMap;
    let mut grouped: BTreeMap<(u32, TrackId), Vec<Detection>> = BTreeMap::new();
    let mut singles: Vec<(Detection, Option<TrackId>)> = Vec::new();
    for (d, ident) in dets {
        match ident {
            Some(id) => grouped
                .entry(((d.frame - first) / window, *id))
                .or_default()
                .push(d.clone()),
            None => singles.push((d.clone(), None)),
        }
    }
    let mut out: Vec<(Trajectory, Option<TrackId>)> = Vec::new();
    let mut next_id: TrackId = 1;
    for ((_, ident), mut ds) in grouped {
        ds.sort_by_key(|d| d.frame);
        out.push((Trajectory::new(next_id, ds).expect("windowed fragment"), Some(ident)));
        next_id += 1;
    }
    for (d, ident) in singles {
        out.push((
            Trajectory::new(next_id, vec![d]).expect("single detection"),
            ident,
        ));
        next_id += 1;
    }
    // Deterministic node order: by first frame, then by assigned id.
    out.sort_by_key(|(t, _)| (t.first_frame(), t.track_id));
    for (i, (t, _)) in out.iter_mut().enumerate() {
        t.track_id = i as TrackId + 1;
    }
    out
}

fn labels_for(graph: &AssocGraph, ident: &[Option<TrackId>]) -> Vec<f64> {
    graph
        .edges
        .iter()
        .map(|e| {
            let a = ident[e.src];
            let b = ident[e.dst];
            if a.is_some() && a == b {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Samples one teacher-forced training instance.
///
/// `active_levels` counts how many stages currently train: hierarchy
/// levels first, then (one past the deepest level) the streaming
/// association graph between past tracks and the subclip's final
/// tracklets.
pub fn sample_training_instance(
    seq: &SimOutput,
    active_levels: usize,
    cfg: &TrainConfig,
    ctx: &GraphContext,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingInstance> {
    let (first, last) = seq
        .ground_truth
        .frame_range()
        .ok_or_else(|| invalid("training sequence has no ground truth"))?;
    let len = last - first + 1;
    if len < cfg.subclip_len + cfg.skip_max + 2 {
        return Err(invalid(
            "sequence too short for the configured subclip and skip",
        ));
    }
    let gap = rng.gen_range(0..=cfg.skip_max);
    let lo = first + gap + 1;
    let hi = last - cfg.subclip_len + 1;
    // Uniform boundaries rarely land right after an occlusion, yet those
    // re-entry moments are where association is genuinely hard, so a
    // configurable fraction of instances is anchored there on purpose.
    let mut t_star = rng.gen_range(lo..=hi);
    if rng.gen_range(0.0..1.0) < cfg.hard_frac && !seq.occlusion_log.is_empty() {
        let (_, _, end) = seq.occlusion_log[rng.gen_range(0..seq.occlusion_log.len())];
        if (lo..=hi).contains(&(end + 1)) {
            t_star = end + 1;
        }
    }
    let k = rng.gen_range(first..=t_star - gap - 1);
    let ident_of = identity_map(&seq.ground_truth);

    let mut dets: Vec<&Detection> = seq.detections.iter().collect();
    dets.sort_by_key(|d| (d.frame, d.id));

    // Past region: identity-grouped corrupted detections act as the tracks
    // an online tracker would have built so far.
    use std::collections::BTreeMap;
    let mut past_groups: BTreeMap<TrackId, Vec<Detection>> = BTreeMap::new();
    for d in &dets {
        if d.frame >= k && d.frame + gap < t_star {
            if let Some(&ident) = ident_of.get(&d.id) {
                past_groups.entry(ident).or_default().push((*d).clone());
            }
        }
    }
    let mut past: Vec<Trajectory> = Vec::new();
    let mut past_ident: Vec<Option<TrackId>> = Vec::new();
    let mut next_id: TrackId = 1;
    for (ident, ds) in past_groups {
        if rng.gen_range(0.0..1.0) < cfg.drop_track_prob {
            continue;
        }
        past.push(Trajectory::new(next_id, ds).expect("grouped past track"));
        past_ident.push(Some(ident));
        next_id += 1;
    }
    // A running tracker's active pool also holds false tracks born from
    // clutter; mirror that with singleton tracks built from past-region
    // detections that belong to no identity.
    for d in &dets {
        if d.frame >= k && d.frame + gap < t_star && !ident_of.contains_key(&d.id) {
            if rng.gen_range(0.0..1.0) < cfg.clutter_prob {
                past.push(
                    Trajectory::new(next_id, vec![(*d).clone()]).expect("clutter singleton"),
                );
                past_ident.push(None);
                next_id += 1;
            }
        }
    }

    // Subclip detections with miss augmentation; every identity that was
    // present keeps at least one detection.
    let sub_last = t_star + cfg.subclip_len - 1;
    let mut subclip: Vec<(Detection, Option<TrackId>)> = Vec::new();
    let mut dropped: BTreeMap<TrackId, Detection> = BTreeMap::new();
    let mut kept_ident: BTreeMap<TrackId, usize> = BTreeMap::new();
    for d in &dets {
        if d.frame < t_star || d.frame > sub_last {
            continue;
        }
        let ident = ident_of.get(&d.id).copied();
        if rng.gen_range(0.0..1.0) < cfg.drop_det_prob {
            if let Some(id) = ident {
                dropped.entry(id).or_insert_with(|| (*d).clone());
            }
            continue;
        }
        if let Some(id) = ident {
            *kept_ident.entry(id).or_insert(0) += 1;
        }
        subclip.push(((*d).clone(), ident));
    }
    for (id, d) in dropped {
        if kept_ident.get(&id).copied().unwrap_or(0) == 0 {
            subclip.push((d, Some(id)));
        }
    }
    subclip.sort_by_key(|(d, _)| (d.frame, d.id));

    let plan = plan_hierarchy(cfg.subclip_len);
    let mut graphs: Vec<LabeledGraph> = Vec::new();
    for (li, &win) in plan.iter().enumerate() {
        if li + 1 > active_levels {
            break;
        }
        let in_win = if li == 0 { 1 } else { plan[li - 1] };
        let frags = fragments(&subclip, t_star, in_win);
        // Bucket tracklets into this level's windows.
        let mut windows: BTreeMap<u32, Vec<(Trajectory, Option<TrackId>)>> = BTreeMap::new();
        for (t, ident) in frags {
            windows
                .entry((t.first_frame() - t_star) / win)
                .or_default()
                .push((t, ident));
        }
        let mut eligible: Vec<Vec<(Trajectory, Option<TrackId>)>> = windows
            .into_values()
            .filter(|v| v.len() >= 2)
            .collect();
        // Subsample windows; order stays deterministic.
        let take = eligible.len().min(MAX_WINDOWS_PER_LEVEL);
        let mut picked: Vec<usize> = (0..eligible.len()).collect();
        for i in 0..take {
            let j = rng.gen_range(i..picked.len());
            picked.swap(i, j);
        }
        let mut chosen: Vec<usize> = picked[..take].to_vec();
        chosen.sort_unstable();
        for wi in chosen.into_iter().rev() {
            let mut group = std::mem::take(&mut eligible[wi]);
            group.sort_by_key(|(t, _)| t.track_id);
            let (mut ts, ident): (Vec<Trajectory>, Vec<Option<TrackId>>) =
                group.drain(..).unzip();
            for (i, t) in ts.iter_mut().enumerate() {
                t.track_id = i as TrackId + 1;
            }
            let graph = build_graph(&[], &ts, GraphMode::Full, ctx)?;
            if graph.edge_count() == 0 {
                continue;
            }
            let labels = labels_for(&graph, &ident);
            graphs.push(LabeledGraph { graph, labels });
        }
    }

    if active_levels > plan.len() && !past.is_empty() {
        let finals = fragments(&subclip, t_star, cfg.subclip_len);
        let mut incoming: Vec<Trajectory> = Vec::new();
        let mut ident: Vec<Option<TrackId>> = past_ident.clone();
        let base = past.len() as TrackId;
        for (i, (mut t, tid)) in finals.into_iter().enumerate() {
            t.track_id = base + i as TrackId + 1;
            incoming.push(t);
            ident.push(tid);
        }
        let graph = build_graph(&past, &incoming, GraphMode::Bipartite, ctx)?;
        if graph.edge_count() > 0 {
            let labels = labels_for(&graph, &ident);
            graphs.push(LabeledGraph { graph, labels });
        }
    }

    Ok(TrainingInstance { graphs, gap })
}

/// Mean focal loss over all edges of the instance and the matching
/// parameter gradients.
pub fn instance_loss_and_grads(
    params: &ModelParams,
    inst: &TrainingInstance,
    gamma: f64,
) -> (f64, ModelParams) {
    let mut grads = ModelParams::zeros_like(params.cfg);
    let traces: Vec<_> = inst
        .graphs
        .iter()
        .map(|lg| forward_trace(params, &lg.graph))
        .collect();
    let n_edges: usize = inst.graphs.iter().map(|lg| lg.graph.edge_count()).sum();
    if n_edges == 0 {
        return (0.0, grads);
    }
    let scale = 1.0 / n_edges as f64;
    let mut loss = 0.0;
    for (lg, trace) in inst.graphs.iter().zip(&traces) {
        let dlogits: Vec<f64> = trace
            .probs
            .iter()
            .zip(&lg.labels)
            .map(|(&p, &y)| {
                loss += focal_loss(p, y, gamma) * scale;
                focal_loss_dp(p, y, gamma) * p * (1.0 - p) * scale
            })
            .collect();
        backward(params, &lg.graph, trace, &dlogits, &mut grads);
    }
    (loss, grads)
}

/// Trains a model on simulated sequences and returns it with the log.
///
/// Stage schedule: stage `1 + iter / unfreeze_every` (capped) is active;
/// hierarchy levels activate bottom-up and keep training, the streaming
/// association graph joins once all levels are active. Batch gradients are
/// averaged in sample order, so a run is reproducible bit for bit.
pub fn train(
    corpus: &[SimOutput],
    mpn_cfg: MpnConfig,
    cfg: &TrainConfig,
    ctx: &GraphContext,
) -> Result<(ModelParams, Vec<TrainLogRow>)> {
    if corpus.is_empty() {
        return Err(invalid("training corpus is empty"));
    }
    if cfg.batch_size == 0 || cfg.iterations == 0 {
        return Err(invalid("batch size and iterations must be positive"));
    }
    if cfg.unfreeze_every == 0 {
        return Err(invalid("unfreeze interval must be positive"));
    }
    let depth = plan_hierarchy(cfg.subclip_len).len();
    let mut params = ModelParams::init(mpn_cfg, cfg.seed);
    let mut adam = AdamState::new(params.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let active = (1 + iteration / cfg.unfreeze_every).min(depth + 1);
        let mut instances = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let seq = &corpus[rng.gen_range(0..corpus.len())];
            instances.push(sample_training_instance(seq, active, cfg, ctx, &mut rng)?);
        }
        let results = par::map_slice(&instances, |inst| {
            instance_loss_and_grads(&params, inst, cfg.gamma)
        });
        let mut grads = ModelParams::zeros_like(mpn_cfg);
        let mut loss = 0.0;
        let inv = 1.0 / cfg.batch_size as f64;
        for (l, g) in &results {
            loss += l * inv;
            grads.add_scaled(g, inv);
        }
        let grad_norm = grads.l2_norm();
        adam.step(&mut params, &grads, cfg.lr, cfg.weight_decay);
        log.push(TrainLogRow {
            iteration,
            loss,
            active_levels: active,
            grad_norm,
        });
    }
    Ok((params, log))
}
