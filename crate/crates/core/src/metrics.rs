//! Tracking quality metrics: detection/association accuracy (HOTA),
//! identity F1 (IDF1), and the classic event-count score (MOTA).
//!
//! All three compare a predicted track set against ground truth using
//! box IoU. MOTA counts per-frame events with match persistence, IDF1
//! scores the best global identity bijection, and HOTA averages a
//! detection/association trade-off over a sweep of IoU thresholds.

use std::collections::{BTreeMap, BTreeSet};

use crate::baseline::hungarian;
use crate::error::{Error, Result};
use crate::track::{BBox, FrameId, TrackId, TrackSet};

/// Matching threshold for MOTA and IDF1.
const IOU_GATE: f64 = 0.5;
/// Sentinel cost for pairs below the IoU gate.
const FORBIDDEN: f64 = 1e6;

/// Scores for one sequence (or an aggregate of several).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub idf1: f64,
    pub mota: f64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub id_switches: u64,
    pub num_gt_dets: u64,
    pub num_pred_dets: u64,
}

type FrameIndex = BTreeMap<FrameId, Vec<(TrackId, BBox)>>;

fn frame_index(set: &TrackSet) -> FrameIndex {
    let mut idx: FrameIndex = BTreeMap::new();
    for t in &set.tracks {
        for d in &t.detections {
            idx.entry(d.frame).or_default().push((t.track_id, d.bbox));
        }
    }
    for v in idx.values_mut() {
        v.sort_by_key(|&(id, _)| id);
    }
    idx
}

fn det_counts(set: &TrackSet) -> BTreeMap<TrackId, u64> {
    set.tracks
        .iter()
        .map(|t| (t.track_id, t.len() as u64))
        .collect()
}

/// Maximum-total-weight partial matching between two box lists, allowing
/// only pairs whose weight is `Some`. Returns (row, col) index pairs.
fn best_matching(
    rows: usize,
    cols: usize,
    weight: impl Fn(usize, usize) -> Option<f64>,
) -> Vec<(usize, usize)> {
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let mut cost = vec![vec![FORBIDDEN; cols]; rows];
    let mut any = false;
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            if let Some(w) = weight(i, j) {
                *c = -w;
                any = true;
            }
        }
    }
    if !any {
        return Vec::new();
    }
    hungarian(&cost)
        .into_iter()
        .filter(|&(i, j)| cost[i][j] < FORBIDDEN / 2.0)
        .collect()
}

/// Per-frame event counting with match persistence: a ground-truth object
/// keeps its previous predicted partner while the pair still overlaps, and
/// only the leftovers are re-matched by maximum total IoU.
fn mota_counts(gt: &FrameIndex, pred: &FrameIndex) -> (u64, u64, u64) {
    let frames: BTreeSet<FrameId> = gt.keys().chain(pred.keys()).copied().collect();
    let empty = Vec::new();
    let mut last_match: BTreeMap<TrackId, TrackId> = BTreeMap::new();
    let (mut fp, mut fneg, mut idsw) = (0u64, 0u64, 0u64);
    for &f in &frames {
        let gt_f = gt.get(&f).unwrap_or(&empty);
        let pr_f = pred.get(&f).unwrap_or(&empty);
        let mut gt_used = vec![false; gt_f.len()];
        let mut pr_used = vec![false; pr_f.len()];
        // Persistence pass.
        for (gi, &(gid, gbox)) in gt_f.iter().enumerate() {
            if let Some(&pid) = last_match.get(&gid) {
                if let Some(pi) = pr_f.iter().position(|&(id, _)| id == pid) {
                    if !pr_used[pi] && gbox.iou(&pr_f[pi].1) >= IOU_GATE {
                        gt_used[gi] = true;
                        pr_used[pi] = true;
                    }
                }
            }
        }
        // Optimal pass over the leftovers.
        let free_gt: Vec<usize> = (0..gt_f.len()).filter(|&i| !gt_used[i]).collect();
        let free_pr: Vec<usize> = (0..pr_f.len()).filter(|&j| !pr_used[j]).collect();
        let pairs = best_matching(free_gt.len(), free_pr.len(), |a, b| {
            let iou = gt_f[free_gt[a]].1.iou(&pr_f[free_pr[b]].1);
            (iou >= IOU_GATE).then_some(iou)
        });
        for (a, b) in pairs {
            let gid = gt_f[free_gt[a]].0;
            let pid = pr_f[free_pr[b]].0;
            if let Some(&prev) = last_match.get(&gid) {
                if prev != pid {
                    idsw += 1;
                }
            }
            last_match.insert(gid, pid);
            gt_used[free_gt[a]] = true;
            pr_used[free_pr[b]] = true;
        }
        fneg += gt_used.iter().filter(|&&u| !u).count() as u64;
        fp += pr_used.iter().filter(|&&u| !u).count() as u64;
    }
    (fp, fneg, idsw)
}

/// Best global one-to-one identity mapping: the number of detections
/// covered by matched (gt, pred) pairs on frames where they overlap.
fn idf1_tp(gt: &FrameIndex, pred: &FrameIndex) -> u64 {
    let gt_ids: Vec<TrackId> = {
        let mut s: BTreeSet<TrackId> = BTreeSet::new();
        for v in gt.values() {
            s.extend(v.iter().map(|&(id, _)| id));
        }
        s.into_iter().collect()
    };
    let pr_ids: Vec<TrackId> = {
        let mut s: BTreeSet<TrackId> = BTreeSet::new();
        for v in pred.values() {
            s.extend(v.iter().map(|&(id, _)| id));
        }
        s.into_iter().collect()
    };
    let mut overlap = vec![vec![0u64; pr_ids.len()]; gt_ids.len()];
    for (f, gt_f) in gt {
        if let Some(pr_f) = pred.get(f) {
            for &(gid, gbox) in gt_f {
                for &(pid, pbox) in pr_f {
                    if gbox.iou(&pbox) >= IOU_GATE {
                        let gi = gt_ids.binary_search(&gid).unwrap();
                        let pj = pr_ids.binary_search(&pid).unwrap();
                        overlap[gi][pj] += 1;
                    }
                }
            }
        }
    }
    best_matching(gt_ids.len(), pr_ids.len(), |i, j| {
        (overlap[i][j] > 0).then_some(overlap[i][j] as f64)
    })
    .into_iter()
    .map(|(i, j)| overlap[i][j])
    .sum()
}

/// Detection and association accuracy at one IoU threshold.
fn hota_at_alpha(
    gt: &FrameIndex,
    pred: &FrameIndex,
    gt_n: &BTreeMap<TrackId, u64>,
    pr_n: &BTreeMap<TrackId, u64>,
    alpha: f64,
) -> (f64, f64) {
    // Potential-association affinity: on how large a fraction of their
    // union do this gt track and this pred track overlap at all.
    let mut pot: BTreeMap<(TrackId, TrackId), u64> = BTreeMap::new();
    for (f, gt_f) in gt {
        if let Some(pr_f) = pred.get(f) {
            for &(gid, gbox) in gt_f {
                for &(pid, pbox) in pr_f {
                    if gbox.iou(&pbox) >= alpha {
                        *pot.entry((gid, pid)).or_default() += 1;
                    }
                }
            }
        }
    }
    let affinity = |gid: TrackId, pid: TrackId| -> f64 {
        match pot.get(&(gid, pid)) {
            Some(&c) => c as f64 / (gt_n[&gid] + pr_n[&pid] - c) as f64,
            None => 0.0,
        }
    };
    // Frame-by-frame matching steered by track affinity, with the IoU of
    // the actual boxes as a vanishing tie-break.
    let mut tpa: BTreeMap<(TrackId, TrackId), u64> = BTreeMap::new();
    let mut tp_total = 0u64;
    let empty = Vec::new();
    let frames: BTreeSet<FrameId> = gt.keys().chain(pred.keys()).copied().collect();
    for &f in &frames {
        let gt_f = gt.get(&f).unwrap_or(&empty);
        let pr_f = pred.get(&f).unwrap_or(&empty);
        let pairs = best_matching(gt_f.len(), pr_f.len(), |i, j| {
            let iou = gt_f[i].1.iou(&pr_f[j].1);
            (iou >= alpha).then(|| affinity(gt_f[i].0, pr_f[j].0) + iou * 1e-6)
        });
        for (i, j) in pairs {
            *tpa.entry((gt_f[i].0, pr_f[j].0)).or_default() += 1;
            tp_total += 1;
        }
    }
    let gt_total: u64 = gt_n.values().sum();
    let pr_total: u64 = pr_n.values().sum();
    let fneg = gt_total - tp_total;
    let fp = pr_total - tp_total;
    if tp_total == 0 {
        return (0.0, 0.0);
    }
    let det_a = tp_total as f64 / (tp_total + fneg + fp) as f64;
    let ass_sum: f64 = tpa
        .iter()
        .map(|(&(gid, pid), &c)| {
            c as f64 * (c as f64 / (gt_n[&gid] + pr_n[&pid] - c) as f64)
        })
        .sum();
    (det_a, ass_sum / tp_total as f64)
}

/// Number of IoU thresholds in the HOTA sweep: k/20 for k = 1..=19.
const HOTA_LEVELS: u32 = 19;

/// Scores `pred` against `gt` on one sequence.
pub fn evaluate(gt: &TrackSet, pred: &TrackSet) -> Result<EvalResult> {
    let num_gt_dets = gt.total_detections() as u64;
    if num_gt_dets == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let num_pred_dets = pred.total_detections() as u64;
    let gt_idx = frame_index(gt);
    let pr_idx = frame_index(pred);
    let gt_n = det_counts(gt);
    let pr_n = det_counts(pred);

    let (fp, fneg, idsw) = mota_counts(&gt_idx, &pr_idx);
    let mota = 1.0 - (fp + fneg + idsw) as f64 / num_gt_dets as f64;

    let idtp = idf1_tp(&gt_idx, &pr_idx);
    let idf1 = 2.0 * idtp as f64 / (num_gt_dets + num_pred_dets) as f64;

    let mut det_sum = 0.0;
    let mut ass_sum = 0.0;
    let mut hota_sum = 0.0;
    for k in 1..=HOTA_LEVELS {
        let alpha = k as f64 / 20.0;
        let (d, a) = hota_at_alpha(&gt_idx, &pr_idx, &gt_n, &pr_n, alpha);
        det_sum += d;
        ass_sum += a;
        hota_sum += (d * a).sqrt();
    }
    Ok(EvalResult {
        hota: hota_sum / HOTA_LEVELS as f64,
        det_a: det_sum / HOTA_LEVELS as f64,
        ass_a: ass_sum / HOTA_LEVELS as f64,
        idf1,
        mota,
        false_positives: fp,
        false_negatives: fneg,
        id_switches: idsw,
        num_gt_dets,
        num_pred_dets,
    })
}

/// Combines per-sequence results, weighting rates by ground-truth
/// detection count and summing event counts.
pub fn aggregate(results: &[EvalResult]) -> EvalResult {
    let total: u64 = results.iter().map(|r| r.num_gt_dets).sum();
    let mut agg = EvalResult {
        hota: 0.0,
        det_a: 0.0,
        ass_a: 0.0,
        idf1: 0.0,
        mota: 0.0,
        false_positives: 0,
        false_negatives: 0,
        id_switches: 0,
        num_gt_dets: 0,
        num_pred_dets: 0,
    };
    if total == 0 {
        return agg;
    }
    for r in results {
        let w = r.num_gt_dets as f64 / total as f64;
        agg.hota += w * r.hota;
        agg.det_a += w * r.det_a;
        agg.ass_a += w * r.ass_a;
        agg.idf1 += w * r.idf1;
        agg.mota += w * r.mota;
        agg.false_positives += r.false_positives;
        agg.false_negatives += r.false_negatives;
        agg.id_switches += r.id_switches;
        agg.num_gt_dets += r.num_gt_dets;
        agg.num_pred_dets += r.num_pred_dets;
    }
    agg
}
