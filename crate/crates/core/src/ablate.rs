//! Controlled experiments over single knobs: retention, subclip length,
//! feature cues, matching rule, and fusion strategy. Each runner trains
//! what the arm requires, scores every validation sequence, and returns
//! one labelled aggregate per arm. The command-line interface and the
//! acceptance suite share these entry points.

use crate::baseline::{sort_like_track, SortConfig};
use crate::error::Result;
use crate::features::CueMask;
use crate::graph::plan_hierarchy;
use crate::infer::{track_sequence, Fusion, InferConfig, MatchRule};
use crate::learn::{train, TrainConfig};
use crate::metrics::{aggregate, evaluate, EvalResult};
use crate::mpn::{ModelParams, MpnConfig};
use crate::par;
use crate::sim::{make_corpus, SimConfig, SimOutput};

/// Everything one experiment needs: data generation, model size, training
/// budget, and the base inference settings the arms vary.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub mpn: MpnConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub n_train: usize,
    pub n_val: usize,
}

impl ExperimentConfig {
    /// A budget that runs in seconds on a laptop while still separating
    /// the arms.
    pub fn desk() -> Self {
        let mut sim = SimConfig::default();
        sim.num_objects = 6;
        sim.num_frames = 192;
        let mut train = TrainConfig::default();
        train.iterations = 600;
        train.batch_size = 4;
        train.subclip_len = 16;
        train.unfreeze_every = 80;
        train.lr = 1e-3;
        let mut infer = InferConfig::default();
        infer.stride = 32;
        infer.mode = crate::graph::GraphMode::Full;
        ExperimentConfig {
            sim,
            mpn: MpnConfig::compact(),
            train,
            infer,
            n_train: 4,
            n_val: 2,
        }
    }

    /// Training and validation sequences for this configuration.
    pub fn corpus(&self) -> (Vec<SimOutput>, Vec<SimOutput>) {
        make_corpus(&self.sim, self.n_train, self.n_val)
    }
}

/// Trains a model under this experiment's settings, with the given cue
/// mask applied to both training graphs and the eventual inference.
pub fn train_model(
    xc: &ExperimentConfig,
    corpus: &[SimOutput],
    cues: CueMask,
    train_cfg: &TrainConfig,
) -> Result<ModelParams> {
    let mut ctx = xc.infer.graph_ctx();
    ctx.cues = cues;
    let (params, _) = train(corpus, xc.mpn, train_cfg, &ctx)?;
    Ok(params)
}

/// Tracks every validation sequence and aggregates the scores.
pub fn eval_learned(
    val: &[SimOutput],
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<EvalResult> {
    let results: Vec<Result<EvalResult>> = par::map_slice(val, |seq| {
        let (set, _) = track_sequence(&seq.detections, params, cfg)?;
        evaluate(&seq.ground_truth, &set)
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&results))
}

/// Runs the frame-by-frame heuristic tracker over every validation
/// sequence and aggregates the scores.
pub fn eval_heuristic(val: &[SimOutput], cfg: &SortConfig) -> Result<EvalResult> {
    let results: Vec<Result<EvalResult>> = par::map_slice(val, |seq| {
        let set = sort_like_track(&seq.detections, cfg);
        evaluate(&seq.ground_truth, &set)
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&results))
}

/// One model, several retention windows at inference time.
/// One model per retention arm: the memory horizon shapes both the
/// candidate set and the time-gap feature scale, so training and
/// evaluation must agree on it within each arm.
pub fn run_retention(xc: &ExperimentConfig, arms: &[u32]) -> Result<Vec<(String, EvalResult)>> {
    let (train_seqs, val) = xc.corpus();
    let mut rows = Vec::new();
    for &r in arms {
        let mut arm = xc.clone();
        arm.infer.retention = Some(r);
        let params = train_model(&arm, &train_seqs, arm.infer.cues, &arm.train)?;
        rows.push((
            format!("retention={r}"),
            eval_learned(&val, &params, &arm.infer)?,
        ));
    }
    Ok(rows)
}

/// One model per subclip length; training depth follows the arm. The
/// configured `unfreeze_every` acts as a per-stage budget: deeper
/// hierarchies get proportionally more total iterations so every level
/// receives the same training effort.
pub fn run_stride(xc: &ExperimentConfig, arms: &[u32]) -> Result<Vec<(String, EvalResult)>> {
    let (train_seqs, val) = xc.corpus();
    let mut rows = Vec::new();
    for &t in arms {
        let depth = plan_hierarchy(t).len();
        let mut tc = xc.train.clone();
        tc.subclip_len = t;
        tc.iterations = xc.train.unfreeze_every * (depth + 2);
        let params = train_model(xc, &train_seqs, xc.infer.cues, &tc)?;
        let cfg = InferConfig {
            stride: t,
            ..xc.infer.clone()
        };
        rows.push((format!("stride={t}"), eval_learned(&val, &params, &cfg)?));
    }
    Ok(rows)
}

/// One model per cue set. Arms: geometry only, geometry+motion, all cues.
pub fn run_cues(xc: &ExperimentConfig) -> Result<Vec<(String, EvalResult)>> {
    let (train_seqs, val) = xc.corpus();
    let arms = [
        CueMask {
            geometry: true,
            motion: false,
            appearance: false,
        },
        CueMask {
            geometry: true,
            motion: true,
            appearance: false,
        },
        CueMask {
            geometry: true,
            motion: true,
            appearance: true,
        },
    ];
    let mut rows = Vec::new();
    for mask in arms {
        let params = train_model(xc, &train_seqs, mask, &xc.train)?;
        let cfg = InferConfig {
            cues: mask,
            ..xc.infer.clone()
        };
        rows.push((format!("cues={}", mask.to_string()), eval_learned(&val, &params, &cfg)?));
    }
    Ok(rows)
}

/// One model, exact vs greedy link selection.
pub fn run_matching(xc: &ExperimentConfig) -> Result<Vec<(String, EvalResult)>> {
    let (train_seqs, val) = xc.corpus();
    let params = train_model(xc, &train_seqs, xc.infer.cues, &xc.train)?;
    let mut rows = Vec::new();
    for (name, rule) in [("exact", MatchRule::Exact), ("greedy", MatchRule::Greedy)] {
        let cfg = InferConfig {
            match_rule: rule,
            ..xc.infer.clone()
        };
        rows.push((format!("matching={name}"), eval_learned(&val, &params, &cfg)?));
    }
    Ok(rows)
}

/// One model, learned vs heuristic cross-subclip fusion.
pub fn run_stitching(xc: &ExperimentConfig) -> Result<Vec<(String, EvalResult)>> {
    let (train_seqs, val) = xc.corpus();
    let params = train_model(xc, &train_seqs, xc.infer.cues, &xc.train)?;
    let mut rows = Vec::new();
    for (name, fusion) in [
        ("learned", Fusion::Learned),
        ("heuristic", Fusion::Heuristic),
    ] {
        let cfg = InferConfig {
            fusion,
            ..xc.infer.clone()
        };
        rows.push((format!("stitching={name}"), eval_learned(&val, &params, &cfg)?));
    }
    Ok(rows)
}
