//! Plain-text configuration: `section.key = value` lines, `#` comments.
//! Every key has a default, an empty file is valid, and unknown keys are
//! rejected by name so typos cannot silently fall back to defaults.

use std::fmt::Write as _;
use std::path::Path;

use crate::baseline::SortConfig;
use crate::error::{Error, Result};
use crate::features::CueMask;
use crate::graph::GraphMode;
use crate::infer::{AppearanceMode, Fusion, InferConfig, MatchRule};
use crate::learn::TrainConfig;
use crate::mpn::MpnConfig;
use crate::sim::{MotionMode, SimConfig};

/// All tunables in one place.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub sim: SimConfig,
    pub mpn: MpnConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub baseline: SortConfig,
    /// Detections per track end used for velocity estimates.
    pub velocity_window: usize,
    /// Minimum confidence for ingested detections.
    pub conf_threshold: f64,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            sim: SimConfig::default(),
            mpn: MpnConfig::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
            baseline: SortConfig::default(),
            velocity_window: crate::track::DEFAULT_VELOCITY_WINDOW,
            conf_threshold: crate::io::DEFAULT_CONF_THRESHOLD,
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| parse_err(line, format!("bad value {v:?} for {key}")))
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(parse_err(line, format!("bad boolean {v:?} for {key}"))),
    }
}

fn apply(cfg: &mut AppConfig, line: usize, key: &str, v: &str) -> Result<()> {
    match key {
        "sim.num_objects" => cfg.sim.num_objects = num(line, key, v)?,
        "sim.num_frames" => cfg.sim.num_frames = num(line, key, v)?,
        "sim.arena_w" => cfg.sim.arena_w = num(line, key, v)?,
        "sim.arena_h" => cfg.sim.arena_h = num(line, key, v)?,
        "sim.motion" => {
            cfg.sim.motion = match v {
                "constant" => MotionMode::ConstantVelocity,
                "sinusoidal" => MotionMode::Sinusoidal,
                "random_accel" => MotionMode::RandomAccel,
                _ => return Err(parse_err(line, format!("unknown motion mode {v:?}"))),
            }
        }
        "sim.speed" => cfg.sim.speed = num(line, key, v)?,
        "sim.occlusion_rate" => cfg.sim.occlusion_rate = num(line, key, v)?,
        "sim.occlusion_min" => cfg.sim.occlusion_len.0 = num(line, key, v)?,
        "sim.occlusion_max" => cfg.sim.occlusion_len.1 = num(line, key, v)?,
        "sim.miss_rate" => cfg.sim.miss_rate = num(line, key, v)?,
        "sim.fp_rate" => cfg.sim.fp_rate = num(line, key, v)?,
        "sim.box_noise_sigma" => cfg.sim.box_noise_sigma = num(line, key, v)?,
        "sim.embed_dim" => cfg.sim.embed_dim = num(line, key, v)?,
        "sim.embed_noise_sigma" => cfg.sim.embed_noise_sigma = num(line, key, v)?,
        "sim.embed_team_size" => cfg.sim.embed_team_size = num(line, key, v)?,
        "sim.seed" => cfg.sim.seed = num(line, key, v)?,
        "mpn.d_node" => cfg.mpn.d_node = num(line, key, v)?,
        "mpn.d_edge" => cfg.mpn.d_edge = num(line, key, v)?,
        "mpn.steps" => cfg.mpn.steps = num(line, key, v)?,
        "mpn.hidden" => cfg.mpn.hidden = num(line, key, v)?,
        "train.iterations" => cfg.train.iterations = num(line, key, v)?,
        "train.batch_size" => cfg.train.batch_size = num(line, key, v)?,
        "train.lr" => cfg.train.lr = num(line, key, v)?,
        "train.weight_decay" => cfg.train.weight_decay = num(line, key, v)?,
        "train.gamma" => cfg.train.gamma = num(line, key, v)?,
        "train.subclip_len" => cfg.train.subclip_len = num(line, key, v)?,
        "train.skip_max" => cfg.train.skip_max = num(line, key, v)?,
        "train.unfreeze_every" => cfg.train.unfreeze_every = num(line, key, v)?,
        "train.drop_track_prob" => cfg.train.drop_track_prob = num(line, key, v)?,
        "train.drop_det_prob" => cfg.train.drop_det_prob = num(line, key, v)?,
        "train.clutter_prob" => cfg.train.clutter_prob = num(line, key, v)?,
        "train.hard_frac" => cfg.train.hard_frac = num(line, key, v)?,
        "train.seed" => cfg.train.seed = num(line, key, v)?,
        "infer.stride" => cfg.infer.stride = num(line, key, v)?,
        "infer.mode" => {
            cfg.infer.mode = match v {
                "bipartite" => GraphMode::Bipartite,
                "full" => GraphMode::Full,
                _ => return Err(parse_err(line, format!("unknown graph mode {v:?}"))),
            }
        }
        "infer.retention" => {
            cfg.infer.retention = if v == "auto" {
                None
            } else {
                Some(num(line, key, v)?)
            }
        }
        "infer.score_threshold" => cfg.infer.score_threshold = num(line, key, v)?,
        "infer.match_rule" => {
            cfg.infer.match_rule = match v {
                "exact" => MatchRule::Exact,
                "greedy" => MatchRule::Greedy,
                _ => return Err(parse_err(line, format!("unknown match rule {v:?}"))),
            }
        }
        "infer.fusion" => {
            cfg.infer.fusion = match v {
                "learned" => Fusion::Learned,
                "heuristic" => Fusion::Heuristic,
                _ => return Err(parse_err(line, format!("unknown fusion mode {v:?}"))),
            }
        }
        "infer.appearance" => {
            cfg.infer.appearance = match v {
                "auto" => AppearanceMode::Auto,
                "mean" => AppearanceMode::Mean,
                "ema" => AppearanceMode::Ema,
                _ => return Err(parse_err(line, format!("unknown appearance mode {v:?}"))),
            }
        }
        "infer.ema_alpha" => cfg.infer.ema_alpha = num(line, key, v)?,
        "infer.interpolate" => cfg.infer.interpolate = flag(line, key, v)?,
        "infer.interp_max_gap" => cfg.infer.interp_max_gap = num(line, key, v)?,
        "infer.knn" => cfg.infer.knn = num(line, key, v)?,
        "infer.cues" => {
            cfg.infer.cues = CueMask::parse(v)
                .map_err(|e| parse_err(line, format!("{e}")))?
        }
        "baseline.w_app" => cfg.baseline.weights.w_app = num(line, key, v)?,
        "baseline.w_motion" => cfg.baseline.weights.w_motion = num(line, key, v)?,
        "baseline.w_vdc" => cfg.baseline.weights.w_vdc = num(line, key, v)?,
        "baseline.gate_cost" => cfg.baseline.gate_cost = num(line, key, v)?,
        "baseline.retention" => cfg.baseline.retention = num(line, key, v)?,
        "baseline.ema_alpha" => cfg.baseline.ema_alpha = num(line, key, v)?,
        "features.velocity_window" => cfg.velocity_window = num(line, key, v)?,
        "io.conf_threshold" => cfg.conf_threshold = num(line, key, v)?,
        _ => return Err(Error::UnknownKey(key.to_string())),
    }
    Ok(())
}

/// Parses configuration text on top of the defaults.
pub fn parse_config(text: &str) -> Result<AppConfig> {
    let mut cfg = AppConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(i + 1, format!("expected key = value, got {raw:?}")));
        };
        apply(&mut cfg, i + 1, key.trim(), value.trim())?;
    }
    // Keep dependent defaults coherent: velocity estimates and inference
    // geometry follow the explicit settings.
    cfg.infer.velocity_window = cfg.velocity_window;
    cfg.infer.arena = (cfg.sim.arena_w, cfg.sim.arena_h);
    Ok(cfg)
}

/// Loads a configuration file; a missing path is an error.
pub fn load_config(path: &Path) -> Result<AppConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Writes every key with its resolved value, sorted, so a run can be
/// reproduced from its echo alone.
pub fn write_resolved(path: &Path, cfg: &AppConfig) -> Result<()> {
    let motion = match cfg.sim.motion {
        MotionMode::ConstantVelocity => "constant",
        MotionMode::Sinusoidal => "sinusoidal",
        MotionMode::RandomAccel => "random_accel",
    };
    let mode = match cfg.infer.mode {
        GraphMode::Bipartite => "bipartite",
        GraphMode::Full => "full",
    };
    let appearance = match cfg.infer.appearance {
        AppearanceMode::Auto => "auto",
        AppearanceMode::Mean => "mean",
        AppearanceMode::Ema => "ema",
    };
    let retention = match cfg.infer.retention {
        None => "auto".to_string(),
        Some(r) => r.to_string(),
    };
    let match_rule = match cfg.infer.match_rule {
        MatchRule::Exact => "exact",
        MatchRule::Greedy => "greedy",
    };
    let fusion = match cfg.infer.fusion {
        Fusion::Learned => "learned",
        Fusion::Heuristic => "heuristic",
    };
    let mut pairs: Vec<(String, String)> = vec![
        ("sim.num_objects".into(), cfg.sim.num_objects.to_string()),
        ("sim.num_frames".into(), cfg.sim.num_frames.to_string()),
        ("sim.arena_w".into(), cfg.sim.arena_w.to_string()),
        ("sim.arena_h".into(), cfg.sim.arena_h.to_string()),
        ("sim.motion".into(), motion.into()),
        ("sim.speed".into(), cfg.sim.speed.to_string()),
        ("sim.occlusion_rate".into(), cfg.sim.occlusion_rate.to_string()),
        ("sim.occlusion_min".into(), cfg.sim.occlusion_len.0.to_string()),
        ("sim.occlusion_max".into(), cfg.sim.occlusion_len.1.to_string()),
        ("sim.miss_rate".into(), cfg.sim.miss_rate.to_string()),
        ("sim.fp_rate".into(), cfg.sim.fp_rate.to_string()),
        ("sim.box_noise_sigma".into(), cfg.sim.box_noise_sigma.to_string()),
        ("sim.embed_dim".into(), cfg.sim.embed_dim.to_string()),
        ("sim.embed_noise_sigma".into(), cfg.sim.embed_noise_sigma.to_string()),
        ("sim.embed_team_size".into(), cfg.sim.embed_team_size.to_string()),
        ("sim.seed".into(), cfg.sim.seed.to_string()),
        ("mpn.d_node".into(), cfg.mpn.d_node.to_string()),
        ("mpn.d_edge".into(), cfg.mpn.d_edge.to_string()),
        ("mpn.steps".into(), cfg.mpn.steps.to_string()),
        ("mpn.hidden".into(), cfg.mpn.hidden.to_string()),
        ("train.iterations".into(), cfg.train.iterations.to_string()),
        ("train.batch_size".into(), cfg.train.batch_size.to_string()),
        ("train.lr".into(), cfg.train.lr.to_string()),
        ("train.weight_decay".into(), cfg.train.weight_decay.to_string()),
        ("train.gamma".into(), cfg.train.gamma.to_string()),
        ("train.subclip_len".into(), cfg.train.subclip_len.to_string()),
        ("train.skip_max".into(), cfg.train.skip_max.to_string()),
        ("train.unfreeze_every".into(), cfg.train.unfreeze_every.to_string()),
        ("train.drop_track_prob".into(), cfg.train.drop_track_prob.to_string()),
        ("train.drop_det_prob".into(), cfg.train.drop_det_prob.to_string()),
        ("train.clutter_prob".into(), cfg.train.clutter_prob.to_string()),
        ("train.hard_frac".into(), cfg.train.hard_frac.to_string()),
        ("train.seed".into(), cfg.train.seed.to_string()),
        ("infer.stride".into(), cfg.infer.stride.to_string()),
        ("infer.mode".into(), mode.into()),
        ("infer.retention".into(), retention),
        ("infer.score_threshold".into(), cfg.infer.score_threshold.to_string()),
        ("infer.match_rule".into(), match_rule.into()),
        ("infer.fusion".into(), fusion.into()),
        ("infer.appearance".into(), appearance.into()),
        ("infer.ema_alpha".into(), cfg.infer.ema_alpha.to_string()),
        ("infer.interpolate".into(), cfg.infer.interpolate.to_string()),
        ("infer.interp_max_gap".into(), cfg.infer.interp_max_gap.to_string()),
        ("infer.knn".into(), cfg.infer.knn.to_string()),
        ("infer.cues".into(), cfg.infer.cues.to_string()),
        ("baseline.w_app".into(), cfg.baseline.weights.w_app.to_string()),
        ("baseline.w_motion".into(), cfg.baseline.weights.w_motion.to_string()),
        ("baseline.w_vdc".into(), cfg.baseline.weights.w_vdc.to_string()),
        ("baseline.gate_cost".into(), cfg.baseline.gate_cost.to_string()),
        ("baseline.retention".into(), cfg.baseline.retention.to_string()),
        ("baseline.ema_alpha".into(), cfg.baseline.ema_alpha.to_string()),
        ("features.velocity_window".into(), cfg.velocity_window.to_string()),
        ("io.conf_threshold".into(), cfg.conf_threshold.to_string()),
    ];
    pairs.sort();
    let mut out = String::new();
    for (k, v) in pairs {
        writeln!(out, "{k} = {v}").expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}
