//! Association features for trajectory pairs and single trajectories.
//!
//! One feature recipe feeds every association graph in the pipeline — the
//! within-subclip hierarchy and the subclip-fusion step alike — so a single
//! scoring model can be shared across all of them. Edge features group into
//! three cues: geometry (box offsets, size ratios, time gap), motion (GIoU
//! of the forecast box, velocity direction consistency), and appearance
//! (embedding cosine). [`CueMask`] zeroes whole groups, which is how cue
//! ablations and embedding-less inputs are handled.

use crate::error::{invalid, Result};
use crate::track::{dot, forecast_box, trajectory_velocity, BBox, Trajectory};

/// Per-node input to the scoring model: box size normalized by the arena and
/// mean detection confidence. Sizes come from the trajectory's last
/// detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFeatures {
    pub w_norm: f64,
    pub h_norm: f64,
    pub conf: f64,
}

impl NodeFeatures {
    pub const DIM: usize = 3;

    pub fn to_vec(self) -> [f64; Self::DIM] {
        [self.w_norm, self.h_norm, self.conf]
    }
}

/// Per-edge input to the scoring model, in a fixed component order (see
/// [`EdgeFeatures::to_vec`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeatures {
    /// Center offset, normalized by the source box height.
    pub rel_dx: f64,
    pub rel_dy: f64,
    /// Log size ratios dst/src.
    pub log_dw: f64,
    pub log_dh: f64,
    /// Frame gap over the retention window.
    pub dt_norm: f64,
    /// Cosine of the aggregated appearance vectors.
    pub app_sim: f64,
    /// GIoU between the source's forecast box at the destination's first
    /// frame and the destination's first box.
    pub motion_giou: f64,
    /// Velocity direction consistency angle, radians in [0, pi].
    pub vdc: f64,
}

impl EdgeFeatures {
    pub const DIM: usize = 8;

    pub fn to_vec(self) -> [f64; Self::DIM] {
        [
            self.rel_dx,
            self.rel_dy,
            self.log_dw,
            self.log_dh,
            self.dt_norm,
            self.app_sim,
            self.motion_giou,
            self.vdc,
        ]
    }
}

/// Which cue groups stay live. Masked groups are zeroed at feature time so
/// train and inference see identical inputs for a given mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CueMask {
    pub geometry: bool,
    pub motion: bool,
    pub appearance: bool,
}

impl Default for CueMask {
    fn default() -> Self {
        CueMask {
            geometry: true,
            motion: true,
            appearance: true,
        }
    }
}

impl CueMask {
    pub fn apply(&self, f: &mut EdgeFeatures) {
        if !self.geometry {
            f.rel_dx = 0.0;
            f.rel_dy = 0.0;
            f.log_dw = 0.0;
            f.log_dh = 0.0;
            f.dt_norm = 0.0;
        }
        if !self.motion {
            f.motion_giou = 0.0;
            f.vdc = 0.0;
        }
        if !self.appearance {
            f.app_sim = 0.0;
        }
    }

    /// Parses a subset of the letters `g`, `m`, `a` (any order, case
    /// insensitive), e.g. `"gm"` enables geometry and motion only.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mask = CueMask {
            geometry: false,
            motion: false,
            appearance: false,
        };
        for c in s.chars() {
            match c.to_ascii_lowercase() {
                'g' => mask.geometry = true,
                'm' => mask.motion = true,
                'a' => mask.appearance = true,
                other => return Err(invalid(format!("unknown cue letter `{other}` in `{s}`"))),
            }
        }
        Ok(mask)
    }

    pub fn to_string(&self) -> String {
        let mut s = String::new();
        if self.geometry {
            s.push('g');
        }
        if self.motion {
            s.push('m');
        }
        if self.appearance {
            s.push('a');
        }
        s
    }
}

/// Generalized IoU: IoU minus (hull - union) / hull. 1 for identical boxes,
/// 0 for touching disjoint boxes, negative when far apart; always > -1.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    let hx = (a.x + a.w).max(b.x + b.w) - a.x.min(b.x);
    let hy = (a.y + a.h).max(b.y + b.h) - a.y.min(b.y);
    let hull = hx * hy;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    if hull > 0.0 {
        iou - (hull - union) / hull
    } else {
        iou
    }
}

fn check_time_order(src: &Trajectory, dst: &Trajectory) -> Result<()> {
    if src.last_frame() >= dst.first_frame() {
        return Err(invalid(format!(
            "pair is not time-ordered: src {} ends at frame {}, dst {} begins at frame {}",
            src.track_id,
            src.last_frame(),
            dst.track_id,
            dst.first_frame()
        )));
    }
    Ok(())
}

/// Velocity direction consistency: the angle between the source's forward
/// velocity and the negated backward velocity of the candidate successor.
/// 0 means the destination continues the source's motion exactly; pi means
/// it arrives from the opposite direction. Either velocity being degenerate
/// (norm < 1e-9, e.g. single-detection tracks) yields the neutral pi/2.
pub fn vdc(src: &Trajectory, dst: &Trajectory, window: usize) -> Result<f64> {
    check_time_order(src, dst)?;
    let (fwd, _) = trajectory_velocity(src, window);
    let (_, bwd) = trajectory_velocity(dst, window);
    let u = fwd;
    let v = (-bwd.0, -bwd.1);
    let nu = (u.0 * u.0 + u.1 * u.1).sqrt();
    let nv = (v.0 * v.0 + v.1 * v.1).sqrt();
    if nu < 1e-9 || nv < 1e-9 {
        return Ok(std::f64::consts::FRAC_PI_2);
    }
    let cos = ((u.0 * v.0 + u.1 * v.1) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Full edge feature vector for a time-ordered pair, masked by `cues`.
pub fn edge_features(
    src: &Trajectory,
    dst: &Trajectory,
    retention: u32,
    window: usize,
    cues: CueMask,
) -> Result<EdgeFeatures> {
    check_time_order(src, dst)?;
    if retention == 0 {
        return Err(invalid("retention must be at least 1"));
    }
    let s = src.last();
    let d = dst.first();
    let (scx, scy) = s.bbox.center();
    let (dcx, dcy) = d.bbox.center();
    let href = s.bbox.h.max(1e-9);
    let gap = (d.frame - s.frame) as f64;
    let forecast = forecast_box(src, d.frame, window);
    let mut f = EdgeFeatures {
        rel_dx: (dcx - scx) / href,
        rel_dy: (dcy - scy) / href,
        log_dw: (d.bbox.w.max(1e-9) / s.bbox.w.max(1e-9)).ln(),
        log_dh: (d.bbox.h.max(1e-9) / s.bbox.h.max(1e-9)).ln(),
        dt_norm: gap / retention as f64,
        app_sim: dot(&src.appearance, &dst.appearance),
        motion_giou: giou(&forecast, &d.bbox),
        vdc: vdc(src, dst, window)?,
    };
    cues.apply(&mut f);
    Ok(f)
}

/// Node feature vector; `arena` is the (width, height) the tracker was
/// configured with.
pub fn node_features(t: &Trajectory, arena: (f64, f64)) -> NodeFeatures {
    let last = t.last();
    let conf = t.detections.iter().map(|d| d.confidence).sum::<f64>() / t.len() as f64;
    NodeFeatures {
        w_norm: last.bbox.w / arena.0.max(1e-9),
        h_norm: last.bbox.h / arena.1.max(1e-9),
        conf,
    }
}
