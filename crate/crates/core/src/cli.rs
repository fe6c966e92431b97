//! Command-line interface. Parsing lives in [`Cli`]; [`run`] executes a
//! parsed invocation so tests can drive the whole surface in-process.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::ablate::{
    run_cues, run_matching, run_retention, run_stitching, run_stride, ExperimentConfig,
};
use crate::baseline::sort_like_track;
use crate::config::{load_config, write_resolved, AppConfig};
use crate::error::{invalid, Result};
use crate::infer::track_sequence;
use crate::io;
use crate::learn::train;
use crate::metrics::{aggregate, evaluate};
use crate::mpn::{load_checkpoint, save_checkpoint};
use crate::sim::{make_corpus, simulate};

/// Unified tracker: simulation, training, tracking, scoring, experiments.
#[derive(Debug, Parser)]
#[command(name = "trackgraph", version)]
pub struct Cli {
    /// Configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence: detections, ground truth, config echo.
    Simulate {
        /// Output directory (created if missing).
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the simulation seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the association model and write a checkpoint.
    Train {
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Number of training sequences to simulate.
        #[arg(long, default_value_t = 4)]
        n_train: usize,
    },
    /// Track a detection file.
    Track {
        /// Detection file; `<path>.emb` is picked up when present.
        #[arg(long)]
        dets: PathBuf,
        /// Trained checkpoint (required unless --baseline).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output track file.
        #[arg(long)]
        out: PathBuf,
        /// Run statistics CSV.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Use the heuristic tracker instead of the learned one.
        #[arg(long)]
        baseline: bool,
        /// Override the subclip length (1 = online).
        #[arg(long)]
        stride: Option<u32>,
        /// Override the retention window.
        #[arg(long)]
        retention: Option<u32>,
        /// Fill short gaps in the output tracks.
        #[arg(long)]
        interpolate: bool,
    },
    /// Score predicted tracks against ground-truth tracks.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// CSV report; a summary always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// For each ground-truth object, which predicted id covers it when.
    IdTimeline {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-knob experiments on synthetic data.
    Ablate {
        #[command(subcommand)]
        which: AblateCmd,
        /// CSV report; rows always go to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        n_train: usize,
        #[arg(long, default_value_t = 2)]
        n_val: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum AblateCmd {
    /// Vary the retention window at inference time.
    Retention {
        #[arg(long, value_delimiter = ',', default_values_t = [8u32, 16, 32, 64, 128])]
        arms: Vec<u32>,
    },
    /// Vary the subclip length (and training depth with it).
    Stride {
        #[arg(long, value_delimiter = ',', default_values_t = [1u32, 8, 64])]
        arms: Vec<u32>,
    },
    /// Geometry, then +motion, then +appearance.
    Cues,
    /// Exact vs greedy link selection.
    Matching,
    /// Learned vs heuristic cross-subclip fusion.
    Stitching,
}

fn app_config(path: &Option<PathBuf>) -> Result<AppConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(AppConfig::default()),
    }
}

/// Executes a parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = app_config(&cli.config)?;
    match cli.command {
        Command::Simulate { out_dir, seed } => {
            let mut sim_cfg = cfg.sim.clone();
            if let Some(s) = seed {
                sim_cfg.seed = s;
            }
            std::fs::create_dir_all(&out_dir)?;
            let out = simulate(&sim_cfg);
            io::write_tracks(&out_dir.join("gt.txt"), &out.ground_truth)?;
            io::write_detections(&out_dir.join("dets.txt"), &out.detections)?;
            let mut echoed = cfg.clone();
            echoed.sim = sim_cfg;
            write_resolved(&out_dir.join("resolved.cfg"), &echoed)?;
            println!(
                "simulated {} frames, {} objects, {} detections -> {}",
                echoed.sim.num_frames,
                echoed.sim.num_objects,
                out.detections.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Train { out, log, n_train } => {
            let (corpus, _) = make_corpus(&cfg.sim, n_train, 0);
            let ctx = cfg.infer.graph_ctx();
            let (params, rows) = train(&corpus, cfg.mpn, &cfg.train, &ctx)?;
            save_checkpoint(&params, &out)?;
            if let Some(log) = log {
                io::write_train_log(&log, &rows)?;
            }
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                write_resolved(&parent.join("resolved.cfg"), &cfg)?;
            }
            let last = rows.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!(
                "trained {} iterations ({} parameters), final loss {last:.6} -> {}",
                rows.len(),
                params.param_count(),
                out.display()
            );
            Ok(())
        }
        Command::Track {
            dets,
            model,
            out,
            stats,
            baseline,
            stride,
            retention,
            interpolate,
        } => {
            let det_file = io::read_detections(&dets, cfg.conf_threshold)?;
            let (set, run_stats) = if baseline {
                let set = sort_like_track(&det_file.detections, &cfg.baseline);
                (set, crate::infer::TrackStats::default())
            } else {
                let model = model
                    .ok_or_else(|| invalid("--model is required unless --baseline is given"))?;
                let params = load_checkpoint(&model)?;
                let mut icfg = cfg.infer.clone();
                if let Some(s) = stride {
                    icfg.stride = s;
                }
                if let Some(r) = retention {
                    icfg.retention = Some(r);
                }
                if interpolate {
                    icfg.interpolate = true;
                }
                if !det_file.has_embeddings {
                    icfg.cues.appearance = false;
                }
                track_sequence(&det_file.detections, &params, &icfg)?
            };
            io::write_tracks(&out, &set)?;
            if let Some(stats_path) = stats {
                io::write_stats_csv(&stats_path, &run_stats)?;
            }
            println!(
                "tracked {} detections into {} tracks -> {}",
                det_file.detections.len(),
                set.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval { gt, pred, out } => {
            let gt_set = io::read_tracks(&gt)?;
            let pred_set = io::read_tracks(&pred)?;
            let r = evaluate(&gt_set, &pred_set)?;
            let name = pred
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "pred".into());
            if let Some(out) = out {
                io::write_eval_csv(&out, &[(name, r)], &r)?;
            }
            println!(
                "HOTA {:.4}  DetA {:.4}  AssA {:.4}  IDF1 {:.4}  MOTA {:.4}  IDSW {}",
                r.hota, r.det_a, r.ass_a, r.idf1, r.mota, r.id_switches
            );
            Ok(())
        }
        Command::IdTimeline { gt, pred, out } => {
            let gt_set = io::read_tracks(&gt)?;
            let pred_set = io::read_tracks(&pred)?;
            io::write_timeline_csv(&out, &gt_set, &pred_set)?;
            println!("timeline -> {}", out.display());
            Ok(())
        }
        Command::Ablate {
            which,
            out,
            n_train,
            n_val,
        } => {
            let xc = ExperimentConfig {
                sim: cfg.sim.clone(),
                mpn: cfg.mpn,
                train: cfg.train.clone(),
                infer: cfg.infer.clone(),
                n_train,
                n_val,
            };
            let rows = match which {
                AblateCmd::Retention { arms } => run_retention(&xc, &arms)?,
                AblateCmd::Stride { arms } => run_stride(&xc, &arms)?,
                AblateCmd::Cues => run_cues(&xc)?,
                AblateCmd::Matching => run_matching(&xc)?,
                AblateCmd::Stitching => run_stitching(&xc)?,
            };
            for (name, r) in &rows {
                println!(
                    "{name}: HOTA {:.4}  IDF1 {:.4}  MOTA {:.4}",
                    r.hota, r.idf1, r.mota
                );
            }
            if let Some(out) = out {
                let overall = aggregate(&rows.iter().map(|(_, r)| *r).collect::<Vec<_>>());
                io::write_eval_csv(&out, &rows, &overall)?;
            }
            Ok(())
        }
    }
}
