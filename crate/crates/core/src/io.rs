//! File formats: detection/track files in the common ten-column CSV
//! layout (`frame,id,x,y,w,h,conf,-1,-1,-1`), an optional embedding
//! sidecar (`<path>.emb`), and plain CSV reports for training logs,
//! evaluation tables, run statistics, and identity timelines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learn::TrainLogRow;
use crate::metrics::EvalResult;
use crate::track::{BBox, Detection, TrackId, TrackSet, Trajectory};

/// Detections ingested below this confidence are dropped by default.
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.65;

/// Result of reading a detection file.
#[derive(Debug, Clone)]
pub struct DetFile {
    pub detections: Vec<Detection>,
    /// False when no embedding sidecar was found; the appearance cue
    /// should then be masked.
    pub has_embeddings: bool,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Splits one ten-column row; returns (frame, id column, bbox, conf).
fn parse_row(lineno: usize, line: &str) -> Result<(u32, i64, BBox, f64)> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 7 {
        return Err(parse_err(
            lineno,
            format!("expected at least 7 comma-separated fields, got {}", fields.len()),
        ));
    }
    let frame: u32 = fields[0]
        .parse()
        .map_err(|_| parse_err(lineno, format!("bad frame number {:?}", fields[0])))?;
    if frame == 0 {
        return Err(parse_err(lineno, "frame numbers start at 1"));
    }
    let id: i64 = fields[1]
        .parse()
        .map_err(|_| parse_err(lineno, format!("bad id {:?}", fields[1])))?;
    let mut nums = [0.0f64; 5];
    for (k, f) in fields[2..7].iter().enumerate() {
        nums[k] = f
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad number {f:?}")))?;
    }
    let [x, y, w, h, conf] = nums;
    if !(w > 0.0 && h > 0.0) {
        return Err(parse_err(lineno, format!("non-positive box size {w}x{h}")));
    }
    Ok((frame, id, BBox::new(x, y, w, h), conf))
}

/// Reads a detection file, dropping rows below `conf_threshold`.
/// Detection ids are the 0-based file row indices, so they are stable
/// under any threshold. Embeddings come from `<path>.emb` when present.
pub fn read_detections(path: &Path, conf_threshold: f64) -> Result<DetFile> {
    let text = fs::read_to_string(path)?;
    let mut detections = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (frame, _, bbox, conf) = parse_row(i + 1, line)?;
        if conf < conf_threshold {
            continue;
        }
        detections.push(Detection::new(i as u64, frame, bbox, conf));
    }
    let sidecar = sidecar_path(path);
    let has_embeddings = sidecar.exists();
    if has_embeddings {
        let text = fs::read_to_string(&sidecar)?;
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 2 {
                return Err(parse_err(i + 1, "embedding rows need an index and values"));
            }
            let idx: u64 = fields[0]
                .parse()
                .map_err(|_| parse_err(i + 1, format!("bad detection index {:?}", fields[0])))?;
            let emb: Vec<f64> = fields[1..]
                .iter()
                .map(|f| {
                    f.parse()
                        .map_err(|_| parse_err(i + 1, format!("bad embedding value {f:?}")))
                })
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(emb.len()),
                Some(d) if d != emb.len() => {
                    return Err(parse_err(
                        i + 1,
                        format!("embedding dimension {} does not match {}", emb.len(), d),
                    ))
                }
                _ => {}
            }
            if let Some(d) = detections.iter_mut().find(|d| d.id == idx) {
                d.embedding = emb;
            }
        }
    }
    Ok(DetFile {
        detections,
        has_embeddings,
    })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".emb");
    os.into()
}

fn format_row(out: &mut String, frame: u32, id: i64, b: &BBox, conf: f64) {
    writeln!(
        out,
        "{frame},{id},{:.2},{:.2},{:.2},{:.2},{conf:.4},-1,-1,-1",
        b.x, b.y, b.w, b.h
    )
    .expect("string write");
}

/// Writes detections (id column -1) plus an embedding sidecar when any
/// detection carries an embedding. Sidecar rows are `row_index,v1,...`.
pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let mut out = String::new();
    let mut emb = String::new();
    for (i, d) in dets.iter().enumerate() {
        format_row(&mut out, d.frame, -1, &d.bbox, d.confidence);
        if !d.embedding.is_empty() {
            write!(emb, "{i}").expect("string write");
            for v in &d.embedding {
                write!(emb, ",{v:.9}").expect("string write");
            }
            emb.push('\n');
        }
    }
    fs::write(path, out)?;
    if !emb.is_empty() {
        fs::write(sidecar_path(path), emb)?;
    }
    Ok(())
}

/// Writes a track set; the id column is the track id.
pub fn write_tracks(path: &Path, set: &TrackSet) -> Result<()> {
    let mut rows: Vec<(u32, TrackId, BBox, f64)> = set
        .tracks
        .iter()
        .flat_map(|t| {
            t.detections
                .iter()
                .map(|d| (d.frame, t.track_id, d.bbox, d.confidence))
                .collect::<Vec<_>>()
        })
        .collect();
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out = String::new();
    for (frame, tid, bbox, conf) in rows {
        format_row(&mut out, frame, tid as i64, &bbox, conf);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a track file back into a track set. Detection ids are file row
/// indices.
pub fn read_tracks(path: &Path) -> Result<TrackSet> {
    let text = fs::read_to_string(path)?;
    let mut by_track: std::collections::BTreeMap<TrackId, Vec<Detection>> = Default::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (frame, id, bbox, conf) = parse_row(i + 1, line)?;
        if id < 0 {
            return Err(parse_err(i + 1, "track rows need a non-negative id"));
        }
        by_track
            .entry(id as TrackId)
            .or_default()
            .push(Detection::new(i as u64, frame, bbox, conf));
    }
    let tracks = by_track
        .into_iter()
        .map(|(tid, mut dets)| {
            dets.sort_by_key(|d| d.frame);
            Trajectory::new(tid, dets)
        })
        .collect::<Result<Vec<_>>>()?;
    TrackSet::new(tracks)
}

/// Writes the per-iteration training log as CSV.
pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut out = String::from("iteration,loss,active_levels,grad_norm\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.9},{},{:.9}",
            r.iteration, r.loss, r.active_levels, r.grad_norm
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

fn eval_row(out: &mut String, name: &str, r: &EvalResult) {
    writeln!(
        out,
        "{name},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{}",
        r.hota,
        r.det_a,
        r.ass_a,
        r.idf1,
        r.mota,
        r.false_positives,
        r.false_negatives,
        r.id_switches,
        r.num_gt_dets,
        r.num_pred_dets
    )
    .expect("string write");
}

/// Writes one row per sequence plus a final OVERALL aggregate row.
pub fn write_eval_csv(path: &Path, rows: &[(String, EvalResult)], overall: &EvalResult) -> Result<()> {
    let mut out =
        String::from("sequence,hota,det_a,ass_a,idf1,mota,fp,fn,idsw,gt_dets,pred_dets\n");
    for (name, r) in rows {
        eval_row(&mut out, name, r);
    }
    eval_row(&mut out, "OVERALL", overall);
    fs::write(path, out)?;
    Ok(())
}

/// Writes run statistics as a one-row CSV.
pub fn write_stats_csv(path: &Path, stats: &crate::infer::TrackStats) -> Result<()> {
    let mut out = String::from("frames_processed,graphs_built,matches,births,terminations\n");
    writeln!(
        out,
        "{},{},{},{},{}",
        stats.frames_processed, stats.graphs_built, stats.matches, stats.births, stats.terminations
    )
    .expect("string write");
    fs::write(path, out)?;
    Ok(())
}

/// For every ground-truth detection, which predicted track covers it this
/// frame (best IoU >= 0.5 matching, -1 when none). Rows are ordered by
/// (gt_id, frame).
pub fn write_timeline_csv(path: &Path, gt: &TrackSet, pred: &TrackSet) -> Result<()> {
    use crate::baseline::hungarian;
    let mut by_frame_pred: std::collections::BTreeMap<u32, Vec<(TrackId, BBox)>> =
        Default::default();
    for t in &pred.tracks {
        for d in &t.detections {
            by_frame_pred
                .entry(d.frame)
                .or_default()
                .push((t.track_id, d.bbox));
        }
    }
    for v in by_frame_pred.values_mut() {
        v.sort_by_key(|&(id, _)| id);
    }
    let mut rows: Vec<(TrackId, u32, i64)> = Vec::new();
    let mut by_frame_gt: std::collections::BTreeMap<u32, Vec<(TrackId, BBox)>> = Default::default();
    for t in &gt.tracks {
        for d in &t.detections {
            by_frame_gt
                .entry(d.frame)
                .or_default()
                .push((t.track_id, d.bbox));
        }
    }
    for (frame, gts) in &by_frame_gt {
        let mut assigned: Vec<i64> = vec![-1; gts.len()];
        if let Some(preds) = by_frame_pred.get(frame) {
            let mut cost = vec![vec![1e6f64; preds.len()]; gts.len()];
            for (i, &(_, gb)) in gts.iter().enumerate() {
                for (j, &(_, pb)) in preds.iter().enumerate() {
                    let iou = gb.iou(&pb);
                    if iou >= 0.5 {
                        cost[i][j] = -iou;
                    }
                }
            }
            for (i, j) in hungarian(&cost) {
                if cost[i][j] < 0.0 {
                    assigned[i] = preds[j].0 as i64;
                }
            }
        }
        for (i, &(gid, _)) in gts.iter().enumerate() {
            rows.push((gid, *frame, assigned[i]));
        }
    }
    rows.sort_unstable();
    let mut out = String::from("gt_id,frame,pred_id\n");
    for (gid, frame, pid) in rows {
        writeln!(out, "{gid},{frame},{pid}").expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::TrackStats;

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn detections_roundtrip_with_embeddings() {
        let d = dir();
        let path = d.path().join("dets.txt");
        let mut a = Detection::new(0, 1, BBox::new(10.25, 20.5, 30.0, 40.75), 0.9);
        a.embedding = vec![0.5, -0.25, 0.125];
        let mut b = Detection::new(1, 2, BBox::new(11.0, 21.0, 30.0, 40.0), 0.8);
        b.embedding = vec![0.0, 1.0, 0.0];
        write_detections(&path, &[a.clone(), b.clone()]).unwrap();
        let got = read_detections(&path, 0.65).unwrap();
        assert!(got.has_embeddings);
        assert_eq!(got.detections.len(), 2);
        assert_eq!(got.detections[0].id, 0);
        assert_eq!(got.detections[0].bbox, a.bbox);
        assert_eq!(got.detections[0].confidence, 0.9);
        assert_eq!(got.detections[0].embedding, a.embedding);
        assert_eq!(got.detections[1].embedding, b.embedding);
    }

    #[test]
    fn low_confidence_rows_are_dropped_but_ids_stay_stable() {
        let d = dir();
        let path = d.path().join("dets.txt");
        fs::write(
            &path,
            "1,-1,10.00,10.00,20.00,20.00,0.9000,-1,-1,-1\n\
             1,-1,50.00,50.00,20.00,20.00,0.2000,-1,-1,-1\n\
             2,-1,12.00,10.00,20.00,20.00,0.7000,-1,-1,-1\n",
        )
        .unwrap();
        let got = read_detections(&path, 0.65).unwrap();
        assert!(!got.has_embeddings);
        let ids: Vec<u64> = got.detections.iter().map(|d| d.id).collect();
        // Row 1 (0-based) fell below the threshold; ids are row indices.
        assert_eq!(ids, vec![0, 2]);
        assert!(got.detections.iter().all(|d| d.embedding.is_empty()));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let d = dir();
        let path = d.path().join("dets.txt");
        fs::write(
            &path,
            "1,-1,10.00,10.00,20.00,20.00,0.9000,-1,-1,-1\n\
             1,-1,10.00,10.00,20.00,20.00,0.9000,-1,-1,-1\n\
             1,-1,oops,10.00,20.00,20.00,0.9000,-1,-1,-1\n",
        )
        .unwrap();
        match read_detections(&path, 0.0) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("oops"), "message was {msg}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
        fs::write(&path, "1,-1,1.0\n").unwrap();
        match read_detections(&path, 0.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn tracks_roundtrip() {
        let d = dir();
        let path = d.path().join("tracks.txt");
        let t1 = Trajectory::new(
            3,
            vec![
                Detection::new(1, 1, BBox::new(10.0, 10.0, 20.0, 30.0), 0.9),
                Detection::new(2, 2, BBox::new(12.5, 10.0, 20.0, 30.0), 0.8),
            ],
        )
        .unwrap();
        let t2 = Trajectory::new(
            7,
            vec![Detection::new(3, 1, BBox::new(100.0, 50.0, 20.0, 30.0), 1.0)],
        )
        .unwrap();
        let set = TrackSet::new(vec![t1, t2]).unwrap();
        write_tracks(&path, &set).unwrap();
        let got = read_tracks(&path).unwrap();
        assert_eq!(got.len(), 2);
        let g3 = got.get(3).unwrap();
        assert_eq!(g3.len(), 2);
        assert_eq!(g3.detections[0].bbox, BBox::new(10.0, 10.0, 20.0, 30.0));
        assert_eq!(g3.detections[1].frame, 2);
        assert_eq!(got.get(7).unwrap().detections[0].confidence, 1.0);
    }

    #[test]
    fn report_writers_produce_expected_csv() {
        let d = dir();
        let log = d.path().join("train.csv");
        write_train_log(
            &log,
            &[TrainLogRow {
                iteration: 1,
                loss: 0.5,
                active_levels: 2,
                grad_norm: 1.25,
            }],
        )
        .unwrap();
        let text = fs::read_to_string(&log).unwrap();
        assert_eq!(
            text,
            "iteration,loss,active_levels,grad_norm\n1,0.500000000,2,1.250000000\n"
        );

        let stats = d.path().join("stats.csv");
        write_stats_csv(
            &stats,
            &TrackStats {
                frames_processed: 10,
                graphs_built: 9,
                matches: 8,
                births: 2,
                terminations: 0,
            },
        )
        .unwrap();
        let text = fs::read_to_string(&stats).unwrap();
        assert!(text.ends_with("10,9,8,2,0\n"));

        let eval = d.path().join("eval.csv");
        let r = EvalResult {
            hota: 0.75,
            det_a: 0.8,
            ass_a: 0.7,
            idf1: 0.9,
            mota: 0.85,
            false_positives: 1,
            false_negatives: 2,
            id_switches: 3,
            num_gt_dets: 100,
            num_pred_dets: 99,
        };
        write_eval_csv(&eval, &[("seq-a".into(), r)], &r).unwrap();
        let text = fs::read_to_string(&eval).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("seq-a,0.750000,"));
        assert!(lines[2].starts_with("OVERALL,"));
    }

    #[test]
    fn timeline_marks_uncovered_frames() {
        let d = dir();
        let path = d.path().join("timeline.csv");
        let gt = TrackSet::new(vec![Trajectory::new(
            1,
            vec![
                Detection::new(1, 1, BBox::new(0.0, 0.0, 10.0, 10.0), 1.0),
                Detection::new(2, 2, BBox::new(2.0, 0.0, 10.0, 10.0), 1.0),
                Detection::new(3, 3, BBox::new(4.0, 0.0, 10.0, 10.0), 1.0),
            ],
        )
        .unwrap()])
        .unwrap();
        let pred = TrackSet::new(vec![Trajectory::new(
            9,
            vec![
                Detection::new(1, 1, BBox::new(0.0, 0.0, 10.0, 10.0), 1.0),
                Detection::new(2, 3, BBox::new(4.0, 0.0, 10.0, 10.0), 1.0),
            ],
        )
        .unwrap()])
        .unwrap();
        write_timeline_csv(&path, &gt, &pred).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "gt_id,frame,pred_id\n1,1,9\n1,2,-1\n1,3,9\n");
    }
}
