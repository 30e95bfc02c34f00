//! Success, precision and normalised precision, plus the results-file and
//! report formats.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::GroundTruthBox;
use crate::tracker::bbox::{iou, BBox};
use crate::tracker::track::TrackRecord;

/// Centre-error threshold for PR, in pixels.
pub const PR_THRESHOLD_PX: f64 = 20.0;
/// NPR thresholds are `k / 100` for `k = 0..=50`.
pub const NPR_STEPS: usize = 50;
/// SR thresholds are `k / 20` for `k = 0..20`.
pub const SR_STEPS: usize = 20;

/// All three scores in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub sr: f64,
    pub pr: f64,
    pub npr: f64,
}

fn gt_box(g: &GroundTruthBox) -> BBox {
    BBox::new(g.cx, g.cy, g.w, g.h)
}

fn centre_error(r: &TrackRecord) -> f64 {
    (r.pred.cx - r.gt.cx).hypot(r.pred.cy - r.gt.cy)
}

fn normalized_error(r: &TrackRecord) -> f64 {
    ((r.pred.cx - r.gt.cx) / r.gt.w).hypot((r.pred.cy - r.gt.cy) / r.gt.h)
}

fn fraction(records: &[TrackRecord], pass: impl Fn(&TrackRecord) -> bool) -> f64 {
    records.iter().filter(|r| pass(r)).count() as f64 / records.len() as f64
}

pub fn record_iou(r: &TrackRecord) -> f64 {
    iou(&r.pred, &gt_box(&r.gt))
}

/// SR is the mean of the success curve `P(IoU > τ)` over `τ = 0, 0.05, …, 0.95`;
/// NPR is the mean of `P(normalised error ≤ t)` over `t = 0, 0.01, …, 0.5`.
pub fn eval_metrics(records: &[TrackRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::domain("no tracking records to evaluate"));
    }
    let ious: Vec<f64> = records.iter().map(record_iou).collect();
    let sr = (0..SR_STEPS)
        .map(|k| {
            let tau = k as f64 / SR_STEPS as f64;
            ious.iter().filter(|&&v| v > tau).count() as f64 / ious.len() as f64
        })
        .sum::<f64>()
        / SR_STEPS as f64;
    let pr = fraction(records, |r| centre_error(r) <= PR_THRESHOLD_PX);
    let npr = (0..=NPR_STEPS)
        .map(|k| {
            let t = k as f64 / 100.0;
            fraction(records, |r| normalized_error(r) <= t)
        })
        .sum::<f64>()
        / (NPR_STEPS + 1) as f64;
    Ok(Metrics {
        sr: 100.0 * sr,
        pr: 100.0 * pr,
        npr: 100.0 * npr,
    })
}

pub fn mean_iou(records: &[TrackRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(record_iou).sum::<f64>() / records.len() as f64
}

/// Summary printed by evaluation and benchmarking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Report {
    pub metrics: Option<Metrics>,
    pub fps: Option<f64>,
    pub params: Option<usize>,
    pub flops: Option<u64>,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(m) = self.metrics {
            writeln!(f, "sr = {:.4}", m.sr)?;
            writeln!(f, "pr = {:.4}", m.pr)?;
            writeln!(f, "npr = {:.4}", m.npr)?;
        }
        if let Some(v) = self.fps {
            writeln!(f, "fps = {v:.2}")?;
        }
        if let Some(v) = self.params {
            writeln!(f, "params = {v}")?;
        }
        if let Some(v) = self.flops {
            writeln!(f, "flops = {v}")?;
        }
        Ok(())
    }
}

/// `frame_index cx cy w h` per line, in pixels.
pub fn write_results(path: &Path, records: &[TrackRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!(
            "{} {} {} {} {}\n",
            r.frame_index, r.pred.cx, r.pred.cy, r.pred.w, r.pred.h
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// `frame_index seconds` per line.
pub fn write_times(path: &Path, records: &[TrackRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!("{} {:.6}\n", r.frame_index, r.seconds));
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn parse_lines(path: &Path, fields: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::format(format!("{}:{}: {msg}", path.display(), n + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != fields + 1 {
            return Err(bad(&format!("expected {} fields", fields + 1)));
        }
        let idx = parts[0].parse().map_err(|_| bad("bad frame index"))?;
        let vals = parts[1..]
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| bad("bad number")))
            .collect::<Result<Vec<_>>>()?;
        out.push((idx, vals));
    }
    Ok(out)
}

/// Reads a results file as `(frame_index, box)` pairs.
pub fn read_results(path: &Path) -> Result<Vec<(usize, BBox)>> {
    Ok(parse_lines(path, 4)?
        .into_iter()
        .map(|(i, v)| (i, BBox::new(v[0], v[1], v[2], v[3])))
        .collect())
}

pub fn read_times(path: &Path) -> Result<Vec<(usize, f64)>> {
    Ok(parse_lines(path, 1)?.into_iter().map(|(i, v)| (i, v[0])).collect())
}

/// Pairs results with ground truth by frame index. Every result must have a
/// ground-truth box.
pub fn join_records(
    results: &[(usize, BBox)],
    gts: &[GroundTruthBox],
    times: &[(usize, f64)],
) -> Result<Vec<TrackRecord>> {
    results
        .iter()
        .map(|&(k, pred)| {
            let gt = gts
                .iter()
                .find(|g| g.frame_index == k)
                .ok_or_else(|| Error::format(format!("no ground truth for frame {k}")))?;
            let seconds = times.iter().find(|t| t.0 == k).map_or(0.0, |t| t.1);
            Ok(TrackRecord {
                frame_index: k,
                pred,
                gt: *gt,
                seconds,
            })
        })
        .collect()
}

pub fn fps(records: &[TrackRecord]) -> Option<f64> {
    let total: f64 = records.iter().map(|r| r.seconds).sum();
    (total > 0.0).then(|| records.len() as f64 / total)
}
