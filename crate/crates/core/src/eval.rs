//! Classification and temporal localization scoring: window overlap,
//! greedy detection matching and all-points average precision.
//!
//! Windows are half-open frame ranges `[start, end)`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trainer::ClipRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub clip_id: String,
    pub class: usize,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub clip_id: String,
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OverlapMetric {
    /// Intersection over union.
    #[default]
    Iou,
    /// Intersection over the ground-truth length.
    IntersectionOverGt,
}

impl std::str::FromStr for OverlapMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iou" => Ok(OverlapMetric::Iou),
            "iogt" => Ok(OverlapMetric::IntersectionOverGt),
            _ => Err(Error::Config(format!("overlap metric must be `iou` or `iogt`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for OverlapMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OverlapMetric::Iou => "iou",
            OverlapMetric::IntersectionOverGt => "iogt",
        })
    }
}

fn intersection(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = intersection(a, b);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn intersection_over_gt(det: (usize, usize), gt: (usize, usize)) -> f64 {
    let len = gt.1 - gt.0;
    if len == 0 {
        0.0
    } else {
        intersection(det, gt) as f64 / len as f64
    }
}

pub fn overlap(metric: OverlapMetric, det: (usize, usize), gt: (usize, usize)) -> f64 {
    match metric {
        OverlapMetric::Iou => temporal_iou(det, gt),
        OverlapMetric::IntersectionOverGt => intersection_over_gt(det, gt),
    }
}

/// Confidence descending, then earlier start, then clip id.
pub fn rank_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.start.cmp(&b.start))
        .then_with(|| a.clip_id.cmp(&b.clip_id))
}

pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(rank_order);
}

/// Greedy matching in rank order. Each detection takes the unmatched
/// ground truth of its clip and class with the largest overlap at or above
/// `threshold` (the first one on ties) and is a true positive if there is
/// one. `dets` must already be ranked.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    threshold: f64,
    metric: OverlapMetric,
) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if used[j] || g.class != d.class || g.clip_id != d.clip_id {
                    continue;
                }
                let o = overlap(metric, (d.start, d.end), (g.start, g.end));
                if o >= threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            if let Some((j, _)) = best {
                used[j] = true;
                true
            } else {
                false
            }
        })
        .collect()
}

/// All-points AP: the sum of precision at each true-positive rank divided
/// by the number of ground-truth instances. `None` when `n_gt == 0`.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
            sum += tp as f64 / (i + 1) as f64;
        }
    }
    Some(sum / n_gt as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassAp {
    pub class: usize,
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub n_gt: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApResult {
    pub per_class: Vec<ClassAp>,
    /// Mean over classes with at least one ground-truth instance.
    pub map: Option<f64>,
}

impl ApResult {
    fn from_classes(per_class: Vec<ClassAp>) -> Self {
        let aps: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
        for c in per_class.iter().filter(|c| c.ap.is_none()) {
            log::warn!("class {} has no ground truth; skipped in the mean", c.class);
        }
        let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
        ApResult { per_class, map }
    }
}

pub fn evaluate_localization(
    dets: &[Detection],
    gts: &[GroundTruth],
    classes: usize,
    threshold: f64,
    metric: OverlapMetric,
) -> ApResult {
    let per_class = (0..classes)
        .into_par_iter()
        .map(|class| {
            let mut d: Vec<Detection> = dets.iter().filter(|d| d.class == class).cloned().collect();
            sort_detections(&mut d);
            let g: Vec<GroundTruth> = gts.iter().filter(|g| g.class == class).cloned().collect();
            let flags = match_detections(&d, &g, threshold, metric);
            let tp = flags.iter().filter(|&&f| f).count();
            ClassAp {
                class,
                ap: average_precision(&flags, g.len()),
                tp,
                fp: flags.len() - tp,
                n_gt: g.len(),
            }
        })
        .collect();
    ApResult::from_classes(per_class)
}

/// Per-class AP of clip-level scores. Clips are ranked by score; equal
/// scores keep clip order.
pub fn classification_ap(scores: &[Vec<f64>], labels: &[BTreeSet<usize>], classes: usize) -> ApResult {
    assert_eq!(scores.len(), labels.len(), "one score vector per clip");
    let per_class = (0..classes)
        .map(|class| {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b][class].total_cmp(&scores[a][class]));
            let flags: Vec<bool> = order.iter().map(|&i| labels[i].contains(&class)).collect();
            let n_gt = flags.iter().filter(|&&f| f).count();
            ClassAp {
                class,
                ap: average_precision(&flags, n_gt),
                tp: n_gt,
                fp: flags.len() - n_gt,
                n_gt,
            }
        })
        .collect();
    ApResult::from_classes(per_class)
}

/// Ground-truth instances of annotated clips.
pub fn ground_truth(clips: &[ClipRecord]) -> Vec<GroundTruth> {
    clips
        .iter()
        .flat_map(|c| {
            c.truth_intervals.iter().flatten().map(move |iv| GroundTruth {
                clip_id: c.id.clone(),
                class: iv.class,
                start: iv.start,
                end: iv.end,
            })
        })
        .collect()
}

pub fn format_ap_table(title: &str, result: &ApResult, class_names: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{:<12} {:>6} {:>6} {:>6} {:>8}", "class", "n_gt", "tp", "fp", "AP");
    for c in &result.per_class {
        let name = class_names
            .get(c.class)
            .cloned()
            .unwrap_or_else(|| c.class.to_string());
        let ap = c.ap.map_or("-".to_string(), |a| format!("{:.4}", a));
        let _ = writeln!(out, "{name:<12} {:>6} {:>6} {:>6} {ap:>8}", c.n_gt, c.tp, c.fp);
    }
    let map = result.map.map_or("-".to_string(), |m| format!("{m:.4}"));
    let _ = writeln!(out, "{:<12} {:>6} {:>6} {:>6} {map:>8}", "mAP", "", "", "");
    out
}

const DETECTION_HEADER: &str = "clip_id,class,start,end,confidence";

pub fn serialize_detections(dets: &[Detection]) -> String {
    let mut out = String::from(DETECTION_HEADER);
    out.push('\n');
    for d in dets {
        let _ = writeln!(out, "{},{},{},{},{}", d.clip_id, d.class, d.start, d.end, d.confidence);
    }
    out
}

pub fn parse_detections<R: BufRead>(reader: R) -> Result<Vec<Detection>> {
    let mut dets = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (line_no == 1 && line == DETECTION_HEADER) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(Error::parse(line_no, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::parse(line_no, format!("bad {what} `{s}`")))
        };
        let confidence: f64 = f[4]
            .parse()
            .ok()
            .filter(|c: &f64| c.is_finite())
            .ok_or_else(|| Error::parse(line_no, format!("bad confidence `{}`", f[4])))?;
        let d = Detection {
            clip_id: f[0].to_string(),
            class: num(f[1], "class")?,
            start: num(f[2], "start")?,
            end: num(f[3], "end")?,
            confidence,
        };
        if d.start >= d.end {
            return Err(Error::parse(line_no, "window start must precede its end"));
        }
        dets.push(d);
    }
    Ok(dets)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    parse_detections(std::io::BufReader::new(file))
}

const SCORE_HEADER: &str = "clip_id,class,score";

/// Clip-level class scores, one line per clip and class.
pub fn serialize_scores(ids: &[String], scores: &[Vec<f64>]) -> String {
    let mut out = String::from(SCORE_HEADER);
    out.push('\n');
    for (id, s) in ids.iter().zip(scores) {
        for (c, v) in s.iter().enumerate() {
            let _ = writeln!(out, "{id},{c},{v}");
        }
    }
    out
}

/// Inverse of [`serialize_scores`]; clips keep their first-seen order.
pub fn parse_scores<R: BufRead>(reader: R, classes: usize) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut ids: Vec<String> = Vec::new();
    let mut scores: Vec<Vec<f64>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (line_no == 1 && line == SCORE_HEADER) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match f.as_slice() {
            [id, c, v] => c.parse::<usize>().ok().zip(v.parse::<f64>().ok()).map(|(c, v)| (*id, c, v)),
            _ => None,
        };
        let (id, c, v) = parsed
            .filter(|&(_, c, v)| c < classes && v.is_finite())
            .ok_or_else(|| Error::parse(line_no, format!("bad score line `{line}`")))?;
        if ids.last().map(String::as_str) != Some(id) {
            ids.push(id.to_string());
            scores.push(vec![f64::NAN; classes]);
        }
        scores.last_mut().unwrap()[c] = v;
    }
    if let Some(i) = scores.iter().position(|s| s.iter().any(|v| v.is_nan())) {
        return Err(Error::InvalidInput(format!("clip {} lacks scores for some classes", ids[i])));
    }
    Ok((ids, scores))
}
