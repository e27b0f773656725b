//! Brute-force matcher and AP oracle.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use signtime::eval::{Detection, GroundTruth};

pub fn frames(a: usize, b: usize) -> HashSet<usize> {
    (a..b).collect()
}

pub fn iou_by_sets(a: (usize, usize), b: (usize, usize)) -> f64 {
    let (sa, sb) = (frames(a.0, a.1), frames(b.0, b.1));
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

/// Rank by insertion: a detection goes before the first one it beats.
pub fn rank(dets: &[Detection]) -> Vec<Detection> {
    let mut out: Vec<Detection> = Vec::new();
    for d in dets {
        let pos = out
            .iter()
            .position(|o| {
                d.confidence > o.confidence
                    || (d.confidence == o.confidence
                        && (d.start < o.start || (d.start == o.start && d.clip_id < o.clip_id)))
            })
            .unwrap_or(out.len());
        out.insert(pos, d.clone());
    }
    out
}

/// TP flags spelled out case by case, plus AP as the area under the
/// stepwise precision-recall curve.
pub fn oracle(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> (Vec<bool>, Option<f64>) {
    let ranked = rank(dets);
    let mut taken: HashSet<usize> = HashSet::new();
    let mut flags = Vec::new();
    for d in &ranked {
        let eligible: Vec<(usize, f64)> = gts
            .iter()
            .enumerate()
            .filter(|(j, g)| !taken.contains(j) && g.clip_id == d.clip_id && g.class == d.class)
            .map(|(j, g)| (j, iou_by_sets((d.start, d.end), (g.start, g.end))))
            .filter(|&(_, o)| o >= thr)
            .collect();
        let choice = match eligible.len() {
            0 => None,
            1 => Some(eligible[0].0),
            _ => {
                let top = eligible.iter().map(|e| e.1).fold(f64::MIN, f64::max);
                eligible.iter().find(|e| e.1 == top).map(|e| e.0)
            }
        };
        if let Some(j) = choice {
            taken.insert(j);
        }
        flags.push(choice.is_some());
    }
    let n_gt = gts.len();
    let ap = (n_gt > 0).then(|| {
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        let mut tp = 0;
        for (i, &f) in flags.iter().enumerate() {
            if f {
                tp += 1;
            }
            let recall = tp as f64 / n_gt as f64;
            let precision = tp as f64 / (i + 1) as f64;
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    });
    (flags, ap)
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruth>) {
    let clips = ["a", "b"];
    let window = |rng: &mut ChaCha8Rng| {
        let s = rng.random_range(0..20);
        (s, s + rng.random_range(1..10))
    };
    let n_det = rng.random_range(0..=5);
    let n_gt = rng.random_range(1..=5);
    let dets = (0..n_det)
        .map(|_| {
            let (start, end) = window(rng);
            Detection {
                clip_id: clips[rng.random_range(0..2)].into(),
                class: 0,
                start,
                end,
                confidence: rng.random_range(0..4) as f64 / 4.0,
            }
        })
        .collect();
    let gts = (0..n_gt)
        .map(|_| {
            let (start, end) = window(rng);
            GroundTruth {
                clip_id: clips[rng.random_range(0..2)].into(),
                class: 0,
                start,
                end,
            }
        })
        .collect();
    (dets, gts)
}

