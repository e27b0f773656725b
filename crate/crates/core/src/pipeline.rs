//! End-to-end runs: generate, train, localize, evaluate.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::Config;
use crate::convnet::{save_checkpoint, Network};
use crate::error::Result;
use crate::eval::{
    classification_ap, evaluate_localization, format_ap_table, ground_truth, serialize_detections,
    serialize_scores, ApResult, Detection,
};
use crate::saliency::{localize, localize_clip, LocalizeConfig};
use crate::synthdata::{builtin_primitives, generate_dataset, Split};
use crate::trainer::data::{load_annotated_clips, load_training_clips, ClipRecord};
use crate::trainer::{predict, train, TrainLog};

/// Frames of slack around a true interval when checking saliency peaks.
pub const PEAK_TOLERANCE: usize = 6;

pub fn class_names(classes: usize) -> Vec<String> {
    builtin_primitives()
        .into_iter()
        .take(classes)
        .map(|p| p.name.to_string())
        .collect()
}

/// Saliency peaks of confidently classified positives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PeakStats {
    /// (clip, class) pairs with a true interval and a positive score.
    pub eligible: usize,
    /// Of those, peaks inside the interval widened by `tolerance` frames.
    pub hits: usize,
}

impl PeakStats {
    pub fn rate(&self) -> Option<f64> {
        (self.eligible > 0).then(|| self.hits as f64 / self.eligible as f64)
    }
}

/// Checks where the smoothed time score peaks for every labeled class that
/// the network scores above zero.
pub fn peak_stats(
    net: &Network<f32>,
    clips: &[ClipRecord],
    scores: &[Vec<f64>],
    cfg: &LocalizeConfig,
    tolerance: usize,
) -> Result<PeakStats> {
    let mut stats = PeakStats::default();
    for (clip, s) in clips.iter().zip(scores) {
        for &class in &clip.labels {
            let intervals: Vec<_> = clip
                .truth_intervals
                .iter()
                .flatten()
                .filter(|iv| iv.class == class)
                .collect();
            if intervals.is_empty() || s[class] <= 0.0 {
                continue;
            }
            stats.eligible += 1;
            let peak = localize_clip(net, clip, class, cfg)?.peak_frame();
            if intervals
                .iter()
                .any(|iv| peak + tolerance >= iv.start && peak < iv.end + tolerance)
            {
                stats.hits += 1;
            }
        }
    }
    Ok(stats)
}

/// Localization AP of a network on annotated clips.
pub fn localization_ap(net: &Network<f32>, clips: &[ClipRecord], cfg: &Config) -> Result<(Vec<Detection>, ApResult)> {
    let dets = localize(net, clips, &cfg.localize)?;
    let ap = evaluate_localization(&dets, &ground_truth(clips), cfg.gen.classes, cfg.eval.threshold, cfg.eval.metric);
    Ok((dets, ap))
}

#[derive(Clone, Debug)]
pub struct ReproOutcome {
    pub classification: ApResult,
    pub localization: ApResult,
    pub peaks: PeakStats,
    pub log: TrainLog,
    pub report: String,
}

/// Trains on the manifests of a generated dataset directory.
pub fn train_on_dir(cfg: &Config, data: &Path) -> Result<(Network<f32>, TrainLog)> {
    let classes = cfg.gen.classes;
    let tr = load_training_clips(&data.join(Split::Train.manifest_name()), classes)?;
    let val = load_training_clips(&data.join(Split::Val.manifest_name()), classes)?;
    train(&tr, Some(&val), &cfg.network_spec()?, &cfg.train)
}

/// Runs the whole pipeline into `cfg.out_dir`:
/// `data/` (tracks, manifests, stats), `model.knet`, `train_log.csv`,
/// `test_scores.csv`, `detections.csv` and `report.txt`.
pub fn repro(cfg: &Config) -> Result<ReproOutcome> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    let data = out.join("data");
    log::info!("generating dataset in {}", data.display());
    generate_dataset(&cfg.gen, &data)?;

    log::info!("training");
    let (net, log) = train_on_dir(cfg, &data)?;
    save_checkpoint(&net, &out.join("model.knet"))?;
    std::fs::write(out.join("train_log.csv"), log.to_csv())?;

    let classes = cfg.gen.classes;
    let test = load_annotated_clips(&data.join(Split::Test.manifest_name()), classes)?;
    let scores = predict(&net, &test, cfg.train.batch_size)?;
    let ids: Vec<String> = test.iter().map(|c| c.id.clone()).collect();
    std::fs::write(out.join("test_scores.csv"), serialize_scores(&ids, &scores))?;
    let labels: Vec<_> = test.iter().map(|c| c.labels.clone()).collect();
    let classification = classification_ap(&scores, &labels, classes);

    log::info!("localizing {} test clips", test.len());
    let (dets, localization) = localization_ap(&net, &test, cfg)?;
    std::fs::write(out.join("detections.csv"), serialize_detections(&dets))?;
    let peaks = peak_stats(&net, &test, &scores, &cfg.localize, PEAK_TOLERANCE)?;

    let names = class_names(classes);
    let mut report = String::new();
    let _ = writeln!(report, "seed {}", cfg.seed);
    let _ = writeln!(report, "test clips {}\n", test.len());
    report += &format_ap_table("Clip classification AP (test)", &classification, &names);
    report.push('\n');
    report += &format_ap_table(
        &format!("Localization AP at {} >= {} (test)", cfg.eval.metric, cfg.eval.threshold),
        &localization,
        &names,
    );
    let _ = writeln!(
        report,
        "\nsaliency peaks within {PEAK_TOLERANCE} frames of the sign: {} of {}",
        peaks.hits, peaks.eligible
    );
    std::fs::write(out.join("report.txt"), &report)?;
    Ok(ReproOutcome {
        classification,
        localization,
        peaks,
        log,
        report,
    })
}

pub const TARGET_CLASSIFICATION_MAP: f64 = 0.85;
pub const TARGET_LOCALIZATION_MAP: f64 = 0.60;
pub const TARGET_PEAK_RATE: f64 = 0.70;

/// One PASS/FAIL line per end-to-end target.
pub fn acceptance_summary(o: &ReproOutcome) -> String {
    let line = |name: &str, value: Option<f64>, target: f64| {
        let v = value.unwrap_or(f64::NAN);
        let verdict = if v >= target { "PASS" } else { "FAIL" };
        format!("{verdict} {name}: {v:.4} (target >= {target})\n")
    };
    let mut s = String::new();
    s += &line("classification mAP", o.classification.map, TARGET_CLASSIFICATION_MAP);
    s += &line("localization mAP", o.localization.map, TARGET_LOCALIZATION_MAP);
    s += &line("saliency peak rate", o.peaks.rate(), TARGET_PEAK_RATE);
    s
}
