//! `key = value` configuration covering every stage of the pipeline.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are an error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::convnet::{parse_layers, NetworkSpec, DEFAULT_BODY};
use crate::error::{Error, Result};
use crate::eval::OverlapMetric;
use crate::saliency::LocalizeConfig;
use crate::synthdata::{GenConfig, LabelMode};
use crate::trainer::augment::AugmentConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    pub metric: OverlapMetric,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            metric: OverlapMetric::Iou,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Master seed for generation, initialization, shuffling and augmentation.
    pub seed: u64,
    pub gen: GenConfig,
    /// Network layers before the class head.
    pub body: String,
    pub train: TrainConfig,
    pub localize: LocalizeConfig,
    pub eval: EvalConfig,
    pub smooth_lambda: f64,
    pub out_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        let seed = 7;
        Config {
            seed,
            gen: GenConfig {
                seed,
                ..GenConfig::default()
            },
            body: DEFAULT_BODY.to_string(),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            localize: LocalizeConfig::default(),
            eval: EvalConfig::default(),
            smooth_lambda: 1.0,
            out_dir: PathBuf::from("repro_out"),
        }
    }
}

/// Every key with its description, in help order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for every random stream"),
    ("out_dir", "output directory of `repro`"),
    ("gen.classes", "number of sign classes (at most 8)"),
    ("gen.clips_per_class", "clips per class before the 80/10/10 split"),
    ("gen.length", "frames per clip"),
    ("gen.fps", "frame rate written to track files"),
    ("gen.p_signed", "chance that a labeled sign is performed (train/val)"),
    ("gen.mode", "`single` or `multi` labels per clip"),
    ("gen.max_labels", "largest label set in multi mode"),
    ("gen.bg_amplitude", "standard deviation of background motion"),
    ("gen.bg_cutoff", "background low-pass cutoff, cycles per frame"),
    ("gen.rest_jitter", "half-width of the per-clip rest-pose offset"),
    ("gen.amplitude_min", "smallest sign amplitude"),
    ("gen.amplitude_max", "largest sign amplitude"),
    ("gen.duration_jitter", "relative spread of sign durations"),
    ("gen.min_duration", "shortest sign in frames"),
    ("gen.max_duration", "longest sign in frames"),
    ("gen.velocity_margin", "required ratio of sign speed to background speed"),
    ("net.body", "`;`-separated layers before the class head"),
    ("train.lr", "learning rate"),
    ("train.lr_decay", "learning-rate factor after train.decay_at of the epochs"),
    ("train.decay_at", "fraction of epochs before the decay"),
    ("train.momentum", "SGD momentum"),
    ("train.weight_decay", "L2 weight decay"),
    ("train.batch_size", "clips per batch"),
    ("train.epochs", "passes over the training split"),
    ("train.width", "network input width in frames"),
    ("augment.speeds", "comma-separated playback speeds; empty disables"),
    ("augment.jitter", "half-width of the per-row position offset"),
    ("augment.scale_min", "smallest spatial scale"),
    ("augment.scale_max", "largest spatial scale"),
    ("saliency.sigma_rows", "Gaussian sigma across rows"),
    ("saliency.sigma_cols", "Gaussian sigma along time"),
    ("saliency.window", "proposal window length in frames"),
    ("saliency.stride", "proposal window stride"),
    ("saliency.nms_iou", "windows overlapping a kept one above this IoU are dropped"),
    ("saliency.max_windows", "windows kept per clip and class; 0 keeps all"),
    ("eval.threshold", "overlap needed for a correct detection"),
    ("eval.metric", "`iou` or `iogt` (intersection over ground truth)"),
    ("smooth.lambda", "path-length penalty of track smoothing"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for {key}")))
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                self.gen.seed = self.seed;
                self.train.seed = self.seed;
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            "gen.classes" => self.gen.classes = parse(key, v)?,
            "gen.clips_per_class" => self.gen.clips_per_class = parse(key, v)?,
            "gen.length" => self.gen.length = parse(key, v)?,
            "gen.fps" => self.gen.fps = parse(key, v)?,
            "gen.p_signed" => self.gen.p_signed = parse(key, v)?,
            "gen.mode" => self.gen.mode = v.parse::<LabelMode>()?,
            "gen.max_labels" => self.gen.max_labels = parse(key, v)?,
            "gen.bg_amplitude" => self.gen.bg_amplitude = parse(key, v)?,
            "gen.bg_cutoff" => self.gen.bg_cutoff = parse(key, v)?,
            "gen.rest_jitter" => self.gen.rest_jitter = parse(key, v)?,
            "gen.amplitude_min" => self.gen.amplitude.0 = parse(key, v)?,
            "gen.amplitude_max" => self.gen.amplitude.1 = parse(key, v)?,
            "gen.duration_jitter" => self.gen.duration_jitter = parse(key, v)?,
            "gen.min_duration" => self.gen.min_duration = parse(key, v)?,
            "gen.max_duration" => self.gen.max_duration = parse(key, v)?,
            "gen.velocity_margin" => self.gen.velocity_margin = parse(key, v)?,
            "net.body" => {
                parse_layers(v)?;
                self.body = v.to_string();
            }
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.lr_decay" => self.train.lr_decay = parse(key, v)?,
            "train.decay_at" => self.train.decay_at = parse(key, v)?,
            "train.momentum" => self.train.momentum = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.width" => self.train.width = parse(key, v)?,
            "augment.speeds" => {
                self.train.augment.speeds = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "augment.jitter" => self.train.augment.jitter = parse(key, v)?,
            "augment.scale_min" => self.train.augment.scale.0 = parse(key, v)?,
            "augment.scale_max" => self.train.augment.scale.1 = parse(key, v)?,
            "saliency.sigma_rows" => self.localize.sigma_rows = parse(key, v)?,
            "saliency.sigma_cols" => self.localize.sigma_cols = parse(key, v)?,
            "saliency.window" => self.localize.windows.length = parse(key, v)?,
            "saliency.stride" => self.localize.windows.stride = parse(key, v)?,
            "saliency.nms_iou" => self.localize.windows.nms_iou = parse(key, v)?,
            "saliency.max_windows" => {
                let n: usize = parse(key, v)?;
                self.localize.windows.max_windows = (n > 0).then_some(n);
            }
            "eval.threshold" => self.eval.threshold = parse(key, v)?,
            "eval.metric" => self.eval.metric = v.parse()?,
            "smooth.lambda" => self.smooth_lambda = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Current value of a key as config text.
    pub fn get(&self, key: &str) -> Option<String> {
        let g = &self.gen;
        let t = &self.train;
        let w = &self.localize.windows;
        Some(match key {
            "seed" => self.seed.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "gen.classes" => g.classes.to_string(),
            "gen.clips_per_class" => g.clips_per_class.to_string(),
            "gen.length" => g.length.to_string(),
            "gen.fps" => g.fps.to_string(),
            "gen.p_signed" => g.p_signed.to_string(),
            "gen.mode" => g.mode.to_string(),
            "gen.max_labels" => g.max_labels.to_string(),
            "gen.bg_amplitude" => g.bg_amplitude.to_string(),
            "gen.bg_cutoff" => g.bg_cutoff.to_string(),
            "gen.rest_jitter" => g.rest_jitter.to_string(),
            "gen.amplitude_min" => g.amplitude.0.to_string(),
            "gen.amplitude_max" => g.amplitude.1.to_string(),
            "gen.duration_jitter" => g.duration_jitter.to_string(),
            "gen.min_duration" => g.min_duration.to_string(),
            "gen.max_duration" => g.max_duration.to_string(),
            "gen.velocity_margin" => g.velocity_margin.to_string(),
            "net.body" => self.body.clone(),
            "train.lr" => t.lr.to_string(),
            "train.lr_decay" => t.lr_decay.to_string(),
            "train.decay_at" => t.decay_at.to_string(),
            "train.momentum" => t.momentum.to_string(),
            "train.weight_decay" => t.weight_decay.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.width" => t.width.to_string(),
            "augment.speeds" => fmt_list(&t.augment.speeds),
            "augment.jitter" => t.augment.jitter.to_string(),
            "augment.scale_min" => t.augment.scale.0.to_string(),
            "augment.scale_max" => t.augment.scale.1.to_string(),
            "saliency.sigma_rows" => self.localize.sigma_rows.to_string(),
            "saliency.sigma_cols" => self.localize.sigma_cols.to_string(),
            "saliency.window" => w.length.to_string(),
            "saliency.stride" => w.stride.to_string(),
            "saliency.nms_iou" => w.nms_iou.to_string(),
            "saliency.max_windows" => w.max_windows.unwrap_or(0).to_string(),
            "eval.threshold" => self.eval.threshold.to_string(),
            "eval.metric" => self.eval.metric.to_string(),
            "smooth.lambda" => self.smooth_lambda.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Every key with its current value, loadable by [`Config::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        self.network_spec()?;
        if !(self.eval.threshold > 0.0 && self.eval.threshold <= 1.0) {
            return Err(Error::Config(format!("eval.threshold must be in (0, 1], got {}", self.eval.threshold)));
        }
        if !(self.smooth_lambda.is_finite() && self.smooth_lambda >= 0.0) {
            return Err(Error::Config("smooth.lambda must be >= 0".into()));
        }
        if !(self.localize.sigma_rows > 0.0 && self.localize.sigma_cols > 0.0) {
            return Err(Error::Config("saliency sigmas must be positive".into()));
        }
        let w = &self.localize.windows;
        if w.length == 0 || w.stride == 0 || !(0.0..=1.0).contains(&w.nms_iou) {
            return Err(Error::Config("saliency window and stride must be positive, nms_iou in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::with_head([3, 10, self.train.width], parse_layers(&self.body)?, self.gen.classes)
            .map_err(|e| Error::Config(format!("net.body: {e}")))
    }

    pub fn augment(&self) -> &AugmentConfig {
        &self.train.augment
    }
}

/// Help text listing every key and its default.
pub fn help_text() -> String {
    let d = Config::default();
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (key = default: description):\n");
    for (k, desc) in KEYS {
        let _ = writeln!(out, "  {k:width$} = {}: {desc}", d.get(k).unwrap_or_default());
    }
    out
}
