use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::augment::{augment, AugmentConfig};
use super::data::ClipRecord;
use crate::convnet::{
    batch_loss, logistic_loss, ClassWeights, LabelVector, Mode, Network, NetworkSpec, Scalar, Sgd,
    Tensor,
};
use crate::error::{Error, Result};
use crate::eval::classification_ap;
use crate::keypoints::KeypointTrack;
use crate::kinetogram::{center_crop_start, encode, fit_width, CHANNELS, HEIGHT};
use crate::seeding::rng_for;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Factor applied to the learning rate once `decay_at` of the epochs
    /// have run.
    pub lr_decay: f64,
    pub decay_at: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Network input width in frames.
    pub width: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_decay: 0.1,
            decay_at: 2.0 / 3.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 30,
            width: 330,
            augment: AugmentConfig::default(),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate must be >= 0, got {}", self.lr));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay >= 0.0) || !(0.0..=1.0).contains(&self.decay_at) {
            return bad("lr_decay must be >= 0 and decay_at in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must be in [0, 1) and weight decay >= 0".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.width == 0 {
            return bad("input width must be positive".into());
        }
        self.augment.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decay_epoch = (self.decay_at * self.epochs as f64).round() as usize;
        if epoch >= decay_epoch {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}

/// `w_c = (#clips without c) / (#clips with c)`.
pub fn compute_class_weights(clips: &[ClipRecord], classes: usize) -> Result<ClassWeights> {
    let n = clips.len();
    let mut pos = vec![0usize; classes];
    for clip in clips {
        for &c in &clip.labels {
            if c >= classes {
                return Err(Error::InvalidInput(format!("label {c} out of range in clip {}", clip.id)));
            }
            pos[c] += 1;
        }
    }
    let mut w = Vec::with_capacity(classes);
    for (c, &p) in pos.iter().enumerate() {
        if p == 0 {
            return Err(Error::InvalidInput(format!("class {c} has no positive clip")));
        }
        if p == n {
            log::warn!("class {c} is present in every clip; its positive weight is 0");
        }
        w.push((n - p) as f64 / p as f64);
    }
    Ok(ClassWeights(w))
}

/// Network input of a track at a crop start (ignored when padding).
/// Returns the values and the frame of the first column.
pub fn track_input<T: Scalar>(track: &KeypointTrack, width: usize, crop_start: usize) -> Result<(Vec<T>, isize)> {
    let (k, first) = fit_width(&encode(track), width, crop_start)?;
    Ok((k.to_input(), first))
}

/// Evaluation input: centered crop or symmetric padding.
pub fn eval_input<T: Scalar>(track: &KeypointTrack, width: usize) -> Result<(Vec<T>, isize)> {
    track_input(track, width, center_crop_start(track.len(), width))
}

fn input_shape(width: usize) -> [usize; 3] {
    [CHANNELS, HEIGHT, width]
}

/// Eval-mode class scores of every clip.
pub fn predict<T: Scalar>(net: &Network<T>, clips: &[ClipRecord], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let width = net.input_shape()[2];
    let mut out = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch_size.max(1)) {
        let inputs: Vec<Vec<T>> = chunk
            .par_iter()
            .map(|c| eval_input(&c.track, width).map(|(x, _)| x))
            .collect::<Result<_>>()?;
        let fwd = net.forward(&Tensor::stack(input_shape(width), &inputs)?, Mode::Eval)?;
        out.extend((0..chunk.len()).map(|i| fwd.sample_scores(i)));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub map: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Mean loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

impl TrainLog {
    /// CSV with columns `epoch,split,loss,mAP`; mAP is empty when undefined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,mAP\n");
        for r in &self.rows {
            let map = r.map.map(|m| format!("{m:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.6},{}", r.epoch, r.split, r.loss, map);
        }
        out
    }

    pub fn last(&self, split: &str) -> Option<&LogRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

/// Mean loss and classification mAP of eval-mode scores.
pub fn evaluate_scores(
    scores: &[Vec<f64>],
    clips: &[ClipRecord],
    weights: &ClassWeights,
) -> (f64, Option<f64>) {
    let classes = weights.0.len();
    let loss = scores
        .iter()
        .zip(clips)
        .map(|(s, c)| logistic_loss(s, &LabelVector::from_present(classes, &c.labels), weights).0)
        .sum::<f64>()
        / clips.len().max(1) as f64;
    let labels: Vec<_> = clips.iter().map(|c| c.labels.clone()).collect();
    (loss, classification_ap(scores, &labels, classes).map)
}

fn training_input(
    clip: &ClipRecord,
    cfg: &TrainConfig,
    draw_index: u64,
) -> Result<Vec<f32>> {
    let mut rng = rng_for(cfg.seed, "augment", draw_index);
    let track = augment(&clip.track, &cfg.augment, &mut rng)?;
    let start = if track.len() > cfg.width {
        rng.random_range(0..=track.len() - cfg.width)
    } else {
        0
    };
    Ok(track_input(&track, cfg.width, start)?.0)
}

/// Mini-batch SGD on the weighted logistic loss, in single precision.
///
/// Every random draw (initialization, shuffling, augmentation) comes from
/// `cfg.seed`, so a run is reproducible whatever the thread count. A final
/// batch of one clip is dropped when the network has batch norm.
pub fn train(
    clips: &[ClipRecord],
    val: Option<&[ClipRecord]>,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<(Network<f32>, TrainLog)> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::InvalidInput("no training clips".into()));
    }
    if spec.input != input_shape(cfg.width) {
        return Err(Error::Config(format!(
            "network input {:?} does not match width {}",
            spec.input, cfg.width
        )));
    }
    let classes = spec.classes;
    for clip in clips.iter().chain(val.into_iter().flatten()) {
        clip.validate(classes)?;
    }
    let weights = compute_class_weights(clips, classes)?;
    log::info!("class weights {:?}", weights.0);
    let labels: Vec<LabelVector> = clips
        .iter()
        .map(|c| LabelVector::from_present(classes, &c.labels))
        .collect();

    let mut net = Network::<f32>::new(spec, &mut rng_for(cfg.seed, "init", 0))?;
    let mut opt = Sgd::new(&net, cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut log = TrainLog::default();
    let n = clips.len();
    let shape = input_shape(cfg.width);

    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(cfg.seed, "shuffle", epoch as u64));

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut epoch_scores = Vec::with_capacity(n);
        let mut epoch_labels = Vec::with_capacity(n);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if batch.len() < 2 && spec.has_batch_norm() {
                log::debug!("epoch {epoch}: dropping a final batch of one clip");
                continue;
            }
            let inputs: Vec<Vec<f32>> = batch
                .par_iter()
                .map(|&i| training_input(&clips[i], cfg, (epoch * n + i) as u64))
                .collect::<Result<_>>()?;
            let x = Tensor::stack(shape, &inputs)?;
            let fwd = net.forward(&x, Mode::Train)?;
            let batch_labels: Vec<LabelVector> = batch.iter().map(|&i| labels[i].clone()).collect();
            let (loss, grad) = batch_loss(fwd.scores(), &batch_labels, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {loss} at epoch {epoch}, batch {b} (lr {})",
                    opt.lr
                )));
            }
            let grads = net.backward(&fwd, &grad, false)?;
            if grads.params.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient at epoch {epoch}, batch {b} (lr {})",
                    opt.lr
                )));
            }
            net.commit_batch_stats(&fwd);
            opt.step(&mut net, &grads)?;
            log.step_losses.push(loss);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            for (k, &i) in batch.iter().enumerate() {
                epoch_scores.push(fwd.sample_scores(k));
                epoch_labels.push(clips[i].labels.clone());
            }
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        let train_map = classification_ap(&epoch_scores, &epoch_labels, classes).map;
        log.rows.push(LogRow {
            epoch,
            split: "train",
            loss: train_loss,
            map: train_map,
        });
        let mut msg = format!("epoch {epoch}: train loss {train_loss:.4}");
        if let Some(val) = val.filter(|v| !v.is_empty()) {
            let scores = predict(&net, val, cfg.batch_size)?;
            let (loss, map) = evaluate_scores(&scores, val, &weights);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("validation loss became {loss} at epoch {epoch}")));
            }
            let _ = write!(msg, ", val loss {loss:.4}, val mAP {:.4}", map.unwrap_or(f64::NAN));
            log.rows.push(LogRow {
                epoch,
                split: "val",
                loss,
                map,
            });
        }
        log::info!("{msg}");
    }
    Ok((net, log))
}
