//! Training-time augmentation of keypoint tracks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::keypoints::{KeypointTrack, NUM_VALUES};
use crate::kinetogram::resample_speed;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Playback speed factors, one drawn uniformly per clip. Empty disables.
    pub speeds: Vec<f64>,
    /// Half-width of the per-row constant offset. Zero disables.
    pub jitter: f64,
    /// Range of the spatial scale factor. `(1, 1)` disables.
    pub scale: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            speeds: vec![0.75, 1.0, 1.25],
            jitter: 0.02,
            scale: (0.9, 1.1),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            speeds: Vec::new(),
            jitter: 0.0,
            scale: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speeds.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Config("speed factors must be positive".into()));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::Config(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        let (lo, hi) = self.scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("scale range {lo}..{hi} invalid")));
        }
        Ok(())
    }
}

/// The draws behind one augmentation, exposed for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentDraw {
    pub speed: f64,
    pub offsets: [f64; NUM_VALUES],
    pub scale: f64,
}

pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> AugmentDraw {
    let speed = if cfg.speeds.is_empty() {
        1.0
    } else {
        cfg.speeds[rng.random_range(0..cfg.speeds.len())]
    };
    let mut offsets = [0.0; NUM_VALUES];
    if cfg.jitter > 0.0 {
        for o in &mut offsets {
            *o = rng.random_range(-cfg.jitter..=cfg.jitter);
        }
    }
    let scale = if cfg.scale.0 < cfg.scale.1 {
        rng.random_range(cfg.scale.0..=cfg.scale.1)
    } else {
        cfg.scale.0
    };
    AugmentDraw {
        speed,
        offsets,
        scale,
    }
}

/// Speed resampling, then per-row shift, then scaling, each clamped to
/// `[-1, 1]`.
pub fn apply(track: &KeypointTrack, d: &AugmentDraw) -> Result<KeypointTrack> {
    let resampled;
    let t = if d.speed != 1.0 {
        resampled = resample_speed(track, d.speed)?;
        &resampled
    } else {
        track
    };
    let shifted = t.map_values(|i, v| v + d.offsets[i]);
    Ok(shifted.map_values(|_, v| v * d.scale))
}

pub fn augment<R: Rng + ?Sized>(track: &KeypointTrack, cfg: &AugmentConfig, rng: &mut R) -> Result<KeypointTrack> {
    apply(track, &draw(cfg, rng))
}
