//! Temporal localization from the gradient of a class score with respect
//! to the kinetogram.
//!
//! The absolute input gradient is reduced over channels to a `10 x W` map,
//! smoothed with a Gaussian, summed over rows into a score per frame, and
//! fixed-length windows over that score are ranked and suppressed.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::convnet::{Mode, Network, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::eval::{temporal_iou, Detection};
use crate::kinetogram::{Kinetogram, CHANNELS, HEIGHT};
use crate::trainer::{eval_input, ClipRecord};

/// Non-negative `10 x W` map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || data.len() != HEIGHT * width {
            return Err(Error::Shape(format!(
                "saliency map of width {width} needs {} values, got {}",
                HEIGHT * width,
                data.len()
            )));
        }
        Ok(SaliencyMap { width, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Gradient of class score `class` with respect to one `(3, 10, W)` input,
/// with batch norm in eval mode.
pub fn input_gradient<T: Scalar>(net: &Network<T>, input: &[T], class: usize) -> Result<Vec<f64>> {
    if class >= net.classes() {
        return Err(Error::InvalidInput(format!(
            "class {class} out of range for {} classes",
            net.classes()
        )));
    }
    let x = Tensor::from_vec(
        [1, net.input_shape()[0], net.input_shape()[1], net.input_shape()[2]],
        input.to_vec(),
    )?;
    let fwd = net.forward(&x, Mode::Eval)?;
    let mut onehot = Tensor::zeros(fwd.scores().shape());
    onehot.data_mut()[class] = T::one();
    let grads = net.backward(&fwd, &onehot, true)?;
    let dx = grads
        .input
        .ok_or_else(|| Error::Shape("network returned no input gradient".into()))?;
    Ok(dx.data().iter().map(|v| v.as_f64()).collect())
}

/// `M[i][j] = max_c |g[c][i][j]|`.
pub fn channel_max(grad: &[f64], width: usize) -> Result<SaliencyMap> {
    if grad.len() != CHANNELS * HEIGHT * width {
        return Err(Error::Shape(format!(
            "gradient of {} values does not match width {width}",
            grad.len()
        )));
    }
    let plane = HEIGHT * width;
    let data = (0..plane)
        .map(|p| (0..CHANNELS).map(|c| grad[c * plane + p].abs()).fold(0.0, f64::max))
        .collect();
    SaliencyMap::new(width, data)
}

/// Saliency of a network input already fitted to the network width.
pub fn saliency_of_input<T: Scalar>(net: &Network<T>, input: &[T], class: usize) -> Result<SaliencyMap> {
    channel_max(&input_gradient(net, input, class)?, net.input_shape()[2])
}

pub fn saliency_map<T: Scalar>(net: &Network<T>, k: &Kinetogram, class: usize) -> Result<SaliencyMap> {
    if k.width() != net.input_shape()[2] {
        return Err(Error::Shape(format!(
            "kinetogram width {} vs network width {}",
            k.width(),
            net.input_shape()[2]
        )));
    }
    saliency_of_input(net, &k.to_input::<T>(), class)
}

/// Normalized Gaussian taps over `[-ceil(3σ), ceil(3σ)]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Mirror index into `[0, n)`, repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn convolve_line(src: &[f64], kernel: &[f64], dst: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    let n = src.len();
    for (j, d) in dst.iter_mut().enumerate() {
        *d = kernel
            .iter()
            .enumerate()
            .map(|(k, &w)| w * src[reflect_index(j as isize + k as isize - r, n)])
            .sum();
    }
}

/// Separable Gaussian smoothing along rows then columns, with reflected
/// borders.
pub fn smooth(m: &SaliencyMap, sigma_rows: f64, sigma_cols: f64) -> Result<SaliencyMap> {
    if !(sigma_rows > 0.0 && sigma_cols > 0.0 && sigma_rows.is_finite() && sigma_cols.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "smoothing sigmas must be positive, got {sigma_rows}, {sigma_cols}"
        )));
    }
    let w = m.width;
    let kr = gaussian_kernel(sigma_rows);
    let kc = gaussian_kernel(sigma_cols);
    let mut tmp = vec![0.0; HEIGHT * w];
    for (src, dst) in m.data.chunks(w).zip(tmp.chunks_mut(w)) {
        convolve_line(src, &kc, dst);
    }
    let mut out = vec![0.0; HEIGHT * w];
    let mut col = vec![0.0; HEIGHT];
    let mut res = vec![0.0; HEIGHT];
    for j in 0..w {
        for i in 0..HEIGHT {
            col[i] = tmp[i * w + j];
        }
        convolve_line(&col, &kr, &mut res);
        for i in 0..HEIGHT {
            out[i * w + j] = res[i];
        }
    }
    SaliencyMap::new(w, out)
}

/// Column sums of the map.
pub fn time_score(m: &SaliencyMap) -> Vec<f64> {
    (0..m.width)
        .map(|j| (0..HEIGHT).map(|i| m.get(i, j)).sum())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
    /// Windows overlapping a kept one by more than this IoU are dropped.
    pub nms_iou: f64,
    /// Keep at most this many windows.
    pub max_windows: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            length: 13,
            stride: 1,
            nms_iou: 0.5,
            max_windows: None,
        }
    }
}

/// Fixed-length sliding windows scored by the mean of `s`, ranked by
/// confidence (earlier start first on ties) and greedily suppressed.
pub fn propose_windows(s: &[f64], cfg: &WindowConfig) -> Result<Vec<Window>> {
    if cfg.length == 0 || cfg.stride == 0 {
        return Err(Error::InvalidInput("window length and stride must be positive".into()));
    }
    if cfg.length > s.len() {
        return Err(Error::InvalidInput(format!(
            "window of {} frames is longer than the {}-frame score",
            cfg.length,
            s.len()
        )));
    }
    let mut windows: Vec<Window> = (0..=s.len() - cfg.length)
        .step_by(cfg.stride)
        .map(|start| Window {
            start,
            end: start + cfg.length,
            confidence: s[start..start + cfg.length].iter().sum::<f64>() / cfg.length as f64,
        })
        .collect();
    windows.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.start.cmp(&b.start)));
    let mut kept: Vec<Window> = Vec::new();
    for w in windows {
        if cfg.max_windows.is_some_and(|m| kept.len() >= m) {
            break;
        }
        if kept
            .iter()
            .all(|k| temporal_iou((k.start, k.end), (w.start, w.end)) <= cfg.nms_iou)
        {
            kept.push(w);
        }
    }
    Ok(kept)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizeConfig {
    pub sigma_rows: f64,
    pub sigma_cols: f64,
    pub windows: WindowConfig,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            sigma_rows: 1.0,
            sigma_cols: 2.0,
            windows: WindowConfig::default(),
        }
    }
}

/// Everything computed while localizing one class in one clip. The score
/// and windows are indexed by clip frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyResult {
    pub class: usize,
    pub raw: SaliencyMap,
    pub smoothed: SaliencyMap,
    /// Frame of the map's first column; negative when the clip was padded.
    pub first_frame: isize,
    pub score: Vec<f64>,
    pub windows: Vec<Window>,
}

impl SaliencyResult {
    /// Frame with the highest time score (the earliest on ties).
    pub fn peak_frame(&self) -> usize {
        let mut best = 0;
        for (t, &v) in self.score.iter().enumerate() {
            if v > self.score[best] {
                best = t;
            }
        }
        best
    }
}

pub fn localize_clip<T: Scalar>(
    net: &Network<T>,
    clip: &ClipRecord,
    class: usize,
    cfg: &LocalizeConfig,
) -> Result<SaliencyResult> {
    let width = net.input_shape()[2];
    let (input, first) = eval_input::<T>(&clip.track, width)?;
    let raw = saliency_of_input(net, &input, class)?;
    let smoothed = smooth(&raw, cfg.sigma_rows, cfg.sigma_cols)?;
    let columns = time_score(&smoothed);
    // Keep the columns showing real frames.
    let lo = (-first).max(0) as usize;
    let hi = ((clip.track.len() as isize - first).min(width as isize)) as usize;
    let score = columns[lo..hi].to_vec();
    let offset = first + lo as isize;
    let windows = propose_windows(&score, &cfg.windows)?
        .into_iter()
        .map(|w| Window {
            start: (w.start as isize + offset) as usize,
            end: (w.end as isize + offset) as usize,
            confidence: w.confidence,
        })
        .collect();
    Ok(SaliencyResult {
        class,
        raw,
        smoothed,
        first_frame: first,
        score,
        windows,
    })
}

/// Detections for every labeled class of every clip, in clip order.
pub fn localize<T: Scalar>(net: &Network<T>, clips: &[ClipRecord], cfg: &LocalizeConfig) -> Result<Vec<Detection>> {
    let per_clip: Vec<Vec<Detection>> = clips
        .par_iter()
        .map(|clip| {
            let mut dets = Vec::new();
            for &class in &clip.labels {
                let r = localize_clip(net, clip, class, cfg)?;
                dets.extend(r.windows.iter().map(|w| Detection {
                    clip_id: clip.id.clone(),
                    class,
                    start: w.start,
                    end: w.end,
                    confidence: w.confidence,
                }));
            }
            Ok(dets)
        })
        .collect::<Result<_>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

/// Binary PGM scaled so the map's maximum is 255.
pub fn write_pgm<W: Write>(m: &SaliencyMap, mut out: W) -> Result<()> {
    write!(out, "P5\n{} {}\n255\n", m.width, HEIGHT)?;
    let max = m.max();
    let bytes: Vec<u8> = m
        .data
        .iter()
        .map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 })
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn export_pgm(m: &SaliencyMap, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm(m, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
