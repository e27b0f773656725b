//! Procedural keypoint clips: short parametric sign primitives embedded in
//! slow background motion, with clip-level labels that are only sometimes
//! backed by an actual sign.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::keypoints::{
    serialize_track, Candidate, CandidateSet, Keypoint, KeypointTrack, DEFAULT_FPS, NUM_KEYPOINTS,
    NUM_VALUES,
};
use crate::seeding::rng_for;
use crate::trainer::data::{serialize_manifest, ClipRecord, ManifestEntry, TruthInterval};

/// Resting pose `(lx, ly, rx, ry, hx, hy)`. The signer faces the camera, so
/// the right hand sits on the image's left.
pub const REST_POSE: [f64; NUM_VALUES] = [0.35, 0.45, -0.35, 0.45, 0.0, -0.55];

/// Frames over which a displaced hand eases back to rest after a sign.
pub const RETURN_FRAMES: usize = 20;

/// Minimum number of frames between the end of one return phase and the
/// start of the next sign.
const SIGN_GAP: usize = 2;
const PLACEMENT_ATTEMPTS: usize = 10;
const CLIP_ATTEMPTS: usize = 50;
const BACKGROUND_BURN_IN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Valley,
    Stir,
    Raise,
    Clap,
    Sweep,
    HeadTouch,
    Zigzag,
    Push,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignPrimitive {
    pub class: usize,
    pub name: &'static str,
    pub shape: Shape,
    /// Nominal length; each embedding rescales it by the speed jitter.
    pub base_duration: usize,
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Triangle wave with period 1, range `[-1, 1]`, zero at 0.
fn triangle(u: f64) -> f64 {
    let f = (u + 0.25).rem_euclid(1.0);
    if f < 0.5 {
        4.0 * f - 1.0
    } else {
        3.0 - 4.0 * f
    }
}

impl SignPrimitive {
    /// Displacement from the resting pose at phase `u` in `[0, 1]`, for unit
    /// amplitude. Every component stays within `[-1, 1]`.
    pub fn displacement(&self, u: f64) -> [f64; NUM_VALUES] {
        let u = u.clamp(0.0, 1.0);
        let s = smoothstep(u);
        let bump = (PI * u).sin();
        match self.shape {
            // Both hands along mirrored diagonals: down toward the middle,
            // then up and on.
            Shape::Valley => [-0.8 * u, 0.8 * bump, 0.8 * u, 0.8 * bump, 0.0, 0.0],
            Shape::Stir => {
                let a = 2.0 * PI * u;
                [0.0, 0.0, 0.5 * a.sin(), 0.5 * (1.0 - a.cos()), 0.0, 0.0]
            }
            Shape::Raise => [0.0, 0.0, 0.1 * s, -s, 0.0, 0.0],
            Shape::Clap => {
                let c = 0.5 * (1.0 - (4.0 * PI * u).cos());
                [-0.6 * c, -0.2 * c, 0.6 * c, -0.2 * c, 0.0, 0.0]
            }
            Shape::Sweep => [0.0, 0.0, s, -0.15 * bump, 0.0, 0.0],
            Shape::HeadTouch => [0.0, 0.0, 0.35 * bump, -0.9 * bump, 0.0, 0.1 * bump],
            Shape::Zigzag => [0.0, 0.0, 0.35 * triangle(2.0 * u), 0.8 * u, 0.0, 0.0],
            Shape::Push => [-0.2 * s, 0.7 * s, 0.2 * s, 0.7 * s, 0.0, -0.15 * s],
        }
    }

    /// Unit-amplitude trajectory sampled at `duration` frames.
    pub fn trajectory(&self, duration: usize) -> Vec<[f64; NUM_VALUES]> {
        let last = duration.max(2) - 1;
        (0..duration)
            .map(|i| self.displacement(i as f64 / last as f64))
            .collect()
    }

    /// Frames the primitive occupies when embedded with `duration`,
    /// including the return to rest when it does not end at rest.
    pub fn footprint(&self, duration: usize) -> usize {
        if self.displacement(1.0).iter().any(|d| d.abs() > 1e-12) {
            duration + RETURN_FRAMES
        } else {
            duration
        }
    }
}

pub fn builtin_primitives() -> Vec<SignPrimitive> {
    [
        ("valley", Shape::Valley),
        ("stir", Shape::Stir),
        ("raise", Shape::Raise),
        ("clap", Shape::Clap),
        ("sweep", Shape::Sweep),
        ("headtouch", Shape::HeadTouch),
        ("zigzag", Shape::Zigzag),
        ("push", Shape::Push),
    ]
    .into_iter()
    .enumerate()
    .map(|(class, (name, shape))| SignPrimitive {
        class,
        name,
        shape,
        base_duration: 12,
    })
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelMode {
    /// Exactly one label per clip.
    Single,
    /// One to `max_labels` labels per clip.
    Multi,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(LabelMode::Single),
            "multi" => Ok(LabelMode::Multi),
            _ => Err(Error::Config(format!("mode must be `single` or `multi`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for LabelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelMode::Single => "single",
            LabelMode::Multi => "multi",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub classes: usize,
    pub clips_per_class: usize,
    pub length: usize,
    pub fps: f64,
    pub p_signed: f64,
    pub mode: LabelMode,
    pub max_labels: usize,
    /// Standard deviation of the background motion per coordinate.
    pub bg_amplitude: f64,
    /// Smoothing coefficient of the two-pole low-pass filter, in `(0, 1]`;
    /// smaller is smoother.
    pub bg_cutoff: f64,
    /// Half-width of the per-clip uniform offset of the resting pose.
    pub rest_jitter: f64,
    pub amplitude: (f64, f64),
    /// Relative speed variation of a primitive's duration.
    pub duration_jitter: f64,
    pub min_duration: usize,
    pub max_duration: usize,
    /// Required ratio of a primitive's mean speed to the background's.
    pub velocity_margin: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            classes: 5,
            clips_per_class: 100,
            length: 330,
            fps: DEFAULT_FPS,
            p_signed: 0.6,
            mode: LabelMode::Single,
            max_labels: 3,
            bg_amplitude: 0.03,
            bg_cutoff: 0.06,
            rest_jitter: 0.05,
            amplitude: (0.25, 0.4),
            duration_jitter: 0.2,
            min_duration: 10,
            max_duration: 14,
            velocity_margin: 3.0,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let n = builtin_primitives().len();
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes == 0 || self.classes > n {
            return bad(format!("classes must be in 1..={n}, got {}", self.classes));
        }
        if self.clips_per_class == 0 {
            return bad("clips_per_class must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p_signed) {
            return bad(format!("p_signed must be in [0, 1], got {}", self.p_signed));
        }
        if self.max_labels == 0 || self.max_labels > self.classes && self.mode == LabelMode::Multi {
            return bad(format!(
                "max_labels must be in 1..=classes, got {}",
                self.max_labels
            ));
        }
        if !(self.fps > 0.0) || !(self.bg_amplitude >= 0.0) || !(self.rest_jitter >= 0.0) {
            return bad("fps, bg_amplitude and rest_jitter must be non-negative".into());
        }
        if !(self.bg_cutoff > 0.0 && self.bg_cutoff <= 1.0) {
            return bad(format!("bg_cutoff must be in (0, 1], got {}", self.bg_cutoff));
        }
        let (lo, hi) = self.amplitude;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("amplitude range must satisfy 0 < lo <= hi <= 1, got {lo}..{hi}"));
        }
        if !(0.0..1.0).contains(&self.duration_jitter) {
            return bad("duration_jitter must be in [0, 1)".into());
        }
        if self.min_duration < 2 || self.min_duration > self.max_duration {
            return bad(format!(
                "duration range {}..{} invalid",
                self.min_duration, self.max_duration
            ));
        }
        if self.length < 2 {
            return bad("clip length must be at least 2".into());
        }
        Ok(())
    }

    pub fn total_clips(&self) -> usize {
        self.classes * self.clips_per_class
    }

    /// Clip counts of the train, validation and test splits (80:10:10).
    pub fn split_sizes(&self) -> [usize; 3] {
        let n = self.total_clips();
        let train = n * 8 / 10;
        let val = n / 10;
        [train, val, n - train - val]
    }
}

/// Independent low-pass filtered white noise per coordinate, scaled to
/// `amplitude` standard deviation.
pub fn background_motion<R: Rng + ?Sized>(
    length: usize,
    amplitude: f64,
    cutoff: f64,
    rng: &mut R,
) -> Vec<[f64; NUM_VALUES]> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    // Stationary variance of the two cascaded one-pole filters driven by
    // unit white noise.
    let a = cutoff;
    let r = 1.0 - a;
    let var = a.powi(4) * (1.0 + r * r) / ((1.0 - r * r).powi(3));
    let scale = amplitude / var.sqrt();
    let mut out = vec![[0.0; NUM_VALUES]; length];
    for v in 0..NUM_VALUES {
        let (mut s1, mut s2) = (0.0, 0.0);
        for t in 0..BACKGROUND_BURN_IN + length {
            let x: f64 = normal.sample(rng);
            s1 += a * (x - s1);
            s2 += a * (s1 - s2);
            if t >= BACKGROUND_BURN_IN {
                out[t - BACKGROUND_BURN_IN][v] = scale * s2;
            }
        }
    }
    out
}

/// Offsets of an embedded sign relative to its onset: the scaled
/// trajectory followed by a cosine return to rest.
pub fn embedding_offsets(
    primitive: &SignPrimitive,
    duration: usize,
    amplitude: f64,
) -> Vec<[f64; NUM_VALUES]> {
    let mut out: Vec<[f64; NUM_VALUES]> = primitive
        .trajectory(duration)
        .into_iter()
        .map(|d| d.map(|v| amplitude * v))
        .collect();
    let total = primitive.footprint(duration);
    let end = *out.last().unwrap();
    for k in 1..=total - duration {
        let w = 0.5 * (1.0 + (PI * k as f64 / RETURN_FRAMES as f64).cos());
        out.push(end.map(|v| v * w));
    }
    out
}

fn draw_duration<R: Rng + ?Sized>(cfg: &GenConfig, p: &SignPrimitive, rng: &mut R) -> usize {
    let f = if cfg.duration_jitter > 0.0 {
        rng.random_range(1.0 - cfg.duration_jitter..=1.0 + cfg.duration_jitter)
    } else {
        1.0
    };
    ((p.base_duration as f64 * f).round() as usize).clamp(cfg.min_duration, cfg.max_duration)
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

struct Placement {
    class: usize,
    onset: usize,
    duration: usize,
    footprint: usize,
    amplitude: f64,
}

fn try_clip<R: Rng + ?Sized>(
    cfg: &GenConfig,
    primitives: &[SignPrimitive],
    labels: &BTreeSet<usize>,
    p_signed: f64,
    rng: &mut R,
) -> Option<(Vec<[f64; NUM_VALUES]>, Vec<TruthInterval>)> {
    let t = cfg.length;
    let mut rest = REST_POSE;
    for v in &mut rest {
        if cfg.rest_jitter > 0.0 {
            *v += rng.random_range(-cfg.rest_jitter..=cfg.rest_jitter);
        }
    }
    let mut values = background_motion(t, cfg.bg_amplitude, cfg.bg_cutoff, rng);
    for frame in &mut values {
        for (v, r) in frame.iter_mut().zip(&rest) {
            *v += r;
        }
    }

    let mut placed: Vec<Placement> = Vec::new();
    for &class in labels {
        if !rng.random_bool(p_signed) {
            continue;
        }
        let p = &primitives[class];
        let duration = draw_duration(cfg, p, rng);
        let amplitude = rng.random_range(cfg.amplitude.0..=cfg.amplitude.1);
        let footprint = p.footprint(duration).min(t);
        if duration > t {
            return None;
        }
        let mut ok = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let onset = rng.random_range(0..=t - duration);
            let end = (onset + footprint).min(t);
            let clash = placed.iter().any(|q| {
                let q_end = (q.onset + q.footprint).min(t);
                onset < q_end + SIGN_GAP && q.onset < end + SIGN_GAP
            });
            if !clash {
                placed.push(Placement {
                    class,
                    onset,
                    duration,
                    footprint,
                    amplitude,
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }

    let mut truth = Vec::with_capacity(placed.len());
    for q in &placed {
        let offsets = embedding_offsets(&primitives[q.class], q.duration, q.amplitude);
        for (k, off) in offsets.iter().enumerate() {
            let Some(frame) = values.get_mut(q.onset + k) else { break };
            for (v, d) in frame.iter_mut().zip(off) {
                *v += d;
            }
        }
        truth.push(TruthInterval {
            class: q.class,
            start: q.onset,
            end: q.onset + q.duration,
        });
    }
    truth.sort_by_key(|iv| (iv.start, iv.class));
    for frame in &mut values {
        for v in frame.iter_mut() {
            *v = round6(v.clamp(-1.0, 1.0));
        }
    }
    Some((values, truth))
}

/// One synthetic clip. Each intended label is embedded with probability
/// `p_signed`; the clip keeps every intended label either way.
pub fn generate_clip<R: Rng + ?Sized>(
    cfg: &GenConfig,
    id: impl Into<String>,
    labels: &BTreeSet<usize>,
    p_signed: f64,
    rng: &mut R,
) -> Result<ClipRecord> {
    if let Some(&c) = labels.iter().find(|&&c| c >= cfg.classes) {
        return Err(Error::InvalidInput(format!(
            "label {c} out of range for {} classes",
            cfg.classes
        )));
    }
    if !(0.0..=1.0).contains(&p_signed) {
        return Err(Error::InvalidInput(format!("p_signed must be in [0, 1], got {p_signed}")));
    }
    let primitives = builtin_primitives();
    for _ in 0..CLIP_ATTEMPTS {
        if let Some((values, truth)) = try_clip(cfg, &primitives, labels, p_signed, rng) {
            return Ok(ClipRecord {
                id: id.into(),
                track: KeypointTrack::new(values, cfg.fps)?,
                labels: labels.clone(),
                truth_intervals: Some(truth),
            });
        }
    }
    Err(Error::Generation(format!(
        "could not place {} signs in {} frames without overlap",
        labels.len(),
        cfg.length
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn manifest_name(self) -> String {
        format!("{}.manifest", self.name())
    }
}

/// Intended label set of clip `index`: its primary class `index mod C`,
/// plus up to `max_labels - 1` others in multi mode.
pub fn intended_labels<R: Rng + ?Sized>(cfg: &GenConfig, index: usize, rng: &mut R) -> BTreeSet<usize> {
    let primary = index % cfg.classes;
    let mut labels = BTreeSet::from([primary]);
    if cfg.mode == LabelMode::Multi && cfg.max_labels > 1 {
        let extra = rng.random_range(0..cfg.max_labels);
        let others: Vec<usize> = (0..cfg.classes).filter(|&c| c != primary).collect();
        for i in index::sample(rng, others.len(), extra.min(others.len())) {
            labels.insert(others[i]);
        }
    }
    labels
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    pub train: Vec<ClipRecord>,
    pub val: Vec<ClipRecord>,
    pub test: Vec<ClipRecord>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[ClipRecord] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Clip ids are `clip_NNNNN` over the whole dataset.
pub fn clip_id(index: usize) -> String {
    format!("clip_{index:05}")
}

/// Generates all clips in memory. Clip `i` draws from its own derived seed,
/// so the result does not depend on the thread count.
pub fn generate_records(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let [n_train, n_val, _] = cfg.split_sizes();
    let clips: Vec<ClipRecord> = (0..cfg.total_clips())
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(cfg.seed, "clip", i as u64);
            let labels = intended_labels(cfg, i, &mut rng);
            let p = if i >= n_train + n_val { 1.0 } else { cfg.p_signed };
            generate_clip(cfg, clip_id(i), &labels, p, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut it = clips.into_iter();
    let train = it.by_ref().take(n_train).collect();
    let val = it.by_ref().take(n_val).collect();
    let test = it.collect();
    Ok(Dataset {
        config: cfg.clone(),
        train,
        val,
        test,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitStats {
    pub clips: usize,
    /// Clips carrying each label.
    pub positives: Vec<usize>,
    /// Embedded sign instances per class.
    pub embedded: Vec<usize>,
}

pub fn split_stats(clips: &[ClipRecord], classes: usize) -> SplitStats {
    let mut s = SplitStats {
        clips: clips.len(),
        positives: vec![0; classes],
        embedded: vec![0; classes],
    };
    for clip in clips {
        for &c in &clip.labels {
            s.positives[c] += 1;
        }
        for iv in clip.truth_intervals.iter().flatten() {
            s.embedded[iv.class] += 1;
        }
    }
    s
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Plain-text statistics: one `positives`/`embedded` line per split with
/// a count per class.
pub fn stats_report(ds: &Dataset) -> String {
    let cfg = &ds.config;
    let names: Vec<&str> = builtin_primitives()[..cfg.classes].iter().map(|p| p.name).collect();
    let mut out = String::new();
    let _ = writeln!(out, "seed {}", cfg.seed);
    let _ = writeln!(out, "mode {}", cfg.mode);
    let _ = writeln!(out, "classes {} {}", cfg.classes, names.join(" "));
    let _ = writeln!(out, "length {}", cfg.length);
    let _ = writeln!(out, "p_signed {}", cfg.p_signed);
    for split in Split::ALL {
        let s = split_stats(ds.split(split), cfg.classes);
        let _ = writeln!(out, "clips {} {}", split.name(), s.clips);
        let _ = writeln!(out, "positives {} {}", split.name(), join(&s.positives));
        let _ = writeln!(out, "embedded {} {}", split.name(), join(&s.embedded));
    }
    out
}

/// Writes `tracks/clip_NNNNN.ktrack`, one manifest per split,
/// `classes.txt` and `stats.txt` under `out`.
pub fn write_dataset(ds: &Dataset, out: &Path) -> Result<()> {
    let tracks = out.join("tracks");
    std::fs::create_dir_all(&tracks)?;
    for split in Split::ALL {
        let mut entries = Vec::new();
        for clip in ds.split(split) {
            let rel = Path::new("tracks").join(format!("{}.ktrack", clip.id));
            std::fs::write(out.join(&rel), serialize_track(&clip.track))?;
            entries.push(ManifestEntry {
                track_file: rel,
                labels: clip.labels.clone(),
                truth: clip.truth_intervals.clone(),
            });
        }
        std::fs::write(out.join(split.manifest_name()), serialize_manifest(&entries))?;
    }
    let names: Vec<&str> = builtin_primitives()[..ds.config.classes]
        .iter()
        .map(|p| p.name)
        .collect();
    std::fs::write(out.join("classes.txt"), names.join("\n") + "\n")?;
    std::fs::write(out.join("stats.txt"), stats_report(ds))?;
    Ok(())
}

pub fn generate_dataset(cfg: &GenConfig, out: &Path) -> Result<Dataset> {
    let ds = generate_records(cfg)?;
    write_dataset(&ds, out)?;
    Ok(ds)
}

/// Pose-estimator-like candidates around a clean track.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateNoise {
    /// Standard deviation of the true candidate's position error.
    pub position_sigma: f64,
    /// Distractors per frame and keypoint.
    pub distractors: usize,
    /// Probability that a distractor outscores the true candidate.
    pub swap_probability: f64,
}

impl Default for CandidateNoise {
    fn default() -> Self {
        CandidateNoise {
            position_sigma: 0.005,
            distractors: 2,
            swap_probability: 0.1,
        }
    }
}

pub fn candidates_from_track<R: Rng + ?Sized>(
    track: &KeypointTrack,
    noise: &CandidateNoise,
    rng: &mut R,
) -> Result<CandidateSet> {
    let normal = Normal::new(0.0, noise.position_sigma.max(0.0))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut frames = Vec::with_capacity(track.len());
    for t in 0..track.len() {
        let v = track.values(t);
        let per_kp: [Vec<Candidate>; NUM_KEYPOINTS] = Keypoint::ALL.map(|kp| {
            let off = kp.value_offset();
            let truth = [v[off], v[off + 1]];
            let true_conf = rng.random_range(0.6..0.95);
            let mut list = vec![Candidate {
                position: truth.map(|x| (x + normal.sample(rng)).clamp(-1.0, 1.0)),
                confidence: true_conf,
            }];
            for _ in 0..noise.distractors {
                let confidence = if rng.random_bool(noise.swap_probability) {
                    rng.random_range(true_conf..1.0)
                } else {
                    rng.random_range(0.05..true_conf)
                };
                list.push(Candidate {
                    position: [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
                    confidence,
                });
            }
            list
        });
        frames.push(per_kp);
    }
    CandidateSet::new(frames, track.fps())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn valley_shape() {
        let valley = &builtin_primitives()[0];
        assert_eq!(valley.name, "valley");
        let traj = valley.trajectory(12);
        let rx: Vec<f64> = traj.iter().map(|d| REST_POSE[2] + 0.4 * d[2]).collect();
        assert!(rx.windows(2).all(|w| w[1] > w[0]));
        for dur in 10..=14 {
            let ry: Vec<f64> = valley.trajectory(dur).iter().map(|d| d[3]).collect();
            let top = ry.iter().copied().fold(f64::MIN, f64::max);
            let first = ry.iter().position(|&v| top - v < 1e-12).unwrap();
            let last = ry.iter().rposition(|&v| top - v < 1e-12).unwrap();
            assert!(first > 0 && last < dur - 1 && last - first <= 1);
            assert!(ry[..=first].windows(2).all(|w| w[1] > w[0]));
            assert!(ry[last..].windows(2).all(|w| w[1] < w[0]));
        }
        // Mirrored left hand.
        for d in &traj {
            assert_eq!(d[0], -d[2]);
            assert_eq!(d[1], d[3]);
        }
    }

    #[test]
    fn primitives_stay_in_range() {
        let cfg = GenConfig::default();
        let prims = builtin_primitives();
        assert!(prims.len() >= 8);
        for p in &prims {
            for dur in cfg.min_duration..=cfg.max_duration {
                for off in embedding_offsets(p, dur, cfg.amplitude.1) {
                    for (v, r) in off.iter().zip(REST_POSE) {
                        let x = v + r;
                        assert!((-1.0..=1.0).contains(&x), "{} leaves range: {x}", p.name);
                    }
                }
            }
        }
    }

    #[test]
    fn primitives_are_distinct() {
        let prims = builtin_primitives();
        let vel = |p: &SignPrimitive| -> Vec<f64> {
            let tr = p.trajectory(12);
            tr.windows(2)
                .flat_map(|w| (0..NUM_VALUES).map(move |i| w[1][i] - w[0][i]))
                .collect()
        };
        for a in 0..prims.len() {
            for b in a + 1..prims.len() {
                let (va, vb) = (vel(&prims[a]), vel(&prims[b]));
                let diff: f64 = va.iter().zip(&vb).map(|(x, y)| (x - y).abs()).sum();
                assert!(diff > 0.5, "{} vs {}: {diff}", prims[a].name, prims[b].name);
            }
        }
    }

    #[test]
    fn return_phase_ends_at_rest() {
        for p in builtin_primitives() {
            let off = embedding_offsets(&p, 12, 0.3);
            assert_eq!(off.len(), p.footprint(12));
            assert!(off.last().unwrap().iter().all(|v| v.abs() < 1e-12), "{}", p.name);
        }
    }

    #[test]
    fn forced_and_absent_embedding() {
        let cfg = GenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels = BTreeSet::from([2]);
        let clip = generate_clip(&cfg, "a", &labels, 1.0, &mut rng).unwrap();
        let truth = clip.truth_intervals.unwrap();
        assert_eq!(truth.len(), 1);
        assert_eq!(truth[0].class, 2);
        assert!((cfg.min_duration..=cfg.max_duration).contains(&truth[0].len()));
        assert!(truth[0].end <= cfg.length);

        let clip = generate_clip(&cfg, "b", &labels, 0.0, &mut rng).unwrap();
        assert_eq!(clip.labels, labels);
        assert!(clip.truth_intervals.unwrap().is_empty());
    }

    #[test]
    fn out_of_range_label() {
        let cfg = GenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(generate_clip(&cfg, "a", &BTreeSet::from([5]), 1.0, &mut rng).is_err());
    }

    #[test]
    fn impossible_placement_is_an_error() {
        let cfg = GenConfig {
            length: 40,
            ..GenConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels = BTreeSet::from([0, 1, 2, 3, 4]);
        let err = generate_clip(&cfg, "a", &labels, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
    }

    #[test]
    fn multi_labels_are_bounded() {
        let cfg = GenConfig {
            mode: LabelMode::Multi,
            ..GenConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sizes = BTreeSet::new();
        for i in 0..200 {
            let l = intended_labels(&cfg, i, &mut rng);
            assert!(l.contains(&(i % cfg.classes)));
            sizes.insert(l.len());
        }
        assert_eq!(sizes, BTreeSet::from([1, 2, 3]));
    }

    #[test]
    fn candidates_contain_truth_neighbourhood() {
        let cfg = GenConfig {
            length: 30,
            ..GenConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clip = generate_clip(&cfg, "a", &BTreeSet::from([0]), 1.0, &mut rng).unwrap();
        let set = candidates_from_track(&clip.track, &CandidateNoise::default(), &mut rng).unwrap();
        assert_eq!(set.len(), 30);
        for (t, frame) in set.frames().iter().enumerate() {
            for kp in Keypoint::ALL {
                let cands = &frame[kp as usize];
                assert_eq!(cands.len(), 3);
                let off = kp.value_offset();
                let v = clip.track.values(t);
                assert!((cands[0].position[0] - v[off]).abs() < 0.05);
            }
        }
    }
}
