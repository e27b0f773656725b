//! Keypoint time series: the two hands and the head of a signer, six
//! normalized coordinates per frame.
//!
//! Coordinates are fractions of the signer-crop half-width with the origin
//! at the crop center, so every value lies in `[-1, 1]`. Value order within
//! a frame is `(lhand.x, lhand.y, rhand.x, rhand.y, head.x, head.y)`, with
//! `y` growing downwards as in image coordinates.
//!
//! Besides the track type this module reads and writes the line-oriented
//! track and candidate files, and smooths multi-modal per-frame detections
//! with an exact dynamic program over the candidates.

use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};

/// Values per frame.
pub const NUM_VALUES: usize = 6;
/// Tracked keypoints (left hand, right hand, head).
pub const NUM_KEYPOINTS: usize = 3;
pub const DEFAULT_FPS: f64 = 25.0;

const TRACK_MAGIC: &str = "KTRACK";
const CANDIDATE_MAGIC: &str = "KCAND";
const FORMAT_VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keypoint {
    LeftHand = 0,
    RightHand = 1,
    Head = 2,
}

impl Keypoint {
    pub const ALL: [Keypoint; NUM_KEYPOINTS] =
        [Keypoint::LeftHand, Keypoint::RightHand, Keypoint::Head];

    /// Index of the keypoint's `x` value within a frame; `y` follows it.
    pub fn value_offset(self) -> usize {
        2 * self as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeypointFrame {
    pub frame_index: usize,
    pub values: [f64; NUM_VALUES],
}

/// A contiguous keypoint series of at least two frames.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointTrack {
    frames: Vec<KeypointFrame>,
    fps: f64,
}

fn check_value(v: f64) -> std::result::Result<(), String> {
    if !v.is_finite() {
        return Err(format!("non-finite coordinate {v}"));
    }
    if !(-1.0..=1.0).contains(&v) {
        return Err(format!("coordinate {v} outside [-1, 1]"));
    }
    Ok(())
}

fn check_fps(fps: f64) -> Result<()> {
    if fps.is_finite() && fps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("fps must be positive, got {fps}")))
    }
}

impl KeypointTrack {
    /// Builds a track from per-frame values, numbering frames from zero.
    pub fn new(values: Vec<[f64; NUM_VALUES]>, fps: f64) -> Result<Self> {
        let frames = values
            .into_iter()
            .enumerate()
            .map(|(frame_index, values)| KeypointFrame {
                frame_index,
                values,
            })
            .collect();
        Self::from_frames(frames, fps)
    }

    pub fn from_frames(frames: Vec<KeypointFrame>, fps: f64) -> Result<Self> {
        check_fps(fps)?;
        if frames.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a track needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        for (i, frame) in frames.iter().enumerate() {
            if frame.frame_index != i {
                return Err(Error::InvalidInput(format!(
                    "frame {i} carries index {}; indices must run 0..T-1",
                    frame.frame_index
                )));
            }
            for &v in &frame.values {
                check_value(v).map_err(|msg| Error::InvalidInput(format!("frame {i}: {msg}")))?;
            }
        }
        Ok(KeypointTrack { frames, fps })
    }

    /// Like [`KeypointTrack::new`] but clamps every value into `[-1, 1]`.
    pub fn new_clamped(mut values: Vec<[f64; NUM_VALUES]>, fps: f64) -> Result<Self> {
        for frame in &mut values {
            for v in frame.iter_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
        }
        Self::new(values, fps)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[KeypointFrame] {
        &self.frames
    }

    pub fn values(&self, t: usize) -> &[f64; NUM_VALUES] {
        &self.frames[t].values
    }

    /// All frames' values, in order.
    pub fn to_values(&self) -> Vec<[f64; NUM_VALUES]> {
        self.frames.iter().map(|f| f.values).collect()
    }

    /// One coordinate over time.
    pub fn row(&self, value_index: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.values[value_index]).collect()
    }

    /// Applies `f` to every value and clamps the result into `[-1, 1]`.
    pub fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> KeypointTrack {
        let frames = self
            .frames
            .iter()
            .map(|frame| {
                let mut values = frame.values;
                for (i, v) in values.iter_mut().enumerate() {
                    *v = f(i, *v).clamp(-1.0, 1.0);
                }
                KeypointFrame {
                    frame_index: frame.frame_index,
                    values,
                }
            })
            .collect();
        KeypointTrack {
            frames,
            fps: self.fps,
        }
    }
}

/// Maps a pixel position into crop-normalized coordinates, clamped to `[-1, 1]`.
pub fn normalize_coordinates(raw: [f64; 2], crop_center: [f64; 2], crop_half_size: f64) -> [f64; 2] {
    assert!(crop_half_size > 0.0, "crop half size must be positive");
    [
        ((raw[0] - crop_center[0]) / crop_half_size).clamp(-1.0, 1.0),
        ((raw[1] - crop_center[1]) / crop_half_size).clamp(-1.0, 1.0),
    ]
}

fn format_fps(fps: f64) -> String {
    format!("{fps}")
}

/// Writes a track in the `KTRACK 1` text format.
pub fn serialize_track(track: &KeypointTrack) -> String {
    let mut out = String::with_capacity(16 + track.len() * 64);
    let _ = writeln!(
        out,
        "{TRACK_MAGIC} {FORMAT_VERSION} {} {}",
        format_fps(track.fps),
        track.len()
    );
    for frame in &track.frames {
        let _ = write!(out, "{}", frame.frame_index);
        for v in &frame.values {
            let _ = write!(out, " {v:.6}");
        }
        out.push('\n');
    }
    out
}

struct Header {
    fps: f64,
    count: usize,
}

fn parse_header(line: &str, magic: &str) -> Result<Header> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != magic {
        return Err(Error::parse(1, format!("expected `{magic} 1 <fps> <T>` header")));
    }
    if fields[1] != FORMAT_VERSION {
        return Err(Error::parse(1, format!("unsupported version {}", fields[1])));
    }
    let fps: f64 = fields[2]
        .parse()
        .map_err(|_| Error::parse(1, format!("bad fps `{}`", fields[2])))?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::parse(1, format!("fps must be positive, got {fps}")));
    }
    let count: usize = fields[3]
        .parse()
        .map_err(|_| Error::parse(1, format!("bad frame count `{}`", fields[3])))?;
    Ok(Header { fps, count })
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::parse(line, format!("bad {what} `{field}`")))
}

fn parse_coordinate(field: &str, line: usize) -> Result<f64> {
    let v: f64 = parse_field(field, line, "coordinate")?;
    check_value(v).map_err(|msg| Error::parse(line, msg))?;
    Ok(v)
}

/// Reads a `KTRACK 1` track file. Errors carry the 1-based line number.
pub fn parse_track<R: BufRead>(reader: R) -> Result<KeypointTrack> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => parse_header(&line?, TRACK_MAGIC)?,
        None => return Err(Error::parse(1, "empty track file")),
    };
    if header.count < 2 {
        return Err(Error::parse(
            1,
            format!("a track needs at least 2 frames, header says {}", header.count),
        ));
    }
    let mut frames = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if frames.len() == header.count {
            return Err(Error::parse(line_no, "more frames than the header declares"));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 1 + NUM_VALUES {
            return Err(Error::parse(
                line_no,
                format!("expected {} fields, found {}", 1 + NUM_VALUES, fields.len()),
            ));
        }
        let frame_index: usize = parse_field(fields[0], line_no, "frame index")?;
        if frame_index != frames.len() {
            return Err(Error::parse(
                line_no,
                format!("frame index {frame_index} out of sequence, expected {}", frames.len()),
            ));
        }
        let mut values = [0.0; NUM_VALUES];
        for (v, field) in values.iter_mut().zip(&fields[1..]) {
            *v = parse_coordinate(field, line_no)?;
        }
        frames.push(KeypointFrame {
            frame_index,
            values,
        });
    }
    if frames.len() != header.count {
        return Err(Error::parse(
            frames.len() + 2,
            format!("header declares {} frames, found {}", header.count, frames.len()),
        ));
    }
    KeypointTrack::from_frames(frames, header.fps)
}

pub fn read_track_file(path: &std::path::Path) -> Result<KeypointTrack> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    parse_track(std::io::BufReader::new(file))
}

pub fn write_track_file(track: &KeypointTrack, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, serialize_track(track))?;
    Ok(())
}

/// One detector hypothesis for a keypoint in a frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub position: [f64; 2],
    pub confidence: f64,
}

/// Per-frame, per-keypoint candidate lists from a pose estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    fps: f64,
    frames: Vec<[Vec<Candidate>; NUM_KEYPOINTS]>,
}

impl CandidateSet {
    pub fn new(frames: Vec<[Vec<Candidate>; NUM_KEYPOINTS]>, fps: f64) -> Result<Self> {
        check_fps(fps)?;
        for (t, frame) in frames.iter().enumerate() {
            for (k, cands) in frame.iter().enumerate() {
                if cands.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "frame {t} keypoint {k} has no candidates"
                    )));
                }
                for c in cands {
                    for &p in &c.position {
                        check_value(p).map_err(|msg| {
                            Error::InvalidInput(format!("frame {t} keypoint {k}: {msg}"))
                        })?;
                    }
                    if !(c.confidence.is_finite() && c.confidence >= 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "frame {t} keypoint {k}: confidence {} must be finite and >= 0",
                            c.confidence
                        )));
                    }
                }
            }
        }
        Ok(CandidateSet { fps, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[[Vec<Candidate>; NUM_KEYPOINTS]] {
        &self.frames
    }

    /// The candidate lists of one keypoint over time.
    pub fn keypoint(&self, kp: Keypoint) -> Vec<Vec<Candidate>> {
        self.frames.iter().map(|f| f[kp as usize].clone()).collect()
    }
}

pub fn serialize_candidates(set: &CandidateSet) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{CANDIDATE_MAGIC} {FORMAT_VERSION} {} {}",
        format_fps(set.fps),
        set.len()
    );
    for (t, frame) in set.frames.iter().enumerate() {
        for (k, cands) in frame.iter().enumerate() {
            for c in cands {
                let _ = writeln!(
                    out,
                    "{t} {k} {:.6} {:.6} {:.6}",
                    c.position[0], c.position[1], c.confidence
                );
            }
        }
    }
    out
}

/// Reads a `KCAND 1` candidate file. Candidate lines may come in any order.
pub fn parse_candidates<R: BufRead>(reader: R) -> Result<CandidateSet> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => parse_header(&line?, CANDIDATE_MAGIC)?,
        None => return Err(Error::parse(1, "empty candidate file")),
    };
    let mut frames: Vec<[Vec<Candidate>; NUM_KEYPOINTS]> =
        (0..header.count).map(|_| Default::default()).collect();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::parse(line_no, format!("expected 5 fields, found {}", fields.len())));
        }
        let t: usize = parse_field(fields[0], line_no, "frame index")?;
        if t >= header.count {
            return Err(Error::parse(line_no, format!("frame {t} beyond declared count {}", header.count)));
        }
        let k: usize = parse_field(fields[1], line_no, "keypoint")?;
        if k >= NUM_KEYPOINTS {
            return Err(Error::parse(line_no, format!("keypoint {k} not in 0..=2")));
        }
        let x = parse_coordinate(fields[2], line_no)?;
        let y = parse_coordinate(fields[3], line_no)?;
        let confidence: f64 = parse_field(fields[4], line_no, "confidence")?;
        if !(confidence.is_finite() && confidence >= 0.0) {
            return Err(Error::parse(line_no, format!("confidence {confidence} must be >= 0")));
        }
        frames[t][k].push(Candidate {
            position: [x, y],
            confidence,
        });
    }
    CandidateSet::new(frames, header.fps)
}

pub fn read_candidate_file(path: &std::path::Path) -> Result<CandidateSet> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    parse_candidates(std::io::BufReader::new(file))
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Canonical candidate order: confidence descending, then `x`, then `y`.
pub fn canonical_order(cands: &[Candidate]) -> Vec<Candidate> {
    let mut sorted = cands.to_vec();
    sorted.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.position[0].total_cmp(&b.position[0]))
            .then(a.position[1].total_cmp(&b.position[1]))
    });
    sorted
}

/// `Σ conf − λ Σ ‖p_t − p_{t+1}‖` for a chosen path.
pub fn path_objective(path: &[Candidate], lambda: f64) -> f64 {
    let conf: f64 = path.iter().map(|c| c.confidence).sum();
    let length: f64 = path
        .windows(2)
        .map(|w| distance(w[0].position, w[1].position))
        .sum();
    conf - lambda * length
}

/// Exact maximizer of [`path_objective`] over one candidate per frame.
///
/// Candidates are put in canonical order first; among equal-scoring paths
/// the one with the lowest canonical index at the latest differing frame
/// wins. Returns the chosen candidates and the objective value.
pub fn best_path(frames: &[Vec<Candidate>], lambda: f64) -> Result<(Vec<Candidate>, f64)> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to smooth".into()));
    }
    let frames: Vec<Vec<Candidate>> = frames.iter().map(|f| canonical_order(f)).collect();
    if let Some(t) = frames.iter().position(Vec::is_empty) {
        return Err(Error::InvalidInput(format!("frame {t} has no candidates")));
    }

    let mut score: Vec<f64> = frames[0].iter().map(|c| c.confidence).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(frames.len());
    back.push(vec![0; frames[0].len()]);
    for t in 1..frames.len() {
        let prev = &frames[t - 1];
        let mut next = Vec::with_capacity(frames[t].len());
        let mut ptr = Vec::with_capacity(frames[t].len());
        for cur in &frames[t] {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, p) in prev.iter().enumerate() {
                let s = score[i] - lambda * distance(p.position, cur.position);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            next.push(best + cur.confidence);
            ptr.push(arg);
        }
        score = next;
        back.push(ptr);
    }

    let mut idx = 0;
    for (j, &s) in score.iter().enumerate() {
        if s > score[idx] {
            idx = j;
        }
    }
    let objective = score[idx];
    let mut path = vec![frames[frames.len() - 1][idx]; frames.len()];
    for t in (1..frames.len()).rev() {
        path[t] = frames[t][idx];
        idx = back[t][idx];
    }
    path[0] = frames[0][idx];
    Ok((path, objective))
}

/// Smooths every keypoint independently with [`best_path`].
pub fn smooth_track(candidates: &CandidateSet, lambda: f64) -> Result<KeypointTrack> {
    let mut values = vec![[0.0; NUM_VALUES]; candidates.len()];
    for kp in Keypoint::ALL {
        let (path, _) = best_path(&candidates.keypoint(kp), lambda)?;
        let off = kp.value_offset();
        for (frame, c) in values.iter_mut().zip(&path) {
            frame[off] = c.position[0];
            frame[off + 1] = c.position[1];
        }
    }
    KeypointTrack::new(values, candidates.fps)
}
