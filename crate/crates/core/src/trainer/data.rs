//! Clip records and dataset manifests.
//!
//! A manifest has one clip per line:
//!
//! ```text
//! <track_file> <label,label,...> [<class:start:end;...>]
//! ```
//!
//! Track paths are relative to the manifest's directory. The label field is
//! `-` for a clip without labels. The optional third field lists hidden
//! ground-truth intervals as half-open frame ranges `[start, end)`; training
//! readers drop it. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::keypoints::{read_track_file, KeypointTrack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TruthInterval {
    pub class: usize,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl TruthInterval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub id: String,
    pub track: KeypointTrack,
    pub labels: BTreeSet<usize>,
    /// Ground truth for synthetic or annotated clips.
    pub truth_intervals: Option<Vec<TruthInterval>>,
}

impl ClipRecord {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if let Some(&c) = self.labels.iter().find(|&&c| c >= classes) {
            return Err(Error::InvalidInput(format!(
                "clip {}: label {c} out of range for {classes} classes",
                self.id
            )));
        }
        for iv in self.truth_intervals.iter().flatten() {
            if iv.class >= classes || iv.start >= iv.end || iv.end > self.track.len() {
                return Err(Error::InvalidInput(format!(
                    "clip {}: interval {}:{}:{} invalid for {} frames and {classes} classes",
                    self.id,
                    iv.class,
                    iv.start,
                    iv.end,
                    self.track.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub track_file: PathBuf,
    pub labels: BTreeSet<usize>,
    pub truth: Option<Vec<TruthInterval>>,
}

impl ManifestEntry {
    /// Clip id: the track file name without its extension.
    pub fn clip_id(&self) -> String {
        self.track_file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

fn format_labels(labels: &BTreeSet<usize>) -> String {
    if labels.is_empty() {
        return "-".into();
    }
    labels
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn format_manifest_line(entry: &ManifestEntry) -> String {
    let mut line = format!(
        "{} {}",
        entry.track_file.to_string_lossy(),
        format_labels(&entry.labels)
    );
    if let Some(truth) = entry.truth.as_ref().filter(|t| !t.is_empty()) {
        line.push(' ');
        for (i, iv) in truth.iter().enumerate() {
            if i > 0 {
                line.push(';');
            }
            let _ = write!(line, "{}:{}:{}", iv.class, iv.start, iv.end);
        }
    }
    line
}

pub fn serialize_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format_manifest_line(e));
        out.push('\n');
    }
    out
}

fn parse_labels(field: &str, line: usize) -> Result<BTreeSet<usize>> {
    if field == "-" {
        return Ok(BTreeSet::new());
    }
    field
        .split(',')
        .map(|t| {
            t.parse()
                .map_err(|_| Error::parse(line, format!("bad label `{t}`")))
        })
        .collect()
}

fn parse_truth(field: &str, line: usize) -> Result<Vec<TruthInterval>> {
    field
        .split(';')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let parts: Vec<&str> = t.split(':').collect();
            let nums: Option<Vec<usize>> = parts.iter().map(|p| p.parse().ok()).collect();
            match nums.as_deref() {
                Some(&[class, start, end]) if start < end => Ok(TruthInterval { class, start, end }),
                _ => Err(Error::parse(line, format!("bad interval `{t}`"))),
            }
        })
        .collect()
}

/// Parses a manifest. With `keep_truth == false` the third field is not
/// even parsed.
pub fn parse_manifest<R: BufRead>(reader: R, keep_truth: bool) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::parse(
                line_no,
                format!("expected 2 or 3 fields, found {}", fields.len()),
            ));
        }
        let truth = match fields.get(2) {
            Some(f) if keep_truth => Some(parse_truth(f, line_no)?),
            None if keep_truth => Some(Vec::new()),
            _ => None,
        };
        entries.push(ManifestEntry {
            track_file: PathBuf::from(fields[0]),
            labels: parse_labels(fields[1], line_no)?,
            truth,
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path, keep_truth: bool) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    parse_manifest(std::io::BufReader::new(file), keep_truth)
}

fn load_clips(path: &Path, classes: usize, keep_truth: bool) -> Result<Vec<ClipRecord>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    read_manifest(path, keep_truth)?
        .into_iter()
        .map(|entry| {
            let track_path = base.join(&entry.track_file);
            let track = read_track_file(&track_path).map_err(|e| match e {
                Error::Parse { line, msg } => Error::InvalidInput(format!(
                    "{} line {line}: {msg}",
                    track_path.display()
                )),
                Error::Io(io) => Error::InvalidInput(format!("{}: {io}", track_path.display())),
                other => other,
            })?;
            let clip = ClipRecord {
                id: entry.clip_id(),
                track,
                labels: entry.labels,
                truth_intervals: entry.truth,
            };
            clip.validate(classes)?;
            Ok(clip)
        })
        .collect()
}

/// Clips for training: labels only, ground truth is never read.
pub fn load_training_clips(manifest: &Path, classes: usize) -> Result<Vec<ClipRecord>> {
    load_clips(manifest, classes, false)
}

/// Clips with their ground-truth intervals, for evaluation.
pub fn load_annotated_clips(manifest: &Path, classes: usize) -> Result<Vec<ClipRecord>> {
    load_clips(manifest, classes, true)
}
