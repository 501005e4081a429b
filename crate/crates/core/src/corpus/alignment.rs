//! CTM-style alignments and the VAD labels derived from them.
//!
//! One entry per line, five whitespace-separated fields:
//!
//! ```text
//! utterance_id channel start duration unit
//! spk1_u7 1 0.10 0.22 ni
//! ```

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

/// Tolerance on boundary comparisons, in seconds. Decimal start/duration
/// pairs rarely sum exactly (0.10 + 0.22 != 0.32 in binary).
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("line {line}: expected 5 fields (utt channel start duration unit), found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: {field} is not a number: {value:?}")]
    NotNumeric { line: usize, field: &'static str, value: String },
    #[error("line {line}: {field} must be non-negative, got {value}")]
    Negative { line: usize, field: &'static str, value: f64 },
    #[error("line {line}: duration must be positive")]
    ZeroDuration { line: usize },
    #[error(
        "overlapping alignment entries in {utterance}: {first} at {first_start}s overlaps {second} at {second_start}s"
    )]
    Overlap { utterance: String, first: String, first_start: f64, second: String, second_start: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentEntry {
    pub utterance_id: String,
    pub unit: String,
    pub start: f64,
    pub duration: f64,
}

impl AlignmentEntry {
    pub fn new(utterance_id: &str, unit: &str, start: f64, duration: f64) -> Self {
        Self { utterance_id: utterance_id.to_string(), unit: unit.to_string(), start, duration }
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

pub fn default_silence_labels() -> BTreeSet<String> {
    ["sil", "spn"].iter().map(|s| s.to_string()).collect()
}

fn parse_time(line: usize, field: &'static str, value: &str) -> Result<f64, AlignmentError> {
    let v: f64 = value.parse().map_err(|_| AlignmentError::NotNumeric { line, field, value: value.to_string() })?;
    if !v.is_finite() {
        return Err(AlignmentError::NotNumeric { line, field, value: value.to_string() });
    }
    if v < 0.0 {
        return Err(AlignmentError::Negative { line, field, value: v });
    }
    Ok(v)
}

/// Parse alignment text. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_alignment(text: &str) -> Result<Vec<AlignmentEntry>, AlignmentError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(AlignmentError::FieldCount { line, found: fields.len() });
        }
        let start = parse_time(line, "start", fields[2])?;
        let duration = parse_time(line, "duration", fields[3])?;
        if duration == 0.0 {
            return Err(AlignmentError::ZeroDuration { line });
        }
        out.push(AlignmentEntry::new(fields[0], fields[4], start, duration));
    }
    Ok(out)
}

/// Inverse of [`parse_alignment`]; the channel column is always `1`.
pub fn format_alignment(entries: &[AlignmentEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{} 1 {} {} {}\n", e.utterance_id, e.start, e.duration, e.unit));
    }
    out
}

/// Group entries by utterance, each group sorted by start time.
pub fn group_by_utterance(entries: Vec<AlignmentEntry>) -> HashMap<String, Vec<AlignmentEntry>> {
    let mut groups: HashMap<String, Vec<AlignmentEntry>> = HashMap::new();
    for e in entries {
        groups.entry(e.utterance_id.clone()).or_default().push(e);
    }
    for list in groups.values_mut() {
        list.sort_by(|a, b| a.start.total_cmp(&b.start));
    }
    groups
}

/// Fail if any two consecutive (start-sorted) entries overlap.
pub fn check_non_overlapping(entries: &[AlignmentEntry]) -> Result<(), AlignmentError> {
    for pair in entries.windows(2) {
        if pair[1].start < pair[0].end() - TIME_EPS {
            return Err(AlignmentError::Overlap {
                utterance: pair[0].utterance_id.clone(),
                first: pair[0].unit.clone(),
                first_start: pair[0].start,
                second: pair[1].unit.clone(),
                second_start: pair[1].start,
            });
        }
    }
    Ok(())
}

/// Per-frame speech flags.
#[derive(Debug, Clone, PartialEq)]
pub struct VadLabels {
    pub speech: Vec<bool>,
    pub frame_shift: f64,
    pub frame_width: f64,
}

impl VadLabels {
    pub fn len(&self) -> usize {
        self.speech.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }

    pub fn speech_frames(&self) -> usize {
        self.speech.iter().filter(|&&s| s).count()
    }
}

/// Frame `t` is speech iff its center `t*shift + width/2` lies in
/// `[start, start + duration)` of an entry whose unit is not a silence label.
///
/// `entries` must be sorted by start and belong to one utterance.
pub fn derive_vad(
    entries: &[AlignmentEntry],
    num_frames: usize,
    frame_shift: f64,
    frame_width: f64,
    silence_labels: &BTreeSet<String>,
) -> Result<VadLabels, AlignmentError> {
    check_non_overlapping(entries)?;
    let mut speech = vec![false; num_frames];
    let mut cursor = 0;
    for (t, flag) in speech.iter_mut().enumerate() {
        let center = t as f64 * frame_shift + frame_width / 2.0;
        while cursor < entries.len() && entries[cursor].end() <= center {
            cursor += 1;
        }
        if let Some(e) = entries.get(cursor) {
            *flag = e.start <= center && !silence_labels.contains(&e.unit);
        }
    }
    Ok(VadLabels { speech, frame_shift, frame_width })
}
