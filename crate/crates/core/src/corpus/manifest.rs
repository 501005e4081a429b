//! Utterance manifests: tab-separated
//! `utterance_id  speaker_id  transcript  audio_path  [channel]`,
//! with transcript units joined by single spaces.

use std::collections::HashSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("manifest line {line}: expected 4 or 5 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("manifest line {line}: bad channel index {value:?}")]
    BadChannel { line: usize, value: String },
    #[error("manifest line {line}: duplicate utterance id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("manifest line {line}: empty {field}")]
    EmptyField { line: usize, field: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub transcript: Vec<String>,
    pub audio_path: String,
    pub channel_index: Option<usize>,
}

pub fn parse_manifest(text: &str) -> Result<Vec<UtteranceRecord>, ManifestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(ManifestError::FieldCount { line, found: fields.len() });
        }
        for (value, field) in [(fields[0], "utterance_id"), (fields[1], "speaker_id"), (fields[3], "audio_path")] {
            if value.is_empty() {
                return Err(ManifestError::EmptyField { line, field });
            }
        }
        let channel_index = match fields.get(4).map(|s| s.trim()) {
            None | Some("") => None,
            Some(v) => Some(v.parse().map_err(|_| ManifestError::BadChannel { line, value: v.to_string() })?),
        };
        if !seen.insert(fields[0].to_string()) {
            return Err(ManifestError::DuplicateId { line, id: fields[0].to_string() });
        }
        out.push(UtteranceRecord {
            utterance_id: fields[0].to_string(),
            speaker_id: fields[1].to_string(),
            transcript: fields[2].split_whitespace().map(str::to_string).collect(),
            audio_path: fields[3].to_string(),
            channel_index,
        });
    }
    Ok(out)
}

pub fn format_manifest(records: &[UtteranceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.utterance_id);
        out.push('\t');
        out.push_str(&r.speaker_id);
        out.push('\t');
        out.push_str(&r.transcript.join(" "));
        out.push('\t');
        out.push_str(&r.audio_path);
        if let Some(c) = r.channel_index {
            out.push('\t');
            out.push_str(&c.to_string());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_and_without_channel() {
        let text = "u1\tspk1\tni hao mi ya\twav/u1.wav\nu2\tspk1\tqu\twav/u2.wav\t3\n";
        let recs = parse_manifest(text).unwrap();
        assert_eq!(recs[0].transcript, vec!["ni", "hao", "mi", "ya"]);
        assert_eq!(recs[0].channel_index, None);
        assert_eq!(recs[1].channel_index, Some(3));
        assert_eq!(format_manifest(&recs), text);
    }

    #[test]
    fn rejects_duplicates_and_bad_channels() {
        assert_eq!(
            parse_manifest("u\ts\tni\ta.wav\nu\ts\tni\tb.wav\n").unwrap_err(),
            ManifestError::DuplicateId { line: 2, id: "u".into() }
        );
        assert!(matches!(
            parse_manifest("u\ts\tni\ta.wav\tx\n").unwrap_err(),
            ManifestError::BadChannel { line: 1, .. }
        ));
        assert!(matches!(parse_manifest("u s ni a.wav\n").unwrap_err(), ManifestError::FieldCount { .. }));
    }
}
