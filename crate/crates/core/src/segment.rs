//! Single-unit segmentation and per-speaker unit libraries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::alignment::{check_non_overlapping, AlignmentEntry, AlignmentError, TIME_EPS};
use crate::corpus::wav::{read_wav_file, write_wav_file, WavError, Waveform};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("segmentation needs mono audio, got {0} channels")]
    NotMono(usize),
    #[error("{utterance}: entry {unit} ends at {end:.4}s beyond the {duration:.4}s waveform")]
    OutOfRange { utterance: String, unit: String, end: f64, duration: f64 },
    #[error("{utterance}: entry {unit} at {start}s rounds to zero samples")]
    EmptySegment { utterance: String, unit: String, start: f64 },
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("library for {expected} received a segment of speaker {found}")]
    MixedSpeakers { expected: String, found: String },
    #[error("library for {speaker} mixes sample rates {first} and {second}")]
    MixedRates { speaker: String, first: u32, second: u32 },
    #[error("library file line {line}: {message}")]
    BadLibraryFile { line: usize, message: String },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SegmentError + '_ {
    move |source| SegmentError::Io { path: path.display().to_string(), source }
}

/// A verbatim slice of one utterance covering a single unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitSegment {
    pub speaker_id: String,
    pub unit: String,
    pub source_utterance: String,
    pub start_sample: usize,
    /// Exclusive.
    pub end_sample: usize,
    pub samples: Vec<i16>,
    pub sample_rate: u32,
}

impl UnitSegment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Round-half-up of `seconds * rate`.
pub fn time_to_sample(seconds: f64, rate: u32) -> usize {
    (seconds * f64::from(rate) + 0.5).floor() as usize
}

/// Cut one segment per non-silence entry out of a mono utterance.
pub fn extract_segments(
    w: &Waveform,
    entries: &[AlignmentEntry],
    speaker_id: &str,
    silence_labels: &BTreeSet<String>,
) -> Result<Vec<UnitSegment>, SegmentError> {
    if !w.is_mono() {
        return Err(SegmentError::NotMono(w.num_channels()));
    }
    check_non_overlapping(entries)?;
    let rate = w.sample_rate();
    let duration = w.duration_secs();
    let samples = w.samples();
    let mut out = Vec::new();
    for e in entries {
        if e.end() > duration + TIME_EPS {
            return Err(SegmentError::OutOfRange {
                utterance: e.utterance_id.clone(),
                unit: e.unit.clone(),
                end: e.end(),
                duration,
            });
        }
        if silence_labels.contains(&e.unit) {
            continue;
        }
        let start = time_to_sample(e.start, rate);
        let end = time_to_sample(e.end(), rate).min(samples.len());
        if end <= start {
            return Err(SegmentError::EmptySegment {
                utterance: e.utterance_id.clone(),
                unit: e.unit.clone(),
                start: e.start,
            });
        }
        out.push(UnitSegment {
            speaker_id: speaker_id.to_string(),
            unit: e.unit.clone(),
            source_utterance: e.utterance_id.clone(),
            start_sample: start,
            end_sample: end,
            samples: samples[start..end].to_vec(),
            sample_rate: rate,
        });
    }
    Ok(out)
}

/// Per-speaker map from unit label to candidate segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitLibrary {
    pub speaker_id: String,
    pub table: BTreeMap<String, Vec<UnitSegment>>,
}

impl UnitLibrary {
    pub fn empty(speaker_id: &str) -> Self {
        Self { speaker_id: speaker_id.to_string(), table: BTreeMap::new() }
    }

    pub fn candidates(&self, unit: &str) -> &[UnitSegment] {
        self.table.get(unit).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn segment_count(&self) -> usize {
        self.table.values().map(Vec::len).sum()
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.table.values().flatten().next().map(|s| s.sample_rate)
    }
}

/// Keep the segments whose unit is in `target_units`, grouped by unit in source order.
pub fn build_library(
    speaker_id: &str,
    segments: impl IntoIterator<Item = UnitSegment>,
    target_units: &[String],
) -> Result<UnitLibrary, SegmentError> {
    let targets: BTreeSet<&str> = target_units.iter().map(String::as_str).collect();
    let mut lib = UnitLibrary::empty(speaker_id);
    let mut rate: Option<u32> = None;
    for seg in segments {
        if seg.speaker_id != speaker_id {
            return Err(SegmentError::MixedSpeakers { expected: speaker_id.to_string(), found: seg.speaker_id });
        }
        match rate {
            None => rate = Some(seg.sample_rate),
            Some(r) if r != seg.sample_rate => {
                return Err(SegmentError::MixedRates {
                    speaker: speaker_id.to_string(),
                    first: r,
                    second: seg.sample_rate,
                })
            }
            _ => {}
        }
        if targets.contains(seg.unit.as_str()) {
            lib.table.entry(seg.unit.clone()).or_default().push(seg);
        }
    }
    Ok(lib)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibraryStats {
    pub speaker_id: String,
    /// In target-unit order; 0 for missing units.
    pub counts: Vec<(String, usize)>,
    pub covered: bool,
    /// Number of utterances to synthesize for this speaker: the largest per-unit count.
    pub n_utterances: usize,
}

impl LibraryStats {
    pub fn missing_units(&self) -> Vec<&str> {
        self.counts.iter().filter(|(_, c)| *c == 0).map(|(u, _)| u.as_str()).collect()
    }
}

pub fn library_stats(lib: &UnitLibrary, target_units: &[String]) -> LibraryStats {
    let counts: Vec<(String, usize)> = target_units.iter().map(|u| (u.clone(), lib.candidates(u).len())).collect();
    let covered = !counts.is_empty() && counts.iter().all(|(_, c)| *c >= 1);
    let n_utterances = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    LibraryStats { speaker_id: lib.speaker_id.clone(), counts, covered, n_utterances }
}

/// Deduplicated unit set of a transcript, in first-occurrence order.
pub fn unit_set(transcript: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    transcript.iter().filter(|u| seen.insert(u.as_str())).cloned().collect()
}

pub const LIBRARY_MANIFEST: &str = "library.tsv";
pub const LIBRARY_STATS: &str = "library_stats.tsv";

fn segment_rel_path(seg: &UnitSegment) -> String {
    format!("segments/{}/{}_{}_{}.wav", seg.speaker_id, seg.source_utterance, seg.start_sample, seg.end_sample)
}

/// Write libraries as `library.tsv` (speaker, unit, source, start, end), one WAV
/// per segment, and `library_stats.tsv`.
pub fn save_libraries(dir: &Path, libs: &[UnitLibrary], target_units: &[String]) -> Result<(), SegmentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::new();
    let mut stats = String::from("speaker");
    for u in target_units {
        stats.push('\t');
        stats.push_str(u);
    }
    stats.push_str("\tcovered\tn_utterances\n");
    for lib in libs {
        let speaker_dir = dir.join("segments").join(&lib.speaker_id);
        fs::create_dir_all(&speaker_dir).map_err(io_err(&speaker_dir))?;
        for seg in target_units.iter().flat_map(|u| lib.candidates(u)) {
            manifest.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                seg.speaker_id, seg.unit, seg.source_utterance, seg.start_sample, seg.end_sample
            ));
            let w = Waveform::mono(seg.samples.clone(), seg.sample_rate)?;
            write_wav_file(&dir.join(segment_rel_path(seg)), &w)?;
        }
        let st = library_stats(lib, target_units);
        stats.push_str(&st.speaker_id);
        for (_, c) in &st.counts {
            stats.push_str(&format!("\t{c}"));
        }
        stats.push_str(&format!("\t{}\t{}\n", st.covered, st.n_utterances));
    }
    let path = dir.join(LIBRARY_MANIFEST);
    fs::write(&path, manifest).map_err(io_err(&path))?;
    let path = dir.join(LIBRARY_STATS);
    fs::write(&path, stats).map_err(io_err(&path))?;
    Ok(())
}

/// Read libraries written by [`save_libraries`], in first-appearance speaker order.
/// Speakers with no segments are recovered from the stats file.
pub fn load_libraries(dir: &Path) -> Result<Vec<UnitLibrary>, SegmentError> {
    let path = dir.join(LIBRARY_MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut libs: Vec<UnitLibrary> = Vec::new();
    let stats_path = dir.join(LIBRARY_STATS);
    if let Ok(stats) = fs::read_to_string(&stats_path) {
        for line in stats.lines().skip(1) {
            if let Some(spk) = line.split('\t').next().filter(|s| !s.is_empty()) {
                libs.push(UnitLibrary::empty(spk));
            }
        }
    }
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| SegmentError::BadLibraryFile { line: i + 1, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", f.len())));
        }
        let start: usize = f[3].parse().map_err(|_| bad(format!("bad start sample {:?}", f[3])))?;
        let end: usize = f[4].parse().map_err(|_| bad(format!("bad end sample {:?}", f[4])))?;
        let mut seg = UnitSegment {
            speaker_id: f[0].to_string(),
            unit: f[1].to_string(),
            source_utterance: f[2].to_string(),
            start_sample: start,
            end_sample: end,
            samples: Vec::new(),
            sample_rate: 0,
        };
        let w = read_wav_file(&dir.join(segment_rel_path(&seg)))?;
        if w.len() != end.saturating_sub(start) {
            return Err(bad(format!("segment WAV holds {} samples, range spans {}", w.len(), end - start)));
        }
        seg.sample_rate = w.sample_rate();
        seg.samples = w.into_channels().swap_remove(0);
        let idx = match libs.iter().position(|l| l.speaker_id == seg.speaker_id) {
            Some(idx) => idx,
            None => {
                libs.push(UnitLibrary::empty(&seg.speaker_id));
                libs.len() - 1
            }
        };
        libs[idx].table.entry(seg.unit.clone()).or_default().push(seg);
    }
    Ok(libs)
}
