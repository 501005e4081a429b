//! Audio and corpus metadata I/O: WAV files, utterance manifests,
//! CTM-style alignments and alignment-derived VAD labels.

pub mod alignment;
pub mod manifest;
pub mod wav;
