//! Unit-selection synthesis for text-dependent speaker verification.
//!
//! The pipeline chunks text-independent speech into single-unit segments,
//! collects per-speaker unit libraries for a fixed transcript, and renders new
//! fixed-transcript utterances by concatenating randomly chosen segments of
//! the same speaker. The rest of the crate is the harness that checks the
//! result: fbank front end, an x-vector TDNN, detection metrics and a
//! keyword-confidence scorer.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod config;
pub mod corpus;
pub mod features;
pub mod fixture;
pub mod kws;
pub mod pipeline;
pub mod scoring;
pub mod seed;
pub mod segment;
pub mod synth;
pub mod tdnn;

pub use corpus::alignment::{AlignmentEntry, VadLabels};
pub use corpus::manifest::UtteranceRecord;
pub use corpus::wav::Waveform;
pub use features::FeatureMatrix;
pub use segment::{UnitLibrary, UnitSegment};
pub use synth::SynthesisPlan;
