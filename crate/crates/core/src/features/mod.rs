//! Network front end: log mel filterbank, VAD frame filtering, sliding-window
//! mean normalization and SpecAugment masking, in that order.

pub mod archive;
pub mod cmn;
pub mod fbank;
pub mod specaug;

use thiserror::Error;

use crate::corpus::alignment::VadLabels;

pub use cmn::sliding_mean_normalize;
pub use fbank::{compute_fbank, FbankConfig};
pub use specaug::{spec_augment, MaskValue, SpecAugmentParams};

pub const FBANK_DIM: usize = 40;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("waveform of {samples} samples is shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("fbank needs mono audio, got {0} channels")]
    NotMono(usize),
    #[error("VAD has {vad} frames but the features have {features}")]
    VadLength { vad: usize, features: usize },
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("archive {path}: {message}")]
    Archive { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major frames x dims matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, FeatureError> {
        if data.len() != rows * cols {
            return Err(FeatureError::Shape { rows, cols, len: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(cols: usize, rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn frames(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.data[t * self.cols + d]
    }

    pub fn set(&mut self, t: usize, d: usize, v: f64) {
        self.data[t * self.cols + d] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Keep the rows whose flag is set.
    pub fn select_rows(&self, keep: &[bool]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        let mut rows = 0;
        for (t, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            data.extend_from_slice(self.row(t));
            rows += 1;
        }
        FeatureMatrix { rows, cols: self.cols, data }
    }
}

/// Drop non-speech frames, keeping order.
pub fn apply_vad_filter(f: &FeatureMatrix, v: &VadLabels) -> Result<FeatureMatrix, FeatureError> {
    if v.len() != f.frames() {
        return Err(FeatureError::VadLength { vad: v.len(), features: f.frames() });
    }
    Ok(f.select_rows(&v.speech))
}
