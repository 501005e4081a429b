//! Keyword confidence from per-frame label posteriors.
//!
//! Posteriors are first smoothed with a trailing running mean of
//! `w_smooth` frames. The confidence at frame `j` is the geometric mean, over
//! the keyword units, of each unit's maximum smoothed posterior within the
//! trailing `w_max` frames; an utterance scores the maximum over `j`.

use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::scoring::{sweep_rates, RocPoint, ScoreSet, ScoringError};

/// Row-sum tolerance for posteriors held in f64.
pub const ROW_SUM_TOL: f64 = 1e-6;
/// Row-sum tolerance for posteriors decoded from f32 archives.
pub const STORED_ROW_SUM_TOL: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum KwsError {
    #[error("frame {frame}: posteriors sum to {sum}")]
    NotStochastic { frame: usize, sum: f64 },
    #[error("frame {frame}: posterior {value} outside [0, 1]")]
    OutOfRange { frame: usize, value: f64 },
    #[error("label list has {labels} entries but the posteriors have {columns} columns")]
    LabelCount { labels: usize, columns: usize },
    #[error("keyword label index {index} out of range for {labels} labels")]
    BadLabel { index: usize, labels: usize },
    #[error("keyword unit {0:?} is not in the label list")]
    UnknownUnit(String),
    #[error("keyword needs at least {0} unit(s)")]
    TooFewUnits(usize),
    #[error("windows must be at least one frame")]
    BadWindow,
    #[error("frame {frame} out of range for {frames} frames")]
    BadFrame { frame: usize, frames: usize },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStream {
    pub probs: FeatureMatrix,
    pub labels: Vec<String>,
}

impl PosteriorStream {
    pub fn new(probs: FeatureMatrix, labels: Vec<String>, row_sum_tol: f64) -> Result<Self, KwsError> {
        if labels.len() != probs.dims() {
            return Err(KwsError::LabelCount { labels: labels.len(), columns: probs.dims() });
        }
        for t in 0..probs.frames() {
            let row = probs.row(t);
            if let Some(&value) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(KwsError::OutOfRange { frame: t, value });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > row_sum_tol {
                return Err(KwsError::NotStochastic { frame: t, sum });
            }
        }
        Ok(Self { probs, labels })
    }

    pub fn frames(&self) -> usize {
        self.probs.frames()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CombineRule {
    /// Geometric mean over all keyword units.
    #[default]
    AllUnits,
    /// Treat the first listed unit as a background label: leave it out and
    /// use exponent `1/(n-1)`.
    ExcludeFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordSpec {
    pub units: Vec<usize>,
    pub w_smooth: usize,
    pub w_max: usize,
    pub rule: CombineRule,
}

impl KeywordSpec {
    pub const DEFAULT_SMOOTH: usize = 30;
    pub const DEFAULT_MAX: usize = 100;

    pub fn new(units: Vec<usize>) -> Self {
        Self { units, w_smooth: Self::DEFAULT_SMOOTH, w_max: Self::DEFAULT_MAX, rule: CombineRule::AllUnits }
    }

    /// Resolve unit names against a label list.
    pub fn from_names(names: &[String], labels: &[String]) -> Result<Self, KwsError> {
        let units = names
            .iter()
            .map(|n| labels.iter().position(|l| l == n).ok_or_else(|| KwsError::UnknownUnit(n.clone())))
            .collect::<Result<_, _>>()?;
        Ok(Self::new(units))
    }

    fn scored_units(&self) -> Result<&[usize], KwsError> {
        let units = match self.rule {
            CombineRule::AllUnits => &self.units[..],
            CombineRule::ExcludeFirst => self.units.get(1..).unwrap_or(&[]),
        };
        if units.is_empty() {
            let need = if self.rule == CombineRule::AllUnits { 1 } else { 2 };
            return Err(KwsError::TooFewUnits(need));
        }
        Ok(units)
    }

    fn validate(&self, labels: usize) -> Result<(), KwsError> {
        if self.w_smooth == 0 || self.w_max == 0 {
            return Err(KwsError::BadWindow);
        }
        if let Some(&index) = self.units.iter().find(|&&u| u >= labels) {
            return Err(KwsError::BadLabel { index, labels });
        }
        self.scored_units().map(|_| ())
    }
}

/// Trailing running mean over up to `w_smooth` frames.
pub fn smooth_posteriors(p: &PosteriorStream, w_smooth: usize) -> PosteriorStream {
    let w = w_smooth.max(1);
    let (frames, dims) = (p.probs.frames(), p.probs.dims());
    let mut out = FeatureMatrix::zeros(frames, dims);
    for j in 0..frames {
        let h = (j + 1).saturating_sub(w);
        let n = (j - h + 1) as f64;
        for k in 0..dims {
            let sum: f64 = (h..=j).map(|t| p.probs.get(t, k)).sum();
            out.set(j, k, sum / n);
        }
    }
    PosteriorStream { probs: out, labels: p.labels.clone() }
}

/// Confidence at frame `j` of an already smoothed stream.
pub fn confidence(smoothed: &PosteriorStream, k: &KeywordSpec, j: usize) -> Result<f64, KwsError> {
    k.validate(smoothed.probs.dims())?;
    let frames = smoothed.frames();
    if j >= frames {
        return Err(KwsError::BadFrame { frame: j, frames });
    }
    let units = k.scored_units()?;
    let h = (j + 1).saturating_sub(k.w_max);
    let mut product = 1.0;
    for &u in units {
        let m = (h..=j).map(|t| smoothed.probs.get(t, u)).fold(0.0, f64::max);
        product *= m;
    }
    Ok(product.powf(1.0 / units.len() as f64))
}

/// Smooth, then take the best frame confidence. Empty streams score 0.
pub fn utterance_confidence(raw: &PosteriorStream, k: &KeywordSpec) -> Result<f64, KwsError> {
    k.validate(raw.probs.dims())?;
    let smoothed = smooth_posteriors(raw, k.w_smooth);
    let mut best: f64 = 0.0;
    for j in 0..smoothed.frames() {
        best = best.max(confidence(&smoothed, k, j)?);
    }
    Ok(best)
}

/// ROC over keyword confidences, positives playing the role of targets.
pub fn kws_roc(positives: &[f64], negatives: &[f64]) -> Result<Vec<RocPoint>, KwsError> {
    Ok(sweep_rates(&ScoreSet::new(positives, negatives))?)
}
