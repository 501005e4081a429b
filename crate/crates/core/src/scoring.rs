//! Cosine back-end and detection metrics.
//!
//! A trial is accepted iff `score >= threshold`. At each threshold,
//! FAR is the fraction of nontarget scores at or above it and FRR the
//! fraction of target scores strictly below it.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::tdnn::Embedding;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("score set needs at least one target and one nontarget ({targets} targets, {nontargets} nontargets)")]
    MissingClass { targets: usize, nontargets: usize },
    #[error("p_tar must lie strictly between 0 and 1, got {0}")]
    BadPrior(f64),
    #[error("costs must be positive")]
    BadCost,
    #[error("trial line {line}: unknown id {id}")]
    UnknownId { line: usize, id: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("non-finite score {0}")]
    NonFinite(f64),
}

pub fn cosine_score(a: &Embedding, b: &Embedding) -> Result<f64, ScoringError> {
    if a.len() != b.len() {
        return Err(ScoringError::DimMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let na = a.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ScoringError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "target" | "tgt" | "1" => Some(Self::Target),
            "nontarget" | "imp" | "0" => Some(Self::Nontarget),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Target => "target",
            Self::Nontarget => "nontarget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<TrialLabel>,
}

impl ScoreSet {
    pub fn new(targets: &[f64], nontargets: &[f64]) -> Self {
        let mut s = ScoreSet::default();
        for &t in targets {
            s.push(t, TrialLabel::Target);
        }
        for &n in nontargets {
            s.push(n, TrialLabel::Nontarget);
        }
        s
    }

    pub fn push(&mut self, score: f64, label: TrialLabel) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn split(&self) -> Result<(Vec<f64>, Vec<f64>), ScoringError> {
        if let Some(&bad) = self.scores.iter().find(|s| !s.is_finite()) {
            return Err(ScoringError::NonFinite(bad));
        }
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for (&s, &l) in self.scores.iter().zip(&self.labels) {
            match l {
                TrialLabel::Target => tar.push(s),
                TrialLabel::Nontarget => non.push(s),
            }
        }
        if tar.is_empty() || non.is_empty() {
            return Err(ScoringError::MissingClass { targets: tar.len(), nontargets: non.len() });
        }
        Ok((tar, non))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Rates at `-inf`, every distinct score (ascending) and `+inf`.
pub fn sweep_rates(s: &ScoreSet) -> Result<Vec<RocPoint>, ScoringError> {
    let (mut tar, mut non) = s.split()?;
    tar.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = tar.iter().chain(&non).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let (nt, nn) = (tar.len() as f64, non.len() as f64);
    let mut out = Vec::with_capacity(thresholds.len() + 2);
    out.push(RocPoint { threshold: f64::NEG_INFINITY, far: 1.0, frr: 0.0 });
    let (mut ti, mut ni) = (0, 0);
    for th in thresholds {
        while ti < tar.len() && tar[ti] < th {
            ti += 1;
        }
        while ni < non.len() && non[ni] < th {
            ni += 1;
        }
        out.push(RocPoint { threshold: th, far: (non.len() - ni) as f64 / nn, frr: ti as f64 / nt });
    }
    out.push(RocPoint { threshold: f64::INFINITY, far: 0.0, frr: 1.0 });
    Ok(out)
}

/// Crossing of FAR and FRR on the ROC polyline.
pub fn eer_from_roc(roc: &[RocPoint]) -> (f64, f64) {
    for pair in roc.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let da = a.far - a.frr;
        let db = b.far - b.frr;
        if da == 0.0 {
            return (a.far, a.threshold);
        }
        if da > 0.0 && db <= 0.0 {
            let t = da / (da - db);
            let eer = a.far + t * (b.far - a.far);
            let threshold = match (a.threshold.is_finite(), b.threshold.is_finite()) {
                (true, true) => a.threshold + t * (b.threshold - a.threshold),
                (true, false) => a.threshold,
                (false, true) => b.threshold,
                (false, false) => 0.0,
            };
            return (eer, threshold);
        }
    }
    let last = roc.last().unwrap();
    (last.far, last.threshold)
}

pub fn compute_eer(s: &ScoreSet) -> Result<(f64, f64), ScoringError> {
    Ok(eer_from_roc(&sweep_rates(s)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_tar: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self { p_tar: 0.01, c_miss: 1.0, c_fa: 1.0 }
    }
}

impl DcfParams {
    fn validate(&self) -> Result<(), ScoringError> {
        if !(self.p_tar > 0.0 && self.p_tar < 1.0) {
            return Err(ScoringError::BadPrior(self.p_tar));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(ScoringError::BadCost);
        }
        Ok(())
    }

    /// Normalized detection cost at one operating point.
    pub fn normalized_cost(&self, far: f64, frr: f64) -> f64 {
        let raw = self.c_miss * self.p_tar * frr + self.c_fa * (1.0 - self.p_tar) * far;
        raw / (self.c_miss * self.p_tar).min(self.c_fa * (1.0 - self.p_tar))
    }
}

/// Minimum normalized DCF over the ROC points; ties go to the lowest threshold.
pub fn min_dcf_from_roc(roc: &[RocPoint], p: DcfParams) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::NAN);
    for pt in roc {
        let c = p.normalized_cost(pt.far, pt.frr);
        if c < best.0 {
            best = (c, pt.threshold);
        }
    }
    best
}

pub fn compute_min_dcf(s: &ScoreSet, p: DcfParams) -> Result<(f64, f64), ScoringError> {
    p.validate()?;
    Ok(min_dcf_from_roc(&sweep_rates(s)?, p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetMetrics {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
    pub roc: Vec<RocPoint>,
}

pub fn evaluate(s: &ScoreSet, p: DcfParams) -> Result<DetMetrics, ScoringError> {
    p.validate()?;
    let roc = sweep_rates(s)?;
    let (eer, eer_threshold) = eer_from_roc(&roc);
    let (min_dcf, dcf_threshold) = min_dcf_from_roc(&roc, p);
    Ok(DetMetrics { eer, eer_threshold, min_dcf, dcf_threshold, roc })
}

/// Lowest FRR among operating points with FAR at most `far`.
pub fn frr_at_far(roc: &[RocPoint], far: f64) -> f64 {
    roc.iter().filter(|p| p.far <= far).map(|p| p.frr).fold(1.0, f64::min)
}

/// One cosine score per trial, in trial order.
pub fn score_trials(trials: &[Trial], archive: &HashMap<String, Embedding>) -> Result<ScoreSet, ScoringError> {
    let mut out = ScoreSet::default();
    for (i, t) in trials.iter().enumerate() {
        let get = |id: &str| archive.get(id).ok_or(ScoringError::UnknownId { line: i + 1, id: id.to_string() });
        out.push(cosine_score(get(&t.enroll_id)?, get(&t.test_id)?)?, t.label);
    }
    Ok(out)
}

/// Trial lists: `enroll_id test_id target|nontarget` per line.
pub fn parse_trials(text: &str) -> Result<Vec<Trial>, ScoringError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let err = |message: String| ScoringError::Parse { line: i + 1, message };
        if f.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", f.len())));
        }
        let label = TrialLabel::parse(f[2]).ok_or_else(|| err(format!("bad label {:?}", f[2])))?;
        out.push(Trial { enroll_id: f[0].into(), test_id: f[1].into(), label });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLine {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
    pub label: Option<TrialLabel>,
}

/// Score files: `enroll_id test_id score [label]` per line.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreLine>, ScoringError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let err = |message: String| ScoringError::Parse { line: i + 1, message };
        if !(3..=4).contains(&f.len()) {
            return Err(err(format!("expected 3 or 4 fields, found {}", f.len())));
        }
        let score = f[2].parse().map_err(|_| err(format!("bad score {:?}", f[2])))?;
        let label =
            f.get(3).map(|l| TrialLabel::parse(l).ok_or_else(|| err(format!("bad label {l:?}")))).transpose()?;
        out.push(ScoreLine { enroll_id: f[0].into(), test_id: f[1].into(), score, label });
    }
    Ok(out)
}

pub fn format_scores(trials: &[Trial], scores: &ScoreSet) -> String {
    let mut out = String::new();
    for (t, s) in trials.iter().zip(&scores.scores) {
        let _ = writeln!(out, "{} {} {} {}", t.enroll_id, t.test_id, s, t.label.as_str());
    }
    out
}

/// Labelled score set from score-file lines.
pub fn score_set_from_lines(lines: &[ScoreLine]) -> Result<ScoreSet, ScoringError> {
    let mut s = ScoreSet::default();
    for (i, l) in lines.iter().enumerate() {
        let label = l.label.ok_or(ScoringError::Parse { line: i + 1, message: "missing label".into() })?;
        s.push(l.score, label);
    }
    Ok(s)
}

pub fn format_roc(roc: &[RocPoint]) -> String {
    let mut out = String::from("threshold\tfar\tfrr\n");
    for p in roc {
        let _ = writeln!(out, "{}\t{}\t{}", p.threshold, p.far, p.frr);
    }
    out
}

pub fn parse_roc(text: &str) -> Result<Vec<RocPoint>, ScoringError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = || ScoringError::Parse { line: i + 1, message: format!("bad ROC row {line:?}") };
        let f: Vec<f64> = line.split('\t').map(|v| v.parse::<f64>().map_err(|_| err())).collect::<Result<_, _>>()?;
        if f.len() != 3 {
            return Err(err());
        }
        out.push(RocPoint { threshold: f[0], far: f[1], frr: f[2] });
    }
    Ok(out)
}

/// An SVG plot of FRR (y) against FAR (x). With `log_far`, the x axis is
/// logarithmic from 1e-4 to 1.
pub fn roc_svg(curves: &[(&str, &[RocPoint])], log_far: bool) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 50.0;
    let x_of = |far: f64| {
        let u = if log_far { (far.max(1e-4).log10() + 4.0) / 4.0 } else { far };
        M + u * (W - 2.0 * M)
    };
    let y_of = |frr: f64| H - M - frr * (H - 2.0 * M);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <rect x=\"{M}\" y=\"{M}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - 2.0 * M,
        H - 2.0 * M
    );
    let ticks: Vec<f64> = if log_far { vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0] } else { vec![0.0, 0.25, 0.5, 0.75, 1.0] };
    for t in ticks {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{t}</text>",
            x_of(t),
            H - M + 14.0
        );
    }
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{t}</text>",
            M - 4.0,
            y_of(t) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">false alarm rate</text>",
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(svg, "<text x=\"14\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">false reject rate</text>", H / 2.0, H / 2.0);
    for (k, (name, roc)) in curves.iter().enumerate() {
        let color = colors[k % colors.len()];
        let pts: Vec<String> = roc.iter().map(|p| format!("{:.2},{:.2}", x_of(p.far), y_of(p.frr))).collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{name}</text>",
            W - M - 100.0,
            M + 16.0 + 14.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}
