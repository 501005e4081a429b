//! Pipeline configuration: sectioned `key = value` text.
//!
//! ```text
//! [run]
//! seed = 7
//! [paths]
//! work_dir = out
//! manifest = corpus/manifest.tsv
//! alignment = corpus/alignment.ctm
//! [synthesis]
//! transcript = ni hao mi ya
//! snr_list = 0,5,10,15
//! ```
//!
//! `#` starts a comment. Unknown sections or keys, duplicate keys and
//! malformed values are rejected with their line numbers. Relative paths
//! are resolved against the directory holding the config file.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::features::{MaskValue, SpecAugmentParams};
use crate::kws::CombineRule;
use crate::scoring::DcfParams;
use crate::tdnn::AamParams;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `[section]` or `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: key outside any section")]
    NoSection { line: usize },
    #[error("line {line}: unknown key {key:?} in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {second}: duplicate key {key:?} (first set on line {first})")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("line {line}: {key} expects {expected}, got {value:?}")]
    Type { line: usize, key: String, expected: &'static str, value: String },
    #[error("missing required key {key:?} in [{section}]")]
    Missing { section: &'static str, key: &'static str },
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["seed", "workers"]),
    (
        "paths",
        &[
            "work_dir",
            "manifest",
            "alignment",
            "eval_manifest",
            "eval_alignment",
            "trials",
            "noise_dir",
            "rir_dir",
            "kws_pos",
            "kws_neg",
            "kws_labels",
        ],
    ),
    ("synthesis", &["transcript", "silence_labels", "padding", "snr_list", "noise_copies", "reverb_copies"]),
    (
        "features",
        &["cmn_window", "specaug", "freq_mask_width", "freq_masks", "time_mask_width", "time_masks", "mask_value"],
    ),
    ("network", &["train_sets", "steps", "lr", "batch", "train_frames", "margin", "scale", "init_params"]),
    ("metrics", &["p_tar", "c_miss", "c_fa"]),
    ("kws", &["keyword", "w_smooth", "w_max", "combine"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PathsConfig {
    pub work_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub eval_alignment: Option<PathBuf>,
    pub trials: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub rir_dir: Option<PathBuf>,
    pub kws_pos: Option<PathBuf>,
    pub kws_neg: Option<PathBuf>,
    pub kws_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub transcript: Vec<String>,
    pub silence_labels: BTreeSet<String>,
    pub padding: usize,
    pub snr_list: Vec<f64>,
    pub noise_copies: usize,
    pub reverb_copies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub cmn_window: usize,
    pub specaug: Option<SpecAugmentParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Frames per training chunk.
    pub train_frames: usize,
    pub aam: AamParams,
    pub init_params: Option<PathBuf>,
    /// Subset of `real`, `synth`, `augment`.
    pub train_sets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KwsConfig {
    pub keyword: Vec<String>,
    pub w_smooth: usize,
    pub w_max: usize,
    pub combine: CombineRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    pub paths: PathsConfig,
    pub synthesis: SynthesisConfig,
    pub features: FeatureConfig,
    pub network: NetworkConfig,
    pub metrics: DcfParams,
    pub kws: KwsConfig,
}

struct Entries {
    map: HashMap<(String, String), (String, usize)>,
}

impl Entries {
    fn raw(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.map.get(&(section.to_string(), key.to_string())).map(|(v, l)| (v.as_str(), *l))
    }

    fn parse<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &'static str,
        expected: &'static str,
    ) -> Result<Option<T>, ConfigError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| ConfigError::Type {
                line,
                key: key.to_string(),
                expected,
                value: v.to_string(),
            }),
        }
    }

    fn usize_or(&self, section: &str, key: &'static str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.parse(section, key, "a non-negative integer")?.unwrap_or(default))
    }

    fn f64_or(&self, section: &str, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.parse(section, key, "a number")?.unwrap_or(default))
    }

    fn bool_or(&self, section: &str, key: &'static str, default: bool) -> Result<bool, ConfigError> {
        Ok(self.parse(section, key, "true or false")?.unwrap_or(default))
    }

    fn path(&self, base: &Path, section: &str, key: &str) -> Option<PathBuf> {
        self.raw(section, key).map(|(v, _)| base.join(v))
    }

    fn words(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.raw(section, key).map(|(v, _)| v.split_whitespace().map(str::to_string).collect())
    }
}

fn lex(text: &str) -> Result<Entries, ConfigError> {
    let mut map: HashMap<(String, String), (String, usize)> = HashMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !SCHEMA.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::UnknownSection { line, section: name.to_string() });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) =
            content.split_once('=').ok_or_else(|| ConfigError::Syntax { line, text: content.to_string() })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line, text: content.to_string() });
        }
        let sec = section.clone().ok_or(ConfigError::NoSection { line })?;
        let allowed = SCHEMA.iter().find(|(s, _)| *s == sec).unwrap().1;
        if !allowed.contains(&key) {
            return Err(ConfigError::UnknownKey { line, section: sec, key: key.to_string() });
        }
        if let Some((_, first)) = map.get(&(sec.clone(), key.to_string())) {
            return Err(ConfigError::Duplicate { key: key.to_string(), first: *first, second: line });
        }
        map.insert((sec, key.to_string()), (value.to_string(), line));
    }
    Ok(Entries { map })
}

fn parse_list(e: &Entries, section: &str, key: &'static str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
    match e.raw(section, key) {
        None => Ok(default.to_vec()),
        Some((v, line)) => v
            .split(',')
            .map(|x| x.trim())
            .filter(|x| !x.is_empty())
            .map(|x| {
                x.parse::<f64>().map_err(|_| ConfigError::Type {
                    line,
                    key: key.to_string(),
                    expected: "a comma-separated list of numbers",
                    value: v.to_string(),
                })
            })
            .collect(),
    }
}

fn parse_sets(e: &Entries) -> Result<Vec<String>, ConfigError> {
    let Some((v, line)) = e.raw("network", "train_sets") else {
        return Ok(vec!["real".into(), "synth".into(), "augment".into()]);
    };
    let sets: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if sets.is_empty() || sets.iter().any(|s| !["real", "synth", "augment"].contains(&s.as_str())) {
        return Err(ConfigError::Type {
            line,
            key: "train_sets".into(),
            expected: "a comma-separated subset of real, synth, augment",
            value: v.to_string(),
        });
    }
    Ok(sets)
}

/// Parse and type-check a config. Relative paths resolve against `base_dir`.
pub fn validate_config(text: &str, base_dir: &Path) -> Result<PipelineConfig, ConfigError> {
    let e = lex(text)?;
    let seed = e
        .parse::<u64>("run", "seed", "an unsigned 64-bit integer")?
        .ok_or(ConfigError::Missing { section: "run", key: "seed" })?;
    let workers = e.usize_or("run", "workers", 0)?;

    let work_dir =
        e.path(base_dir, "paths", "work_dir").ok_or(ConfigError::Missing { section: "paths", key: "work_dir" })?;
    let p = |k| e.path(base_dir, "paths", k);
    let paths = PathsConfig {
        work_dir,
        manifest: p("manifest"),
        alignment: p("alignment"),
        eval_manifest: p("eval_manifest"),
        eval_alignment: p("eval_alignment"),
        trials: p("trials"),
        noise_dir: p("noise_dir"),
        rir_dir: p("rir_dir"),
        kws_pos: p("kws_pos"),
        kws_neg: p("kws_neg"),
        kws_labels: p("kws_labels"),
    };

    let transcript = e
        .words("synthesis", "transcript")
        .filter(|w| !w.is_empty())
        .ok_or(ConfigError::Missing { section: "synthesis", key: "transcript" })?;
    let silence_labels = e
        .words("synthesis", "silence_labels")
        .map(|w| w.into_iter().collect())
        .unwrap_or_else(crate::corpus::alignment::default_silence_labels);
    let synthesis = SynthesisConfig {
        transcript: transcript.clone(),
        silence_labels,
        padding: e.usize_or("synthesis", "padding", 0)?,
        snr_list: parse_list(&e, "synthesis", "snr_list", &[0.0, 5.0, 10.0, 15.0])?,
        noise_copies: e.usize_or("synthesis", "noise_copies", 0)?,
        reverb_copies: e.usize_or("synthesis", "reverb_copies", 0)?,
    };

    let defaults = SpecAugmentParams::default();
    let mask_value = match e.raw("features", "mask_value") {
        None | Some(("mean", _)) => MaskValue::UtteranceMean,
        Some((v, line)) => MaskValue::Constant(v.parse().map_err(|_| ConfigError::Type {
            line,
            key: "mask_value".into(),
            expected: "`mean` or a number",
            value: v.to_string(),
        })?),
    };
    let specaug = if e.bool_or("features", "specaug", true)? {
        Some(SpecAugmentParams {
            max_freq_mask_width: e.usize_or("features", "freq_mask_width", defaults.max_freq_mask_width)?,
            num_freq_masks: e.usize_or("features", "freq_masks", defaults.num_freq_masks)?,
            max_time_mask_width: e.usize_or("features", "time_mask_width", defaults.max_time_mask_width)?,
            num_time_masks: e.usize_or("features", "time_masks", defaults.num_time_masks)?,
            mask_value,
        })
    } else {
        None
    };
    let cmn_window = e.usize_or("features", "cmn_window", crate::features::cmn::DEFAULT_CMN_WINDOW)?;
    if cmn_window == 0 {
        let (v, line) = e.raw("features", "cmn_window").unwrap();
        return Err(ConfigError::Type {
            line,
            key: "cmn_window".into(),
            expected: "a positive integer",
            value: v.into(),
        });
    }

    let aam = AamParams::default();
    let network = NetworkConfig {
        steps: e.usize_or("network", "steps", 200)?,
        lr: e.f64_or("network", "lr", 0.02)?,
        batch: e.usize_or("network", "batch", 4)?.max(1),
        train_frames: e.usize_or("network", "train_frames", 40)?.max(15),
        aam: AamParams {
            margin: e.f64_or("network", "margin", aam.margin)?,
            scale: e.f64_or("network", "scale", aam.scale)?,
        },
        init_params: e.path(base_dir, "network", "init_params"),
        train_sets: parse_sets(&e)?,
    };

    let dcf = DcfParams::default();
    let metrics = DcfParams {
        p_tar: e.f64_or("metrics", "p_tar", dcf.p_tar)?,
        c_miss: e.f64_or("metrics", "c_miss", dcf.c_miss)?,
        c_fa: e.f64_or("metrics", "c_fa", dcf.c_fa)?,
    };

    let combine = match e.raw("kws", "combine") {
        None | Some(("all", _)) => CombineRule::AllUnits,
        Some(("exclude-first", _)) => CombineRule::ExcludeFirst,
        Some((v, line)) => {
            return Err(ConfigError::Type {
                line,
                key: "combine".into(),
                expected: "`all` or `exclude-first`",
                value: v.into(),
            })
        }
    };
    let kws = KwsConfig {
        keyword: e.words("kws", "keyword").unwrap_or(transcript),
        w_smooth: e.usize_or("kws", "w_smooth", crate::kws::KeywordSpec::DEFAULT_SMOOTH)?,
        w_max: e.usize_or("kws", "w_max", crate::kws::KeywordSpec::DEFAULT_MAX)?,
        combine,
    };

    Ok(PipelineConfig {
        seed,
        workers,
        paths,
        synthesis,
        features: FeatureConfig { cmn_window, specaug },
        network,
        metrics,
        kws,
    })
}
