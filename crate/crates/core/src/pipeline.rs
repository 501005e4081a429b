//! Stage runners and the configured end-to-end pipeline.
//!
//! Every stage reads and writes plain files under the configured work
//! directory, so stages can be run one at a time or all together. Output
//! never depends on the worker count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::augment::{convolve_rir, mix_noise, AugmentError};
use crate::config::{ConfigError, PipelineConfig};
use crate::corpus::alignment::{
    derive_vad, format_alignment, group_by_utterance, parse_alignment, AlignmentEntry, AlignmentError,
};
use crate::corpus::manifest::{format_manifest, parse_manifest, ManifestError, UtteranceRecord};
use crate::corpus::wav::{read_wav_file, write_wav_file, WavError, Waveform};
use crate::features::archive::{read_archive, read_archive_file, write_archive};
use crate::features::{
    apply_vad_filter, sliding_mean_normalize, spec_augment, FbankConfig, FeatureError, FeatureMatrix, SpecAugmentParams,
};
use crate::kws::{kws_roc, utterance_confidence, CombineRule, KeywordSpec, KwsError, PosteriorStream};
use crate::scoring::{
    eer_from_roc, evaluate, format_roc, format_scores, frr_at_far, parse_scores, parse_trials, roc_svg,
    score_set_from_lines, score_trials, DcfParams, DetMetrics, ScoringError,
};
use crate::seed;
use crate::segment::{build_library, extract_segments, library_stats, load_libraries, save_libraries, unit_set};
use crate::segment::{LibraryStats, SegmentError, UnitLibrary};
use crate::synth::{synthesize_corpus, write_corpus, SkippedSpeaker, SynthError, SynthOptions, SynthesizedCorpus};
use crate::tdnn::io::{load_params, save_params};
use crate::tdnn::{
    average_embeddings, forward, init_tdnn, train_step, transfer_init, AamParams, Embedding, TdnnConfig, TdnnError,
    TdnnParams, TrainOptions,
};

/// Map `f` over `items`, keeping input order. `workers == 0` uses the
/// default pool size and `1` runs inline.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers != 1 && items.len() > 1 {
            if workers == 0 {
                return items.par_iter().map(&f).collect();
            }
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(|| items.par_iter().map(&f).collect());
            }
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
    #[error("stage {stage} needs [paths] {key}")]
    MissingKey { stage: &'static str, key: &'static str },
    #[error("missing input {what}: {path}")]
    MissingInput { what: &'static str, path: PathBuf },
    #[error("{path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: ManifestError,
    },
    #[error("{path}: {source}")]
    Alignment {
        path: PathBuf,
        #[source]
        source: AlignmentError,
    },
    #[error("{context}: {source}")]
    Wav {
        context: String,
        #[source]
        source: WavError,
    },
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{context}: {source}")]
    Augment {
        context: String,
        #[source]
        source: AugmentError,
    },
    #[error("{context}: {source}")]
    Feature {
        context: String,
        #[source]
        source: FeatureError,
    },
    #[error("{context}: {source}")]
    Network {
        context: String,
        #[source]
        source: TdnnError,
    },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("{context}: {source}")]
    Kws {
        context: String,
        #[source]
        source: KwsError,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 for usage, 2 for invalid configuration or inputs, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::UnknownStage(_) => 1,
            PipelineError::Config(_)
            | PipelineError::MissingKey { .. }
            | PipelineError::MissingInput { .. }
            | PipelineError::Manifest { .. }
            | PipelineError::Alignment { .. } => 2,
            _ => 3,
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn read_text(path: &Path, what: &'static str) -> Result<String> {
    if !path.exists() {
        return Err(PipelineError::MissingInput { what, path: path.to_path_buf() });
    }
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    parse_manifest(&read_text(path, "manifest")?)
        .map_err(|source| PipelineError::Manifest { path: path.into(), source })
}

pub fn load_alignment(path: &Path) -> Result<HashMap<String, Vec<AlignmentEntry>>> {
    let entries = parse_alignment(&read_text(path, "alignment")?)
        .map_err(|source| PipelineError::Alignment { path: path.into(), source })?;
    Ok(group_by_utterance(entries))
}

/// Load an utterance's audio, relative paths resolving against `root`.
pub fn load_audio(record: &UtteranceRecord, root: &Path) -> Result<Waveform> {
    let path = root.join(&record.audio_path);
    if !path.exists() {
        return Err(PipelineError::MissingInput { what: "audio", path });
    }
    let w =
        read_wav_file(&path).map_err(|source| PipelineError::Wav { context: path.display().to_string(), source })?;
    match record.channel_index {
        Some(c) => {
            w.extract_channel(c).map_err(|source| PipelineError::Wav { context: record.utterance_id.clone(), source })
        }
        None => Ok(w),
    }
}

fn manifest_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

// ---------------------------------------------------------------- segment

/// Cut every manifest utterance into unit segments and group them into
/// per-speaker libraries over the units of `transcript`.
pub fn build_libraries(
    manifest: &Path,
    alignment: &Path,
    transcript: &[String],
    silence: &BTreeSet<String>,
    workers: usize,
) -> Result<Vec<UnitLibrary>> {
    let records = load_manifest(manifest)?;
    let ali = load_alignment(alignment)?;
    let root = manifest_root(manifest);
    for r in &records {
        if !ali.contains_key(&r.utterance_id) {
            return Err(PipelineError::Invalid(format!(
                "{}: no alignment for {}",
                alignment.display(),
                r.utterance_id
            )));
        }
    }
    let per_utt = par_map(&records, workers, |r| -> Result<_> {
        let w = load_audio(r, &root)?;
        Ok(extract_segments(&w, &ali[&r.utterance_id], &r.speaker_id, silence)?)
    });
    let mut by_speaker: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for (r, segs) in records.iter().zip(per_utt) {
        by_speaker.entry(r.speaker_id.clone()).or_default().extend(segs?);
    }
    let targets = unit_set(transcript);
    by_speaker.into_iter().map(|(spk, segs)| build_library(&spk, segs, &targets).map_err(Into::into)).collect()
}

// ---------------------------------------------------------------- augment

/// A derived copy of one source utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRecord {
    pub utterance_id: String,
    pub source: String,
    pub kind: &'static str,
    pub detail: String,
    pub clipped: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AugmentOptions {
    pub noise_copies: usize,
    pub reverb_copies: usize,
    pub snr_list: Vec<f64>,
    pub workers: usize,
}

/// Sorted `*.wav` files of a directory.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(PipelineError::MissingInput { what: "directory", path: dir.to_path_buf() });
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    out.sort();
    Ok(out)
}

fn load_wavs(paths: &[PathBuf]) -> Result<Vec<(String, Waveform)>> {
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let w =
                read_wav_file(p).map_err(|source| PipelineError::Wav { context: p.display().to_string(), source })?;
            Ok((name, w))
        })
        .collect()
}

/// Noise and reverberation copies of each utterance of a corpus directory
/// (`manifest.tsv`, `alignment.ctm`, `wav/`), written to `out` in the same layout.
pub fn augment_corpus(
    corpus_dir: &Path,
    noise_dir: Option<&Path>,
    rir_dir: Option<&Path>,
    opts: &AugmentOptions,
    seed: u64,
    out: &Path,
) -> Result<Vec<AugmentedRecord>> {
    let manifest = corpus_dir.join(crate::synth::MANIFEST);
    let records = load_manifest(&manifest)?;
    let ali = load_alignment(&corpus_dir.join(crate::synth::ALIGNMENT))?;
    let noises = match (opts.noise_copies, noise_dir) {
        (0, _) => Vec::new(),
        (_, Some(d)) => load_wavs(&list_wavs(d)?)?,
        (_, None) => return Err(PipelineError::MissingKey { stage: "augment", key: "noise_dir" }),
    };
    let rirs = match (opts.reverb_copies, rir_dir) {
        (0, _) => Vec::new(),
        (_, Some(d)) => load_wavs(&list_wavs(d)?)?,
        (_, None) => return Err(PipelineError::MissingKey { stage: "augment", key: "rir_dir" }),
    };
    if opts.noise_copies > 0 && (noises.is_empty() || opts.snr_list.is_empty()) {
        return Err(PipelineError::Invalid("noise augmentation needs noise files and a non-empty snr_list".into()));
    }
    if opts.reverb_copies > 0 && rirs.is_empty() {
        return Err(PipelineError::Invalid("reverberation needs at least one RIR file".into()));
    }

    struct Job<'a> {
        record: &'a UtteranceRecord,
        kind: &'static str,
        copy: usize,
    }
    let mut jobs = Vec::new();
    for r in &records {
        jobs.extend((0..opts.noise_copies).map(|copy| Job { record: r, kind: "noise", copy }));
        jobs.extend((0..opts.reverb_copies).map(|copy| Job { record: r, kind: "reverb", copy }));
    }

    let root = manifest_root(&manifest);
    let results = par_map(&jobs, opts.workers, |job| -> Result<(AugmentedRecord, Waveform)> {
        let src = load_audio(job.record, &root)?;
        let id = format!("{}-{}{}", job.record.utterance_id, job.kind, job.copy);
        let key = format!("augment/{}/{}", job.kind, job.record.utterance_id);
        let mut rng = seed::stream(seed, &key, job.copy as u64);
        let context = || id.clone();
        let (aug, detail) = if job.kind == "noise" {
            let (name, noise) = &noises[rng.gen_range(0..noises.len())];
            let snr = opts.snr_list[rng.gen_range(0..opts.snr_list.len())];
            let aug = mix_noise(&src, noise, snr, rng.gen())
                .map_err(|source| PipelineError::Augment { context: context(), source })?;
            (aug, format!("{name}@{snr}dB"))
        } else {
            let (name, rir) = &rirs[rng.gen_range(0..rirs.len())];
            let taps: Vec<f64> = rir.samples().iter().map(|&v| f64::from(v)).collect();
            let aug =
                convolve_rir(&src, &taps).map_err(|source| PipelineError::Augment { context: context(), source })?;
            (aug, name.clone())
        };
        let rec = AugmentedRecord {
            utterance_id: id,
            source: job.record.utterance_id.clone(),
            kind: job.kind,
            detail,
            clipped: aug.clipped,
        };
        Ok((rec, aug.waveform))
    });

    let wav_dir = out.join("wav");
    fs::create_dir_all(&wav_dir).map_err(io_err(&wav_dir))?;
    let mut manifest_out = Vec::new();
    let mut ali_out = Vec::new();
    let mut log = String::from("utterance\tsource\tkind\tdetail\tclipped\n");
    let mut made = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        let (rec, w) = r?;
        let rel = format!("wav/{}.wav", rec.utterance_id);
        let path = out.join(&rel);
        write_wav_file(&path, &w)
            .map_err(|source| PipelineError::Wav { context: path.display().to_string(), source })?;
        manifest_out.push(UtteranceRecord {
            utterance_id: rec.utterance_id.clone(),
            speaker_id: job.record.speaker_id.clone(),
            transcript: job.record.transcript.clone(),
            audio_path: rel,
            channel_index: None,
        });
        if let Some(entries) = ali.get(&rec.source) {
            ali_out
                .extend(entries.iter().map(|e| AlignmentEntry { utterance_id: rec.utterance_id.clone(), ..e.clone() }));
        }
        let _ = writeln!(log, "{}\t{}\t{}\t{}\t{}", rec.utterance_id, rec.source, rec.kind, rec.detail, rec.clipped);
        made.push(rec);
    }
    write_text(&out.join(crate::synth::MANIFEST), &format_manifest(&manifest_out))?;
    write_text(&out.join(crate::synth::ALIGNMENT), &format_alignment(&ali_out))?;
    write_text(&out.join("augment.tsv"), &log)?;
    Ok(made)
}

// ---------------------------------------------------------------- features

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecipe {
    pub fbank: FbankConfig,
    pub cmn_window: usize,
    pub specaug: Option<SpecAugmentParams>,
    pub silence: BTreeSet<String>,
}

impl Default for FeatureRecipe {
    fn default() -> Self {
        Self {
            fbank: FbankConfig::default(),
            cmn_window: crate::features::cmn::DEFAULT_CMN_WINDOW,
            specaug: None,
            silence: crate::corpus::alignment::default_silence_labels(),
        }
    }
}

/// One feature matrix per channel of a manifest utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureItem {
    /// `utt` for a single channel, `utt#chN` when a multi-channel file is expanded.
    pub id: String,
    pub speaker_id: String,
    pub features: FeatureMatrix,
}

/// Strip a `#chN` channel suffix.
pub fn base_id(id: &str) -> &str {
    match id.rsplit_once("#ch") {
        Some((base, n)) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => base,
        _ => id,
    }
}

/// fbank, then alignment VAD, sliding CMN and (optionally) SpecAugment.
///
/// With an alignment every utterance must be covered by it; without one no
/// frames are dropped.
pub fn featurize_utterance(
    id: &str,
    w: &Waveform,
    entries: Option<&[AlignmentEntry]>,
    recipe: &FeatureRecipe,
    seed: u64,
) -> Result<FeatureMatrix> {
    let ferr = |source| PipelineError::Feature { context: id.to_string(), source };
    let mut f = crate::features::fbank::compute_fbank_with(w, &recipe.fbank).map_err(ferr)?;
    if let Some(entries) = entries {
        let rate = f64::from(w.sample_rate());
        let shift = recipe.fbank.shift_samples(w.sample_rate()) as f64 / rate;
        let width = recipe.fbank.window_samples(w.sample_rate()) as f64 / rate;
        let vad = derive_vad(entries, f.frames(), shift, width, &recipe.silence)
            .map_err(|source| PipelineError::Alignment { path: PathBuf::from(id), source })?;
        f = apply_vad_filter(&f, &vad).map_err(ferr)?;
    }
    f = sliding_mean_normalize(&f, recipe.cmn_window);
    if let Some(p) = &recipe.specaug {
        f = spec_augment(&f, p, seed::mix(seed, &format!("specaug/{id}"), 0));
    }
    Ok(f)
}

/// Featurize every utterance of a manifest. Multi-channel files without a
/// channel index yield one item per channel.
pub fn featurize_manifest(
    manifest: &Path,
    alignment: Option<&Path>,
    recipe: &FeatureRecipe,
    seed: u64,
    workers: usize,
) -> Result<Vec<FeatureItem>> {
    let records = load_manifest(manifest)?;
    let ali = alignment.map(load_alignment).transpose()?;
    let root = manifest_root(manifest);
    if let (Some(ali), Some(path)) = (&ali, alignment) {
        if let Some(r) = records.iter().find(|r| !ali.contains_key(&r.utterance_id)) {
            return Err(PipelineError::Invalid(format!("{}: no alignment for {}", path.display(), r.utterance_id)));
        }
    }
    let per_utt = par_map(&records, workers, |r| -> Result<Vec<FeatureItem>> {
        let w = load_audio(r, &root)?;
        let entries = ali.as_ref().map(|a| a[&r.utterance_id].as_slice());
        let channels: Vec<(String, Waveform)> = if w.is_mono() {
            vec![(r.utterance_id.clone(), w)]
        } else {
            (0..w.num_channels())
                .map(|c| {
                    let ch = w
                        .extract_channel(c)
                        .map_err(|source| PipelineError::Wav { context: r.utterance_id.clone(), source })?;
                    Ok((format!("{}#ch{c}", r.utterance_id), ch))
                })
                .collect::<Result<_>>()?
        };
        channels
            .into_iter()
            .map(|(id, ch)| {
                let features = featurize_utterance(&id, &ch, entries, recipe, seed)?;
                Ok(FeatureItem { id, speaker_id: r.speaker_id.clone(), features })
            })
            .collect()
    });
    let mut out = Vec::new();
    for items in per_utt {
        out.extend(items?);
    }
    Ok(out)
}

pub const UTT2SPK_SUFFIX: &str = "_utt2spk.tsv";

/// Write `<name>.bin`, `<name>.tsv` and `<name>_utt2spk.tsv`.
pub fn write_feature_set(dir: &Path, name: &str, items: &[FeatureItem]) -> Result<()> {
    let records: Vec<(String, FeatureMatrix)> = items.iter().map(|i| (i.id.clone(), i.features.clone())).collect();
    write_archive(dir, name, &records).map_err(|source| PipelineError::Feature { context: name.into(), source })?;
    let mut utt2spk = String::new();
    for i in items {
        let _ = writeln!(utt2spk, "{}\t{}", i.id, i.speaker_id);
    }
    write_text(&dir.join(format!("{name}{UTT2SPK_SUFFIX}")), &utt2spk)
}

pub fn read_feature_set(dir: &Path, name: &str) -> Result<Vec<FeatureItem>> {
    let (bin, _) = crate::features::archive::archive_paths(dir, name);
    if !bin.exists() {
        return Err(PipelineError::MissingInput { what: "feature archive", path: bin });
    }
    let records = read_archive(dir, name).map_err(|source| PipelineError::Feature { context: name.into(), source })?;
    let map_path = dir.join(format!("{name}{UTT2SPK_SUFFIX}"));
    let text = read_text(&map_path, "utt2spk map")?;
    let spk: HashMap<&str, &str> = text.lines().filter_map(|l| l.split_once('\t')).collect();
    records
        .into_iter()
        .map(|(id, features)| {
            let speaker_id = spk
                .get(id.as_str())
                .ok_or_else(|| PipelineError::Invalid(format!("{}: no speaker for {id}", map_path.display())))?
                .to_string();
            Ok(FeatureItem { id, speaker_id, features })
        })
        .collect()
}

// ---------------------------------------------------------------- training

#[derive(Debug, Clone)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Chunk length drawn from each utterance per step.
    pub train_frames: usize,
    pub aam: AamParams,
    pub workers: usize,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self { steps: 200, lr: 0.02, batch: 4, train_frames: 40, aam: AamParams::default(), workers: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Class index to speaker id.
    pub classes: Vec<String>,
    /// Mean batch loss of each step, before its update.
    pub losses: Vec<f64>,
    pub used: usize,
    /// Utterances shorter than the receptive field.
    pub dropped: usize,
}

/// Seeded mini-batch gradient descent on random chunks.
///
/// Starts from `init` when given (via `transfer_init` if its class count
/// differs), otherwise from a fresh Table-1 network.
pub fn train_toy(
    items: &[FeatureItem],
    cfg: &ToyTrainConfig,
    init: Option<&TdnnParams>,
    seed: u64,
) -> Result<(TdnnParams, TrainReport)> {
    let classes: Vec<String> =
        items.iter().map(|i| i.speaker_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.is_empty() {
        return Err(PipelineError::Invalid("no training utterances".into()));
    }
    let net_err = |source| PipelineError::Network { context: "train".into(), source };
    let mut params = match init {
        Some(p) if p.config.num_classes == classes.len() => p.clone(),
        Some(p) => transfer_init(p, classes.len(), seed::mix(seed, "train/transfer", 0)).map_err(net_err)?,
        None => init_tdnn(&TdnnConfig::table1(classes.len()), seed::mix(seed, "train/init", 0)),
    };
    let rf = params.config.receptive_field();
    let usable: Vec<(&FeatureMatrix, usize)> = items
        .iter()
        .filter(|i| i.features.frames() >= rf)
        .map(|i| (&i.features, classes.binary_search(&i.speaker_id).unwrap()))
        .collect();
    if usable.is_empty() {
        return Err(PipelineError::Invalid(format!("no training utterance has {rf} frames")));
    }
    let chunk = cfg.train_frames.max(rf);
    let opts = TrainOptions { aam: cfg.aam, workers: cfg.workers };
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = seed::stream(seed, "train/batch", step as u64);
        let batch: Vec<(FeatureMatrix, usize)> = (0..cfg.batch.max(1))
            .map(|_| {
                let (f, label) = usable[rng.gen_range(0..usable.len())];
                if f.frames() <= chunk {
                    return (f.clone(), label);
                }
                let start = rng.gen_range(0..=f.frames() - chunk);
                let keep: Vec<bool> = (0..f.frames()).map(|t| (start..start + chunk).contains(&t)).collect();
                (f.select_rows(&keep), label)
            })
            .collect();
        let (next, loss) = train_step(&params, &batch, cfg.lr, opts).map_err(net_err)?;
        params = next;
        losses.push(loss);
    }
    Ok((params, TrainReport { classes, losses, used: usable.len(), dropped: items.len() - usable.len() }))
}

// ---------------------------------------------------------------- extract / score

/// Forward every item and average channels that share a base id.
pub fn extract_embeddings(
    params: &TdnnParams,
    items: &[FeatureItem],
    workers: usize,
) -> Result<Vec<(String, Embedding)>> {
    let embs = par_map(items, workers, |i| {
        forward(params, &i.features)
            .map(|(e, _)| e)
            .map_err(|source| PipelineError::Network { context: i.id.clone(), source })
    });
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Embedding>> = HashMap::new();
    for (i, e) in items.iter().zip(embs) {
        let base = base_id(&i.id).to_string();
        if !groups.contains_key(&base) {
            order.push(base.clone());
        }
        groups.entry(base).or_default().push(e?);
    }
    order
        .into_iter()
        .map(|id| {
            let avg = average_embeddings(&groups[&id])
                .map_err(|source| PipelineError::Network { context: id.clone(), source })?;
            Ok((id, avg))
        })
        .collect()
}

pub fn write_embeddings(dir: &Path, name: &str, embs: &[(String, Embedding)]) -> Result<()> {
    let records: Vec<(String, FeatureMatrix)> =
        embs.iter().map(|(id, e)| (id.clone(), FeatureMatrix::new(1, e.len(), e.0.clone()).expect("1 x d"))).collect();
    write_archive(dir, name, &records).map_err(|source| PipelineError::Feature { context: name.into(), source })
}

/// Read a `1 x d` embedding archive from its `.bin` path.
pub fn read_embeddings(bin: &Path) -> Result<HashMap<String, Embedding>> {
    if !bin.exists() {
        return Err(PipelineError::MissingInput { what: "embedding archive", path: bin.to_path_buf() });
    }
    let index = bin.with_extension("tsv");
    let records = read_archive_file(bin, Some(&index))
        .map_err(|source| PipelineError::Feature { context: bin.display().to_string(), source })?;
    let mut out = HashMap::new();
    for (id, m) in records {
        if m.frames() != 1 {
            return Err(PipelineError::Invalid(format!("{id}: embedding record has {} rows", m.frames())));
        }
        out.insert(id, Embedding(m.as_slice().to_vec()));
    }
    Ok(out)
}

/// Score a trial list; returns the score-file text.
pub fn score_trial_file(trials: &Path, embeddings: &HashMap<String, Embedding>) -> Result<(String, usize)> {
    let trials = parse_trials(&read_text(trials, "trial list")?)?;
    let scores = score_trials(&trials, embeddings)?;
    Ok((format_scores(&trials, &scores), trials.len()))
}

/// Metric summary text: `key\tvalue` lines.
pub fn format_metrics(m: &DetMetrics, p: DcfParams) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "eer\t{}", m.eer);
    let _ = writeln!(out, "eer_threshold\t{}", m.eer_threshold);
    let _ = writeln!(out, "min_dcf\t{}", m.min_dcf);
    let _ = writeln!(out, "min_dcf_threshold\t{}", m.dcf_threshold);
    let _ = writeln!(out, "p_tar\t{}", p.p_tar);
    let _ = writeln!(out, "c_miss\t{}", p.c_miss);
    let _ = writeln!(out, "c_fa\t{}", p.c_fa);
    out
}

pub fn evaluate_score_file(scores: &Path, p: DcfParams) -> Result<DetMetrics> {
    let lines = parse_scores(&read_text(scores, "score file")?)?;
    Ok(evaluate(&score_set_from_lines(&lines)?, p)?)
}

// ---------------------------------------------------------------- kws

#[derive(Debug, Clone, PartialEq)]
pub struct KwsReport {
    pub positives: Vec<(String, f64)>,
    pub negatives: Vec<(String, f64)>,
    pub eer: f64,
    pub frr_at_far_0_01: f64,
    pub frr_at_far_0_001: f64,
    pub roc: Vec<crate::scoring::RocPoint>,
}

pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path, "label list")?.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn read_posteriors(bin: &Path, labels: &[String]) -> Result<Vec<(String, PosteriorStream)>> {
    if !bin.exists() {
        return Err(PipelineError::MissingInput { what: "posterior archive", path: bin.to_path_buf() });
    }
    let index = bin.with_extension("tsv");
    let records = read_archive_file(bin, Some(&index))
        .map_err(|source| PipelineError::Feature { context: bin.display().to_string(), source })?;
    records
        .into_iter()
        .map(|(id, m)| {
            let s = PosteriorStream::new(m, labels.to_vec(), crate::kws::STORED_ROW_SUM_TOL)
                .map_err(|source| PipelineError::Kws { context: id.clone(), source })?;
            Ok((id, s))
        })
        .collect()
}

/// Keyword confidences for positive and negative posterior archives.
pub fn kws_evaluate(
    pos: &Path,
    neg: &Path,
    labels: &Path,
    keyword: &[String],
    w_smooth: usize,
    w_max: usize,
    rule: CombineRule,
    workers: usize,
) -> Result<KwsReport> {
    let labels = read_labels(labels)?;
    let mut spec = KeywordSpec::from_names(keyword, &labels)
        .map_err(|source| PipelineError::Kws { context: "keyword".into(), source })?;
    spec.w_smooth = w_smooth;
    spec.w_max = w_max;
    spec.rule = rule;
    let score = |streams: Vec<(String, PosteriorStream)>| -> Result<Vec<(String, f64)>> {
        par_map(&streams, workers, |(id, s)| {
            utterance_confidence(s, &spec)
                .map(|c| (id.clone(), c))
                .map_err(|source| PipelineError::Kws { context: id.clone(), source })
        })
        .into_iter()
        .collect()
    };
    let positives = score(read_posteriors(pos, &labels)?)?;
    let negatives = score(read_posteriors(neg, &labels)?)?;
    let p: Vec<f64> = positives.iter().map(|x| x.1).collect();
    let n: Vec<f64> = negatives.iter().map(|x| x.1).collect();
    let roc = kws_roc(&p, &n).map_err(|source| PipelineError::Kws { context: "roc".into(), source })?;
    let (eer, _) = eer_from_roc(&roc);
    Ok(KwsReport {
        eer,
        frr_at_far_0_01: frr_at_far(&roc, 0.01),
        frr_at_far_0_001: frr_at_far(&roc, 0.001),
        roc,
        positives,
        negatives,
    })
}

// ---------------------------------------------------------------- orchestration

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Segment,
    Synth,
    Augment,
    Featurize,
    Train,
    Extract,
    Score,
    Eval,
    Kws,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Segment,
        Stage::Synth,
        Stage::Augment,
        Stage::Featurize,
        Stage::Train,
        Stage::Extract,
        Stage::Score,
        Stage::Eval,
        Stage::Kws,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Segment => "segment",
            Stage::Synth => "synth",
            Stage::Augment => "augment",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Extract => "extract",
            Stage::Score => "score",
            Stage::Eval => "eval",
            Stage::Kws => "kws",
        }
    }
}

/// Comma-separated stage names, or `all`. Runs are always in pipeline order.
pub fn parse_stages(text: &str) -> Result<Vec<Stage>> {
    let mut out = BTreeSet::new();
    for name in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if name == "all" {
            out.extend(Stage::ALL);
            continue;
        }
        let stage = Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| PipelineError::UnknownStage(name.to_string()))?;
        out.insert(stage);
    }
    Ok(out.into_iter().collect())
}

/// Ordered `stage / key / value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub entries: Vec<(&'static str, String, String)>,
}

impl RunReport {
    fn add(&mut self, stage: Stage, key: impl Into<String>, value: impl ToString) {
        self.entries.push((stage.name(), key.into(), value.to_string()));
    }

    pub fn get(&self, stage: Stage, key: &str) -> Option<&str> {
        self.entries.iter().find(|(s, k, _)| *s == stage.name() && k == key).map(|(_, _, v)| v.as_str())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("stage\tkey\tvalue\n");
        for (s, k, v) in &self.entries {
            let _ = writeln!(out, "{s}\t{k}\t{v}");
        }
        out
    }
}

pub const RUN_REPORT: &str = "run_report.tsv";

/// Work-directory layout.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn libraries(&self) -> PathBuf {
        self.root.join("libraries")
    }
    pub fn synth(&self) -> PathBuf {
        self.root.join("synth")
    }
    pub fn augment(&self) -> PathBuf {
        self.root.join("augment")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }
    pub fn params(&self) -> PathBuf {
        self.model().join("params.bin")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings").join("eval.bin")
    }
    pub fn scores(&self) -> PathBuf {
        self.root.join("scores").join("scores.txt")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn kws(&self) -> PathBuf {
        self.root.join("kws")
    }
}

fn need<'a>(p: &'a Option<PathBuf>, stage: &'static str, key: &'static str) -> Result<&'a Path> {
    p.as_deref().ok_or(PipelineError::MissingKey { stage, key })
}

fn stats_text(stats: &[LibraryStats]) -> String {
    stats
        .iter()
        .map(|s| {
            let counts: Vec<String> = s.counts.iter().map(|(u, c)| format!("{u}:{c}")).collect();
            format!("{} {}", s.speaker_id, counts.join(","))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn skipped_text(skipped: &[SkippedSpeaker]) -> String {
    skipped
        .iter()
        .map(|s| format!("{}(missing {})", s.speaker_id, s.missing_units.join("+")))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Run `stages` in pipeline order and write `run_report.tsv`. An empty
/// stage list only validates the config and writes nothing.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunReport> {
    let mut report = RunReport::default();
    if stages.is_empty() {
        return Ok(report);
    }
    let lay = Layout { root: cfg.paths.work_dir.clone() };
    fs::create_dir_all(&lay.root).map_err(io_err(&lay.root))?;
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    for stage in stages {
        run_stage(cfg, stage, &lay, &mut report)?;
    }
    write_text(&lay.root.join(RUN_REPORT), &report.to_tsv())?;
    Ok(report)
}

fn recipe(cfg: &PipelineConfig, specaug: bool) -> FeatureRecipe {
    FeatureRecipe {
        fbank: FbankConfig::default(),
        cmn_window: cfg.features.cmn_window,
        specaug: if specaug { cfg.features.specaug.clone() } else { None },
        silence: cfg.synthesis.silence_labels.clone(),
    }
}

fn run_stage(cfg: &PipelineConfig, stage: Stage, lay: &Layout, report: &mut RunReport) -> Result<()> {
    let workers = cfg.workers;
    let transcript = &cfg.synthesis.transcript;
    match stage {
        Stage::Segment => {
            let manifest = need(&cfg.paths.manifest, "segment", "manifest")?;
            let alignment = need(&cfg.paths.alignment, "segment", "alignment")?;
            let libs = build_libraries(manifest, alignment, transcript, &cfg.synthesis.silence_labels, workers)?;
            save_libraries(&lay.libraries(), &libs, &unit_set(transcript))?;
            let stats: Vec<LibraryStats> = libs.iter().map(|l| library_stats(l, &unit_set(transcript))).collect();
            report.add(stage, "speakers", libs.len());
            report.add(stage, "segments", libs.iter().map(UnitLibrary::segment_count).sum::<usize>());
            report.add(stage, "unit_counts", stats_text(&stats));
        }
        Stage::Synth => {
            let dir = lay.libraries();
            if !dir.join(crate::segment::LIBRARY_MANIFEST).exists() {
                return Err(PipelineError::MissingInput { what: "unit libraries", path: dir });
            }
            let libs = load_libraries(&dir)?;
            let opts = SynthOptions { padding: cfg.synthesis.padding, workers };
            let corpus: SynthesizedCorpus =
                synthesize_corpus(&libs, transcript, seed::mix(cfg.seed, "synth", 0), opts)?;
            write_corpus(&lay.synth(), &corpus, &libs)?;
            report.add(stage, "utterances", corpus.utterances.len());
            let per: Vec<String> = corpus.per_speaker.iter().map(|(s, n)| format!("{s}:{n}")).collect();
            report.add(stage, "n_per_speaker", per.join(" "));
            report.add(stage, "skipped", skipped_text(&corpus.skipped));
        }
        Stage::Augment => {
            let opts = AugmentOptions {
                noise_copies: cfg.synthesis.noise_copies,
                reverb_copies: cfg.synthesis.reverb_copies,
                snr_list: cfg.synthesis.snr_list.clone(),
                workers,
            };
            let made = augment_corpus(
                &lay.synth(),
                cfg.paths.noise_dir.as_deref(),
                cfg.paths.rir_dir.as_deref(),
                &opts,
                seed::mix(cfg.seed, "augment", 0),
                &lay.augment(),
            )?;
            report.add(stage, "noise_copies", made.iter().filter(|r| r.kind == "noise").count());
            report.add(stage, "reverb_copies", made.iter().filter(|r| r.kind == "reverb").count());
            report.add(stage, "clipped_samples", made.iter().map(|r| r.clipped).sum::<usize>());
        }
        Stage::Featurize => {
            let fseed = seed::mix(cfg.seed, "featurize", 0);
            let mut train = Vec::new();
            for set in &cfg.network.train_sets {
                let (manifest, alignment) = match set.as_str() {
                    "real" => (
                        need(&cfg.paths.manifest, "featurize", "manifest")?.to_path_buf(),
                        need(&cfg.paths.alignment, "featurize", "alignment")?.to_path_buf(),
                    ),
                    "synth" => (lay.synth().join(crate::synth::MANIFEST), lay.synth().join(crate::synth::ALIGNMENT)),
                    "augment" => {
                        (lay.augment().join(crate::synth::MANIFEST), lay.augment().join(crate::synth::ALIGNMENT))
                    }
                    other => return Err(PipelineError::Invalid(format!("unknown training set {other:?}"))),
                };
                let items = featurize_manifest(&manifest, Some(&alignment), &recipe(cfg, true), fseed, workers)?;
                report.add(stage, format!("train_{set}"), items.len());
                train.extend(items);
            }
            write_feature_set(&lay.features(), "train", &train)?;
            report.add(stage, "train_frames", train.iter().map(|i| i.features.frames()).sum::<usize>());
            if let Some(manifest) = &cfg.paths.eval_manifest {
                let eval = featurize_manifest(
                    manifest,
                    cfg.paths.eval_alignment.as_deref(),
                    &recipe(cfg, false),
                    fseed,
                    workers,
                )?;
                write_feature_set(&lay.features(), "eval", &eval)?;
                report.add(stage, "eval", eval.len());
            }
        }
        Stage::Train => {
            let items = read_feature_set(&lay.features(), "train")?;
            let init = cfg
                .network
                .init_params
                .as_deref()
                .map(|p| {
                    load_params(p).map_err(|source| PipelineError::Network { context: p.display().to_string(), source })
                })
                .transpose()?;
            let tc = ToyTrainConfig {
                steps: cfg.network.steps,
                lr: cfg.network.lr,
                batch: cfg.network.batch,
                train_frames: cfg.network.train_frames,
                aam: cfg.network.aam,
                workers,
            };
            let (params, tr) = train_toy(&items, &tc, init.as_ref(), seed::mix(cfg.seed, "train", 0))?;
            fs::create_dir_all(lay.model()).map_err(io_err(&lay.model()))?;
            save_params(&lay.params(), &params)
                .map_err(|source| PipelineError::Network { context: "save".into(), source })?;
            write_text(&lay.model().join("classes.tsv"), &(tr.classes.join("\n") + "\n"))?;
            let mut log = String::from("step\tloss\n");
            for (i, l) in tr.losses.iter().enumerate() {
                let _ = writeln!(log, "{i}\t{l}");
            }
            write_text(&lay.model().join("train_log.tsv"), &log)?;
            report.add(stage, "classes", tr.classes.len());
            report.add(stage, "utterances", tr.used);
            report.add(stage, "dropped_short", tr.dropped);
            report.add(stage, "first_loss", tr.losses.first().copied().unwrap_or(f64::NAN));
            report.add(stage, "last_loss", tr.losses.last().copied().unwrap_or(f64::NAN));
        }
        Stage::Extract => {
            let path = lay.params();
            if !path.exists() {
                return Err(PipelineError::MissingInput { what: "model parameters", path });
            }
            let params =
                load_params(&path).map_err(|source| PipelineError::Network { context: "load".into(), source })?;
            let items = read_feature_set(&lay.features(), "eval")?;
            let embs = extract_embeddings(&params, &items, workers)?;
            let bin = lay.embeddings();
            write_embeddings(bin.parent().unwrap(), "eval", &embs)?;
            report.add(stage, "embeddings", embs.len());
        }
        Stage::Score => {
            let trials = need(&cfg.paths.trials, "score", "trials")?;
            let embs = read_embeddings(&lay.embeddings())?;
            let (text, n) = score_trial_file(trials, &embs)?;
            write_text(&lay.scores(), &text)?;
            report.add(stage, "trials", n);
        }
        Stage::Eval => {
            let m = evaluate_score_file(&lay.scores(), cfg.metrics)?;
            write_text(&lay.eval().join("metrics.tsv"), &format_metrics(&m, cfg.metrics))?;
            write_text(&lay.eval().join("roc.tsv"), &format_roc(&m.roc))?;
            write_text(&lay.eval().join("roc.svg"), &roc_svg(&[("eval", &m.roc)], true))?;
            report.add(stage, "eer", m.eer);
            report.add(stage, "min_dcf", m.min_dcf);
        }
        Stage::Kws => {
            let k = kws_evaluate(
                need(&cfg.paths.kws_pos, "kws", "kws_pos")?,
                need(&cfg.paths.kws_neg, "kws", "kws_neg")?,
                need(&cfg.paths.kws_labels, "kws", "kws_labels")?,
                &cfg.kws.keyword,
                cfg.kws.w_smooth,
                cfg.kws.w_max,
                cfg.kws.combine,
                workers,
            )?;
            write_kws_outputs(&lay.kws(), &k)?;
            report.add(stage, "eer", k.eer);
            report.add(stage, "frr_at_far_0.01", k.frr_at_far_0_01);
            report.add(stage, "frr_at_far_0.001", k.frr_at_far_0_001);
        }
    }
    Ok(())
}

/// `confidences.tsv`, `roc.tsv` and `metrics.tsv`.
pub fn write_kws_outputs(dir: &Path, k: &KwsReport) -> Result<()> {
    let mut conf = String::from("utterance\tclass\tconfidence\n");
    for (id, c) in &k.positives {
        let _ = writeln!(conf, "{id}\tpositive\t{c}");
    }
    for (id, c) in &k.negatives {
        let _ = writeln!(conf, "{id}\tnegative\t{c}");
    }
    write_text(&dir.join("confidences.tsv"), &conf)?;
    write_text(&dir.join("roc.tsv"), &format_roc(&k.roc))?;
    let metrics =
        format!("eer\t{}\nfrr_at_far_0.01\t{}\nfrr_at_far_0.001\t{}\n", k.eer, k.frr_at_far_0_01, k.frr_at_far_0_001);
    write_text(&dir.join("metrics.tsv"), &metrics)
}
