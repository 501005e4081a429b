//! `unitcat`: command-line front end for every pipeline stage.
//!
//! Exit codes: 0 ok, 1 usage, 2 invalid configuration or inputs, 3 runtime
//! failure.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use unitcat::config::{validate_config, PipelineConfig};
use unitcat::corpus::alignment::default_silence_labels;
use unitcat::features::SpecAugmentParams;
use unitcat::fixture::{words, write_fixture, FixtureSpec};
use unitcat::kws::{CombineRule, KeywordSpec};
use unitcat::pipeline::{
    augment_corpus, build_libraries, extract_embeddings, featurize_manifest, format_metrics, kws_evaluate,
    parse_stages, read_embeddings, read_feature_set, run_pipeline, score_trial_file, train_toy, write_embeddings,
    write_feature_set, write_kws_outputs, AugmentOptions, FeatureRecipe, PipelineError, ToyTrainConfig,
};
use unitcat::scoring::{evaluate, format_roc, parse_roc, parse_scores, roc_svg, score_set_from_lines, DcfParams};
use unitcat::segment::{library_stats, load_libraries, save_libraries, unit_set};
use unitcat::synth::{synthesize_corpus, write_corpus, SynthOptions};
use unitcat::tdnn::io::{load_params, save_params};
use unitcat::tdnn::AamParams;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Pipeline(e) => e.exit_code() as u8,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "unitcat", version, about = "Unit-selection synthesis and speaker-verification tooling")]
struct Cli {
    /// Worker threads; 0 uses every core. Results never depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages from a config file.
    Run(RunArgs),
    /// Check a config file and exit.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Cut aligned utterances into per-speaker unit libraries.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ali: PathBuf,
        /// Target transcript, whitespace separated.
        #[arg(long)]
        units: String,
        /// Comma-separated silence labels.
        #[arg(long)]
        silence: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render fixed-transcript utterances from unit libraries.
    Synth(SynthArgs),
    /// Add noisy and reverberant copies of a synthesized corpus.
    Augment {
        /// Directory holding `manifest.tsv` and `alignment.ctm`.
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        aug: AugmentArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute fbank, VAD, mean normalization and optional SpecAugment.
    Featurize(FeaturizeArgs),
    /// Train the toy x-vector network with AAM softmax.
    TrainToy(TrainArgs),
    /// Forward features through a trained network.
    Extract {
        #[arg(long)]
        params: PathBuf,
        /// Feature archive (`.bin`).
        #[arg(long)]
        features: PathBuf,
        /// Embedding archive to write (`.bin`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine-score a trial list.
    Score {
        #[arg(long)]
        trials: PathBuf,
        /// Embedding archive (`.bin`).
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print EER and minDCF of a score file and write its ROC.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// ROC TSV; defaults to `roc.tsv` beside the scores.
        #[arg(long)]
        roc: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        p_tar: f64,
        #[arg(long, default_value_t = 1.0)]
        c_miss: f64,
        #[arg(long, default_value_t = 1.0)]
        c_fa: f64,
    },
    /// Draw one or more ROC TSV files as an SVG.
    PlotRoc {
        /// `path` or `label=path`; repeatable.
        #[arg(long, required = true)]
        roc: Vec<String>,
        /// Linear instead of logarithmic FAR axis.
        #[arg(long)]
        linear: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keyword confidences and ROC from posterior archives.
    KwsEval {
        #[arg(long)]
        pos: PathBuf,
        #[arg(long)]
        neg: PathBuf,
        #[arg(long)]
        keyword: String,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = KeywordSpec::DEFAULT_SMOOTH)]
        w_smooth: usize,
        #[arg(long, default_value_t = KeywordSpec::DEFAULT_MAX)]
        w_max: usize,
        /// `all` or `exclude-first`.
        #[arg(long, default_value = "all")]
        combine: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic tone corpus with a ready-to-run config.
    MakeFixture {
        #[arg(long, default_value_t = 3)]
        speakers: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        train_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated stage names, or `all`. Empty validates only.
    #[arg(long, default_value = "all")]
    stages: String,
    /// Overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `[paths] work_dir`.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    #[arg(long, default_value = "0,5,10,15")]
    snr_list: String,
    #[arg(long)]
    rir_dir: Option<PathBuf>,
    /// Noisy copies per utterance; defaults to 1 when `--noise-dir` is set.
    #[arg(long)]
    noise_copies: Option<usize>,
    /// Reverberant copies per utterance; defaults to 1 when `--rir-dir` is set.
    #[arg(long)]
    reverb_copies: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    libdir: PathBuf,
    #[arg(long)]
    transcript: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero samples between units.
    #[arg(long, default_value_t = 0)]
    padding: usize,
    #[command(flatten)]
    aug: AugmentArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Alignment for VAD; without it every frame is kept.
    #[arg(long)]
    ali: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    cmn_window: usize,
    /// Apply SpecAugment with `freq_width,freq_masks,time_width,time_masks`.
    #[arg(long, num_args = 0..=1, default_missing_value = "8,1,20,1")]
    specaug: Option<String>,
    /// Comma-separated silence labels.
    #[arg(long)]
    silence: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature archive to write (`.bin`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature archive (`.bin`) with its `_utt2spk.tsv`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Start from these parameters (transferred if the class count differs).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 40)]
    train_frames: usize,
    #[arg(long, default_value_t = 0.2)]
    margin: f64,
    #[arg(long, default_value_t = 32.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Usage(format!("bad {what} entry {s:?}"))))
        .collect()
}

fn label_set(text: Option<&str>) -> BTreeSet<String> {
    match text {
        Some(t) => t.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect(),
        None => default_silence_labels(),
    }
}

/// Directory and record-set name of an archive path such as `feats/train.bin`.
fn archive_parts(path: &Path) -> Result<(PathBuf, String)> {
    let name = path
        .file_stem()
        .filter(|_| path.extension().is_some_and(|x| x == "bin"))
        .ok_or_else(|| CliError::Usage(format!("{}: archive paths end in .bin", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, name.to_string_lossy().into_owned()))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }.into()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(path, text).map_err(io(path))
}

fn read_file(path: &Path, what: &'static str) -> Result<String> {
    if !path.exists() {
        return Err(PipelineError::MissingInput { what, path: path.to_path_buf() }.into());
    }
    std::fs::read_to_string(path).map_err(io(path))
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = read_file(path, "config")?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(validate_config(&text, &base).map_err(PipelineError::from)?)
}

fn augment_options(a: &AugmentArgs, workers: usize) -> Result<AugmentOptions> {
    Ok(AugmentOptions {
        noise_copies: a.noise_copies.unwrap_or(usize::from(a.noise_dir.is_some())),
        reverb_copies: a.reverb_copies.unwrap_or(usize::from(a.rir_dir.is_some())),
        snr_list: list(&a.snr_list, "SNR")?,
        workers,
    })
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::Run(a) => {
            let mut cfg = load_config(&a.config)?;
            cfg.workers = workers;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(d) = a.work_dir {
                cfg.paths.work_dir = d;
            }
            let stages = if a.stages.trim().is_empty() { Vec::new() } else { parse_stages(&a.stages)? };
            let report = run_pipeline(&cfg, &stages)?;
            print!("{}", report.to_tsv());
        }
        Command::Validate { config } => {
            load_config(&config)?;
            println!("ok");
        }
        Command::Segment { manifest, ali, units, silence, out } => {
            let transcript = words(&units);
            let libs = build_libraries(&manifest, &ali, &transcript, &label_set(silence.as_deref()), workers)?;
            let targets = unit_set(&transcript);
            save_libraries(&out, &libs, &targets).map_err(PipelineError::from)?;
            for lib in &libs {
                let st = library_stats(lib, &targets);
                let counts: Vec<String> = st.counts.iter().map(|(u, c)| format!("{u}:{c}")).collect();
                println!("{}\t{}", st.speaker_id, counts.join(","));
            }
        }
        Command::Synth(a) => {
            let libs = load_libraries(&a.libdir).map_err(PipelineError::from)?;
            let transcript = words(&a.transcript);
            let opts = SynthOptions { padding: a.padding, workers };
            let corpus = synthesize_corpus(&libs, &transcript, a.seed, opts).map_err(PipelineError::from)?;
            write_corpus(&a.out, &corpus, &libs).map_err(PipelineError::from)?;
            for (spk, n) in &corpus.per_speaker {
                println!("{spk}\t{n}");
            }
            for s in &corpus.skipped {
                println!("{}\tskipped (missing {})", s.speaker_id, s.missing_units.join(","));
            }
            let opts = augment_options(&a.aug, workers)?;
            if opts.noise_copies + opts.reverb_copies > 0 {
                let made = augment_corpus(
                    &a.out,
                    a.aug.noise_dir.as_deref(),
                    a.aug.rir_dir.as_deref(),
                    &opts,
                    unitcat::seed::mix(a.seed, "augment", 0),
                    &a.out.join("augment"),
                )?;
                println!("augmented\t{}", made.len());
            }
        }
        Command::Augment { corpus, aug, seed, out } => {
            let opts = augment_options(&aug, workers)?;
            let made = augment_corpus(&corpus, aug.noise_dir.as_deref(), aug.rir_dir.as_deref(), &opts, seed, &out)?;
            println!("augmented\t{}", made.len());
        }
        Command::Featurize(a) => {
            let specaug = match &a.specaug {
                None => None,
                Some(spec) => {
                    let v: Vec<usize> = list(spec, "SpecAugment")?;
                    let [fw, fm, tw, tm] = v[..] else {
                        return Err(CliError::Usage("--specaug takes four numbers".into()));
                    };
                    Some(SpecAugmentParams {
                        max_freq_mask_width: fw,
                        num_freq_masks: fm,
                        max_time_mask_width: tw,
                        num_time_masks: tm,
                        ..SpecAugmentParams::default()
                    })
                }
            };
            let recipe = FeatureRecipe {
                cmn_window: a.cmn_window,
                specaug,
                silence: label_set(a.silence.as_deref()),
                ..FeatureRecipe::default()
            };
            let items = featurize_manifest(&a.manifest, a.ali.as_deref(), &recipe, a.seed, workers)?;
            let (dir, name) = archive_parts(&a.out)?;
            write_feature_set(&dir, &name, &items)?;
            println!("utterances\t{}", items.len());
            println!("frames\t{}", items.iter().map(|i| i.features.frames()).sum::<usize>());
        }
        Command::TrainToy(a) => {
            let (dir, name) = archive_parts(&a.features)?;
            let items = read_feature_set(&dir, &name)?;
            let init = a
                .init
                .as_deref()
                .map(|p| {
                    load_params(p).map_err(|source| PipelineError::Network { context: p.display().to_string(), source })
                })
                .transpose()?;
            let cfg = ToyTrainConfig {
                steps: a.steps,
                lr: a.lr,
                batch: a.batch,
                train_frames: a.train_frames,
                aam: AamParams { margin: a.margin, scale: a.scale },
                workers,
            };
            let (params, report) = train_toy(&items, &cfg, init.as_ref(), a.seed)?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io(dir))?;
            }
            save_params(&a.out, &params).map_err(|source| PipelineError::Network { context: "save".into(), source })?;
            println!("classes\t{}", report.classes.join(","));
            println!("utterances\t{}", report.used);
            println!("dropped_short\t{}", report.dropped);
            if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
                println!("loss\t{first:.4} -> {last:.4}");
            }
        }
        Command::Extract { params, features, out } => {
            if !params.exists() {
                return Err(PipelineError::MissingInput { what: "model parameters", path: params }.into());
            }
            let p = load_params(&params)
                .map_err(|source| PipelineError::Network { context: params.display().to_string(), source })?;
            let (dir, name) = archive_parts(&features)?;
            let items = read_feature_set(&dir, &name)?;
            let embs = extract_embeddings(&p, &items, workers)?;
            let (out_dir, out_name) = archive_parts(&out)?;
            write_embeddings(&out_dir, &out_name, &embs)?;
            println!("embeddings\t{}", embs.len());
        }
        Command::Score { trials, embeddings, out } => {
            let embs = read_embeddings(&embeddings)?;
            let (text, n) = score_trial_file(&trials, &embs)?;
            write_file(&out, &text)?;
            println!("trials\t{n}");
        }
        Command::Eval { scores, roc, p_tar, c_miss, c_fa } => {
            let p = DcfParams { p_tar, c_miss, c_fa };
            let lines = parse_scores(&read_file(&scores, "score file")?).map_err(PipelineError::from)?;
            let m = evaluate(&score_set_from_lines(&lines).map_err(PipelineError::from)?, p)
                .map_err(PipelineError::from)?;
            let roc_path = roc.unwrap_or_else(|| scores.with_file_name("roc.tsv"));
            write_file(&roc_path, &format_roc(&m.roc))?;
            println!("EER\t{:.4}%", 100.0 * m.eer);
            println!("minDCF\t{:.4}", m.min_dcf);
            print!("{}", format_metrics(&m, p));
        }
        Command::PlotRoc { roc, linear, out } => {
            let mut curves = Vec::new();
            for spec in &roc {
                let (label, path) = match spec.split_once('=') {
                    Some((l, p)) => (l.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        (p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), p)
                    }
                };
                let points = parse_roc(&read_file(&path, "ROC file")?).map_err(PipelineError::from)?;
                curves.push((label, points));
            }
            let refs: Vec<(&str, &[_])> = curves.iter().map(|(l, p)| (l.as_str(), p.as_slice())).collect();
            write_file(&out, &roc_svg(&refs, !linear))?;
        }
        Command::KwsEval { pos, neg, keyword, labels, w_smooth, w_max, combine, out } => {
            let rule = match combine.as_str() {
                "all" => CombineRule::AllUnits,
                "exclude-first" => CombineRule::ExcludeFirst,
                other => {
                    return Err(CliError::Usage(format!("--combine must be `all` or `exclude-first`, not {other:?}")))
                }
            };
            let k = kws_evaluate(&pos, &neg, &labels, &words(&keyword), w_smooth, w_max, rule, workers)?;
            // Confidences and metrics go beside the ROC file.
            let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
            write_kws_outputs(&dir, &k)?;
            write_file(&out, &format_roc(&k.roc))?;
            println!("EER\t{:.4}%", 100.0 * k.eer);
            println!("FRR@FAR=1%\t{:.4}", k.frr_at_far_0_01);
            println!("FRR@FAR=0.1%\t{:.4}", k.frr_at_far_0_001);
        }
        Command::MakeFixture { speakers, seed, train_steps, out } => {
            let mut spec = FixtureSpec::new(speakers, seed);
            spec.train_steps = train_steps;
            let fx = write_fixture(&out, &spec)?;
            println!("{}", fx.config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("unitcat: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
