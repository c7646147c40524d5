//! The `metasr` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use metasr_core::eval::IdentificationConfig;
use metasr_core::objective::Mode;
use metasr_core::synth::SyntheticSpec;
use metasr_core::Encoder;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::evaluate::{self, Duration, ReportRow};
use crate::features::{cache_path, encode_cache, FeatureStore};
use crate::manifest::{scan_corpus, Manifest};
use crate::run_manifest::{sidecar_path, RunManifest};
use crate::train::{fit, FitOptions};

#[derive(Debug, Parser)]
#[command(name = "metasr", version, about = "Speaker embeddings trained with episodic meta-learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a speaker-per-directory tree of WAV files into a manifest.
    Prepare(PrepareArgs),
    /// Split a manifest into two speaker-disjoint manifests.
    Split(SplitArgs),
    /// Generate a synthetic multi-speaker corpus.
    Synth(SynthArgs),
    /// Compute and cache log-mel features for a manifest.
    ExtractFeatures(ExtractArgs),
    /// Train an encoder.
    #[command(after_help = train_defaults())]
    Train(TrainArgs),
    /// Generate verification trials.
    Trials(TrialsArgs),
    /// Equal error rate and minDCF on verification trials.
    EvalVerification(VerificationArgs),
    /// N-way identification accuracy on unseen speakers.
    EvalIdentification(IdentificationArgs),
    /// Write one embedding per utterance.
    DumpEmbeddings(DumpArgs),
}

fn train_defaults() -> String {
    let c = Config::default();
    format!(
        "Config defaults (override in --config):\n  \
         episode: n_way={} k_shot={} m_query={} support_seconds={} query_seconds={}..{}\n  \
         loss: lambda={}\n  \
         train: optimizer=sgd_nesterov momentum={} weight_decay={} lr_init={} lr_decay_factor={} \
         patience={} max_plateaus={} max_steps={} eval_every={} checkpoint_every={} mode={}",
        c.episode.n_way,
        c.episode.k_shot,
        c.episode.m_query,
        c.episode.support_seconds,
        c.episode.query_seconds_min,
        c.episode.query_seconds_max,
        c.loss.lambda,
        c.train.momentum,
        c.train.weight_decay,
        c.train.lr_init,
        c.train.lr_decay_factor,
        c.train.patience,
        c.train.max_plateaus,
        c.train.max_steps,
        c.train.eval_every,
        c.train.checkpoint_every,
        c.train.mode,
    )
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub audio_dir: PathBuf,
    #[arg(long)]
    pub manifest_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Defaults to `<out-dir>/manifest.tsv`.
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub speakers: usize,
    #[arg(long, default_value_t = 10)]
    pub utterances: usize,
    #[arg(long, default_value_t = 3.0)]
    pub min_seconds: f64,
    #[arg(long, default_value_t = 8.0)]
    pub max_seconds: f64,
    #[arg(long, default_value_t = 3)]
    pub formants: usize,
    #[arg(long, default_value_t = 1.2)]
    pub noise: f64,
    /// Largest per-utterance channel coefficient.
    #[arg(long, default_value_t = 0.25)]
    pub tilt: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_manifest: PathBuf,
    #[arg(long)]
    pub val_manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// vanilla, meta or meta_global; overrides the config.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature cache directory, filled on first use.
    #[arg(long)]
    pub features_dir: Option<PathBuf>,
    /// Continue from a checkpoint written with the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct TrialsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target trials per speaker
    #[arg(long, default_value_t = 100)]
    pub positives: usize,
    /// Non-target trials per speaker
    #[arg(long, default_value_t = 100)]
    pub negatives: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalCommon {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Read features from this cache instead of decoding audio.
    #[arg(long)]
    pub features_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerificationArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Trial list; generated from the manifest when absent.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    #[arg(long, num_args = 1.., default_values = ["1", "2", "5"])]
    pub test_seconds: Vec<Duration>,
    /// Enrollment length; full utterances by default.
    #[arg(long, default_value = "full")]
    pub enroll_seconds: Duration,
}

#[derive(Debug, Args)]
pub struct IdentificationArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    #[arg(long, num_args = 1.., default_values_t = [5usize])]
    pub n_way: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 5.0)]
    pub enroll_seconds: f64,
    #[arg(long, num_args = 1.., default_values_t = [1.0f64])]
    pub query_seconds: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub test_per_speaker: usize,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub features_dir: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare(a) => prepare(a),
        Command::Split(a) => split(a),
        Command::Synth(a) => synth(a),
        Command::ExtractFeatures(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Trials(a) => trials(a),
        Command::EvalVerification(a) => eval_verification(a),
        Command::EvalIdentification(a) => eval_identification(a),
        Command::DumpEmbeddings(a) => dump(a),
    }
}

fn record(sub: &str, config: serde_json::Value, seed: Option<u64>, artifact: &Path) -> Result<()> {
    RunManifest::new(sub, config, seed, vec![artifact.to_path_buf()]).write(&sidecar_path(artifact))
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let scan = scan_corpus(&a.audio_dir)?;
    if !scan.skipped.is_empty() {
        eprintln!("warning: skipped {} unreadable files", scan.skipped.len());
    }
    scan.manifest.write(&a.manifest_out)?;
    eprintln!("{} utterances from {} speakers", scan.manifest.len(), scan.manifest.num_speakers());
    record("prepare", json!({ "audio_dir": a.audio_dir, "skipped": scan.skipped.len() }), None, &a.manifest_out)
}

fn split(a: SplitArgs) -> Result<()> {
    let m = Manifest::read(&a.manifest)?;
    let (train, test) = m.split_speakers(a.train_fraction, a.seed)?;
    train.write(&a.train_out)?;
    test.write(&a.test_out)?;
    let cfg = json!({ "manifest": a.manifest, "train_fraction": a.train_fraction });
    RunManifest::new("split", cfg, Some(a.seed), vec![a.train_out.clone(), a.test_out])
        .write(&sidecar_path(&a.train_out))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = SyntheticSpec::with_random_formants(
        a.speakers,
        a.utterances,
        (a.min_seconds, a.max_seconds),
        a.formants,
        a.noise,
        a.seed,
    )?;
    spec.channel_tilt = a.tilt;
    let m = crate::corpus::write_corpus(&spec, &a.out_dir)?;
    let out = a.manifest_out.unwrap_or_else(|| a.out_dir.join("manifest.tsv"));
    m.write(&out)?;
    let cfg = json!({
        "speakers": a.speakers, "utterances": a.utterances, "min_seconds": a.min_seconds,
        "max_seconds": a.max_seconds, "noise": a.noise, "tilt": a.tilt, "formants": spec.formants,
    });
    record("synth", cfg, Some(a.seed), &out)
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::read)
}

fn extract(a: ExtractArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let m = Manifest::read(&a.manifest)?;
    let store = FeatureStore::from_manifest(&m, &cfg.features, None)?;
    fs::create_dir_all(&a.out_dir).map_err(Error::io(&a.out_dir))?;
    for (s, u) in store.iter_keys() {
        let p = cache_path(&a.out_dir, store.utt_id(s, u));
        crate::write_atomic(&p, &encode_cache(store.get(s, u), &cfg.features))?;
    }
    let cfg_json = serde_json::to_value(&cfg.features).expect("serializes");
    RunManifest::new("extract-features", cfg_json, None, vec![a.out_dir.clone()])
        .write(&a.out_dir.join("run_manifest.json"))
}

fn load_store(m: &Manifest, cfg: &Config, features_dir: Option<&Path>, cache_only: bool) -> Result<FeatureStore> {
    match features_dir {
        Some(d) if cache_only => FeatureStore::from_cache(m, &cfg.features, d),
        _ => FeatureStore::from_manifest(m, &cfg.features, features_dir),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = a.mode {
        cfg.train.mode = m;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let train_m = Manifest::read(&a.train_manifest)?;
    let val_m = Manifest::read(&a.val_manifest)?;
    let train = load_store(&train_m, &cfg, a.features_dir.as_deref(), false)?;
    let val = load_store(&val_m, &cfg, a.features_dir.as_deref(), false)?;
    let opts = FitOptions { out_dir: a.out_dir.clone(), resume: a.resume, verbose: !a.quiet };
    let summary = fit(&cfg, &train, &val, &opts)?;
    eprintln!(
        "stopped after {} steps ({:?}); best validation accuracy {}",
        summary.steps,
        summary.stop,
        summary.best_val_acc.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    let mut artifacts = vec![summary.final_checkpoint, a.out_dir.join(crate::train::METRICS_FILE)];
    artifacts.extend(summary.best_checkpoint);
    let config = serde_json::to_value(&cfg).expect("config serializes");
    RunManifest::new("train", config, Some(cfg.train.seed), artifacts).write(&a.out_dir.join("run_manifest.json"))
}

fn trials(a: TrialsArgs) -> Result<()> {
    let m = Manifest::read(&a.manifest)?;
    let list = evaluate::make_trials(&m, a.positives, a.negatives, a.seed)?;
    if !list.skipped.is_empty() {
        eprintln!("warning: {} speakers with fewer than two utterances were skipped", list.skipped.len());
    }
    crate::write_atomic(&a.out, evaluate::format_trials(&list.trials).as_bytes())?;
    record("trials", json!({ "positives": a.positives, "negatives": a.negatives }), Some(a.seed), &a.out)
}

fn load_model(path: &Path) -> Result<(Config, Encoder)> {
    let ck = Checkpoint::load(path)?;
    Ok((ck.header.config, ck.state.encoder))
}

fn finish_report(sub: &str, common: &EvalCommon, rows: &[ReportRow], extra: serde_json::Value) -> Result<()> {
    print!("{}", evaluate::report_table(rows));
    evaluate::write_report(&common.report_out, rows)?;
    let cfg = json!({ "checkpoint": common.checkpoint, "manifest": common.manifest, "options": extra });
    record(sub, cfg, Some(common.seed), &common.report_out)
}

fn eval_verification(a: VerificationArgs) -> Result<()> {
    let c = &a.common;
    let (cfg, encoder) = load_model(&c.checkpoint)?;
    let m = Manifest::read(&c.manifest)?;
    let store = load_store(&m, &cfg, c.features_dir.as_deref(), true)?;
    let trials = match &a.trials {
        Some(p) => evaluate::parse_trials(&fs::read_to_string(p).map_err(Error::io(p))?)?,
        None => evaluate::make_trials(&m, 100, 100, c.seed)?.trials,
    };
    let mut rows = Vec::new();
    for &d in &a.test_seconds {
        let r = evaluate::verify(&encoder, &store, &cfg.features, &trials, a.enroll_seconds, d, c.seed)?;
        rows.extend(evaluate::verification_rows(&d.label(), &r, c.seed));
    }
    let labels: Vec<String> = a.test_seconds.iter().map(Duration::label).collect();
    finish_report("eval-verification", c, &rows, json!({ "test_seconds": labels, "enroll": a.enroll_seconds.label() }))
}

fn eval_identification(a: IdentificationArgs) -> Result<()> {
    let c = &a.common;
    let (cfg, encoder) = load_model(&c.checkpoint)?;
    let m = Manifest::read(&c.manifest)?;
    let store = load_store(&m, &cfg, c.features_dir.as_deref(), true)?;
    let min = encoder.config().min_frames();
    let frames = |s: f64| cfg.features.frames_for_seconds(s).max(min);
    let mut rows = Vec::new();
    for &q in &a.query_seconds {
        for &n in &a.n_way {
            let icfg = IdentificationConfig {
                n_way: n,
                episodes: a.episodes,
                enroll_frames: frames(a.enroll_seconds),
                query_frames: frames(q),
                test_per_speaker: a.test_per_speaker,
            };
            let r = evaluate::identify(&encoder, &store, &icfg, c.seed)?;
            rows.extend(evaluate::identification_rows(&format!("{q}s"), &r, c.seed));
        }
    }
    let extra = json!({ "n_way": a.n_way, "episodes": a.episodes, "enroll_seconds": a.enroll_seconds,
        "query_seconds": a.query_seconds, "test_per_speaker": a.test_per_speaker });
    finish_report("eval-identification", c, &rows, extra)
}

fn dump(a: DumpArgs) -> Result<()> {
    let (cfg, encoder) = load_model(&a.checkpoint)?;
    let m = Manifest::read(&a.manifest)?;
    let store = load_store(&m, &cfg, a.features_dir.as_deref(), true)?;
    let text = crate::embeddings::dump_embeddings(&m, &store, &encoder)?;
    crate::write_atomic(&a.out, text.as_bytes())?;
    record("dump-embeddings", json!({ "checkpoint": a.checkpoint, "manifest": a.manifest }), None, &a.out)
}
