//! Verification and identification drivers over a trained encoder, and
//! the report they produce.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use metasr_core::episode::segment;
use metasr_core::eval::{evaluate_identification, generate_trials, IdentificationConfig, IdentificationReport};
use metasr_core::metrics::{verification_report, DcfParams, VerificationReport};
use metasr_core::objective::cosine;
use metasr_core::rng::substream;
use metasr_core::{Encoder, FeatureConfig};

use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::manifest::Manifest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll_utt: String,
    pub test_utt: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
    /// Speakers that received no trials.
    pub skipped: Vec<String>,
}

/// Trials over the manifest's speakers (lexicographic) and utterances
/// (manifest order).
pub fn make_trials(m: &Manifest, positives: usize, negatives: usize, seed: u64) -> Result<TrialList> {
    let speakers: Vec<&str> = m.speakers().collect();
    let ids: Vec<Vec<&str>> = speakers.iter().map(|s| m.utterances_of(s).map(|r| r.utt_id.as_str()).collect()).collect();
    let counts: Vec<usize> = ids.iter().map(Vec::len).collect();
    let set = generate_trials(&counts, positives, negatives, &mut substream(seed, "trials"))?;
    let trials = set
        .trials
        .iter()
        .map(|t| Trial {
            target: t.target,
            enroll_utt: ids[t.enroll.0][t.enroll.1].to_string(),
            test_utt: ids[t.test.0][t.test.1].to_string(),
        })
        .collect();
    let skipped = set.skipped.iter().map(|&s| speakers[s].to_string()).collect();
    Ok(TrialList { trials, skipped })
}

/// `label enroll_utt test_utt` per line, label 1 for target trials.
pub fn format_trials(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        let _ = writeln!(out, "{} {} {}", u8::from(t.target), t.enroll_utt, t.test_utt);
    }
    out
}

pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let target = match (f.len(), f[0]) {
            (3, "1") => true,
            (3, "0") => false,
            _ => return Err(Error::Data(format!("trial line {}: expected 'label enroll test'", n + 1))),
        };
        out.push(Trial { target, enroll_utt: f[1].into(), test_utt: f[2].into() });
    }
    Ok(out)
}

/// Test duration in seconds, or the full utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Duration {
    Seconds(f64),
    Full,
}

impl Duration {
    pub fn label(&self) -> String {
        match self {
            Duration::Seconds(s) => format!("{s}s"),
            Duration::Full => "full".into(),
        }
    }
}

impl std::str::FromStr for Duration {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "full" {
            return Ok(Duration::Full);
        }
        match s.trim_end_matches('s').parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Duration::Seconds(v)),
            _ => Err(format!("expected a positive number of seconds or 'full', got '{s}'")),
        }
    }
}

/// Embeds each referenced utterance once, cropping with a seeded stream in
/// order of first use.
struct Embedder<'a> {
    encoder: &'a Encoder,
    store: &'a FeatureStore,
    features: &'a FeatureConfig,
    cache: HashMap<String, Vec<f64>>,
    rng: metasr_core::rng::Rng,
    duration: Duration,
}

impl Embedder<'_> {
    fn get(&mut self, utt: &str) -> Result<&[f64]> {
        if !self.cache.contains_key(utt) {
            let (s, u) = self
                .store
                .locate(utt)
                .ok_or_else(|| Error::Data(format!("no features for utterance '{utt}'")))?;
            let full = self.store.get(s, u);
            let e = match self.duration {
                Duration::Full => self.encoder.embed(full)?,
                Duration::Seconds(sec) => {
                    let frames = self.features.frames_for_seconds(sec).max(self.encoder.config().min_frames());
                    self.encoder.embed(&segment(full, frames, &mut self.rng)?)?
                }
            };
            self.cache.insert(utt.to_string(), e.to_f64());
        }
        Ok(&self.cache[utt])
    }
}

pub fn verify(
    encoder: &Encoder,
    store: &FeatureStore,
    features: &FeatureConfig,
    trials: &[Trial],
    enroll: Duration,
    test: Duration,
    seed: u64,
) -> Result<VerificationReport> {
    let new = |duration, name: &str| Embedder {
        encoder,
        store,
        features,
        cache: HashMap::new(),
        rng: substream(seed, name),
        duration,
    };
    let mut enroller = new(enroll, "enroll-crop");
    let mut tester = new(test, &format!("test-crop-{}", test.label()));
    let mut scores = Vec::with_capacity(trials.len());
    let mut labels = Vec::with_capacity(trials.len());
    for t in trials {
        let e = enroller.get(&t.enroll_utt)?.to_vec();
        scores.push(cosine(&e, tester.get(&t.test_utt)?));
        labels.push(t.target);
    }
    Ok(verification_report(&scores, &labels, DcfParams::default())?)
}

pub fn identify(
    encoder: &Encoder,
    store: &FeatureStore,
    cfg: &IdentificationConfig,
    seed: u64,
) -> Result<IdentificationReport> {
    let mut rng = substream(seed, &format!("identification-{}way", cfg.n_way));
    Ok(evaluate_identification(store, |f| Ok(encoder.embed(f)?.to_f64()), cfg, &mut rng)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    /// `None` renders as `n/a`.
    pub value: Option<f64>,
    pub n: usize,
    pub seed: u64,
}

pub fn verification_rows(label: &str, r: &VerificationReport, seed: u64) -> Vec<ReportRow> {
    let n = r.n_target + r.n_nontarget;
    vec![
        ReportRow { metric: format!("eer@{label}"), value: Some(r.eer), n, seed },
        ReportRow { metric: format!("eer_threshold@{label}"), value: Some(r.eer_threshold), n, seed },
        ReportRow { metric: format!("min_dcf@{label}"), value: Some(r.min_dcf), n, seed },
    ]
}

pub fn identification_rows(label: &str, r: &IdentificationReport, seed: u64) -> Vec<ReportRow> {
    vec![
        ReportRow { metric: format!("accuracy@{}way_{label}", r.n_way), value: Some(r.mean_accuracy), n: r.episodes, seed },
        ReportRow { metric: format!("ci95@{}way_{label}", r.n_way), value: r.ci95, n: r.episodes, seed },
    ]
}

fn value_text(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("metric,value,n,seed\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.metric, value_text(r.value), r.n, r.seed);
    }
    out
}

pub fn report_table(rows: &[ReportRow]) -> String {
    let w = rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<w$}  {:>10}  {:>8}\n", "metric", "value", "n");
    for r in rows {
        let _ = writeln!(out, "{:<w$}  {:>10}  {:>8}", r.metric, value_text(r.value), r.n);
    }
    out
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    crate::write_atomic(path, report_csv(rows).as_bytes())
}
