//! Verification trial generation and N-way identification of unseen
//! speakers.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, RngCore};

use crate::episode::{draw_utterances, segment, UtterancePool};
use crate::error::{bail, Result};
use crate::features::FeatureMatrix;
use crate::math;
use crate::objective::{argmax, cosine};

/// One verification pair by `(speaker, utterance)` index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialIndex {
    pub target: bool,
    pub enroll: (usize, usize),
    pub test: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<TrialIndex>,
    /// Speakers with fewer than two utterances; they get no trials.
    pub skipped: Vec<usize>,
}

/// Per speaker, `positives` same-speaker pairs of distinct utterances and
/// `negatives` pairs whose test side is uniform over every utterance of
/// the other speakers. `counts[s]` is the utterance count of speaker `s`.
pub fn generate_trials<R: RngCore + ?Sized>(
    counts: &[usize],
    positives: usize,
    negatives: usize,
    rng: &mut R,
) -> Result<TrialSet> {
    if counts.len() < 2 {
        bail!(Input, "need at least two speakers for non-target trials, got {}", counts.len());
    }
    let total: usize = counts.iter().sum();
    let mut trials = Vec::with_capacity(counts.len() * (positives + negatives));
    let mut skipped = Vec::new();
    for (spk, &n) in counts.iter().enumerate() {
        if n < 2 {
            skipped.push(spk);
            continue;
        }
        for _ in 0..positives {
            let e = rng.gen_range(0..n);
            let mut t = rng.gen_range(0..n - 1);
            if t >= e {
                t += 1;
            }
            trials.push(TrialIndex { target: true, enroll: (spk, e), test: (spk, t) });
        }
        let others = total - n;
        if others == 0 {
            bail!(Input, "speaker {spk} has no other-speaker utterances to pair with");
        }
        for _ in 0..negatives {
            let e = rng.gen_range(0..n);
            let mut r = rng.gen_range(0..others);
            let mut other = 0;
            loop {
                if other != spk {
                    if r < counts[other] {
                        break;
                    }
                    r -= counts[other];
                }
                other += 1;
            }
            trials.push(TrialIndex { target: false, enroll: (spk, e), test: (other, r) });
        }
    }
    if trials.is_empty() {
        bail!(Input, "every speaker has fewer than two utterances; no trials generated");
    }
    Ok(TrialSet { trials, skipped })
}

/// Nearest enrollment by cosine similarity for each query; ties go to the
/// lowest enrollment index.
pub fn identify(enroll: &[Vec<f64>], queries: &[Vec<f64>]) -> Vec<usize> {
    queries
        .iter()
        .map(|q| argmax(&enroll.iter().map(|e| cosine(q, e)).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationConfig {
    pub n_way: usize,
    pub episodes: usize,
    pub enroll_frames: usize,
    pub query_frames: usize,
    pub test_per_speaker: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationReport {
    pub n_way: usize,
    pub query_frames: usize,
    pub episodes: usize,
    pub mean_accuracy: f64,
    /// Normal-approximation 95% half-width; `None` for a single episode.
    pub ci95: Option<f64>,
}

/// Mean and `1.96 * s / sqrt(n)` with the sample standard deviation.
pub fn mean_ci95(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(1.96 * math::sqrt(var) / math::sqrt(n)))
}

/// Episodes of `n_way` unseen speakers: one enrollment segment and
/// `test_per_speaker` test segments each, classified by nearest
/// enrollment under cosine similarity.
pub fn evaluate_identification<P, E, R>(
    pool: &P,
    mut embed: E,
    cfg: &IdentificationConfig,
    rng: &mut R,
) -> Result<IdentificationReport>
where
    P: UtterancePool + ?Sized,
    E: FnMut(&FeatureMatrix) -> Result<Vec<f64>>,
    R: RngCore + ?Sized,
{
    if cfg.episodes == 0 || cfg.test_per_speaker == 0 || cfg.n_way == 0 {
        bail!(Config, "episodes, n_way and test_per_speaker must be at least 1");
    }
    let speakers = pool.num_speakers();
    if cfg.n_way > speakers {
        bail!(Input, "{}-way identification needs {} speakers, only {speakers} available", cfg.n_way, cfg.n_way);
    }
    let mut accuracies = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let chosen = index::sample(rng, speakers, cfg.n_way).into_vec();
        let mut enroll = Vec::with_capacity(cfg.n_way);
        let mut queries = Vec::with_capacity(cfg.n_way * cfg.test_per_speaker);
        let mut truth = Vec::with_capacity(cfg.n_way * cfg.test_per_speaker);
        for (label, &spk) in chosen.iter().enumerate() {
            let available = pool.num_utterances(spk);
            if available == 0 {
                bail!(Input, "speaker {spk} has no utterances");
            }
            let utts = draw_utterances(available, 1 + cfg.test_per_speaker, rng);
            enroll.push(embed(&segment(pool.features(spk, utts[0])?, cfg.enroll_frames, rng)?)?);
            for &u in &utts[1..] {
                queries.push(embed(&segment(pool.features(spk, u)?, cfg.query_frames, rng)?)?);
                truth.push(label);
            }
        }
        let correct = identify(&enroll, &queries).iter().zip(&truth).filter(|(p, t)| p == t).count();
        accuracies.push(correct as f64 / truth.len() as f64);
    }
    let (mean_accuracy, ci95) = mean_ci95(&accuracies);
    Ok(IdentificationReport {
        n_way: cfg.n_way,
        query_frames: cfg.query_frames,
        episodes: cfg.episodes,
        mean_accuracy,
        ci95,
    })
}

/// Scores of `n` queries against `n` enrollments laid out as unit axes,
/// exposed for callers that want the raw cosine table.
pub fn cosine_table(enroll: &[Vec<f64>], queries: &[Vec<f64>]) -> Vec<Vec<f64>> {
    queries.iter().map(|q| enroll.iter().map(|e| cosine(q, e)).collect()).collect()
}
