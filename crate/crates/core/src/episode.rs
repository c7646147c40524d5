//! Episode and batch sampling.
//!
//! An episode draws `n_way` distinct speakers; each contributes `k_shot`
//! support segments of a fixed long length and `m_query` query segments
//! whose lengths are drawn independently and uniformly from an integer
//! frame range. Segments are cut with [`crop_or_duplicate`] and then
//! mean-normalized again, since they are what the encoder sees.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, RngCore};

use crate::error::{bail, Result};
use crate::features::{crop_or_duplicate, mean_normalize, FeatureConfig, FeatureMatrix};

/// Read access to per-speaker utterance features.
pub trait UtterancePool {
    fn num_speakers(&self) -> usize;
    fn num_utterances(&self, speaker: usize) -> usize;
    fn features(&self, speaker: usize, utterance: usize) -> Result<&FeatureMatrix>;
}

impl UtterancePool for [Vec<FeatureMatrix>] {
    fn num_speakers(&self) -> usize {
        self.len()
    }

    fn num_utterances(&self, speaker: usize) -> usize {
        self[speaker].len()
    }

    fn features(&self, speaker: usize, utterance: usize) -> Result<&FeatureMatrix> {
        match self.get(speaker).and_then(|s| s.get(utterance)) {
            Some(f) => Ok(f),
            None => bail!(Input, "no utterance {utterance} for speaker {speaker}"),
        }
    }
}

impl UtterancePool for Vec<Vec<FeatureMatrix>> {
    fn num_speakers(&self) -> usize {
        self.as_slice().num_speakers()
    }

    fn num_utterances(&self, speaker: usize) -> usize {
        self.as_slice().num_utterances(speaker)
    }

    fn features(&self, speaker: usize, utterance: usize) -> Result<&FeatureMatrix> {
        self.as_slice().features(speaker, utterance)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    pub support_seconds: f64,
    pub query_seconds_min: f64,
    pub query_seconds_max: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            n_way: 100,
            k_shot: 1,
            m_query: 2,
            support_seconds: 2.0,
            query_seconds_min: 1.0,
            query_seconds_max: 2.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            bail!(Config, "n_way must be at least 2, got {}", self.n_way);
        }
        if self.k_shot == 0 || self.m_query == 0 {
            bail!(Config, "k_shot and m_query must be at least 1");
        }
        if !(self.query_seconds_min > 0.0
            && self.query_seconds_min <= self.query_seconds_max
            && self.query_seconds_max <= self.support_seconds)
        {
            bail!(
                Config,
                "need 0 < query_seconds_min <= query_seconds_max <= support_seconds, got {} / {} / {}",
                self.query_seconds_min,
                self.query_seconds_max,
                self.support_seconds
            );
        }
        Ok(())
    }

    /// Support length and the inclusive query length range, in frames.
    pub fn frame_lengths(&self, features: &FeatureConfig) -> (usize, usize, usize) {
        (
            features.frames_for_seconds(self.support_seconds),
            features.frames_for_seconds(self.query_seconds_min),
            features.frames_for_seconds(self.query_seconds_max),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeItem {
    pub features: FeatureMatrix,
    /// Episode-local class, `0..n_way`.
    pub local: usize,
    /// Speaker index in the pool the episode was drawn from.
    pub global: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub n_way: usize,
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
}

impl Episode {
    pub fn support_lengths(&self) -> Vec<usize> {
        self.support.iter().map(|i| i.features.frames()).collect()
    }

    pub fn query_lengths(&self) -> Vec<usize> {
        self.query.iter().map(|i| i.features.frames()).collect()
    }

    /// Pool speaker behind each local label.
    pub fn speakers(&self) -> Vec<usize> {
        let mut out = alloc::vec![usize::MAX; self.n_way];
        for item in self.support.iter().chain(&self.query) {
            out[item.local] = item.global;
        }
        out
    }
}

/// `count` utterance indices: distinct when the speaker has enough,
/// otherwise drawn with replacement.
pub fn draw_utterances<R: RngCore + ?Sized>(available: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if available >= count {
        index::sample(rng, available, count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..available)).collect()
    }
}

pub fn segment<R: RngCore + ?Sized>(f: &FeatureMatrix, frames: usize, rng: &mut R) -> Result<FeatureMatrix> {
    Ok(mean_normalize(crop_or_duplicate(f, frames, rng)?))
}

pub fn sample_episode<P, R>(pool: &P, cfg: &EpisodeConfig, features: &FeatureConfig, rng: &mut R) -> Result<Episode>
where
    P: UtterancePool + ?Sized,
    R: RngCore + ?Sized,
{
    cfg.validate()?;
    let speakers = pool.num_speakers();
    if cfg.n_way > speakers {
        bail!(Input, "episode needs {} speakers but only {speakers} are available", cfg.n_way);
    }
    let (support_frames, qmin, qmax) = cfg.frame_lengths(features);
    if support_frames == 0 || qmin == 0 {
        bail!(Config, "segment lengths are shorter than one analysis window");
    }
    let chosen = index::sample(rng, speakers, cfg.n_way).into_vec();
    let mut support = Vec::with_capacity(cfg.n_way * cfg.k_shot);
    let mut query = Vec::with_capacity(cfg.n_way * cfg.m_query);
    for (local, &spk) in chosen.iter().enumerate() {
        let available = pool.num_utterances(spk);
        if available == 0 {
            bail!(Input, "speaker {spk} has no utterances");
        }
        let utts = draw_utterances(available, cfg.k_shot + cfg.m_query, rng);
        for (i, &u) in utts.iter().enumerate() {
            let src = pool.features(spk, u)?;
            if i < cfg.k_shot {
                let features = segment(src, support_frames, rng)?;
                support.push(EpisodeItem { features, local, global: spk });
            } else {
                let len = rng.gen_range(qmin..=qmax);
                let features = segment(src, len, rng)?;
                query.push(EpisodeItem { features, local, global: spk });
            }
        }
    }
    Ok(Episode { n_way: cfg.n_way, support, query })
}

/// Fixed-length segments with speaker labels, for conventional training.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaBatch {
    pub items: Vec<(FeatureMatrix, usize)>,
}

pub fn sample_vanilla_batch<P, R>(pool: &P, batch_size: usize, frames: usize, rng: &mut R) -> Result<VanillaBatch>
where
    P: UtterancePool + ?Sized,
    R: RngCore + ?Sized,
{
    if batch_size == 0 {
        bail!(Config, "batch size must be at least 1");
    }
    if frames == 0 {
        bail!(Config, "segment length must be at least one frame");
    }
    let speakers = pool.num_speakers();
    if speakers == 0 {
        bail!(Input, "cannot sample a batch from an empty corpus");
    }
    let mut items = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let spk = rng.gen_range(0..speakers);
        let available = pool.num_utterances(spk);
        if available == 0 {
            bail!(Input, "speaker {spk} has no utterances");
        }
        let utt = rng.gen_range(0..available);
        items.push((segment(pool.features(spk, utt)?, frames, rng)?, spk));
    }
    Ok(VanillaBatch { items })
}
