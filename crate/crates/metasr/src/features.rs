//! Feature extraction over a manifest, the on-disk feature cache, and the
//! in-memory store that feeds the sampler and evaluators.
//!
//! Cache file layout (little endian): magic `MSRFEAT1`, u64 config
//! fingerprint, u32 n_mels, u32 frames, u32 sample_rate, f64 win_ms,
//! f64 hop_ms, then `n_mels * frames` f32 values row-major by band.

use std::fs;
use std::path::{Path, PathBuf};

use metasr_core::episode::UtterancePool;
use metasr_core::features::compute_logmel;
use metasr_core::{FeatureConfig, FeatureMatrix};

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::manifest::Manifest;

const MAGIC: &[u8; 8] = b"MSRFEAT1";
const HEADER_LEN: usize = 8 + 8 + 4 * 3 + 8 * 2;

/// Hash of every setting that changes feature values.
pub fn fingerprint(cfg: &FeatureConfig) -> u64 {
    let text = serde_json::to_string(cfg).expect("feature config serializes");
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn encode_cache(f: &FeatureMatrix, cfg: &FeatureConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * f.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&fingerprint(cfg).to_le_bytes());
    out.extend_from_slice(&(f.n_mels() as u32).to_le_bytes());
    out.extend_from_slice(&(f.frames() as u32).to_le_bytes());
    out.extend_from_slice(&cfg.sample_rate.to_le_bytes());
    out.extend_from_slice(&cfg.win_ms.to_le_bytes());
    out.extend_from_slice(&cfg.hop_ms.to_le_bytes());
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `Ok(None)` when the file was written under different settings.
pub fn decode_cache(bytes: &[u8], cfg: &FeatureConfig) -> Result<Option<FeatureMatrix>> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Data("not a feature cache file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    if u64::from_le_bytes(bytes[8..16].try_into().unwrap()) != fingerprint(cfg) {
        return Ok(None);
    }
    let (n_mels, frames) = (u32_at(16), u32_at(20));
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n_mels * frames {
        return Err(Error::Data(format!("feature cache holds {} bytes for {n_mels}x{frames}", body.len())));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Some(FeatureMatrix::new(n_mels, frames, values, cfg.hop_ms / 1000.0)?))
}

pub fn cache_path(dir: &Path, utt_id: &str) -> PathBuf {
    dir.join(format!("{utt_id}.feat"))
}

/// Mean-normalized log-mel features for every utterance, grouped by speaker
/// in manifest order.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    speakers: Vec<String>,
    utt_ids: Vec<Vec<String>>,
    features: Vec<Vec<FeatureMatrix>>,
}

impl FeatureStore {
    /// Computes features, reading from and filling `cache` when given.
    pub fn from_manifest(m: &Manifest, cfg: &FeatureConfig, cache: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        if let Some(dir) = cache {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let mut store = FeatureStore::default();
        for spk in m.speakers() {
            let mut ids = Vec::new();
            let mut feats = Vec::new();
            for r in m.utterances_of(spk) {
                feats.push(load_or_compute(&r.path, &r.utt_id, cfg, cache)?);
                ids.push(r.utt_id.clone());
            }
            store.speakers.push(spk.to_string());
            store.utt_ids.push(ids);
            store.features.push(feats);
        }
        Ok(store)
    }

    /// Reads cached features only; a missing entry is an error naming it.
    pub fn from_cache(m: &Manifest, cfg: &FeatureConfig, dir: &Path) -> Result<Self> {
        let mut store = FeatureStore::default();
        for spk in m.speakers() {
            let mut ids = Vec::new();
            let mut feats = Vec::new();
            for r in m.utterances_of(spk) {
                let p = cache_path(dir, &r.utt_id);
                let bytes = fs::read(&p)
                    .map_err(|_| Error::Data(format!("no cached features for utterance '{}' ({})", r.utt_id, p.display())))?;
                let f = decode_cache(&bytes, cfg)?.ok_or_else(|| {
                    Error::Data(format!("cached features for '{}' were computed with other settings", r.utt_id))
                })?;
                feats.push(f);
                ids.push(r.utt_id.clone());
            }
            store.speakers.push(spk.to_string());
            store.utt_ids.push(ids);
            store.features.push(feats);
        }
        Ok(store)
    }

    pub fn from_parts(speakers: Vec<String>, utt_ids: Vec<Vec<String>>, features: Vec<Vec<FeatureMatrix>>) -> Self {
        assert_eq!(speakers.len(), features.len());
        assert_eq!(utt_ids.len(), features.len());
        FeatureStore { speakers, utt_ids, features }
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn utt_id(&self, speaker: usize, utterance: usize) -> &str {
        &self.utt_ids[speaker][utterance]
    }

    pub fn total_utterances(&self) -> usize {
        self.features.iter().map(Vec::len).sum()
    }

    /// `(speaker index, utterance index)` of a named utterance.
    pub fn locate(&self, utt_id: &str) -> Option<(usize, usize)> {
        self.utt_ids.iter().enumerate().find_map(|(s, ids)| ids.iter().position(|u| u == utt_id).map(|u| (s, u)))
    }

    pub fn counts(&self) -> Vec<usize> {
        self.features.iter().map(Vec::len).collect()
    }

    /// Every utterance as `(speaker, utterance)` in store order.
    pub fn iter_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.features.iter().enumerate().flat_map(|(s, u)| (0..u.len()).map(move |i| (s, i)))
    }

    pub fn get(&self, speaker: usize, utterance: usize) -> &FeatureMatrix {
        &self.features[speaker][utterance]
    }
}

impl UtterancePool for FeatureStore {
    fn num_speakers(&self) -> usize {
        self.features.len()
    }

    fn num_utterances(&self, speaker: usize) -> usize {
        self.features[speaker].len()
    }

    fn features(&self, speaker: usize, utterance: usize) -> metasr_core::Result<&FeatureMatrix> {
        self.features.features(speaker, utterance)
    }
}

fn load_or_compute(wav: &Path, utt_id: &str, cfg: &FeatureConfig, cache: Option<&Path>) -> Result<FeatureMatrix> {
    let cached = cache.map(|d| cache_path(d, utt_id));
    if let Some(p) = &cached {
        if let Ok(bytes) = fs::read(p) {
            if let Some(f) = decode_cache(&bytes, cfg)? {
                return Ok(f);
            }
        }
    }
    let w = read_wav(wav)?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Data(format!(
            "{}: sample rate {} Hz, features expect {} Hz",
            wav.display(),
            w.sample_rate,
            cfg.sample_rate
        )));
    }
    let f = compute_logmel(&w, cfg).map_err(|e| Error::Data(format!("{}: {e}", wav.display())))?;
    if let Some(p) = &cached {
        crate::write_atomic(p, &encode_cache(&f, cfg))?;
    }
    Ok(f)
}
