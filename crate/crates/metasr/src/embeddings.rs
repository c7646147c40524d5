//! Plain-text embedding dumps: a header `utt_id speaker_id dim=D`, then one
//! line per utterance with its id, speaker and `D` values in scientific
//! notation with nine significant digits.

use std::fmt::Write as _;

use metasr_core::Encoder;

use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::manifest::Manifest;

/// Embeds every manifest utterance (in manifest order) from `store`.
pub fn dump_embeddings(manifest: &Manifest, store: &FeatureStore, encoder: &Encoder) -> Result<String> {
    let dim = encoder.config().embedding_dim;
    let mut out = format!("utt_id speaker_id dim={dim}\n");
    for r in manifest.records() {
        let (s, u) = store
            .locate(&r.utt_id)
            .ok_or_else(|| Error::Data(format!("no features for utterance '{}'", r.utt_id)))?;
        let e = encoder.embed(store.get(s, u))?;
        out.push_str(&r.utt_id);
        out.push(' ');
        out.push_str(&r.speaker_id);
        for v in e.as_slice() {
            let _ = write!(out, " {v:.8e}");
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub utt_id: String,
    pub speaker_id: String,
    pub values: Vec<f32>,
}

pub fn parse_embeddings(text: &str) -> Result<Vec<EmbeddingRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data("empty embedding file".into()))?;
    let dim: usize = header
        .strip_prefix("utt_id speaker_id dim=")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| Error::Data(format!("bad embedding header '{header}'")))?;
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(' ').collect();
        let bad = || Error::Data(format!("embedding line {}: expected {} fields", n + 2, dim + 2));
        if f.len() != dim + 2 {
            return Err(bad());
        }
        let values = f[2..].iter().map(|v| v.parse::<f32>().map_err(|_| bad())).collect::<Result<_>>()?;
        rows.push(EmbeddingRow { utt_id: f[0].into(), speaker_id: f[1].into(), values });
    }
    Ok(rows)
}
