//! Training checkpoints.
//!
//! Layout: magic `MSRCKPT1`, u64 little-endian header length, a JSON
//! header, then little-endian f32 data in this order: encoder parameters,
//! batch-norm running statistics, global prototypes, momentum buffers.
//! Block lengths are listed in the header.

use std::fs;
use std::path::Path;

use metasr_core::nn::Param;
use metasr_core::optim::{PlateauSchedule, Sgd};
use metasr_core::rng::{substream, RngState};
use metasr_core::{Encoder, TrainState};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MSRCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub params: Vec<usize>,
    pub buffers: Vec<usize>,
    pub omega: usize,
    pub momentum: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: Config,
    pub step: u64,
    pub lr: f64,
    pub schedule: PlateauSchedule,
    pub rng: RngState,
    /// Training speakers in global-prototype row order.
    pub train_speakers: Vec<String>,
    pub history: Vec<EvalRecord>,
    pub tool_version: String,
    pub layout: Layout,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: Header,
    pub state: TrainState,
}

fn push_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let st = &self.state;
        let mut body = Vec::new();
        let mut layout = Layout { params: vec![], buffers: vec![], omega: st.omega.len(), momentum: vec![] };
        st.encoder.visit_params(&mut |p| {
            layout.params.push(p.len());
            push_f32s(&mut body, &p.value);
        });
        st.encoder.visit_buffers(&mut |b| {
            layout.buffers.push(b.len());
            push_f32s(&mut body, b);
        });
        push_f32s(&mut body, &st.omega.value);
        for m in &st.optimizer.buffers {
            layout.momentum.push(m.len());
            push_f32s(&mut body, m);
        }
        let header = Header { layout, ..self.header.clone() };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("invalid checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
        header.config.validate()?;
        let mut floats = bytes[16 + hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        if !bytes[16 + hlen..].len().is_multiple_of(4) {
            return Err(bad("payload is not a whole number of floats"));
        }
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let v: Vec<f32> = floats.by_ref().take(n).collect();
            if v.len() == n { Ok(v) } else { Err(bad("truncated payload")) }
        };

        let cfg = &header.config;
        let mut encoder = Encoder::new(cfg.encoder.clone(), &mut substream(0, "init"))?;
        let mut expected = Vec::new();
        encoder.visit_params(&mut |p| expected.push(p.len()));
        if expected != header.layout.params {
            return Err(bad("parameter shapes do not match the encoder config"));
        }
        let mut params = Vec::new();
        for &n in &header.layout.params {
            params.push(take(n)?);
        }
        let mut it = params.into_iter();
        encoder.visit_params_mut(&mut |p| p.value = it.next().expect("length checked"));
        let mut expected = Vec::new();
        encoder.visit_buffers(&mut |b| expected.push(b.len()));
        if expected != header.layout.buffers {
            return Err(bad("batch-norm statistics do not match the encoder config"));
        }
        let mut buffers = Vec::new();
        for &n in &header.layout.buffers {
            buffers.push(take(n)?);
        }
        let mut it = buffers.into_iter();
        encoder.visit_buffers_mut(&mut |b| b.copy_from_slice(&it.next().expect("length checked")));

        let dim = cfg.encoder.embedding_dim;
        if header.layout.omega != header.train_speakers.len() * dim {
            return Err(bad("global prototype block does not match the speaker list"));
        }
        let omega = Param::new(take(header.layout.omega)?);
        let mut optimizer = Sgd::new(cfg.train.momentum as f32, cfg.train.weight_decay as f32);
        for &n in &header.layout.momentum {
            optimizer.buffers.push(take(n)?);
        }
        if floats.next().is_some() {
            return Err(bad("trailing data"));
        }
        let state = TrainState {
            step: header.step,
            lr: header.lr,
            encoder,
            omega,
            classes: header.train_speakers.len(),
            optimizer,
            rng: header.rng.restore(),
        };
        Ok(Checkpoint { header, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Checkpoint::decode(&bytes).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
