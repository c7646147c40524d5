//! Speaker-embedding meta-learning primitives.
//!
//! Everything in this crate is pure computation over in-memory buffers and
//! builds without `std` (an allocator is required). File formats, corpus
//! scanning and the command line live in the `metasr` crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod encoder;
pub mod episode;
pub mod error;
pub mod eval;
pub mod features;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use encoder::{Arch, Embedding, Encoder, EncoderConfig, FrameFeatures};
pub use episode::{Episode, EpisodeConfig, EpisodeItem, UtterancePool, VanillaBatch};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureMatrix, Waveform};
pub use objective::{GlobalPrototypes, LossBreakdown, LossConfig, Mode, Prototypes};
pub use trainer::{TrainBatch, TrainState};
