//! Writes a synthetic corpus as `spkNNN/uttNNN.wav` files.

use std::fs;
use std::path::Path;

use metasr_core::synth::SyntheticSpec;

use crate::audio::write_wav;
use crate::error::{Error, Result};
use crate::manifest::{scan_corpus, Manifest};

pub fn speaker_dir_name(speaker: usize) -> String {
    format!("spk{speaker:03}")
}

pub fn write_corpus(spec: &SyntheticSpec, root: &Path) -> Result<Manifest> {
    spec.validate()?;
    for s in 0..spec.n_speakers {
        let dir = root.join(speaker_dir_name(s));
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        for u in 0..spec.utterances_per_speaker {
            write_wav(&dir.join(format!("utt{u:03}.wav")), &spec.utterance(s, u)?)?;
        }
    }
    let scan = scan_corpus(root)?;
    if !scan.skipped.is_empty() {
        return Err(Error::Data(format!("{} generated files could not be read back", scan.skipped.len())));
    }
    Ok(scan.manifest)
}
