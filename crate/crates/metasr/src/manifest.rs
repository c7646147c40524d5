//! Utterance manifests: one tab-separated record per line,
//! `utt_id  speaker_id  path  num_samples  sample_rate`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use walkdir::WalkDir;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub path: PathBuf,
    pub num_samples: u64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    records: Vec<UtteranceRecord>,
    speakers: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub manifest: Manifest,
    /// Files that looked like audio but could not be read.
    pub skipped: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(records: Vec<UtteranceRecord>) -> Result<Self> {
        let mut speakers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::Data(format!("duplicate utt_id '{}'", r.utt_id)));
            }
            if r.num_samples == 0 {
                return Err(Error::Data(format!("utterance '{}' has no samples", r.utt_id)));
            }
            speakers.entry(r.speaker_id.clone()).or_default().push(i);
        }
        Ok(Manifest { records, speakers })
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Speaker ids in lexicographic order.
    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.speakers.keys().map(String::as_str)
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    /// Records of one speaker, in manifest order.
    pub fn utterances_of(&self, speaker: &str) -> impl Iterator<Item = &UtteranceRecord> {
        self.speakers.get(speaker).into_iter().flatten().map(|&i| &self.records[i])
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.utt_id,
                r.speaker_id,
                r.path.display(),
                r.num_samples,
                r.sample_rate
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Data(format!("manifest line {}: {what}", n + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(&format!("expected 5 tab-separated fields, found {}", f.len())));
            }
            records.push(UtteranceRecord {
                utt_id: f[0].to_string(),
                speaker_id: f[1].to_string(),
                path: PathBuf::from(f[2]),
                num_samples: f[3].parse().map_err(|_| bad("num_samples is not an integer"))?,
                sample_rate: f[4].parse().map_err(|_| bad("sample_rate is not an integer"))?,
            });
        }
        Manifest::new(records)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Manifest::parse(&text).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, self.to_tsv().as_bytes())
    }

    /// Keeps only the records of `keep` speakers.
    pub fn subset(&self, keep: &[&str]) -> Manifest {
        let records = self.records.iter().filter(|r| keep.contains(&r.speaker_id.as_str())).cloned().collect();
        Manifest::new(records).expect("subset of a valid manifest")
    }

    /// Speaker-disjoint split: `floor(train_fraction * speakers)` speakers go
    /// to the first manifest, the rest to the second.
    pub fn split_speakers(&self, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Usage(format!("train fraction must be in (0, 1), got {train_fraction}")));
        }
        let n = self.num_speakers();
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 speakers to split, found {n}")));
        }
        let mut ids: Vec<&str> = self.speakers().collect();
        ids.shuffle(&mut metasr_core::rng::substream(seed, "split"));
        let n_train = (train_fraction * n as f64).floor() as usize;
        let (train, test) = ids.split_at(n_train);
        Ok((self.subset(train), self.subset(test)))
    }
}

/// `spk/session/a.wav` becomes `spk-session-a`.
pub fn utt_id_for(relative: &Path) -> String {
    let no_ext = relative.with_extension("");
    no_ext.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("-")
}

/// One record per `.wav` file under `root`; the speaker is the top-level
/// directory name. Records are ordered by path.
pub fn scan_corpus(root: &Path) -> Result<ScanResult> {
    if !root.is_dir() {
        return Err(Error::Data(format!("{}: not a directory", root.display())));
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let walker = WalkDir::new(root).min_depth(2).sort_by_file_name();
    for entry in walker {
        let entry = entry.map_err(|e| Error::Data(format!("{}: {e}", root.display())))?;
        let path = entry.path();
        if !entry.file_type().is_file() || !path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            continue;
        }
        let rel = path.strip_prefix(root).expect("walkdir yields paths under root");
        let speaker_id = rel.components().next().expect("depth >= 2").as_os_str().to_string_lossy().into_owned();
        match hound::WavReader::open(path) {
            Ok(r) if r.duration() > 0 => records.push(UtteranceRecord {
                utt_id: utt_id_for(rel),
                speaker_id,
                path: path.to_path_buf(),
                num_samples: u64::from(r.duration()),
                sample_rate: r.spec().sample_rate,
            }),
            _ => skipped.push(path.to_path_buf()),
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!("no speakers found under {}", root.display())));
    }
    Ok(ScanResult { manifest: Manifest::new(records)?, skipped })
}
