use std::fs;
use std::path::Path;

use metasr::audio::write_wav;
use metasr::config::Config;
use metasr::corpus::write_corpus;
use metasr::embeddings::{dump_embeddings, parse_embeddings};
use metasr::features::FeatureStore;
use metasr::manifest::{scan_corpus, Manifest};
use metasr::train::{fit, FitOptions, METRICS_FILE};
use metasr_core::objective::Mode;
use metasr_core::rng::substream;
use metasr_core::synth::SyntheticSpec;
use metasr_core::{Encoder, EncoderConfig, FeatureConfig, Waveform};

fn tone(seconds: f64) -> Waveform {
    let n = (seconds * 16000.0) as usize;
    Waveform::new((0..n).map(|i| 0.3 * (i as f32 * 0.07).sin()).collect(), 16000).unwrap()
}

#[test]
fn scan_counts_speakers_and_records() {
    let dir = tempfile::tempdir().unwrap();
    for spk in ["alice", "bob", "carol"] {
        fs::create_dir_all(dir.path().join(spk).join("s1")).unwrap();
        write_wav(&dir.path().join(spk).join("a.wav"), &tone(0.5)).unwrap();
        write_wav(&dir.path().join(spk).join("s1").join("a.wav"), &tone(0.5)).unwrap();
    }
    fs::write(dir.path().join("bob").join("broken.wav"), b"not audio").unwrap();
    fs::write(dir.path().join("bob").join("notes.txt"), b"ignored").unwrap();
    let scan = scan_corpus(dir.path()).unwrap();
    let m = &scan.manifest;
    assert_eq!((m.len(), m.num_speakers()), (6, 3));
    assert_eq!(scan.skipped.len(), 1);
    let ids: Vec<&str> = m.records().iter().map(|r| r.utt_id.as_str()).collect();
    assert_eq!(ids, ["alice-a", "alice-s1-a", "bob-a", "bob-s1-a", "carol-a", "carol-s1-a"]);
    assert_eq!(m.records()[0].num_samples, 8000);
    assert_eq!(scan_corpus(dir.path()).unwrap(), scan);
}

#[test]
fn empty_root_has_no_speakers() {
    let dir = tempfile::tempdir().unwrap();
    let err = scan_corpus(dir.path()).unwrap_err();
    assert!(err.to_string().contains("no speakers found"), "{err}");
}

#[test]
fn synthetic_corpus_is_complete_and_reproducible() {
    let spec = SyntheticSpec::with_random_formants(20, 10, (3.0, 8.0), 3, 1.2, 4).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = write_corpus(&spec, a.path()).unwrap();
    let mb = write_corpus(&spec, b.path()).unwrap();
    assert_eq!((ma.len(), ma.num_speakers()), (200, 20));
    let secs: Vec<f64> = ma.records().iter().map(|r| r.num_samples as f64 / 16000.0).collect();
    assert!(secs.iter().all(|s| (3.0..=8.0).contains(s)));
    for (ra, rb) in ma.records().iter().zip(mb.records()) {
        assert_eq!(ra.utt_id, rb.utt_id);
        assert_eq!(fs::read(&ra.path).unwrap(), fs::read(&rb.path).unwrap());
    }
}

fn small_store(dir: &Path, speakers: usize, utterances: usize, seed: u64) -> (Manifest, FeatureStore) {
    let spec = SyntheticSpec::with_random_formants(speakers, utterances, (2.0, 3.0), 3, 0.5, seed).unwrap();
    let m = write_corpus(&spec, dir).unwrap();
    let store = FeatureStore::from_manifest(&m, &FeatureConfig::default(), None).unwrap();
    (m, store)
}

#[test]
fn embedding_dump_rows_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (m, store) = small_store(dir.path(), 3, 2, 1);
    let enc = Encoder::new(EncoderConfig::small(), &mut substream(0, "init")).unwrap();
    let text = dump_embeddings(&m, &store, &enc).unwrap();
    let rows = parse_embeddings(&text).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.values.len() == 256));
    assert!(text.starts_with("utt_id speaker_id dim=256\n"));
    assert_eq!(dump_embeddings(&m, &store, &enc).unwrap(), text);

    let empty = Manifest::new(vec![]).unwrap();
    assert_eq!(dump_embeddings(&empty, &store, &enc).unwrap(), "utt_id speaker_id dim=256\n");

    let cache = tempfile::tempdir().unwrap();
    let err = FeatureStore::from_cache(&m, &FeatureConfig::default(), cache.path()).unwrap_err();
    assert!(err.to_string().contains(&m.records()[0].utt_id), "{err}");
}

#[test]
fn feature_cache_is_filled_and_reused() {
    let dir = tempfile::tempdir().unwrap();
    let (m, direct) = small_store(dir.path(), 2, 2, 2);
    let cache = tempfile::tempdir().unwrap();
    let fc = FeatureConfig::default();
    FeatureStore::from_manifest(&m, &fc, Some(cache.path())).unwrap();
    let cached = FeatureStore::from_cache(&m, &fc, cache.path()).unwrap();
    for (s, u) in direct.iter_keys() {
        assert_eq!(direct.get(s, u), cached.get(s, u));
    }
}

fn tiny_config(mode: Mode) -> Config {
    let mut cfg = Config::default();
    cfg.encoder = EncoderConfig::small();
    cfg.episode.n_way = 3;
    cfg.train.mode = mode;
    cfg.train.max_steps = 20;
    cfg.train.eval_every = 5;
    cfg.train.checkpoint_every = 10;
    cfg.train.val_n_way = Some(2);
    cfg.train.val_episodes = 5;
    cfg
}

fn split(dir: &Path) -> (FeatureStore, FeatureStore) {
    let (m, _) = small_store(dir, 6, 3, 3);
    let ids: Vec<&str> = m.speakers().collect();
    let fc = FeatureConfig::default();
    (
        FeatureStore::from_manifest(&m.subset(&ids[..4]), &fc, None).unwrap(),
        FeatureStore::from_manifest(&m.subset(&ids[4..]), &fc, None).unwrap(),
    )
}

fn opts(dir: &Path) -> FitOptions {
    FitOptions { out_dir: dir.to_path_buf(), resume: None, verbose: false }
}

#[test]
fn same_seed_gives_identical_loss_curves_and_vanilla_runs() {
    let data = tempfile::tempdir().unwrap();
    let (train, val) = split(data.path());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Mode::MetaGlobal);
    let ra = fit(&cfg, &train, &val, &opts(a.path())).unwrap();
    let rb = fit(&cfg, &train, &val, &opts(b.path())).unwrap();
    assert_eq!(ra.records, rb.records);
    assert_eq!(fs::read(a.path().join(METRICS_FILE)).unwrap(), fs::read(b.path().join(METRICS_FILE)).unwrap());

    let v = tempfile::tempdir().unwrap();
    let rv = fit(&tiny_config(Mode::Vanilla), &train, &val, &opts(v.path())).unwrap();
    assert_eq!(rv.steps, 20);
    assert!(rv.records.iter().all(|r| r.losses.episode.is_none() && r.losses.global.is_some()));
    assert!(v.path().join("ckpt_step20.bin").exists() && v.path().join("ckpt_best.bin").exists());
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let data = tempfile::tempdir().unwrap();
    let (train, val) = split(data.path());
    let cfg = tiny_config(Mode::MetaGlobal);
    let full = tempfile::tempdir().unwrap();
    fit(&cfg, &train, &val, &opts(full.path())).unwrap();

    let resumed = tempfile::tempdir().unwrap();
    for f in ["ckpt_step10.bin", METRICS_FILE] {
        fs::copy(full.path().join(f), resumed.path().join(f)).unwrap();
    }
    let o = FitOptions { resume: Some(resumed.path().join("ckpt_step10.bin")), ..opts(resumed.path()) };
    let r = fit(&cfg, &train, &val, &o).unwrap();
    assert_eq!(r.records.first().unwrap().step, 11);
    for f in [METRICS_FILE, "ckpt_step20.bin"] {
        assert_eq!(fs::read(full.path().join(f)).unwrap(), fs::read(resumed.path().join(f)).unwrap(), "{f}");
    }

    let mut other = cfg.clone();
    other.train.lr_init = 0.05;
    let o = FitOptions { resume: Some(resumed.path().join("ckpt_step10.bin")), ..opts(resumed.path()) };
    assert!(fit(&other, &train, &val, &o).is_err());
}

#[test]
fn undersized_or_overlapping_data_fails_before_training() {
    let data = tempfile::tempdir().unwrap();
    let (train, val) = split(data.path());
    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Mode::Meta);
    cfg.episode.n_way = 5;
    let err = fit(&cfg, &train, &val, &opts(out.path())).unwrap_err();
    assert!(err.to_string().contains("needs 5 speakers") || err.to_string().contains("need 5"), "{err}");
    assert!(!out.path().join(METRICS_FILE).exists());
    let err = fit(&tiny_config(Mode::Meta), &train, &train, &opts(out.path())).unwrap_err();
    assert!(err.to_string().contains("both training and validation"), "{err}");
}
