//! Log mel-filterbank features.
//!
//! A waveform is cut into overlapping Hamming-windowed frames (no padding),
//! each frame's power spectrum is pooled by triangular mel filters, and the
//! floored log energies are mean-normalized along time. No voice activity
//! detection is applied.

mod fft;
mod mel;

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};

pub use fft::Fft;
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};

use crate::error::{bail, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            bail!(Config, "sample rate must be positive");
        }
        if samples.is_empty() {
            bail!(Input, "waveform has no samples");
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Analysis settings. Defaults: 40 mels, 25 ms Hamming window, 10 ms hop,
/// 16 kHz, 512-point FFT, filters spanning 0-8000 Hz.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub sample_rate: u32,
    pub log_floor: f64,
    pub n_fft: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Pre-emphasis coefficient; 0 disables it.
    pub preemphasis: f64,
    /// Uniform dither amplitude; 0 disables it.
    pub dither: f64,
    pub dither_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mels: 40,
            win_ms: 25.0,
            hop_ms: 10.0,
            sample_rate: 16_000,
            log_floor: 1e-10,
            n_fft: 512,
            f_min: 0.0,
            f_max: 8000.0,
            preemphasis: 0.0,
            dither: 0.0,
            dither_seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            bail!(Config, "n_mels must be at least 1");
        }
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.win_ms) {
            bail!(Config, "need 0 < hop_ms <= win_ms, got hop {} win {}", self.hop_ms, self.win_ms);
        }
        if self.log_floor.partial_cmp(&0.0) != Some(core::cmp::Ordering::Greater) {
            bail!(Config, "log_floor must be positive");
        }
        if self.sample_rate == 0 {
            bail!(Config, "sample rate must be positive");
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < self.win_samples() {
            bail!(Config, "n_fft {} must be a power of two >= window {}", self.n_fft, self.win_samples());
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= f64::from(self.sample_rate) / 2.0) {
            bail!(Config, "mel range {}..{} Hz invalid", self.f_min, self.f_max);
        }
        Ok(())
    }

    pub fn win_samples(&self) -> usize {
        math::round(self.win_ms * f64::from(self.sample_rate) / 1000.0) as usize
    }

    pub fn hop_samples(&self) -> usize {
        math::round(self.hop_ms * f64::from(self.sample_rate) / 1000.0) as usize
    }

    /// `1 + floor((len - win) / hop)`, or 0 when shorter than a window.
    pub fn frames_for_samples(&self, len: usize) -> usize {
        let win = self.win_samples();
        if len < win {
            0
        } else {
            1 + (len - win) / self.hop_samples()
        }
    }

    pub fn frames_for_seconds(&self, seconds: f64) -> usize {
        self.frames_for_samples(math::round(seconds * f64::from(self.sample_rate)) as usize)
    }

    pub fn filterbank(&self) -> MelFilterbank {
        MelFilterbank::new(self.n_mels, self.n_fft, self.sample_rate, self.f_min, self.f_max)
    }
}

/// `n_mels x frames` matrix, stored row-major by mel band.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_mels: usize,
    frames: usize,
    values: Vec<f32>,
    /// Seconds between consecutive frames.
    pub frame_hop: f64,
}

impl FeatureMatrix {
    pub fn new(n_mels: usize, frames: usize, values: Vec<f32>, frame_hop: f64) -> Result<Self> {
        if n_mels == 0 || frames == 0 {
            bail!(Input, "feature matrix must be non-empty, got {n_mels}x{frames}");
        }
        if values.len() != n_mels * frames {
            bail!(Input, "expected {} values for {n_mels}x{frames}, got {}", n_mels * frames, values.len());
        }
        Ok(FeatureMatrix { n_mels, frames, values, frame_hop })
    }

    pub fn from_rows(rows: &[&[f32]], frame_hop: f64) -> Result<Self> {
        let frames = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != frames) {
            bail!(Input, "ragged feature rows");
        }
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), frames, values, frame_hop)
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.values[m * self.frames..(m + 1) * self.frames]
    }

    pub fn get(&self, m: usize, t: usize) -> f32 {
        self.values[m * self.frames + t]
    }

    /// Columns `start..start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> FeatureMatrix {
        assert!(start + len <= self.frames && len > 0);
        let mut values = Vec::with_capacity(self.n_mels * len);
        for m in 0..self.n_mels {
            values.extend_from_slice(&self.row(m)[start..start + len]);
        }
        FeatureMatrix { n_mels: self.n_mels, frames: len, values, frame_hop: self.frame_hop }
    }

    /// Per-band mean over time.
    pub fn time_mean(&self) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.row(m).iter().map(|&v| f64::from(v)).sum::<f64>() / self.frames as f64)
            .collect()
    }
}

/// Floored log mel energies without mean normalization.
pub fn compute_logmel_raw(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        bail!(Config, "waveform is {} Hz but features expect {} Hz", w.sample_rate, cfg.sample_rate);
    }
    let win = cfg.win_samples();
    let hop = cfg.hop_samples();
    let frames = cfg.frames_for_samples(w.len());
    if frames == 0 {
        bail!(Input, "waveform has {} samples, shorter than one {win}-sample window", w.len());
    }

    let mut signal: Vec<f64> = w.samples.iter().map(|&s| f64::from(s)).collect();
    if cfg.dither > 0.0 {
        let mut rng = crate::rng::Rng::seed_from_u64(cfg.dither_seed);
        for s in signal.iter_mut() {
            *s += cfg.dither * rng.gen_range(-1.0..1.0);
        }
    }
    if cfg.preemphasis != 0.0 {
        for i in (1..signal.len()).rev() {
            signal[i] -= cfg.preemphasis * signal[i - 1];
        }
    }

    let window: Vec<f64> = (0..win)
        .map(|n| 0.54 - 0.46 * math::cos(2.0 * core::f64::consts::PI * n as f64 / (win - 1) as f64))
        .collect();
    let fft = Fft::new(cfg.n_fft);
    let fb = cfg.filterbank();
    let mut frame = vec![0.0; win];
    let mut power = vec![0.0; cfg.n_fft / 2 + 1];
    let mut energies = vec![0.0; cfg.n_mels];
    let mut values = vec![0.0f32; cfg.n_mels * frames];
    for t in 0..frames {
        let chunk = &signal[t * hop..t * hop + win];
        for ((f, s), h) in frame.iter_mut().zip(chunk).zip(&window) {
            *f = s * h;
        }
        fft.power_spectrum(&frame, &mut power);
        fb.apply(&power, &mut energies);
        for (m, e) in energies.iter().enumerate() {
            values[m * frames + t] = math::ln(e.max(cfg.log_floor)) as f32;
        }
    }
    FeatureMatrix::new(cfg.n_mels, frames, values, cfg.hop_ms / 1000.0)
}

/// Mean-normalized log mel-filterbank features.
pub fn compute_logmel(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    Ok(mean_normalize(compute_logmel_raw(w, cfg)?))
}

/// Subtracts each band's time mean.
pub fn mean_normalize(mut f: FeatureMatrix) -> FeatureMatrix {
    let frames = f.frames;
    for row in f.values.chunks_mut(frames) {
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / frames as f64;
        for v in row.iter_mut() {
            *v = (f64::from(*v) - mean) as f32;
        }
    }
    f
}

/// Random contiguous crop when the matrix is long enough, otherwise the
/// matrix tiled end-to-end from frame 0 and truncated.
pub fn crop_or_duplicate<R: RngCore + ?Sized>(
    f: &FeatureMatrix,
    target_frames: usize,
    rng: &mut R,
) -> Result<FeatureMatrix> {
    if target_frames == 0 {
        bail!(Input, "target length must be at least one frame");
    }
    let t = f.frames;
    if t == target_frames {
        return Ok(f.clone());
    }
    if t > target_frames {
        let start = rng.gen_range(0..=t - target_frames);
        return Ok(f.slice_frames(start, target_frames));
    }
    let mut values = Vec::with_capacity(f.n_mels * target_frames);
    for m in 0..f.n_mels {
        let row = f.row(m);
        values.extend(row.iter().cycle().take(target_frames).copied());
    }
    Ok(FeatureMatrix { n_mels: f.n_mels, frames: target_frames, values, frame_hop: f.frame_hop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn matrix(rows: &[&[f32]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows, 0.01).unwrap()
    }

    fn tone(freq: f64, len: usize, sr: u32) -> Waveform {
        let samples = (0..len)
            .map(|n| (0.5 * math::sin(2.0 * core::f64::consts::PI * freq * n as f64 / f64::from(sr))) as f32)
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    #[test]
    fn two_seconds_gives_198_frames() {
        let cfg = FeatureConfig::default();
        assert_eq!((cfg.win_samples(), cfg.hop_samples()), (400, 160));
        let w = Waveform::new(vec![0.1; 32_000], 16_000).unwrap();
        let f = compute_logmel(&w, &cfg).unwrap();
        assert_eq!((f.n_mels(), f.frames()), (40, 198));
        assert_eq!(cfg.frames_for_seconds(1.0), 98);
    }

    #[test]
    fn silence_normalizes_to_zero() {
        let w = Waveform::new(vec![0.0; 8000], 16_000).unwrap();
        let f = compute_logmel(&w, &FeatureConfig::default()).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_rate_mismatch_is_config_error() {
        let w = Waveform::new(vec![0.0; 8000], 8000).unwrap();
        let err = compute_logmel(&w, &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn shorter_than_window_is_input_error() {
        let w = Waveform::new(vec![0.0; 399], 16_000).unwrap();
        let err = compute_logmel(&w, &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, crate::Error::Input(_)));
        assert_eq!(FeatureConfig::default().frames_for_samples(400), 1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            FeatureConfig { hop_ms: 30.0, ..Default::default() },
            FeatureConfig { hop_ms: 0.0, ..Default::default() },
            FeatureConfig { n_mels: 0, ..Default::default() },
            FeatureConfig { log_floor: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    /// Direct (non-FFT) DFT power at bin k of a windowed frame.
    fn dft_power(frame: &[f64], n_fft: usize, k: usize) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in frame.iter().enumerate() {
            let a = -2.0 * core::f64::consts::PI * (k * t) as f64 / n_fft as f64;
            re += v * math::cos(a);
            im += v * math::sin(a);
        }
        re * re + im * im
    }

    /// Oracle mel energies for one frame: windowing and DFT written out
    /// directly, filter weights evaluated from the band edges.
    fn oracle_mel_frame(chunk: &[f32], cfg: &FeatureConfig) -> Vec<f64> {
        let win = chunk.len();
        let frame: Vec<f64> = chunk
            .iter()
            .enumerate()
            .map(|(n, &s)| {
                f64::from(s) * (0.54 - 0.46 * math::cos(2.0 * core::f64::consts::PI * n as f64 / (win - 1) as f64))
            })
            .collect();
        let power: Vec<f64> = (0..=cfg.n_fft / 2).map(|k| dft_power(&frame, cfg.n_fft, k)).collect();
        let lo = hz_to_mel(cfg.f_min);
        let hi = hz_to_mel(cfg.f_max);
        let edge = |i: usize| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64);
        (0..cfg.n_mels)
            .map(|m| {
                let (l, c, r) = (edge(m), edge(m + 1), edge(m + 2));
                power
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let f = k as f64 * f64::from(cfg.sample_rate) / cfg.n_fft as f64;
                        let w = if f > l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        };
                        w * p
                    })
                    .sum()
            })
            .collect()
    }

    fn argmax(v: impl IntoIterator<Item = f64>) -> usize {
        v.into_iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, x)| if x > bv { (i, x) } else { (bi, bv) })
            .0
    }

    #[test]
    fn tone_at_band_center_peaks_in_that_band() {
        let cfg = FeatureConfig::default();
        let fb = cfg.filterbank();
        // Below band 4 the filters are narrower than the window's main lobe.
        for k in 4..cfg.n_mels {
            let w = tone(fb.center_hz(k), 1200, cfg.sample_rate);
            let f = compute_logmel_raw(&w, &cfg).unwrap();
            let oracle = oracle_mel_frame(&w.samples[..400], &cfg);
            assert_eq!(argmax(oracle.iter().copied()), k, "oracle, band {k}");
            for t in 0..f.frames() {
                assert_eq!(argmax((0..cfg.n_mels).map(|m| f64::from(f.get(m, t)))), k, "band {k} frame {t}");
            }
            let ours = f64::from(f.get(k, 0));
            assert!((ours - math::ln(oracle[k])).abs() < 1e-4, "band {k}: {ours} vs {}", math::ln(oracle[k]));
        }
    }

    #[test]
    fn deterministic_bitwise() {
        let w = tone(440.0, 5000, 16_000);
        let cfg = FeatureConfig::default();
        assert_eq!(compute_logmel(&w, &cfg).unwrap(), compute_logmel(&w, &cfg).unwrap());
    }

    #[test]
    fn preemphasis_and_dither_change_output_when_enabled() {
        let w = tone(440.0, 5000, 16_000);
        let base = compute_logmel(&w, &FeatureConfig::default()).unwrap();
        let pre = compute_logmel(&w, &FeatureConfig { preemphasis: 0.97, ..Default::default() }).unwrap();
        let dit = compute_logmel(&w, &FeatureConfig { dither: 1e-3, ..Default::default() }).unwrap();
        assert_ne!(base, pre);
        assert_ne!(base, dit);
    }

    #[test]
    fn mean_normalize_examples() {
        let f = mean_normalize(matrix(&[&[1.0, 2.0, 3.0]]));
        assert_eq!(f.row(0), &[-1.0, 0.0, 1.0]);
        let c = mean_normalize(matrix(&[&[4.5; 7], &[-2.0; 7]]));
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn crop_examples() {
        let rows: Vec<Vec<f32>> = (0..3).map(|m| (0..300).map(|t| (m * 1000 + t) as f32).collect()).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let f = FeatureMatrix::from_rows(&refs, 0.01).unwrap();
        let mut rng = substream(1, "crop");
        for _ in 0..50 {
            let c = crop_or_duplicate(&f, 200, &mut rng).unwrap();
            let start = c.get(0, 0) as usize;
            assert!(start <= 100);
            for m in 0..3 {
                for t in 0..200 {
                    assert_eq!(c.get(m, t), f.get(m, start + t));
                }
            }
        }
        assert_eq!(crop_or_duplicate(&f, 300, &mut rng).unwrap(), f);
        assert!(crop_or_duplicate(&f, 0, &mut rng).is_err());
    }

    #[test]
    fn short_matrix_is_tiled() {
        let row: Vec<f32> = (0..100).map(|t| t as f32).collect();
        let f = FeatureMatrix::from_rows(&[&row], 0.01).unwrap();
        let d = crop_or_duplicate(&f, 250, &mut substream(0, "x")).unwrap();
        let expected: Vec<f32> = (0..100).chain(0..100).chain(0..50).map(|t| t as f32).collect();
        assert_eq!(d.row(0), expected.as_slice());
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 400usize..100_000) {
            let cfg = FeatureConfig::default();
            prop_assert_eq!(cfg.frames_for_samples(len), 1 + (len - 400) / 160);
        }

        #[test]
        fn normalization_is_zero_mean_and_idempotent(
            vals in proptest::collection::vec(-50.0f32..50.0, 1..60),
            n_mels in 1usize..4,
        ) {
            let frames = vals.len();
            let data: Vec<f32> = (0..n_mels).flat_map(|m| vals.iter().map(move |v| v * (m as f32 + 1.0))).collect();
            let f = mean_normalize(FeatureMatrix::new(n_mels, frames, data, 0.01).unwrap());
            for m in f.time_mean() {
                prop_assert!(m.abs() < 1e-5);
            }
            let scale = f.values().iter().fold(1.0f32, |m, v| m.max(v.abs()));
            let again = mean_normalize(f.clone());
            for (a, b) in f.values().iter().zip(again.values()) {
                prop_assert!((a - b).abs() <= 1e-7 * scale);
            }
        }

        #[test]
        fn crop_has_target_length_and_is_seeded(frames in 1usize..400, target in 1usize..400, seed: u64) {
            let data: Vec<f32> = (0..frames * 2).map(|i| i as f32).collect();
            let f = FeatureMatrix::new(2, frames, data, 0.01).unwrap();
            let a = crop_or_duplicate(&f, target, &mut substream(seed, "c")).unwrap();
            let b = crop_or_duplicate(&f, target, &mut substream(seed, "c")).unwrap();
            prop_assert_eq!(a.frames(), target);
            prop_assert_eq!(a, b);
        }
    }
}
