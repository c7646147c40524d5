//! Synthetic multi-speaker audio.
//!
//! A "speaker" is a set of formant frequencies. An utterance is a train of
//! syllable-like bursts: during each burst a subset of the speaker's
//! formants sound as sinusoids with random phase and amplitude, with short
//! gaps in between. White noise is added on top, the mixture passes through
//! a random first-order channel `y[n] = x[n] - a x[n-1]`, and the result is
//! peak normalized. The channel shifts each band's log energy by a constant,
//! which per-utterance mean normalization removes.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::error::{bail, Result};
use crate::features::{hz_to_mel, mel_to_hz, Waveform};
use crate::math;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// Formant frequencies (Hz) per speaker.
    pub formants: Vec<Vec<f64>>,
    /// Noise standard deviation relative to the mean tone amplitude.
    pub noise_level: f64,
    /// Largest magnitude of the per-utterance channel coefficient `a`, below 1.
    pub channel_tilt: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `n_speakers` speakers with `formants_per_speaker` formants each, placed
    /// on a mel-spaced grid so that every set differs from every other.
    pub fn with_random_formants(
        n_speakers: usize,
        utterances_per_speaker: usize,
        (min_seconds, max_seconds): (f64, f64),
        formants_per_speaker: usize,
        noise_level: f64,
        seed: u64,
    ) -> Result<Self> {
        let sample_rate = 16_000;
        let grid = formant_grid(150.0, 7000.0, 32);
        if formants_per_speaker == 0 || formants_per_speaker > grid.len() {
            bail!(Config, "formants per speaker must be in 1..={}", grid.len());
        }
        let mut rng = substream(seed, "formants");
        let mut formants: Vec<Vec<f64>> = Vec::with_capacity(n_speakers);
        let mut attempts = 0;
        while formants.len() < n_speakers {
            attempts += 1;
            if attempts > 100_000 {
                bail!(Config, "cannot draw {n_speakers} distinct formant sets");
            }
            let mut pick = index::sample(&mut rng, grid.len(), formants_per_speaker).into_vec();
            pick.sort_unstable();
            let set: Vec<f64> = pick.iter().map(|&i| grid[i]).collect();
            if !formants.contains(&set) {
                formants.push(set);
            }
        }
        let spec = SyntheticSpec {
            n_speakers,
            utterances_per_speaker,
            min_seconds,
            max_seconds,
            formants,
            noise_level,
            channel_tilt: 0.25,
            sample_rate,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.utterances_per_speaker == 0 {
            bail!(Config, "need at least one speaker and one utterance per speaker");
        }
        if self.formants.len() != self.n_speakers {
            bail!(Config, "{} formant sets for {} speakers", self.formants.len(), self.n_speakers);
        }
        if !(self.min_seconds > 0.025 && self.min_seconds <= self.max_seconds) {
            bail!(Config, "durations must exceed one analysis window and be ordered");
        }
        if self.noise_level < 0.0 {
            bail!(Config, "noise level must be non-negative");
        }
        if !(0.0..1.0).contains(&self.channel_tilt) {
            bail!(Config, "channel tilt must be in [0, 1)");
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        for (i, set) in self.formants.iter().enumerate() {
            if set.is_empty() || set.iter().any(|&f| !(f > 0.0 && f < nyquist)) {
                bail!(Config, "speaker {i} has an invalid formant set");
            }
            for (j, other) in self.formants.iter().enumerate().take(i) {
                if same_set(set, other) {
                    bail!(Config, "speakers {j} and {i} have overlapping (identical) formant sets");
                }
            }
        }
        Ok(())
    }

    /// Deterministic utterance `u` of speaker `s`; independent of every
    /// other utterance's draws.
    pub fn utterance(&self, speaker: usize, utterance: usize) -> Result<Waveform> {
        let mut rng = substream(self.seed, &alloc::format!("utt/{speaker}/{utterance}"));
        let sr = f64::from(self.sample_rate);
        let seconds = if self.max_seconds > self.min_seconds {
            rng.gen_range(self.min_seconds..=self.max_seconds)
        } else {
            self.min_seconds
        };
        let len = math::round(seconds * sr) as usize;
        let formants = &self.formants[speaker];
        let tilt = self.channel_tilt * (2.0 * rng.gen::<f64>() - 1.0);
        let mut signal = vec![0.0f64; len];
        let mut t = rng.gen_range(0..(0.1 * sr) as usize);
        while t < len {
            let burst = rng.gen_range((0.08 * sr) as usize..(0.25 * sr) as usize);
            let gap = rng.gen_range((0.03 * sr) as usize..(0.12 * sr) as usize);
            let end = (t + burst).min(len);
            let n_on = rng.gen_range(1..=formants.len());
            let on = index::sample(&mut rng, formants.len(), n_on).into_vec();
            for &k in &on {
                let freq = formants[k] * (1.0 + 0.01 * (2.0 * rng.gen::<f64>() - 1.0));
                let amp = rng.gen_range(0.5..1.0);
                let phase = 2.0 * core::f64::consts::PI * rng.gen::<f64>();
                let w = 2.0 * core::f64::consts::PI * freq / sr;
                let ramp = ((0.01 * sr) as usize).max(1);
                for (i, s) in signal[t..end].iter_mut().enumerate() {
                    let edge = (i.min(end - t - 1 - i) as f64 / ramp as f64).min(1.0);
                    *s += amp * edge * math::sin(w * i as f64 + phase);
                }
            }
            t = end + gap;
        }
        if self.noise_level > 0.0 {
            let std = self.noise_level * 0.75;
            for s in signal.iter_mut() {
                *s += std * crate::nn::normal(&mut rng);
            }
        }
        let mut prev = 0.0;
        for s in signal.iter_mut() {
            let x = *s;
            *s = x - tilt * prev;
            prev = x;
        }
        let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { 0.9 / peak } else { 0.0 };
        Waveform::new(signal.into_iter().map(|v| (v * scale) as f32).collect(), self.sample_rate)
    }
}

fn same_set(a: &[f64], b: &[f64]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a == b
}

/// `n` frequencies evenly spaced on the mel scale.
pub fn formant_grid(lo_hz: f64, hi_hz: f64, n: usize) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(lo_hz), hz_to_mel(hi_hz));
    (0..n).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_logmel, compute_logmel_raw, FeatureConfig};
    use crate::objective::cosine;

    fn spec(noise: f64) -> SyntheticSpec {
        SyntheticSpec::with_random_formants(6, 4, (1.0, 1.5), 3, noise, 11).unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_sized() {
        let s = spec(0.3);
        let a = s.utterance(2, 1).unwrap();
        let b = s.utterance(2, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s.utterance(2, 2).unwrap());
        let secs = a.samples.len() as f64 / 16000.0;
        assert!((1.0..=1.5).contains(&secs));
        assert!(a.samples.iter().all(|v| v.abs() <= 0.9 + 1e-6));
    }

    #[test]
    fn identical_formant_sets_are_rejected() {
        let mut s = spec(0.0);
        s.formants[3] = s.formants[1].iter().rev().copied().collect();
        let err = s.validate().unwrap_err();
        assert!(alloc::format!("{err}").contains("overlapping"));
    }

    #[test]
    fn formant_sets_are_distinct() {
        let s = SyntheticSpec::with_random_formants(40, 1, (1.0, 1.0), 4, 0.0, 3).unwrap();
        for i in 0..40 {
            for j in 0..i {
                assert!(!same_set(&s.formants[i], &s.formants[j]));
            }
        }
    }

    #[test]
    fn disjoint_formants_peak_in_different_bands() {
        let grid = formant_grid(150.0, 7000.0, 32);
        let mut s = spec(0.0);
        s.formants[0] = vec![grid[4]];
        s.formants[1] = vec![grid[20]];
        s.channel_tilt = 0.0;
        let cfg = FeatureConfig::default();
        let peak = |spk| {
            let f = compute_logmel_raw(&s.utterance(spk, 0).unwrap(), &cfg).unwrap();
            let m = f.time_mean();
            (0..m.len()).max_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap()
        };
        assert_ne!(peak(0), peak(1));
    }

    #[test]
    fn noiseless_speakers_are_separable_by_nearest_centroid() {
        let s = spec(0.0);
        let cfg = FeatureConfig::default();
        // Per-band standard deviation over time survives mean normalization.
        let stat = |spk, utt| {
            let f = compute_logmel(&s.utterance(spk, utt).unwrap(), &cfg).unwrap();
            (0..f.n_mels())
                .map(|m| {
                    let r = f.row(m);
                    math::sqrt(r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / r.len() as f64)
                })
                .collect::<Vec<f64>>()
        };
        let centroids: Vec<Vec<f64>> = (0..6)
            .map(|spk| {
                let a = stat(spk, 0);
                let b = stat(spk, 1);
                a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
            })
            .collect();
        let mut correct = 0;
        for spk in 0..6 {
            for utt in 2..4 {
                let x = stat(spk, utt);
                let scores: Vec<f64> = centroids.iter().map(|c| cosine(&x, c)).collect();
                correct += usize::from(crate::objective::argmax(&scores) == spk);
            }
        }
        assert!(correct as f64 / 12.0 > 0.9, "{correct}/12");
    }
}
