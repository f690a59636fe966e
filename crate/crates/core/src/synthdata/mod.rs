//! Synthetic speaker–listener pairs with a known, tunable coupling between
//! the speaker's audio and the listener's motion.
//!
//! The speaker "talks" in tone bursts. The clip is cut into equal segments
//! with one burst and one syllable token per segment, so spreading tokens
//! uniformly over frames lines them up with the bursts. The listener nods
//! with the smoothed burst energy and mirrors part of the speaker's
//! expression, both after a reaction lag.

mod store;

pub use store::{
    format_manifest, load_manifest, load_sample, load_split, parse_manifest, sample_dir_name, save_sample, write_dataset, ManifestEntry,
    Split, LISTENER_CSV, MANIFEST_FILE, SPEAKER_CSV, SPEAKER_WAV, TRANSCRIPT_TXT,
};

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audiofeat::AudioClip;
use crate::coeffspace::{CoefficientSequence, BETA_DIM, COEFF_DIM};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Listener expression channels that mirror the speaker.
pub const MIRRORED_BETA: usize = 16;
/// Pose channel that follows speech energy (pitch, i.e. nodding).
pub const NOD_CHANNEL: usize = 0;
pub const SMOOTH_FRAMES: usize = 5;
pub const SYLLABLES: [&str; 8] = ["ba", "da", "ga", "ka", "la", "ma", "na", "pa"];
const SYLLABLE_HZ: [f64; 8] = [150.0, 220.0, 310.0, 420.0, 560.0, 730.0, 940.0, 1200.0];
const HARMONICS: [f64; 3] = [1.0, 0.5, 0.25];
const MAX_AMPLITUDE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DyadConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub fps: f64,
    pub sample_rate: u32,
    pub coupling_nod: f64,
    pub coupling_expr: f64,
    pub lag_frames: usize,
    pub noise_sigma: f64,
}

impl Default for DyadConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_s: 64.0 / 30.0,
            fps: 30.0,
            sample_rate: 16000,
            coupling_nod: 0.9,
            coupling_expr: 0.9,
            lag_frames: 3,
            noise_sigma: 0.05,
        }
    }
}

impl DyadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if self.sample_rate < crate::audiofeat::MIN_SAMPLE_RATE {
            return bad(format!("sample rate {} is below {}", self.sample_rate, crate::audiofeat::MIN_SAMPLE_RATE));
        }
        for (name, v) in [("coupling_nod", self.coupling_nod), ("coupling_expr", self.coupling_expr)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if self.frames() == 0 {
            return bad("clip is shorter than one frame".into());
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        (self.duration_s * self.fps + 1e-9).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DyadicSample<S> {
    pub seed: u64,
    pub speaker_audio: AudioClip<S>,
    pub speaker_coeffs: CoefficientSequence<S>,
    pub listener_coeffs: CoefficientSequence<S>,
    pub transcript_tokens: Vec<String>,
    /// Mean burst amplitude per frame.
    pub energy: Vec<f64>,
}

/// Trailing moving average over `SMOOTH_FRAMES` frames (shorter at the start).
pub fn smooth_energy(energy: &[f64]) -> Vec<f64> {
    (0..energy.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(SMOOTH_FRAMES);
            energy[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
        })
        .collect()
}

/// Sample Pearson correlation; `None` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

struct Burst {
    token: usize,
    start: f64,
    length: f64,
    amplitude: f64,
    phase: f64,
}

/// Raised-cosine window on `[0, 1]`.
fn envelope(u: f64) -> f64 {
    if (0.0..=1.0).contains(&u) {
        0.5 - 0.5 * (2.0 * PI * u).cos()
    } else {
        0.0
    }
}

fn ar_track(rng: &mut ChaCha8Rng, frames: usize, decay: f64, std: f64, bound: f64) -> Vec<f64> {
    let step = Normal::new(0.0, std * (1.0 - decay * decay).sqrt()).expect("finite std");
    let mut x = Normal::new(0.0, std).expect("finite std").sample(rng);
    (0..frames)
        .map(|_| {
            x = (decay * x + step.sample(rng)).clamp(-bound, bound);
            x
        })
        .collect()
}

pub fn generate_dyad<S: Real>(cfg: &DyadConfig) -> Result<DyadicSample<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames = cfg.frames();
    let sr = cfg.sample_rate as f64;
    let n_samples = (frames as f64 / cfg.fps * sr).ceil() as usize;
    let samples_per_frame = sr / cfg.fps;

    let period = rng.random_range(8.0..=13.0);
    let segments = ((frames as f64 / period).round() as usize).max(1);
    let seg_len = frames as f64 / segments as f64;
    let bursts: Vec<Burst> = (0..segments)
        .map(|k| {
            let frac = rng.random_range(0.5..0.8);
            let slack = (1.0 - frac) * seg_len;
            Burst {
                token: rng.random_range(0..SYLLABLES.len()),
                start: (k as f64 * seg_len + rng.random_range(0.0..=slack * 0.5)) * samples_per_frame,
                length: frac * seg_len * samples_per_frame,
                amplitude: rng.random_range(0.2..MAX_AMPLITUDE),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect();

    let mut audio = vec![0.0f64; n_samples];
    let mut env = vec![0.0f64; n_samples];
    let norm: f64 = HARMONICS.iter().sum();
    for b in &bursts {
        let f0 = SYLLABLE_HZ[b.token];
        let first = b.start.floor() as usize;
        let last = ((b.start + b.length).ceil() as usize).min(n_samples);
        for i in first..last {
            let e = b.amplitude * envelope((i as f64 - b.start) / b.length);
            let t = i as f64 / sr;
            let tone: f64 = HARMONICS
                .iter()
                .enumerate()
                .map(|(h, w)| w * (2.0 * PI * f0 * (h + 1) as f64 * t + b.phase).sin())
                .sum();
            audio[i] += e * tone / norm;
            env[i] += e;
        }
    }
    let energy: Vec<f64> = (0..frames)
        .map(|t| {
            let lo = ((t as f64 * samples_per_frame).round() as usize).min(n_samples);
            let hi = (((t + 1) as f64 * samples_per_frame).round() as usize).min(n_samples);
            if hi > lo {
                env[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            } else {
                0.0
            }
        })
        .collect();

    let mut speaker = Array2::<f64>::zeros((frames, COEFF_DIM));
    for j in 0..BETA_DIM {
        for (t, v) in ar_track(&mut rng, frames, 0.9, 0.4, 1.0).into_iter().enumerate() {
            speaker[[t, j]] = v;
        }
    }
    for j in BETA_DIM..COEFF_DIM {
        for (t, v) in ar_track(&mut rng, frames, 0.9, 0.1, 0.5).into_iter().enumerate() {
            speaker[[t, j]] = v;
        }
    }

    let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
    let smoothed = smooth_energy(&energy);
    let lagged = |t: usize| t.checked_sub(cfg.lag_frames);
    let mut listener = Array2::<f64>::zeros((frames, COEFF_DIM));
    for t in 0..frames {
        let drive = lagged(t).map_or(0.0, |s| smoothed[s]);
        let nod = cfg.coupling_nod * drive + noise.sample(&mut rng);
        listener[[t, BETA_DIM + NOD_CHANNEL]] = nod.clamp(-0.5, 0.5);
        for j in 0..MIRRORED_BETA {
            let source = lagged(t).map_or(0.0, |s| speaker[[s, j]]);
            listener[[t, j]] = (cfg.coupling_expr * source + noise.sample(&mut rng)).clamp(-1.0, 1.0);
        }
    }

    let to_s = |m: &Array2<f64>| m.mapv(S::lit);
    Ok(DyadicSample {
        seed: cfg.seed,
        speaker_audio: AudioClip::new(audio.into_iter().map(S::lit).collect(), cfg.sample_rate)?,
        speaker_coeffs: CoefficientSequence::from_matrix(&to_s(&speaker), cfg.fps)?,
        listener_coeffs: CoefficientSequence::from_matrix(&to_s(&listener), cfg.fps)?,
        transcript_tokens: bursts.iter().map(|b| SYLLABLES[b.token].to_string()).collect(),
        energy,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits<S> {
    pub train: Vec<DyadicSample<S>>,
    pub val: Vec<DyadicSample<S>>,
    pub test: Vec<DyadicSample<S>>,
}

/// Split sizes for `n` samples: validation and test sizes are rounded (at
/// least one each), training takes the remainder.
pub fn split_sizes(n: usize, split: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (tr, va, te) = split;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) {
        return Err(Error::Invalid(format!("split fractions must be positive, got {split:?}")));
    }
    if ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split fractions must sum to 1, got {}", tr + va + te)));
    }
    if n < 3 {
        return Err(Error::Invalid(format!("{n} samples cannot fill three splits")));
    }
    let val = ((n as f64 * va).round() as usize).max(1);
    let test = ((n as f64 * te).round() as usize).max(1);
    if val + test >= n {
        return Err(Error::Invalid(format!("{n} samples leave no training data with split {split:?}")));
    }
    Ok((n - val - test, val, test))
}

/// Sample `i` is generated with seed `base.seed + i`; the first block goes
/// to training, the next to validation, the rest to test.
pub fn generate_dataset<S: Real>(base: &DyadConfig, n: usize, split: (f64, f64, f64)) -> Result<DatasetSplits<S>> {
    let (train, val, _) = split_sizes(n, split)?;
    let mut all = (0..n)
        .map(|i| {
            let cfg = DyadConfig {
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            generate_dyad(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let test = all.split_off(train + val);
    let val = all.split_off(train);
    Ok(DatasetSplits { train: all, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::video_frame_count;
    use proptest::prelude::*;

    fn quiet(seed: u64) -> DyadConfig {
        DyadConfig {
            seed,
            noise_sigma: 0.0,
            ..DyadConfig::default()
        }
    }

    #[test]
    fn decoupled_listener_is_still() {
        let cfg = DyadConfig {
            coupling_nod: 0.0,
            coupling_expr: 0.0,
            ..quiet(4)
        };
        let s = generate_dyad::<f64>(&cfg).unwrap();
        assert!(s.listener_coeffs.to_matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_sample() {
        let a = generate_dyad::<f64>(&DyadConfig::default()).unwrap();
        let b = generate_dyad::<f64>(&DyadConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_dyad::<f64>(&DyadConfig { seed: 1, ..DyadConfig::default() }).unwrap();
        assert_ne!(a.speaker_audio, c.speaker_audio);
    }

    #[test]
    fn full_nod_coupling_tracks_energy_exactly() {
        let cfg = DyadConfig {
            coupling_nod: 1.0,
            lag_frames: 0,
            ..quiet(7)
        };
        let s = generate_dyad::<f64>(&cfg).unwrap();
        let pitch: Vec<f64> = s.listener_coeffs.frames().iter().map(|f| f.pose[NOD_CHANNEL]).collect();
        let r = pearson(&smooth_energy(&s.energy), &pitch).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lengths_and_ranges() {
        for (dur, fps) in [(64.0 / 30.0, 30.0), (1.0, 25.0), (3.3, 30.0)] {
            let cfg = DyadConfig { duration_s: dur, fps, noise_sigma: 0.5, ..DyadConfig::default() };
            let s = generate_dyad::<f64>(&cfg).unwrap();
            let t = (dur * fps + 1e-9).floor() as usize;
            assert_eq!(s.speaker_coeffs.len(), t);
            assert_eq!(s.listener_coeffs.len(), t);
            assert_eq!(video_frame_count(s.speaker_audio.samples().len(), 16000, fps), t);
            assert!(s.speaker_audio.samples().iter().all(|v| v.abs() <= MAX_AMPLITUDE));
            for seq in [&s.speaker_coeffs, &s.listener_coeffs] {
                for f in seq.frames() {
                    assert!(f.beta.iter().all(|v| v.abs() <= 1.0));
                    assert!(f.pose.iter().all(|v| v.abs() <= 0.5));
                }
            }
            assert!(!s.transcript_tokens.is_empty());
        }
        assert_eq!(generate_dyad::<f64>(&DyadConfig::default()).unwrap().speaker_coeffs.len(), 64);
    }

    #[test]
    fn nod_correlates_with_speech_energy() {
        let cfg = DyadConfig { coupling_nod: 0.8, noise_sigma: 0.1, lag_frames: 3, ..DyadConfig::default() };
        let s = generate_dyad::<f64>(&cfg).unwrap();
        let smoothed = smooth_energy(&s.energy);
        let pitch: Vec<f64> = s.listener_coeffs.frames().iter().map(|f| f.pose[NOD_CHANNEL]).collect();
        let r = pearson(&smoothed[..smoothed.len() - 3], &pitch[3..]).unwrap();
        assert!(r > 0.5, "r = {r}");
    }

    #[test]
    fn uncoupled_nod_is_uncorrelated() {
        let mut energy = Vec::new();
        let mut pitch = Vec::new();
        for seed in 0..20 {
            let cfg = DyadConfig { seed, coupling_nod: 0.0, noise_sigma: 0.1, ..DyadConfig::default() };
            let s = generate_dyad::<f64>(&cfg).unwrap();
            let sm = smooth_energy(&s.energy);
            energy.extend_from_slice(&sm[..sm.len() - 3]);
            pitch.extend(s.listener_coeffs.frames()[3..].iter().map(|f| f.pose[NOD_CHANNEL]));
        }
        assert!(energy.len() >= 1000);
        assert!(pearson(&energy, &pitch).unwrap().abs() < 0.1);
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_sizes(10, (0.8, 0.1, 0.1)).unwrap(), (8, 1, 1));
        assert_eq!(split_sizes(200, (0.8, 0.1, 0.1)).unwrap(), (160, 20, 20));
        assert!(split_sizes(2, (0.8, 0.1, 0.1)).is_err());
        assert!(split_sizes(10, (0.8, 0.1, 0.2)).is_err());
        assert!(split_sizes(10, (1.0, 0.0, 0.0)).is_err());

        let base = DyadConfig { duration_s: 0.5, ..DyadConfig::default() };
        let d = generate_dataset::<f64>(&base, 10, (0.8, 0.1, 0.1)).unwrap();
        let mut seeds: Vec<u64> = d.train.iter().chain(&d.val).chain(&d.test).map(|s| s.seed).collect();
        seeds.sort_unstable();
        assert_eq!(seeds, (0..10).collect::<Vec<_>>());
        assert_eq!(d, generate_dataset::<f64>(&base, 10, (0.8, 0.1, 0.1)).unwrap());
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            DyadConfig { duration_s: 0.0, ..DyadConfig::default() },
            DyadConfig { fps: -1.0, ..DyadConfig::default() },
            DyadConfig { coupling_nod: 1.5, ..DyadConfig::default() },
            DyadConfig { noise_sigma: -0.1, ..DyadConfig::default() },
            DyadConfig { sample_rate: 100, ..DyadConfig::default() },
            DyadConfig { duration_s: 0.01, ..DyadConfig::default() },
        ] {
            assert!(generate_dyad::<f64>(&cfg).is_err(), "{cfg:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn splits_partition_the_samples(n in 3usize..400, va in 0.01f64..0.3, te in 0.01f64..0.3) {
            let split = (1.0 - va - te, va, te);
            if let Ok((a, b, c)) = split_sizes(n, split) {
                prop_assert_eq!(a + b + c, n);
                prop_assert!(a >= 1 && b >= 1 && c >= 1);
            }
        }

        #[test]
        fn generated_values_stay_bounded(seed in 0u64..10_000, noise in 0.0f64..1.0) {
            let cfg = DyadConfig { seed, noise_sigma: noise, duration_s: 1.0, ..DyadConfig::default() };
            let s = generate_dyad::<f64>(&cfg).unwrap();
            for f in s.listener_coeffs.frames().iter().chain(s.speaker_coeffs.frames()) {
                prop_assert!(f.beta.iter().all(|v| v.abs() <= 1.0));
                prop_assert!(f.pose.iter().all(|v| v.abs() <= 0.5));
            }
            prop_assert!(s.energy.iter().all(|&e| (0.0..=MAX_AMPLITUDE).contains(&e)));
        }
    }
}
