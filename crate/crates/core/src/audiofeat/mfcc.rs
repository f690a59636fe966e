use std::f64::consts::PI;

use ndarray::{concatenate, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{check_fps, frame_window, video_frame_count, AudioClip};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// MFCC front-end settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MfccConfig {
    pub n_mfcc: usize,
    pub n_mels: usize,
    pub pre_emphasis: f64,
    /// Hann analysis window length, centred on each video frame.
    pub window_ms: f64,
    /// Regression delta half-width.
    pub delta_radius: usize,
    /// Filterbank energies are clamped to this before the log.
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_mfcc: 13,
            n_mels: 26,
            pre_emphasis: 0.97,
            window_ms: 25.0,
            delta_radius: 2,
            log_floor: 1e-10,
        }
    }
}

/// MFCC, delta and delta-delta matrices, one row per video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioFeatureStack<S> {
    pub mfcc: Array2<S>,
    pub delta: Array2<S>,
    pub delta2: Array2<S>,
    pub fps: f64,
}

impl<S: Real> AudioFeatureStack<S> {
    pub fn frames(&self) -> usize {
        self.mfcc.nrows()
    }

    pub fn n_mfcc(&self) -> usize {
        self.mfcc.ncols()
    }

    /// `[mfcc | delta | delta2]`, the per-frame `M_t` rows.
    pub fn concatenated(&self) -> Array2<S> {
        concatenate(Axis(1), &[self.mfcc.view(), self.delta.view(), self.delta2.view()])
            .expect("shapes agree")
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters evenly spaced on the mel scale over `[0, sr/2]`,
/// evaluated at the FFT bin frequencies. Shape `[n_mels, n_fft/2 + 1]`.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Array2<f64> {
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    Array2::from_shape_fn((n_mels, n_bins), |(m, k)| {
        let f = k as f64 * sample_rate / n_fft as f64;
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f > lo && f <= mid {
            (f - lo) / (mid - lo)
        } else if f > mid && f < hi {
            (hi - f) / (hi - mid)
        } else {
            0.0
        }
    })
}

/// Orthonormal DCT-II basis, shape `[n_out, n_in]`.
fn dct2_basis(n_out: usize, n_in: usize) -> Array2<f64> {
    let scale = (2.0 / n_in as f64).sqrt();
    Array2::from_shape_fn((n_out, n_in), |(i, m)| {
        let c = scale * (PI * i as f64 * (m as f64 + 0.5) / n_in as f64).cos();
        if i == 0 {
            c / 2f64.sqrt()
        } else {
            c
        }
    })
}

/// Regression delta over `±radius` frames with edge replication:
/// `d_t = Σ n (c_{t+n} - c_{t-n}) / (2 Σ n²)`.
pub fn delta<S: Real>(x: &Array2<S>, radius: usize) -> Array2<S> {
    let t_len = x.nrows() as i64;
    let denom = S::lit(2.0 * (1..=radius).map(|n| (n * n) as f64).sum::<f64>());
    let clamp = |t: i64| t.clamp(0, t_len - 1) as usize;
    Array2::from_shape_fn(x.raw_dim(), |(t, j)| {
        let t = t as i64;
        let mut acc = S::zero();
        for n in 1..=radius as i64 {
            acc += S::lit(n as f64) * (x[[clamp(t + n), j]] - x[[clamp(t - n), j]]);
        }
        acc / denom
    })
}

/// MFCC stack with the default recipe and `n_mfcc` coefficients.
pub fn mfcc_stack<S: Real>(clip: &AudioClip<S>, fps: f64, n_mfcc: usize) -> Result<AudioFeatureStack<S>> {
    mfcc_stack_with(
        clip,
        fps,
        &MfccConfig {
            n_mfcc,
            n_mels: n_mfcc.max(26),
            ..MfccConfig::default()
        },
    )
}

/// MFCC stack aligned to video frames: one Hann-windowed analysis frame
/// centred on each video frame midpoint, so the hop equals `1 / fps`.
/// The front end runs in `f64` regardless of `S`.
pub fn mfcc_stack_with<S: Real>(clip: &AudioClip<S>, fps: f64, cfg: &MfccConfig) -> Result<AudioFeatureStack<S>> {
    check_fps(fps)?;
    if !(8..=40).contains(&cfg.n_mfcc) {
        return Err(Error::Invalid(format!("n_mfcc must be in [8, 40], got {}", cfg.n_mfcc)));
    }
    if cfg.n_mels < cfg.n_mfcc {
        return Err(Error::Invalid(format!(
            "n_mels ({}) must be at least n_mfcc ({})",
            cfg.n_mels, cfg.n_mfcc
        )));
    }
    let sr = clip.sample_rate();
    let win_len = (cfg.window_ms / 1000.0 * sr as f64).round() as usize;
    let samples = clip.samples();
    if samples.len() < win_len {
        return Err(Error::Audio(format!(
            "clip has {} samples, shorter than one {} ms analysis window",
            samples.len(),
            cfg.window_ms
        )));
    }
    let n_frames = video_frame_count(samples.len(), sr, fps);
    if n_frames == 0 {
        return Err(Error::Audio("clip shorter than one video frame".into()));
    }

    let mut emphasized: Vec<f64> = samples.iter().map(|v| v.as_f64()).collect();
    for i in (1..emphasized.len()).rev() {
        emphasized[i] -= cfg.pre_emphasis * emphasized[i - 1];
    }

    let n_fft = win_len.next_power_of_two();
    let hann: Vec<f64> = (0..win_len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (win_len - 1).max(1) as f64).cos())
        .collect();
    let filters = mel_filterbank(cfg.n_mels, n_fft, sr as f64);
    let dct = dct2_basis(cfg.n_mfcc, cfg.n_mels);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut mfcc = Array2::<f64>::zeros((n_frames, cfg.n_mfcc));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = ndarray::Array1::<f64>::zeros(n_fft / 2 + 1);
    for t in 0..n_frames {
        let start = frame_window(t, sr, fps, win_len);
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (n, w) in hann.iter().enumerate() {
            let idx = start + n as i64;
            if idx >= 0 && (idx as usize) < emphasized.len() {
                buf[n].re = emphasized[idx as usize] * w;
            }
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let log_energy = filters.dot(&power).mapv(|e| e.max(cfg.log_floor).ln());
        mfcc.row_mut(t).assign(&dct.dot(&log_energy));
    }

    let mfcc = mfcc.mapv(S::lit);
    let d1 = delta(&mfcc, cfg.delta_radius);
    let d2 = delta(&d1, cfg.delta_radius);
    Ok(AudioFeatureStack {
        mfcc,
        delta: d1,
        delta2: d2,
        fps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::frame_audio;
    use rand::{Rng, SeedableRng};

    fn tone(freq: f64, seconds: f64, sr: u32) -> AudioClip<f64> {
        let n = (seconds * sr as f64).round() as usize;
        AudioClip::new(
            (0..n)
                .map(|i| 0.4 * (2.0 * PI * freq * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap()
    }

    /// Independent MFCC: naive DFT, per-coefficient loops, same recipe.
    fn reference_mfcc(x: &[f64], sr: u32, fps: f64, n_mfcc: usize) -> Vec<Vec<f64>> {
        let n_mels = 26;
        let win = (0.025 * sr as f64).round() as usize;
        let mut n_fft = 1;
        while n_fft < win {
            n_fft *= 2;
        }
        let mut y = vec![0.0; x.len()];
        for i in 0..x.len() {
            y[i] = x[i] - if i > 0 { 0.97 * x[i - 1] } else { 0.0 };
        }
        let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
        let inv = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
        let top = mel(sr as f64 / 2.0);
        let pts: Vec<f64> = (0..n_mels + 2).map(|i| inv(top * i as f64 / (n_mels + 1) as f64)).collect();
        let n_frames = ((x.len() as f64 / sr as f64) * fps * (1.0 + 1e-9)).floor() as usize;
        let mut rows = Vec::new();
        for t in 0..n_frames {
            let center = (t as f64 + 0.5) / fps * sr as f64;
            let start = (center - win as f64 / 2.0).round() as i64;
            let frame: Vec<f64> = (0..win)
                .map(|n| {
                    let i = start + n as i64;
                    let s = if i >= 0 && (i as usize) < y.len() { y[i as usize] } else { 0.0 };
                    s * (0.5 - 0.5 * (2.0 * PI * n as f64 / (win - 1) as f64).cos())
                })
                .collect();
            let mut log_e = vec![0.0; n_mels];
            for k in 0..=n_fft / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &v) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                let p = re * re + im * im;
                let f = k as f64 * sr as f64 / n_fft as f64;
                for m in 0..n_mels {
                    let w = if f > pts[m] && f <= pts[m + 1] {
                        (f - pts[m]) / (pts[m + 1] - pts[m])
                    } else if f > pts[m + 1] && f < pts[m + 2] {
                        (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1])
                    } else {
                        0.0
                    };
                    log_e[m] += w * p;
                }
            }
            let log_e: Vec<f64> = log_e.iter().map(|e| e.max(1e-10).ln()).collect();
            let row = (0..n_mfcc)
                .map(|i| {
                    let s: f64 = (0..n_mels)
                        .map(|m| log_e[m] * (PI * i as f64 * (m as f64 + 0.5) / n_mels as f64).cos())
                        .sum();
                    let norm = if i == 0 { (1.0 / n_mels as f64).sqrt() } else { (2.0 / n_mels as f64).sqrt() };
                    s * norm
                })
                .collect();
            rows.push(row);
        }
        rows
    }

    fn row_distance(a: &Array2<f64>, b: &Array2<f64>, t: usize) -> f64 {
        a.row(t)
            .iter()
            .zip(b.row(t).iter())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn matches_reference_oracle_on_a_sine() {
        let clip = tone(440.0, 0.3, 8000);
        let stack = mfcc_stack(&clip, 30.0, 13).unwrap();
        let reference = reference_mfcc(clip.samples(), 8000, 30.0, 13);
        assert_eq!(stack.frames(), reference.len());
        for (t, row) in reference.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((stack.mfcc[[t, j]] - v).abs() < 1e-6, "t={t} j={j}: {} vs {v}", stack.mfcc[[t, j]]);
            }
        }
    }

    #[test]
    fn different_pitches_give_different_rows() {
        let a = mfcc_stack(&tone(440.0, 0.5, 16000), 30.0, 13).unwrap();
        let b = mfcc_stack(&tone(880.0, 0.5, 16000), 30.0, 13).unwrap();
        for t in 0..a.frames() {
            assert!(row_distance(&a.mfcc, &b.mfcc, t) > 1.0);
        }
    }

    #[test]
    fn silence_is_constant_with_zero_deltas() {
        let clip = AudioClip::new(vec![0.0f64; 16000], 16000).unwrap();
        let stack = mfcc_stack(&clip, 30.0, 13).unwrap();
        for t in 1..stack.frames() {
            assert_eq!(stack.mfcc.row(t), stack.mfcc.row(0));
        }
        assert!(stack.delta.iter().all(|v| v.abs() < 1e-12));
        assert!(stack.delta2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dc_input_has_zero_delta() {
        let clip = AudioClip::new(vec![0.5f64; 16000], 16000).unwrap();
        let stack = mfcc_stack(&clip, 30.0, 13).unwrap();
        assert!(stack.delta.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn row_count_matches_frame_audio() {
        for &(secs, fps) in &[(1.0, 30.0), (0.77, 25.0), (2.1334, 30.0)] {
            let clip = tone(300.0, secs, 16000);
            let stack = mfcc_stack(&clip, fps, 13).unwrap();
            assert_eq!(stack.frames(), frame_audio(&clip, fps, 0).unwrap().len());
        }
    }

    #[test]
    fn gain_shifts_only_the_energy_coefficient() {
        // broadband noise keeps every mel band above the log floor
        let n = 16000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                0.2 * (2.0 * PI * 300.0 * t).sin() * (1.0 + 0.5 * (2.0 * PI * 3.0 * t).sin())
                    + 0.05 * (2.0 * PI * 2100.0 * t).sin()
                    + rng.random_range(-0.01..0.01)
            })
            .collect();
        let clip = AudioClip::new(samples, 16000).unwrap();
        let a = mfcc_stack(&clip, 30.0, 13).unwrap();
        let b = mfcc_stack(&clip.scaled(2.0), 30.0, 13).unwrap();
        for t in 0..a.frames() {
            assert!((b.mfcc[[t, 0]] - a.mfcc[[t, 0]]).abs() > 1.0);
            for j in 1..13 {
                assert!((a.mfcc[[t, j]] - b.mfcc[[t, j]]).abs() < 1e-6);
                assert!((a.delta[[t, j]] - b.delta[[t, j]]).abs() < 1e-6);
                assert!((a.delta2[[t, j]] - b.delta2[[t, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let clip = tone(440.0, 0.5, 16000);
        assert!(mfcc_stack(&clip, 30.0, 7).is_err());
        assert!(mfcc_stack(&clip, 30.0, 41).is_err());
        let short = tone(440.0, 0.01, 16000);
        assert!(mfcc_stack(&short, 30.0, 13).is_err());
    }

    #[test]
    fn delta_of_linear_ramp_is_slope_inside() {
        let x = Array2::from_shape_fn((10, 1), |(t, _)| 2.0 * t as f64);
        let d = delta(&x, 2);
        for t in 2..8 {
            assert!((d[[t, 0]] - 2.0).abs() < 1e-12);
        }
    }
}
