//! Channel-attention fusion of the audio-side streams and the cross-modal
//! fusion with the speaker's expression and pose.
//!
//! All layers operate on frame rows; a `[T, d]` matrix is `T` independent
//! frame vectors, so the squeeze step of squeeze-excitation is the identity.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;

use crate::coeffspace::{BETA_DIM, COEFF_DIM, POSE_DIM};
use crate::error::{Error, Result};
use crate::layers::{hconcat, hsplit, impl_params, Linear};
use crate::scalar::{sigmoid, Real};

pub const DEFAULT_SE_RATIO: usize = 4;

/// Squeeze-excitation gate: `out = x ⊙ σ(W2 relu(W1 x + b1) + b2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeGate<S> {
    pub squeeze: Linear<S>,
    pub excite: Linear<S>,
}

impl_params!(SeGate { squeeze, excite });

pub struct SeCache<S> {
    input: Array2<S>,
    hidden: Array2<S>,
    gate: Array2<S>,
}

impl<S: Real> SeGate<S> {
    pub fn bottleneck(channels: usize, ratio: usize) -> usize {
        (channels / ratio.max(1)).max(1)
    }

    pub fn zeros(channels: usize, ratio: usize) -> Self {
        let r = Self::bottleneck(channels, ratio);
        Self {
            squeeze: Linear::zeros(channels, r),
            excite: Linear::zeros(r, channels),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, channels: usize, ratio: usize) -> Self {
        let r = Self::bottleneck(channels, ratio);
        Self {
            squeeze: Linear::init(rng, channels, r),
            excite: Linear::init(rng, r, channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.squeeze.inputs()
    }

    pub fn forward(&self, x: &ArrayView2<S>) -> (Array2<S>, SeCache<S>) {
        let hidden = self.squeeze.forward(x).mapv(|v| v.max(S::zero()));
        let gate = self.excite.forward(&hidden.view()).mapv(sigmoid);
        let out = x * &gate;
        (
            out,
            SeCache {
                input: x.to_owned(),
                hidden,
                gate,
            },
        )
    }

    pub fn backward(&self, cache: &SeCache<S>, dy: &ArrayView2<S>, grad: &mut SeGate<S>) -> Array2<S> {
        let mut dx = dy * &cache.gate;
        // dL/d(pre-sigmoid) = dy ⊙ x ⊙ g(1-g)
        let mut dz = dy * &cache.input;
        Zip::from(&mut dz).and(&cache.gate).for_each(|d, &g| *d *= g * (S::one() - g));
        let mut dh = self.excite.backward(&cache.hidden.view(), &dz.view(), &mut grad.excite);
        Zip::from(&mut dh)
            .and(&cache.hidden)
            .for_each(|d, &h| if h <= S::zero() { *d = S::zero() });
        dx += &self.squeeze.backward(&cache.input.view(), &dh.view(), &mut grad.squeeze);
        dx
    }
}

/// Gates one channel vector.
pub fn se_gate<S: Real>(channels: &[S], gate: &SeGate<S>) -> Result<Vec<S>> {
    if channels.len() != gate.channels() {
        return Err(Error::Shape(format!(
            "se_gate expects {} channels, got {}",
            gate.channels(),
            channels.len()
        )));
    }
    let x = Array2::from_shape_vec((1, channels.len()), channels.to_vec()).expect("1 row");
    Ok(gate.forward(&x.view()).0.into_raw_vec_and_offset().0)
}

/// Widths of the five audio-side streams entering the fusion module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionDims {
    pub d_proj: usize,
    pub d_text: usize,
    pub d_mfcc_stack: usize,
    pub d_fused: usize,
}

impl FusionDims {
    pub fn concat_width(&self) -> usize {
        3 * self.d_proj + self.d_text + self.d_mfcc_stack
    }

    fn stream_widths(&self) -> [usize; 5] {
        [self.d_proj, self.d_proj, self.d_proj, self.d_text, self.d_mfcc_stack]
    }
}

/// `A_t = W (g ⊙ [high | mid | low | s | m]) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<S> {
    pub gate: SeGate<S>,
    pub out: Linear<S>,
}

impl_params!(FusionParams { gate, out });

pub struct FusionCache<S> {
    se: SeCache<S>,
    gated: Array2<S>,
}

/// Gradients with respect to each fused stream.
pub struct FusionInputGrads<S> {
    pub high: Array2<S>,
    pub mid: Array2<S>,
    pub low: Array2<S>,
    pub text: Array2<S>,
    pub mfcc: Array2<S>,
}

impl<S: Real> FusionParams<S> {
    pub fn zeros(dims: FusionDims, se_ratio: usize) -> Self {
        Self {
            gate: SeGate::zeros(dims.concat_width(), se_ratio),
            out: Linear::zeros(dims.concat_width(), dims.d_fused),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, dims: FusionDims, se_ratio: usize) -> Self {
        Self {
            gate: SeGate::init(rng, dims.concat_width(), se_ratio),
            out: Linear::init(rng, dims.concat_width(), dims.d_fused),
        }
    }

    pub fn forward(
        &self,
        high: &ArrayView2<S>,
        mid: &ArrayView2<S>,
        low: &ArrayView2<S>,
        text: &ArrayView2<S>,
        mfcc: &ArrayView2<S>,
    ) -> Result<(Array2<S>, FusionCache<S>)> {
        let concat = hconcat(&[high.view(), mid.view(), low.view(), text.view(), mfcc.view()]);
        if concat.ncols() != self.gate.channels() || concat.ncols() != self.out.inputs() {
            return Err(Error::Shape(format!(
                "fusion expects {} concatenated channels, got {}",
                self.gate.channels(),
                concat.ncols()
            )));
        }
        let (gated, se) = self.gate.forward(&concat.view());
        let out = self.out.forward(&gated.view());
        Ok((out, FusionCache { se, gated }))
    }

    pub fn backward(
        &self,
        dims: FusionDims,
        cache: &FusionCache<S>,
        dy: &ArrayView2<S>,
        grad: &mut FusionParams<S>,
    ) -> FusionInputGrads<S> {
        let dgated = self.out.backward(&cache.gated.view(), dy, &mut grad.out);
        let dconcat = self.gate.backward(&cache.se, &dgated.view(), &mut grad.gate);
        let mut parts = hsplit(&dconcat.view(), &dims.stream_widths()).into_iter();
        FusionInputGrads {
            high: parts.next().unwrap(),
            mid: parts.next().unwrap(),
            low: parts.next().unwrap(),
            text: parts.next().unwrap(),
            mfcc: parts.next().unwrap(),
        }
    }
}

/// Fused per-frame audio representation.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedAudioFeature<S> {
    pub vector: Vec<S>,
}

fn row<S: Real>(v: &[S]) -> Array2<S> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("1 row")
}

/// Single-frame audio fusion.
pub fn fuse_audio<S: Real>(
    high: &[S],
    mid: &[S],
    low: &[S],
    s_t: &[S],
    m_t: &[S],
    params: &FusionParams<S>,
) -> Result<FusedAudioFeature<S>> {
    let (out, _) = params.forward(&row(high).view(), &row(mid).view(), &row(low).view(), &row(s_t).view(), &row(m_t).view())?;
    Ok(FusedAudioFeature {
        vector: out.into_raw_vec_and_offset().0,
    })
}

/// `e_t = W2 tanh(W1 [beta | pose | A_t] + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossModalParams<S> {
    pub hidden: Linear<S>,
    pub out: Linear<S>,
}

impl_params!(CrossModalParams { hidden, out });

pub struct CrossModalCache<S> {
    input: Array2<S>,
    hidden: Array2<S>,
}

impl<S: Real> CrossModalParams<S> {
    pub fn zeros(d_fused: usize, d_xm: usize) -> Self {
        Self {
            hidden: Linear::zeros(COEFF_DIM + d_fused, d_xm),
            out: Linear::zeros(d_xm, d_xm),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, d_fused: usize, d_xm: usize) -> Self {
        Self {
            hidden: Linear::init(rng, COEFF_DIM + d_fused, d_xm),
            out: Linear::init(rng, d_xm, d_xm),
        }
    }

    pub fn d_xm(&self) -> usize {
        self.out.outputs()
    }

    /// `speaker`: `[T, 70]` expression+pose rows; `audio`: `[T, d_fused]`.
    pub fn forward(&self, speaker: &ArrayView2<S>, audio: &ArrayView2<S>) -> Result<(Array2<S>, CrossModalCache<S>)> {
        if speaker.ncols() != COEFF_DIM || COEFF_DIM + audio.ncols() != self.hidden.inputs() {
            return Err(Error::Shape(format!(
                "cross-modal fusion expects {COEFF_DIM} + {} inputs, got {} + {}",
                self.hidden.inputs() - COEFF_DIM,
                speaker.ncols(),
                audio.ncols()
            )));
        }
        if speaker.nrows() != audio.nrows() {
            return Err(Error::Shape(format!(
                "speaker has {} frames, audio has {}",
                speaker.nrows(),
                audio.nrows()
            )));
        }
        let input = hconcat(&[speaker.view(), audio.view()]);
        let hidden = self.hidden.forward(&input.view()).mapv(|v| v.tanh());
        let out = self.out.forward(&hidden.view());
        Ok((out, CrossModalCache { input, hidden }))
    }

    /// Returns `(d speaker, d audio)`.
    pub fn backward(
        &self,
        cache: &CrossModalCache<S>,
        dy: &ArrayView2<S>,
        grad: &mut CrossModalParams<S>,
    ) -> (Array2<S>, Array2<S>) {
        let mut dh = self.out.backward(&cache.hidden.view(), dy, &mut grad.out);
        Zip::from(&mut dh).and(&cache.hidden).for_each(|d, &h| *d *= S::one() - h * h);
        let dinput = self.hidden.backward(&cache.input.view(), &dh.view(), &mut grad.hidden);
        let d_audio = dinput.ncols() - COEFF_DIM;
        let mut parts = hsplit(&dinput.view(), &[COEFF_DIM, d_audio]).into_iter();
        (parts.next().unwrap(), parts.next().unwrap())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossModalEmbedding<S> {
    pub vector: Vec<S>,
}

/// Single-frame cross-modal fusion.
pub fn fuse_cross_modal<S: Real>(
    beta_t: &[S; BETA_DIM],
    pose_t: &[S; POSE_DIM],
    audio_t: &FusedAudioFeature<S>,
    params: &CrossModalParams<S>,
) -> Result<CrossModalEmbedding<S>> {
    let speaker: Vec<S> = beta_t.iter().chain(pose_t.iter()).copied().collect();
    let (out, _) = params.forward(&row(&speaker).view(), &row(&audio_t.vector).view())?;
    Ok(CrossModalEmbedding {
        vector: out.into_raw_vec_and_offset().0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DIMS: FusionDims = FusionDims {
        d_proj: 4,
        d_text: 3,
        d_mfcc_stack: 6,
        d_fused: 5,
    };

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn saturated_gate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gate = SeGate::<f64>::init(&mut rng, 8, 4);
        gate.excite.w.fill(0.0);
        gate.excite.b.fill(20.0);
        let x = rand_vec(&mut rng, 8);
        let y = se_gate(&x, &gate).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let gate = SeGate::<f64>::zeros(8, 4);
        assert!(se_gate(&[0.0; 8], &gate).unwrap().iter().all(|&v| v == 0.0));
        let p = FusionParams::<f64>::zeros(DIMS, 4);
        let out = fuse_audio(&[0.0; 4], &[0.0; 4], &[0.0; 4], &[0.0; 3], &[0.0; 6], &p).unwrap();
        assert_eq!(out.vector, vec![0.0; 5]);
        let xm = CrossModalParams::<f64>::zeros(5, 7);
        let e = fuse_cross_modal(&[0.0; BETA_DIM], &[0.0; POSE_DIM], &out, &xm).unwrap();
        assert_eq!(e.vector, vec![0.0; 7]);
    }

    proptest::proptest! {
        #[test]
        fn gate_never_amplifies(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gate = SeGate::<f64>::init(&mut rng, 12, 4);
            let x: Vec<f64> = rand_vec(&mut rng, 12).iter().map(|v| v * scale).collect();
            let y = se_gate(&x, &gate).unwrap();
            for (a, b) in x.iter().zip(&y) {
                proptest::prop_assert!(b.abs() <= a.abs());
            }
            proptest::prop_assert_eq!(se_gate(&x, &gate).unwrap(), y);
        }
    }

    #[test]
    fn shape_errors() {
        let gate = SeGate::<f64>::zeros(8, 4);
        assert!(se_gate(&[0.0; 7], &gate).is_err());
        let p = FusionParams::<f64>::zeros(DIMS, 4);
        assert!(fuse_audio(&[0.0; 4], &[0.0; 4], &[0.0; 4], &[0.0; 3], &[0.0; 5], &p).is_err());
    }

    #[test]
    fn streams_are_not_interchangeable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = FusionParams::<f64>::init(&mut rng, DIMS, 4);
        let sig = vec![0.7, -0.3, 0.5, 0.9];
        let z4 = vec![0.0; 4];
        let a = fuse_audio(&sig, &z4, &z4, &[0.0; 3], &[0.0; 6], &p).unwrap();
        let mut m = vec![0.0; 6];
        m[..4].copy_from_slice(&sig);
        let b = fuse_audio(&z4, &z4, &z4, &[0.0; 3], &m, &p).unwrap();
        assert_ne!(a.vector, b.vector);
    }

    #[test]
    fn every_stream_reaches_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = FusionParams::<f64>::init(&mut rng, DIMS, 4);
        let base: Vec<Vec<f64>> = [4, 4, 4, 3, 6].iter().map(|&n| rand_vec(&mut rng, n)).collect();
        let eval = |s: &[Vec<f64>]| fuse_audio(&s[0], &s[1], &s[2], &s[3], &s[4], &p).unwrap().vector;
        let y0 = eval(&base);
        for block in 0..5 {
            let mut doubled = base.clone();
            doubled[block].iter_mut().for_each(|v| *v *= 2.0);
            let y1 = eval(&doubled);
            let change: f64 = y0.iter().zip(&y1).map(|(a, b)| (a - b).abs()).sum();
            assert!(change > 1e-6, "block {block} has no effect");
        }
    }

    #[test]
    fn cross_modal_sees_all_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = CrossModalParams::<f64>::init(&mut rng, 5, 9);
        let mut beta = [0.0; BETA_DIM];
        beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let mut pose = [0.0; POSE_DIM];
        pose.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let audio = FusedAudioFeature { vector: rand_vec(&mut rng, 5) };
        let y0 = fuse_cross_modal(&beta, &pose, &audio, &p).unwrap().vector;
        assert_eq!(y0.len(), 9);
        let h = 1e-6;
        let mut b2 = beta;
        b2[10] += h;
        let mut p2 = pose;
        p2[4] += h;
        let mut a2 = audio.clone();
        a2.vector[2] += h;
        for y1 in [
            fuse_cross_modal(&b2, &pose, &audio, &p).unwrap().vector,
            fuse_cross_modal(&beta, &p2, &audio, &p).unwrap().vector,
            fuse_cross_modal(&beta, &pose, &a2, &p).unwrap().vector,
        ] {
            let sens: f64 = y0.iter().zip(&y1).map(|(a, b)| (a - b).abs()).sum::<f64>() / h;
            assert!(sens > 1e-3);
        }
    }

    fn fd_check<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], analytic: &[f64]) {
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-4);
            assert!((fd - analytic[i]).abs() / denom < 1e-4, "i={i}: fd {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn fusion_and_cross_modal_input_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = FusionParams::<f64>::init(&mut rng, DIMS, 4);
        let xm = CrossModalParams::<f64>::init(&mut rng, 5, 6);
        let t = 3;
        let widths = [4, 4, 4, 3, 6, COEFF_DIM];
        let total: usize = widths.iter().sum();
        let flat = rand_vec(&mut rng, t * total);
        let weights = rand_vec(&mut rng, t * 6);
        let split = |flat: &[f64]| -> Vec<Array2<f64>> {
            let m = Array2::from_shape_vec((t, total), flat.to_vec()).unwrap();
            hsplit(&m.view(), &widths)
        };
        let loss = |flat: &[f64]| {
            let s = split(flat);
            let (a, _) = p.forward(&s[0].view(), &s[1].view(), &s[2].view(), &s[3].view(), &s[4].view()).unwrap();
            let (e, _) = xm.forward(&s[5].view(), &a.view()).unwrap();
            e.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let s = split(&flat);
        let (a, fc) = p.forward(&s[0].view(), &s[1].view(), &s[2].view(), &s[3].view(), &s[4].view()).unwrap();
        let (_, xc) = xm.forward(&s[5].view(), &a.view()).unwrap();
        let dy = Array2::from_shape_vec((t, 6), weights.clone()).unwrap();
        let mut gx = CrossModalParams::zeros(5, 6);
        let (dspk, daudio) = xm.backward(&xc, &dy.view(), &mut gx);
        let mut gf = FusionParams::zeros(DIMS, 4);
        let g = p.backward(DIMS, &fc, &daudio.view(), &mut gf);
        let analytic = hconcat(&[g.high.view(), g.mid.view(), g.low.view(), g.text.view(), g.mfcc.view(), dspk.view()]);
        fd_check(loss, &flat, analytic.as_slice().unwrap());
    }
}
