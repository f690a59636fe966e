use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;

use crate::audiofeat::AudioFeatureStack;
use crate::error::{Error, Result};
use crate::fusion::{SeCache, SeGate};
use crate::layers::{impl_params, l2_normalize_rows, l2_normalize_rows_backward, Linear};
use crate::scalar::Real;

/// Kernel taps per convolution.
const KERNEL: usize = 3;

/// Dilation of stage `s` (0-based): 1, 2, 4.
fn dilation(stage: usize) -> usize {
    1 << stage
}

/// Frames on either side of `t` that can influence stage `s` at `t`.
pub fn receptive_radius(stage: usize) -> usize {
    (0..=stage).map(dilation).sum()
}

/// Per-frame low/mid/high features, each `[T, d_proj]`, rows unit length
/// (or zero).
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<S> {
    pub low: Array2<S>,
    pub mid: Array2<S>,
    pub high: Array2<S>,
}

impl<S: Real> FeaturePyramid<S> {
    pub fn frames(&self) -> usize {
        self.high.nrows()
    }

    pub fn level(&self, level: super::Level) -> &Array2<S> {
        match level {
            super::Level::Low => &self.low,
            super::Level::Mid => &self.mid,
            super::Level::High => &self.high,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    /// Width of an input row (`3 * n_mfcc`).
    pub d_in: usize,
    pub widths: [usize; 3],
    pub d_proj: usize,
    pub d_text: usize,
    pub se_ratio: usize,
}

/// Dilated temporal convolution (kernel 3, edge-replicated borders)
/// followed by tanh and a per-frame squeeze-excitation gate.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStage<S> {
    /// Taps stacked as `[x_{t-d} | x_t | x_{t+d}] -> out`.
    pub conv: Linear<S>,
    pub gate: SeGate<S>,
}

impl_params!(ConvStage { conv, gate });

/// Three conv stages tapped as low/mid/high, one projection head per level
/// and one for the text stream, all into `d_proj`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<S> {
    pub stages: Vec<ConvStage<S>>,
    pub heads: Vec<Linear<S>>,
    pub text_head: Linear<S>,
}

impl_params!(EncoderParams { stages, heads, text_head });

struct StageCache<S> {
    taps: Array2<S>,
    act: Array2<S>,
    se: SeCache<S>,
}

struct HeadCache<S> {
    input: Array2<S>,
    out: Array2<S>,
    norms: ndarray::Array1<S>,
}

pub struct EncoderCache<S> {
    stages: Vec<StageCache<S>>,
    heads: Vec<HeadCache<S>>,
    text: HeadCache<S>,
    frames: usize,
    d_in: usize,
}

fn gather_taps<S: Real>(x: &ArrayView2<S>, dil: usize) -> Array2<S> {
    let (t_len, d) = x.dim();
    let mut taps = Array2::zeros((t_len, KERNEL * d));
    for t in 0..t_len {
        for k in 0..KERNEL {
            let src = (t as i64 + (k as i64 - 1) * dil as i64).clamp(0, t_len as i64 - 1) as usize;
            taps.row_mut(t)
                .slice_mut(ndarray::s![k * d..(k + 1) * d])
                .assign(&x.row(src));
        }
    }
    taps
}

fn scatter_taps<S: Real>(dtaps: &Array2<S>, dil: usize, d: usize) -> Array2<S> {
    let t_len = dtaps.nrows();
    let mut dx = Array2::zeros((t_len, d));
    for t in 0..t_len {
        for k in 0..KERNEL {
            let src = (t as i64 + (k as i64 - 1) * dil as i64).clamp(0, t_len as i64 - 1) as usize;
            let mut row = dx.row_mut(src);
            row += &dtaps.row(t).slice(ndarray::s![k * d..(k + 1) * d]);
        }
    }
    dx
}

fn head_forward<S: Real>(head: &Linear<S>, input: &ArrayView2<S>) -> HeadCache<S> {
    let raw = head.forward(input);
    let (out, norms) = l2_normalize_rows(&raw.view());
    HeadCache {
        input: input.to_owned(),
        out,
        norms,
    }
}

fn head_backward<S: Real>(head: &Linear<S>, cache: &HeadCache<S>, dy: &ArrayView2<S>, grad: &mut Linear<S>) -> Array2<S> {
    let draw = l2_normalize_rows_backward(&cache.out, &cache.norms, dy);
    head.backward(&cache.input.view(), &draw.view(), grad)
}

impl<S: Real> EncoderParams<S> {
    pub fn zeros(dims: EncoderDims) -> Self {
        let mut d = dims.d_in;
        let stages = dims
            .widths
            .iter()
            .map(|&w| {
                let stage = ConvStage {
                    conv: Linear::zeros(KERNEL * d, w),
                    gate: SeGate::zeros(w, dims.se_ratio),
                };
                d = w;
                stage
            })
            .collect();
        Self {
            stages,
            heads: dims.widths.iter().map(|&w| Linear::zeros(w, dims.d_proj)).collect(),
            text_head: Linear::zeros(dims.d_text, dims.d_proj),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, dims: EncoderDims) -> Self {
        let mut stages = Vec::with_capacity(3);
        let mut d = dims.d_in;
        for &w in &dims.widths {
            let conv = Linear::init(rng, KERNEL * d, w);
            let gate = SeGate::init(rng, w, dims.se_ratio);
            stages.push(ConvStage { conv, gate });
            d = w;
        }
        let heads = dims.widths.iter().map(|&w| Linear::init(rng, w, dims.d_proj)).collect();
        let text_head = Linear::init(rng, dims.d_text, dims.d_proj);
        Self {
            stages,
            heads,
            text_head,
        }
    }

    pub fn d_in(&self) -> usize {
        self.stages[0].conv.inputs() / KERNEL
    }

    pub fn d_text(&self) -> usize {
        self.text_head.inputs()
    }

    /// Encodes `[T, d_in]` audio rows and `[T, d_text]` text rows.
    /// Returns the audio pyramid, the projected text features and a cache.
    pub fn forward(&self, audio: &ArrayView2<S>, text: &ArrayView2<S>) -> Result<(FeaturePyramid<S>, Array2<S>, EncoderCache<S>)> {
        if audio.ncols() != self.d_in() {
            return Err(Error::Shape(format!(
                "encoder expects {} features per frame, got {}",
                self.d_in(),
                audio.ncols()
            )));
        }
        if text.ncols() != self.d_text() || text.nrows() != audio.nrows() {
            return Err(Error::Shape(format!(
                "text stream is {:?}, expected [{}, {}]",
                text.dim(),
                audio.nrows(),
                self.d_text()
            )));
        }
        if audio.nrows() == 0 {
            return Err(Error::EmptySequence);
        }
        let mut stage_caches = Vec::with_capacity(3);
        let mut outs = Vec::with_capacity(3);
        let mut x = audio.to_owned();
        for (s, stage) in self.stages.iter().enumerate() {
            let taps = gather_taps(&x.view(), dilation(s));
            let act = stage.conv.forward(&taps.view()).mapv(|v| v.tanh());
            let (out, se) = stage.gate.forward(&act.view());
            stage_caches.push(StageCache { taps, act, se });
            outs.push(out.clone());
            x = out;
        }
        let head_caches: Vec<HeadCache<S>> = self
            .heads
            .iter()
            .zip(&outs)
            .map(|(head, out)| head_forward(head, &out.view()))
            .collect();
        let text_cache = head_forward(&self.text_head, text);
        let pyramid = FeaturePyramid {
            low: head_caches[0].out.clone(),
            mid: head_caches[1].out.clone(),
            high: head_caches[2].out.clone(),
        };
        let text_proj = text_cache.out.clone();
        Ok((
            pyramid,
            text_proj,
            EncoderCache {
                stages: stage_caches,
                heads: head_caches,
                text: text_cache,
                frames: audio.nrows(),
                d_in: audio.ncols(),
            },
        ))
    }

    /// Back-propagates gradients on the three levels and the projected text.
    /// Returns the gradient with respect to the audio input rows.
    pub fn backward(
        &self,
        cache: &EncoderCache<S>,
        dlow: &ArrayView2<S>,
        dmid: &ArrayView2<S>,
        dhigh: &ArrayView2<S>,
        dtext: &ArrayView2<S>,
        grad: &mut EncoderParams<S>,
    ) -> Array2<S> {
        head_backward(&self.text_head, &cache.text, dtext, &mut grad.text_head);
        let dlevels = [dlow, dmid, dhigh];
        let mut carry: Option<Array2<S>> = None;
        for s in (0..self.stages.len()).rev() {
            let mut dout = head_backward(&self.heads[s], &cache.heads[s], dlevels[s], &mut grad.heads[s]);
            if let Some(c) = carry.take() {
                dout += &c;
            }
            let stage = &self.stages[s];
            let sc = &cache.stages[s];
            let mut dact = stage.gate.backward(&sc.se, &dout.view(), &mut grad.stages[s].gate);
            Zip::from(&mut dact).and(&sc.act).for_each(|d, &a| *d *= S::one() - a * a);
            let dtaps = stage.conv.backward(&sc.taps.view(), &dact.view(), &mut grad.stages[s].conv);
            let d_in = stage.conv.inputs() / KERNEL;
            carry = Some(scatter_taps(&dtaps, dilation(s), d_in));
        }
        let dx = carry.expect("three stages");
        debug_assert_eq!(dx.dim(), (cache.frames, cache.d_in));
        dx
    }
}

/// Encodes a feature stack with an all-zero text stream and returns the pyramid.
pub fn encode_audio<S: Real>(stack: &AudioFeatureStack<S>, params: &EncoderParams<S>) -> Result<FeaturePyramid<S>> {
    let rows = stack.concatenated();
    let text = Array2::zeros((rows.nrows(), params.d_text()));
    Ok(params.forward(&rows.view(), &text.view())?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> EncoderDims {
        EncoderDims {
            d_in: 6,
            widths: [5, 4, 6],
            d_proj: 3,
            d_text: 2,
            se_ratio: 2,
        }
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_pyramid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = EncoderParams::<f64>::init(&mut rng, dims());
        let (pyr, _, _) = p
            .forward(&Array2::zeros((5, 6)).view(), &Array2::zeros((5, 2)).view())
            .unwrap();
        assert!(pyr.low.iter().chain(pyr.mid.iter()).chain(pyr.high.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_in_single_frame_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = EncoderParams::<f64>::init(&mut rng, dims());
        let x = rand_matrix(&mut rng, 1, 6);
        let (pyr, text, _) = p.forward(&x.view(), &Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(pyr.high.dim(), (1, 3));
        assert_eq!(text.dim(), (1, 3));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = EncoderParams::<f64>::zeros(dims());
        assert!(p.forward(&Array2::zeros((4, 5)).view(), &Array2::zeros((4, 2)).view()).is_err());
        assert!(p.forward(&Array2::zeros((4, 6)).view(), &Array2::zeros((3, 2)).view()).is_err());
    }

    #[test]
    fn receptive_fields_grow_and_stay_local() {
        assert_eq!([receptive_radius(0), receptive_radius(1), receptive_radius(2)], [1, 3, 7]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = EncoderParams::<f64>::init(&mut rng, dims());
        let t_len = 30;
        let x = rand_matrix(&mut rng, t_len, 6);
        let text = Array2::zeros((t_len, 2));
        let (base, _, _) = p.forward(&x.view(), &text.view()).unwrap();
        for probe in [0, 11, 29] {
            let mut xp = x.clone();
            xp.row_mut(probe).mapv_inplace(|v| v + 0.5);
            let (pert, _, _) = p.forward(&xp.view(), &text.view()).unwrap();
            for (s, (a, b)) in [(&base.low, &pert.low), (&base.mid, &pert.mid), (&base.high, &pert.high)]
                .into_iter()
                .enumerate()
            {
                let r = receptive_radius(s);
                let mut changed_inside = false;
                for t in 0..t_len {
                    let diff: f64 = a.row(t).iter().zip(b.row(t).iter()).map(|(u, v)| (u - v).abs()).sum();
                    if (t as i64 - probe as i64).unsigned_abs() as usize > r {
                        assert_eq!(diff, 0.0, "stage {s} frame {t} probe {probe}");
                    } else if diff > 0.0 {
                        changed_inside = true;
                    }
                }
                assert!(changed_inside);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EncoderParams::<f64>::init(&mut rng, dims());
        let t_len = 6;
        let x = rand_matrix(&mut rng, t_len, 6);
        let text = rand_matrix(&mut rng, t_len, 2);
        let w: Vec<Array2<f64>> = (0..4).map(|_| rand_matrix(&mut rng, t_len, 3)).collect();
        let loss = |p: &EncoderParams<f64>, x: &Array2<f64>| {
            let (pyr, tp, _) = p.forward(&x.view(), &text.view()).unwrap();
            (&pyr.low * &w[0]).sum() + (&pyr.mid * &w[1]).sum() + (&pyr.high * &w[2]).sum() + (&tp * &w[3]).sum()
        };
        let (_, _, cache) = p.forward(&x.view(), &text.view()).unwrap();
        let mut g = EncoderParams::zeros(dims());
        let dx = p.backward(&cache, &w[0].view(), &w[1].view(), &w[2].view(), &w[3].view(), &mut g);
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
        for i in 0..t_len {
            for j in 0..6 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
                assert!(rel(fd, dx[[i, j]]) < 1e-4, "dx[{i},{j}] {fd} vs {}", dx[[i, j]]);
            }
        }
        let analytic: Vec<(String, Vec<f64>)> =
            crate::layers::blocks(&g).into_iter().map(|(n, d)| (n, d.to_vec())).collect();
        for (bi, (name, grad)) in analytic.iter().enumerate() {
            for k in 0..grad.len() {
                let bump = |delta: f64| {
                    let mut q = p.clone();
                    let mut seen = 0;
                    q.visit_mut("", &mut |_, d| {
                        if seen == bi {
                            d[k] += delta;
                        }
                        seen += 1;
                    });
                    loss(&q, &x)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!(rel(fd, grad[k]) < 1e-4, "{name}[{k}]: {fd} vs {}", grad[k]);
            }
        }
    }
}
