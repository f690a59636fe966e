//! Stacked bidirectional GRU decoder from cross-modal embeddings to listener
//! coefficients, and the motion-constrained regression loss.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::coeffspace::{CoefficientSequence, BETA_DIM, COEFF_DIM};
use crate::error::{Error, Result};
use crate::layers::{hconcat, impl_params, uniform_matrix, Linear};
use crate::scalar::{sigmoid, Real};

pub const DEFAULT_LAYERS: usize = 6;

/// One GRU direction. Gate columns are ordered update, reset, candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell<S> {
    /// `[input × 3h]`
    pub w: Array2<S>,
    /// `[h × 3h]`
    pub u: Array2<S>,
    pub b: Array1<S>,
}

impl_params!(GruCell { w, u, b });

impl<S: Real> GruCell<S> {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, 3 * hidden)),
            u: Array2::zeros((hidden, 3 * hidden)),
            b: Array1::zeros(3 * hidden),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, inputs: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w: uniform_matrix(rng, inputs, 3 * hidden, bound),
            u: uniform_matrix(rng, hidden, 3 * hidden, bound),
            b: Array1::zeros(3 * hidden),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.u.nrows()
    }
}

/// A single GRU step.
pub fn gru_cell<S: Real>(x: &ArrayView1<S>, h_prev: &ArrayView1<S>, cell: &GruCell<S>) -> Result<Array1<S>> {
    let h = cell.hidden();
    if x.len() != cell.inputs() || h_prev.len() != h || cell.w.ncols() != 3 * h || cell.b.len() != 3 * h {
        return Err(Error::Shape(format!(
            "gru cell ({} → {h}) given input {} and state {}",
            cell.inputs(),
            x.len(),
            h_prev.len()
        )));
    }
    let xp = x.dot(&cell.w) + &cell.b;
    let mut step = GruStep::new(h);
    step.run(&xp.view(), h_prev, &cell.u);
    Ok(step.h_new)
}

/// Buffers for one recurrent step; kept for the backward pass.
#[derive(Clone, Debug)]
struct GruStep<S> {
    z: Array1<S>,
    r: Array1<S>,
    n: Array1<S>,
    rh: Array1<S>,
    h_new: Array1<S>,
}

impl<S: Real> GruStep<S> {
    fn new(h: usize) -> Self {
        Self {
            z: Array1::zeros(h),
            r: Array1::zeros(h),
            n: Array1::zeros(h),
            rh: Array1::zeros(h),
            h_new: Array1::zeros(h),
        }
    }

    /// `xp` is the input projection `x W + b` for this frame.
    fn run(&mut self, xp: &ArrayView1<S>, h_prev: &ArrayView1<S>, u: &Array2<S>) {
        let h = h_prev.len();
        let hu = h_prev.dot(&u.slice(s![.., ..2 * h]));
        for i in 0..h {
            self.z[i] = sigmoid(xp[i] + hu[i]);
            self.r[i] = sigmoid(xp[h + i] + hu[h + i]);
            self.rh[i] = self.r[i] * h_prev[i];
        }
        let nu = self.rh.dot(&u.slice(s![.., 2 * h..]));
        for i in 0..h {
            self.n[i] = (xp[2 * h + i] + nu[i]).tanh();
            self.h_new[i] = (S::one() - self.z[i]) * h_prev[i] + self.z[i] * self.n[i];
        }
    }
}

/// One direction over a whole sequence.
struct GruRun<S> {
    input: Array2<S>,
    /// Hidden state entering each frame, `[T × h]`, indexed by frame.
    h_prev: Array2<S>,
    steps: Vec<GruStep<S>>,
    reverse: bool,
}

fn frame_order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

fn run_direction<S: Real>(cell: &GruCell<S>, input: &ArrayView2<S>, h0: Array1<S>, reverse: bool) -> (Array2<S>, GruRun<S>) {
    let t_len = input.nrows();
    let h = cell.hidden();
    let mut xp = Array2::from_shape_fn((t_len, 3 * h), |(_, j)| cell.b[j]);
    general_mat_mul(S::one(), input, &cell.w, S::one(), &mut xp);
    let mut out = Array2::zeros((t_len, h));
    let mut h_prev = Array2::zeros((t_len, h));
    let mut steps: Vec<Option<GruStep<S>>> = vec![None; t_len];
    let mut state = h0;
    for t in frame_order(t_len, reverse) {
        let mut step = GruStep::new(h);
        step.run(&xp.row(t), &state.view(), &cell.u);
        h_prev.row_mut(t).assign(&state);
        out.row_mut(t).assign(&step.h_new);
        state.assign(&step.h_new);
        steps[t] = Some(step);
    }
    let run = GruRun {
        input: input.to_owned(),
        h_prev,
        steps: steps.into_iter().map(|s| s.expect("every frame visited")).collect(),
        reverse,
    };
    (out, run)
}

/// Accumulates parameter gradients; returns (d input, d initial state).
fn backward_direction<S: Real>(cell: &GruCell<S>, run: &GruRun<S>, dout: &ArrayView2<S>, grad: &mut GruCell<S>) -> (Array2<S>, Array1<S>) {
    let t_len = run.input.nrows();
    let h = cell.hidden();
    let u_gates = cell.u.slice(s![.., ..2 * h]);
    let u_cand = cell.u.slice(s![.., 2 * h..]);
    let mut dxp = Array2::<S>::zeros((t_len, 3 * h));
    let mut rh_rows = Array2::<S>::zeros((t_len, h));
    let mut dh_next = Array1::<S>::zeros(h);
    let mut dh = Array1::<S>::zeros(h);
    let mut da_n = Array1::<S>::zeros(h);
    let mut da_zr = Array1::<S>::zeros(2 * h);
    for t in frame_order(t_len, !run.reverse) {
        let st = &run.steps[t];
        let hp = run.h_prev.row(t);
        for i in 0..h {
            dh[i] = dout[[t, i]] + dh_next[i];
        }
        for i in 0..h {
            let dn = dh[i] * st.z[i];
            da_n[i] = dn * (S::one() - st.n[i] * st.n[i]);
            let dz = dh[i] * (st.n[i] - hp[i]);
            da_zr[i] = dz * st.z[i] * (S::one() - st.z[i]);
            dh_next[i] = dh[i] * (S::one() - st.z[i]);
        }
        let drh = u_cand.dot(&da_n);
        for i in 0..h {
            let dr = drh[i] * hp[i];
            da_zr[h + i] = dr * st.r[i] * (S::one() - st.r[i]);
            dh_next[i] += drh[i] * st.r[i];
        }
        dh_next += &u_gates.dot(&da_zr);
        dxp.slice_mut(s![t, ..2 * h]).assign(&da_zr);
        dxp.slice_mut(s![t, 2 * h..]).assign(&da_n);
        rh_rows.row_mut(t).assign(&st.rh);
    }
    general_mat_mul(S::one(), &run.h_prev.t(), &dxp.slice(s![.., ..2 * h]), S::one(), &mut grad.u.slice_mut(s![.., ..2 * h]));
    general_mat_mul(S::one(), &rh_rows.t(), &dxp.slice(s![.., 2 * h..]), S::one(), &mut grad.u.slice_mut(s![.., 2 * h..]));
    general_mat_mul(S::one(), &run.input.t(), &dxp, S::one(), &mut grad.w);
    grad.b += &dxp.sum_axis(Axis(0));
    let dx = dxp.dot(&cell.w.t());
    (dx, dh_next)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGruLayer<S> {
    pub forward: GruCell<S>,
    pub backward: GruCell<S>,
}

impl_params!(BiGruLayer { forward, backward });

/// Optional behaviours around the recurrent stack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecoderOptions {
    /// Project the listener's reference frame to the first layer's initial states.
    pub init_conditioning: bool,
    /// Predict offsets from the reference frame instead of absolute values.
    pub residual: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderDims {
    pub d_in: usize,
    pub hidden: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<S> {
    pub layers: Vec<BiGruLayer<S>>,
    /// `[2h → 70]`
    pub head: Linear<S>,
    /// Empty, or one `[70 → 2h]` projection when initial conditioning is on.
    pub init_proj: Vec<Linear<S>>,
    pub residual: bool,
}

impl_params!(DecoderParams { layers, head, init_proj });

impl<S: Real> DecoderParams<S> {
    fn build(dims: &DecoderDims, options: DecoderOptions, mut cell: impl FnMut(usize, usize) -> GruCell<S>, mut linear: impl FnMut(usize, usize) -> Linear<S>) -> Self {
        assert!(dims.layers >= 1 && dims.hidden >= 1, "decoder needs at least one layer and unit");
        let layers = (0..dims.layers)
            .map(|l| {
                let inputs = if l == 0 { dims.d_in } else { 2 * dims.hidden };
                BiGruLayer {
                    forward: cell(inputs, dims.hidden),
                    backward: cell(inputs, dims.hidden),
                }
            })
            .collect();
        let head = linear(2 * dims.hidden, COEFF_DIM);
        let init_proj = if options.init_conditioning {
            vec![linear(COEFF_DIM, 2 * dims.hidden)]
        } else {
            Vec::new()
        };
        Self { layers, head, init_proj, residual: options.residual }
    }

    pub fn zeros(dims: &DecoderDims, options: DecoderOptions) -> Self {
        Self::build(dims, options, GruCell::zeros, Linear::zeros)
    }

    pub fn init<R: Rng>(rng: &mut R, dims: &DecoderDims, options: DecoderOptions) -> Self {
        let rng = std::cell::RefCell::new(rng);
        Self::build(
            dims,
            options,
            |i, h| GruCell::init(&mut **rng.borrow_mut(), i, h),
            |i, o| Linear::init(&mut **rng.borrow_mut(), i, o),
        )
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].forward.hidden()
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].forward.inputs()
    }

    pub fn options(&self) -> DecoderOptions {
        DecoderOptions {
            init_conditioning: !self.init_proj.is_empty(),
            residual: self.residual,
        }
    }

    fn needs_reference(&self) -> bool {
        self.residual || !self.init_proj.is_empty()
    }

    /// Decodes `[T × d_in]` into `[T × 70]` rows.
    pub fn forward(&self, x: &ArrayView2<S>, reference: Option<&ArrayView1<S>>) -> Result<(Array2<S>, DecoderCache<S>)> {
        if x.nrows() == 0 {
            return Err(Error::EmptySequence);
        }
        if x.ncols() != self.d_in() {
            return Err(Error::Shape(format!("decoder expects {} input features, got {}", self.d_in(), x.ncols())));
        }
        let reference = match reference {
            Some(r) if r.len() != COEFF_DIM => {
                return Err(Error::Shape(format!("reference frame has {} values, expected {COEFF_DIM}", r.len())))
            }
            Some(r) => Some(r.to_owned()),
            None if self.needs_reference() => {
                return Err(Error::Invalid("decoder configured with a reference frame but none was given".into()))
            }
            None => None,
        };
        let h = self.hidden();
        let (h0_fwd, h0_bwd, init_pre) = match (&self.init_proj.first(), &reference) {
            (Some(proj), Some(r)) => {
                let pre = proj.forward(&r.view().insert_axis(Axis(0)));
                let act = pre.row(0).mapv(|v| v.tanh());
                (act.slice(s![..h]).to_owned(), act.slice(s![h..]).to_owned(), Some(act))
            }
            _ => (Array1::zeros(h), Array1::zeros(h), None),
        };
        let mut runs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let (hf, hb) = if l == 0 { (h0_fwd.clone(), h0_bwd.clone()) } else { (Array1::zeros(h), Array1::zeros(h)) };
            let (of, rf) = run_direction(&layer.forward, &current.view(), hf, false);
            let (ob, rb) = run_direction(&layer.backward, &current.view(), hb, true);
            current = hconcat(&[of.view(), ob.view()]);
            outputs.push(current.clone());
            runs.push((rf, rb));
        }
        let mut y = self.head.forward(&current.view());
        if self.residual {
            let r = reference.as_ref().expect("checked above");
            y += r;
        }
        Ok((
            y,
            DecoderCache {
                runs,
                outputs,
                reference,
                init_act: init_pre,
            },
        ))
    }

    /// Accumulates parameter gradients for `dy = ∂L/∂output`; returns
    /// `∂L/∂input`.
    pub fn backward(&self, cache: &DecoderCache<S>, dy: &ArrayView2<S>, grad: &mut DecoderParams<S>) -> Array2<S> {
        let h = self.hidden();
        let last = cache.outputs.last().expect("at least one layer");
        let mut d = self.head.backward(&last.view(), dy, &mut grad.head);
        let mut dh0 = Array1::zeros(2 * h);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (rf, rb) = &cache.runs[l];
            let (dxf, dh0f) = backward_direction(&layer.forward, rf, &d.slice(s![.., ..h]), &mut grad.layers[l].forward);
            let (dxb, dh0b) = backward_direction(&layer.backward, rb, &d.slice(s![.., h..]), &mut grad.layers[l].backward);
            if l == 0 {
                dh0.slice_mut(s![..h]).assign(&dh0f);
                dh0.slice_mut(s![h..]).assign(&dh0b);
            }
            d = dxf + dxb;
        }
        if let (Some(proj), Some(act), Some(r)) = (self.init_proj.first(), &cache.init_act, &cache.reference) {
            let dpre = Array2::from_shape_fn((1, 2 * h), |(_, j)| dh0[j] * (S::one() - act[j] * act[j]));
            proj.backward_params(&r.view().insert_axis(Axis(0)), &dpre.view(), &mut grad.init_proj[0]);
        }
        d
    }
}

/// Per-layer hidden-state sequences from one decoding pass.
pub struct DecoderCache<S> {
    runs: Vec<(GruRun<S>, GruRun<S>)>,
    outputs: Vec<Array2<S>>,
    reference: Option<Array1<S>>,
    init_act: Option<Array1<S>>,
}

/// Forward and backward hidden sequences of every layer, each `[T × h]`.
#[derive(Clone, Debug)]
pub struct DecoderState<S> {
    pub forward: Vec<Array2<S>>,
    pub backward: Vec<Array2<S>>,
}

impl<S: Real> DecoderCache<S> {
    pub fn state(&self) -> DecoderState<S> {
        let h = self.runs[0].0.steps[0].h_new.len();
        DecoderState {
            forward: self.outputs.iter().map(|o| o.slice(s![.., ..h]).to_owned()).collect(),
            backward: self.outputs.iter().map(|o| o.slice(s![.., h..]).to_owned()).collect(),
        }
    }
}

/// Decodes cross-modal embedding rows into a listener coefficient sequence.
pub fn decode_sequence<S: Real>(xm: &ArrayView2<S>, params: &DecoderParams<S>, reference: Option<&ArrayView1<S>>, fps: f64) -> Result<CoefficientSequence<S>> {
    let (y, _) = params.forward(xm, reference)?;
    CoefficientSequence::from_matrix(&y, fps)
}

/// Decodes a zero-padded batch; row `i` of the result holds `lengths[i]`
/// valid frames and zeros after. Padding never reaches the recurrence.
pub fn decode_padded<S: Real>(
    batch: &[Array2<S>],
    lengths: &[usize],
    params: &DecoderParams<S>,
    references: Option<&[Array1<S>]>,
) -> Result<Vec<Array2<S>>> {
    if batch.len() != lengths.len() || references.is_some_and(|r| r.len() != batch.len()) {
        return Err(Error::Shape("batch, lengths and references disagree in size".into()));
    }
    batch
        .iter()
        .zip(lengths)
        .enumerate()
        .map(|(i, (x, &len))| {
            if len > x.nrows() {
                return Err(Error::Shape(format!("length {len} exceeds padded size {}", x.nrows())));
            }
            let r = references.map(|r| r[i].view());
            let (y, _) = params.forward(&x.slice(s![..len, ..]), r.as_ref())?;
            let mut out = Array2::zeros((x.nrows(), COEFF_DIM));
            out.slice_mut(s![..len, ..]).assign(&y);
            Ok(out)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights<S> {
    pub w1: S,
    pub w2: S,
}

impl<S: Real> Default for LossWeights<S> {
    fn default() -> Self {
        Self { w1: S::one(), w2: S::one() }
    }
}

/// Whether each frame term is `‖·‖₂` or `‖·‖₂²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormKind {
    #[default]
    L2,
    SquaredL2,
}

/// Norm of `v` and its gradient; the gradient at zero is taken as zero.
fn norm_grad<S: Real>(v: &[S], kind: NormKind) -> (S, Vec<S>) {
    let sq: S = v.iter().map(|&x| x * x).sum();
    match kind {
        NormKind::SquaredL2 => (sq, v.iter().map(|&x| x + x).collect()),
        NormKind::L2 => {
            let n = sq.sqrt();
            if n == S::zero() {
                (n, vec![S::zero(); v.len()])
            } else {
                (n, v.iter().map(|&x| x / n).collect())
            }
        }
    }
}

fn check_pair<S: Real>(pred: &ArrayView2<S>, gt: &ArrayView2<S>) -> Result<()> {
    if pred.nrows() != gt.nrows() {
        return Err(Error::Shape(format!("prediction has {} frames, ground truth {}", pred.nrows(), gt.nrows())));
    }
    if pred.ncols() < COEFF_DIM || gt.ncols() < COEFF_DIM {
        return Err(Error::Shape(format!("coefficient rows need {COEFF_DIM} columns")));
    }
    if pred.nrows() < 2 {
        return Err(Error::Invalid(format!("regression loss needs at least 2 frames, got {}", pred.nrows())));
    }
    Ok(())
}

/// Loss on `[T × ≥70]` rows and its gradient with respect to `pred`.
/// Frame 0 is the reference frame: only frames 1.. contribute value terms,
/// and velocity terms pair each of those frames with its predecessor.
pub fn regression_loss_grad<S: Real>(pred: &ArrayView2<S>, gt: &ArrayView2<S>, w: LossWeights<S>, kind: NormKind) -> Result<(S, Array2<S>)> {
    check_pair(pred, gt)?;
    if !(w.w1 >= S::zero() && w.w2 >= S::zero()) {
        return Err(Error::Invalid("loss weights must be non-negative".into()));
    }
    let mut loss = S::zero();
    let mut grad = Array2::zeros(pred.raw_dim());
    let groups = [(0, BETA_DIM, w.w1), (BETA_DIM, COEFF_DIM, w.w2)];
    for t in 1..pred.nrows() {
        for &(lo, hi, weight) in &groups {
            let diff: Vec<S> = (lo..hi).map(|j| pred[[t, j]] - gt[[t, j]]).collect();
            let (n, g) = norm_grad(&diff, kind);
            loss += n;
            for (j, gj) in (lo..hi).zip(g) {
                grad[[t, j]] += gj;
            }
            if weight > S::zero() {
                let dd: Vec<S> = (lo..hi)
                    .map(|j| (pred[[t, j]] - pred[[t - 1, j]]) - (gt[[t, j]] - gt[[t - 1, j]]))
                    .collect();
                let (n, g) = norm_grad(&dd, kind);
                loss += weight * n;
                for (j, gj) in (lo..hi).zip(g) {
                    grad[[t, j]] += weight * gj;
                    grad[[t - 1, j]] -= weight * gj;
                }
            }
        }
    }
    Ok((loss, grad))
}

pub fn regression_loss<S: Real>(pred: &CoefficientSequence<S>, gt: &CoefficientSequence<S>, w: LossWeights<S>) -> Result<S> {
    let p = pred.to_matrix();
    let g = gt.to_matrix();
    Ok(regression_loss_grad(&p.slice(s![.., ..COEFF_DIM]), &g.slice(s![.., ..COEFF_DIM]), w, NormKind::L2)?.0)
}
