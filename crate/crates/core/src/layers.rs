//! Dense building blocks with hand-written backward passes, and the
//! [`Params`] visitor that lets optimizers, checkpoints and the gradient
//! checker treat every model as a list of named flat blocks.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::scalar::Real;

/// A model (or a gradient with the same layout) viewed as named flat blocks.
pub trait Params<S: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [S]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<S: Real> Params<S> for Array1<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [S])) {
        f(prefix.to_string(), self.as_slice().expect("standard layout"));
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        f(prefix.to_string(), self.as_slice_mut().expect("standard layout"));
    }
}

impl<S: Real> Params<S> for Array2<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [S])) {
        f(prefix.to_string(), self.as_slice().expect("standard layout"));
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        f(prefix.to_string(), self.as_slice_mut().expect("standard layout"));
    }
}

impl<S: Real, P: Params<S>> Params<S> for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [S])) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Implements [`Params`] for a struct generic over `S` by visiting the listed
/// fields in order.
macro_rules! impl_params {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<S: $crate::scalar::Real> $crate::layers::Params<S> for $ty<S> {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [S])) {
                $( self.$field.visit(&$crate::layers::join(prefix, stringify!($field)), f); )*
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
                $( self.$field.visit_mut(&$crate::layers::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use impl_params;

/// Named flat views of every block, in visiting order.
pub fn blocks<S: Real, P: Params<S>>(p: &P) -> Vec<(String, &[S])> {
    let mut out = Vec::new();
    p.visit("", &mut |name, data| out.push((name, data)));
    out
}

pub fn num_params<S: Real, P: Params<S>>(p: &P) -> usize {
    blocks(p).iter().map(|(_, d)| d.len()).sum()
}

/// Sets every entry to zero.
pub fn zero_fill<S: Real, P: Params<S>>(p: &mut P) {
    p.visit_mut("", &mut |_, d| d.iter_mut().for_each(|v| *v = S::zero()));
}

/// A zeroed copy with the same layout (a gradient buffer).
pub fn zeros_like<S: Real, P: Params<S> + Clone>(p: &P) -> P {
    let mut z = p.clone();
    zero_fill(&mut z);
    z
}

/// `dst += scale * src`, block by block. Both must share a layout.
pub fn add_scaled<S: Real, P: Params<S>>(dst: &mut P, src: &P, scale: S) {
    let src_blocks = blocks(src);
    let mut i = 0;
    dst.visit_mut("", &mut |_, d| {
        let s = src_blocks[i].1;
        assert_eq!(d.len(), s.len(), "parameter layouts differ");
        for (a, &b) in d.iter_mut().zip(s) {
            *a += scale * b;
        }
        i += 1;
    });
}

/// Copies every block of `src` into `dst` converting the scalar type.
pub fn convert_into<A: Real, B: Real, P: Params<A>, Q: Params<B>>(src: &P, dst: &mut Q) {
    let src_blocks = blocks(src);
    let mut i = 0;
    dst.visit_mut("", &mut |_, d| {
        let s = src_blocks[i].1;
        assert_eq!(d.len(), s.len(), "parameter layouts differ");
        for (a, &b) in d.iter_mut().zip(s) {
            *a = B::lit(b.as_f64());
        }
        i += 1;
    });
}

pub fn all_finite<S: Real, P: Params<S>>(p: &P) -> bool {
    blocks(p)
        .iter()
        .all(|(_, d)| d.iter().all(|v| v.is_finite()))
}

pub(crate) fn uniform_matrix<S: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<S> {
    Array2::from_shape_simple_fn((rows, cols), || {
        S::lit(if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
    })
}

/// Affine map on row vectors: `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub w: Array2<S>,
    pub b: Array1<S>,
}

impl_params!(Linear { w, b });

impl<S: Real> Linear<S> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            w: uniform_matrix(rng, inputs, outputs, bound),
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<S>) -> Array2<S> {
        let mut y = Array2::from_shape_fn((x.nrows(), self.outputs()), |(_, j)| self.b[j]);
        general_mat_mul(S::one(), x, &self.w, S::one(), &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &ArrayView2<S>, dy: &ArrayView2<S>, grad: &mut Linear<S>) -> Array2<S> {
        general_mat_mul(S::one(), &x.t(), dy, S::one(), &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    /// Parameter gradients only.
    pub fn backward_params(&self, x: &ArrayView2<S>, dy: &ArrayView2<S>, grad: &mut Linear<S>) {
        general_mat_mul(S::one(), &x.t(), dy, S::one(), &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
    }
}

/// Rows shorter than this are treated as zero vectors by [`l2_normalize_rows`].
pub(crate) const NORM_FLOOR: f64 = 1e-12;

/// Normalizes each row to unit length; zero rows stay zero.
/// Returns the normalized rows and the clamped norms used for the division.
pub fn l2_normalize_rows<S: Real>(x: &ArrayView2<S>) -> (Array2<S>, Array1<S>) {
    let floor = S::lit(NORM_FLOOR);
    let norms = Array1::from_iter(
        x.rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| v * v).sum::<S>().sqrt().max(floor)),
    );
    let mut y = x.to_owned();
    for (mut row, &n) in y.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    (y, norms)
}

pub fn l2_normalize_rows_backward<S: Real>(y: &Array2<S>, norms: &Array1<S>, dy: &ArrayView2<S>) -> Array2<S> {
    let floor = S::lit(NORM_FLOOR);
    let mut dx = dy.to_owned();
    for ((mut drow, yrow), &n) in dx.rows_mut().into_iter().zip(y.rows()).zip(norms.iter()) {
        if n > floor {
            let proj: S = yrow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
            for (d, &yv) in drow.iter_mut().zip(yrow.iter()) {
                *d = (*d - yv * proj) / n;
            }
        } else {
            drow.mapv_inplace(|v| v / n);
        }
    }
    dx
}

/// Horizontal concatenation of row-aligned blocks.
pub fn hconcat<S: Real>(parts: &[ArrayView2<S>]) -> Array2<S> {
    let joined = ndarray::concatenate(Axis(1), parts).expect("row counts agree");
    joined.as_standard_layout().into_owned()
}

/// Splits columns of `m` into consecutive blocks of the given widths.
pub fn hsplit<S: Real>(m: &ArrayView2<S>, widths: &[usize]) -> Vec<Array2<S>> {
    let mut start = 0;
    widths
        .iter()
        .map(|&w| {
            let block = m.slice(ndarray::s![.., start..start + w]).to_owned();
            start += w;
            block
        })
        .collect()
}
