use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::coeffspace::CoefficientSequence;
use crate::csvmat::read_matrix_csv;
use crate::error::{Error, Result};
use crate::hiercoder::cosine_similarity;
use crate::scalar::Real;

/// Which coefficient group a metric looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Expression,
    Pose,
}

fn part_matrix<S: Real>(seq: &CoefficientSequence<S>, part: Part) -> Array2<S> {
    match part {
        Part::Expression => seq.beta_matrix(),
        Part::Pose => seq.pose_matrix(),
    }
}

/// Mean absolute error over frames and the part's dimensions.
pub fn coeff_l1<S: Real>(pred: &CoefficientSequence<S>, gt: &CoefficientSequence<S>, part: Part) -> Result<S> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("sequences have {} and {} frames", pred.len(), gt.len())));
    }
    let diff = part_matrix(pred, part) - part_matrix(gt, part);
    Ok(diff.mapv(|v| v.abs()).mean().expect("sequences are non-empty"))
}

/// Mean and unbiased covariance of the rows of a sample matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary<S> {
    pub mean: Array1<S>,
    pub cov: Array2<S>,
    pub n: usize,
}

pub fn gaussian_summary<S: Real>(samples: &ArrayView2<S>) -> Result<GaussianSummary<S>> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::Invalid(format!("a Gaussian summary needs at least 2 samples, got {n}")));
    }
    let x = samples.mapv(S::as_f64);
    let mean = x.mean_axis(Axis(0)).expect("rows exist");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let cov = (&cov + &cov.t()) * 0.5;
    Ok(GaussianSummary {
        mean: mean.mapv(S::lit),
        cov: cov.mapv(S::lit),
        n,
    })
}

fn to_dmatrix<S: Real>(m: &Array2<S>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]].as_f64())
}

const EIGEN_CLIP: f64 = -1e-8;

fn clipped_eigenvalues(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(m);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < EIGEN_CLIP * scale {
                return Err(Error::Invalid(format!("{what} has eigenvalue {v}; not positive semi-definite")));
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// Squared Fréchet distance between two Gaussians:
/// `|μa − μb|² + tr(Σa + Σb − 2 (Σa Σb)^½)`.
pub fn frechet_distance<S: Real>(a: &GaussianSummary<S>, b: &GaussianSummary<S>) -> Result<S> {
    let d = a.mean.len();
    if b.mean.len() != d || a.cov.dim() != (d, d) || b.cov.dim() != (d, d) {
        return Err(Error::Shape(format!("summaries of dimension {d} and {}", b.mean.len())));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    let ca = to_dmatrix(&a.cov);
    let cb = to_dmatrix(&b.cov);
    // (Σa Σb)^½ has the same trace as (√Σa Σb √Σa)^½, which is symmetric.
    let eig = clipped_eigenvalues(ca.clone(), "first covariance")?;
    let sqrt_vals = eig.eigenvalues.map(f64::sqrt);
    let sqrt_a = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let mut inner = &sqrt_a * &cb * &sqrt_a;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross = clipped_eigenvalues(inner, "covariance product")?;
    let tr_sqrt: f64 = cross.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let value = mean_term + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
    Ok(S::lit(value.max(0.0)))
}

pub fn frechet_distance_unsquared<S: Real>(a: &GaussianSummary<S>, b: &GaussianSummary<S>) -> Result<S> {
    Ok(frechet_distance(a, b)?.sqrt())
}

/// Fréchet distance between the per-frame distributions of one part.
pub fn coeff_frechet<S: Real>(pred: &CoefficientSequence<S>, gt: &CoefficientSequence<S>, part: Part) -> Result<S> {
    let a = gaussian_summary(&part_matrix(pred, part).view())?;
    let b = gaussian_summary(&part_matrix(gt, part).view())?;
    frechet_distance(&a, &b)
}

/// Feature vectors extracted offline from one set of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet<S> {
    pub vectors: Array2<S>,
    pub source_id: String,
}

pub fn load_embedding_set<S: Real>(path: impl AsRef<Path>) -> Result<EmbeddingSet<S>> {
    let path = path.as_ref();
    Ok(EmbeddingSet {
        vectors: read_matrix_csv(path)?,
        source_id: path.display().to_string(),
    })
}

/// Mean cosine similarity of aligned rows.
pub fn csim<S: Real>(a: &EmbeddingSet<S>, b: &EmbeddingSet<S>) -> Result<S> {
    if a.vectors.dim() != b.vectors.dim() || a.vectors.nrows() == 0 {
        return Err(Error::Shape(format!(
            "embedding sets {:?} and {:?}",
            a.vectors.dim(),
            b.vectors.dim()
        )));
    }
    let mut total = S::zero();
    for (ra, rb) in a.vectors.rows().into_iter().zip(b.vectors.rows()) {
        total += cosine_similarity(&ra.to_vec(), &rb.to_vec())?;
    }
    Ok(total / S::lit(a.vectors.nrows() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffspace::{BETA_DIM, COEFF_DIM};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn seq(m: Array2<f64>) -> CoefficientSequence<f64> {
        CoefficientSequence::from_matrix(&m, 30.0).unwrap()
    }

    fn summary(mean: Vec<f64>, cov: Array2<f64>) -> GaussianSummary<f64> {
        GaussianSummary { mean: Array1::from(mean), cov, n: 10 }
    }

    #[test]
    fn l1_examples() {
        let a = seq(Array2::from_shape_fn((5, COEFF_DIM), |(t, j)| (t * j) as f64 * 0.01));
        assert_eq!(coeff_l1(&a, &a, Part::Pose).unwrap(), 0.0);
        let mut m = a.to_matrix();
        m.columns_mut().into_iter().skip(BETA_DIM).for_each(|mut c| c += 0.07);
        let b = seq(m);
        assert!((coeff_l1(&b, &a, Part::Pose).unwrap() - 0.07).abs() < 1e-12);
        assert_eq!(coeff_l1(&b, &a, Part::Expression).unwrap(), 0.0);

        let z = seq(Array2::zeros((1, COEFF_DIM)));
        let mut m = Array2::zeros((1, COEFF_DIM));
        m[[0, 17]] = 0.64;
        assert!((coeff_l1(&seq(m), &z, Part::Expression).unwrap() - 0.01).abs() < 1e-15);
        assert!(coeff_l1(&a, &z, Part::Expression).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = gaussian_summary(&array![[0.0, 0.0], [2.0, 0.0]].view()).unwrap();
        assert_eq!(s.mean, array![1.0, 0.0]);
        assert_eq!(s.cov, array![[2.0, 0.0], [0.0, 0.0]]);
        assert_eq!(s.n, 2);
        let same = gaussian_summary(&Array2::from_elem((4, 3), 0.7).view()).unwrap();
        assert!(same.cov.iter().all(|&v| v == 0.0));
        assert!(gaussian_summary(&Array2::<f64>::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn frechet_examples() {
        let id = Array2::eye(2);
        let a = summary(vec![0.0, 0.0], id.clone());
        let b = summary(vec![3.0, 4.0], id);
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-9);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
        assert!((frechet_distance_unsquared(&a, &b).unwrap() - 5.0).abs() < 1e-9);

        let c = summary(vec![0.0], array![[1.0]]);
        let d = summary(vec![1.0], array![[4.0]]);
        assert!((frechet_distance(&c, &d).unwrap() - 2.0).abs() < 1e-9);
        assert!(frechet_distance(&a, &c).is_err());
        let bad = summary(vec![0.0, 0.0], array![[1.0, 0.0], [0.0, -1.0]]);
        assert!(frechet_distance(&bad, &a).is_err());
    }

    #[test]
    fn frechet_of_split_sample_shrinks_with_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut split_fd = |n: usize| {
            let x: Array2<f64> = Array2::from_shape_simple_fn((2 * n, 3), || StandardNormal.sample(&mut rng));
            let a = gaussian_summary(&x.slice(ndarray::s![..n, ..])).unwrap();
            let b = gaussian_summary(&x.slice(ndarray::s![n.., ..])).unwrap();
            frechet_distance(&a, &b).unwrap()
        };
        let small = split_fd(100);
        let large = split_fd(1000);
        assert!(large < small, "{large} vs {small}");
    }

    #[test]
    fn csim_examples() {
        let e = |m: Array2<f64>| EmbeddingSet { vectors: m, source_id: "t".into() };
        let a = e(array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!((csim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let orth = e(array![[0.0, 1.0], [1.0, 0.0], [0.0, 2.0], [3.0, 0.0]]);
        assert_eq!(csim(&a, &orth).unwrap(), 0.0);
        let half = e(array![[1.0, 0.0], [0.0, 1.0], [0.0, 2.0], [3.0, 0.0]]);
        assert!((csim(&a, &half).unwrap() - 0.5).abs() < 1e-12);
        let zero = e(array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(csim(&a, &zero).is_err());
        assert!(csim(&a, &e(array![[1.0, 0.0]])).is_err());
    }

    fn arb_cov(d: usize) -> impl Strategy<Value = (Vec<f64>, Array2<f64>)> {
        (
            proptest::collection::vec(-3.0f64..3.0, d),
            proptest::collection::vec(-1.0f64..1.0, d * (d + 2)),
        )
            .prop_map(move |(mean, raw)| {
                let l = Array2::from_shape_vec((d, d + 2), raw).unwrap();
                (mean, l.dot(&l.t()))
            })
    }

    proptest! {
        #[test]
        fn frechet_is_symmetric_and_non_negative((ma, ca) in arb_cov(3), (mb, cb) in arb_cov(3)) {
            let a = summary(ma, ca);
            let b = summary(mb, cb);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-7 * ab.max(1.0));
            prop_assert!(frechet_distance(&a, &a).unwrap() < 1e-7);
        }

        #[test]
        fn summary_ignores_row_order(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Array2<f64> = Array2::from_shape_simple_fn((6, 3), || StandardNormal.sample(&mut rng));
            let rev = x.slice(ndarray::s![..;-1, ..]).to_owned();
            let a = gaussian_summary(&x.view()).unwrap();
            let b = gaussian_summary(&rev.view()).unwrap();
            for (p, q) in a.mean.iter().zip(&b.mean).chain(a.cov.iter().zip(&b.cov)) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn l1_triangle_inequality(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || seq(Array2::from_shape_simple_fn((4, COEFF_DIM), || StandardNormal.sample(&mut rng)));
            let (a, b, c) = (draw(), draw(), draw());
            for part in [Part::Expression, Part::Pose] {
                let ac = coeff_l1(&a, &c, part).unwrap();
                let ab = coeff_l1(&a, &b, part).unwrap();
                let bc = coeff_l1(&b, &c, part).unwrap();
                prop_assert!(ac <= ab + bc + 1e-12);
            }
        }
    }
}
