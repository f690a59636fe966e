use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FeaturePyramid;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_K_NEGATIVES: usize = 16;

/// `a·b / (|a||b|)`. Zero-norm inputs are an error rather than NaN.
pub fn cosine_similarity<S: Real>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (dot, na, nb) = dot_norms(a, b);
    if na == S::zero() || nb == S::zero() {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na * nb)).max(-S::one()).min(S::one()))
}

fn dot_norms<S: Real>(a: &[S], b: &[S]) -> (S, S, S) {
    let mut dot = S::zero();
    let mut aa = S::zero();
    let mut bb = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    (dot, aa.sqrt(), bb.sqrt())
}

/// Similarity and its gradients with respect to both arguments.
fn cosine_with_grad<S: Real>(a: &[S], b: &[S]) -> Result<(S, Vec<S>, Vec<S>)> {
    let (dot, na, nb) = dot_norms(a, b);
    if na == S::zero() || nb == S::zero() {
        return Err(Error::ZeroNorm);
    }
    let sim = dot / (na * nb);
    let inv = S::one() / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| y * inv - sim * x / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x * inv - sim * y / (nb * nb))
        .collect();
    Ok((sim, da, db))
}

fn check_pool<S: Real>(pool_len: usize, positive: usize, tau: S) -> Result<()> {
    if pool_len == 0 {
        return Err(Error::Invalid("contrastive pool is empty".into()));
    }
    if positive >= pool_len {
        return Err(Error::Invalid(format!(
            "positive index {positive} outside pool of {pool_len}"
        )));
    }
    if !(tau > S::zero()) {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// `-log(exp(sim(f, pool[positive]) / τ) / Σ_j exp(sim(f, pool[j]) / τ))`.
/// The positive is itself a member of the denominator pool.
pub fn contrastive_loss<S: Real>(text: &[S], pool: &[&[S]], positive: usize, tau: S) -> Result<S> {
    Ok(contrastive_loss_grad(text, pool, positive, tau)?.0)
}

/// Loss plus gradients with respect to the text feature and every pool vector.
pub fn contrastive_loss_grad<S: Real>(
    text: &[S],
    pool: &[&[S]],
    positive: usize,
    tau: S,
) -> Result<(S, Vec<S>, Vec<Vec<S>>)> {
    check_pool(pool.len(), positive, tau)?;
    let parts = pool
        .iter()
        .map(|p| cosine_with_grad(text, p))
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<S> = parts.iter().map(|(s, _, _)| *s / tau).collect();
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let weights: Vec<S> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: S = weights.iter().copied().sum();
    let loss = (max + z.ln() - logits[positive]).max(S::zero());

    let mut dtext = vec![S::zero(); text.len()];
    let mut dpool = Vec::with_capacity(pool.len());
    for (j, (_, da, db)) in parts.into_iter().enumerate() {
        let mut coeff = weights[j] / z;
        if j == positive {
            coeff -= S::one();
        }
        coeff /= tau;
        for (d, v) in dtext.iter_mut().zip(&da) {
            *d += coeff * *v;
        }
        dpool.push(db.into_iter().map(|v| coeff * v).collect());
    }
    Ok((loss, dtext, dpool))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    Low,
    Mid,
    High,
}

/// One candidate vector in a batch: `level` features of `sample` at frame `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolRef {
    pub sample: usize,
    pub t: usize,
    pub level: Level,
}

/// Candidates available as negatives for one anchor: every feature in the
/// batch except the anchor's own high-level vector.
pub fn negative_pool_size(lengths: &[usize]) -> usize {
    (3 * lengths.iter().sum::<usize>()).saturating_sub(1)
}

fn pool_ref(lengths: &[usize], anchor: (usize, usize), mut idx: usize) -> PoolRef {
    // Flat order: sample, frame, level (low, mid, high); the anchor's high slot
    // is skipped.
    let anchor_flat = 3 * (lengths[..anchor.0].iter().sum::<usize>() + anchor.1) + 2;
    if idx >= anchor_flat {
        idx += 1;
    }
    let mut position = idx / 3;
    let level = [Level::Low, Level::Mid, Level::High][idx % 3];
    for (sample, &len) in lengths.iter().enumerate() {
        if position < len {
            return PoolRef { sample, t: position, level };
        }
        position -= len;
    }
    unreachable!("index inside pool")
}

/// Draws `k` distinct negatives for `anchor` (sample, frame) from a batch
/// with the given sequence lengths.
pub fn sample_negative_refs<R: Rng>(lengths: &[usize], anchor: (usize, usize), k: usize, rng: &mut R) -> Result<Vec<PoolRef>> {
    let positions: usize = lengths.iter().sum();
    if positions < 2 {
        return Err(Error::Invalid("negative sampling needs at least two positions in the batch".into()));
    }
    if anchor.0 >= lengths.len() || anchor.1 >= lengths[anchor.0] {
        return Err(Error::Invalid(format!("anchor {anchor:?} outside the batch")));
    }
    let pool = negative_pool_size(lengths);
    if k > pool {
        return Err(Error::Invalid(format!("requested {k} negatives from a pool of {pool}")));
    }
    Ok(index::sample(rng, pool, k)
        .into_iter()
        .map(|i| pool_ref(lengths, anchor, i))
        .collect())
}

/// Negative feature vectors for `anchor`, deterministic in `seed`.
pub fn sample_negatives<S: Real>(batch: &[FeaturePyramid<S>], anchor: (usize, usize), k: usize, seed: u64) -> Result<Vec<Vec<S>>> {
    let lengths: Vec<usize> = batch.iter().map(|p| p.frames()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_negative_refs(&lengths, anchor, k, &mut rng)?
        .into_iter()
        .map(|r| batch[r.sample].level(r.level).row(r.t).to_vec())
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub sample: usize,
    pub t: usize,
    pub negatives: Vec<PoolRef>,
}

/// The anchors of one batch and their sampled negatives. Depends only on
/// sequence lengths and which frames carry text, so it can be drawn before
/// any features exist and reused across repeated evaluations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContrastivePlan {
    pub anchors: Vec<Anchor>,
}

/// Every frame with text becomes an anchor with `k` negatives (fewer if the
/// pool is smaller).
pub fn plan_contrastive<R: Rng>(text_masks: &[Vec<bool>], k: usize, rng: &mut R) -> Result<ContrastivePlan> {
    let lengths: Vec<usize> = text_masks.iter().map(Vec::len).collect();
    if lengths.iter().sum::<usize>() < 2 {
        return Ok(ContrastivePlan::default());
    }
    let k = k.min(negative_pool_size(&lengths));
    let mut anchors = Vec::new();
    for (sample, mask) in text_masks.iter().enumerate() {
        for (t, &has_text) in mask.iter().enumerate() {
            if has_text {
                anchors.push(Anchor {
                    sample,
                    t,
                    negatives: sample_negative_refs(&lengths, (sample, t), k, rng)?,
                });
            }
        }
    }
    Ok(ContrastivePlan { anchors })
}

/// Gradients of the mean batch loss with respect to each sample's features.
#[derive(Clone, Debug)]
pub struct ContrastiveGrads<S> {
    pub low: Array2<S>,
    pub mid: Array2<S>,
    pub high: Array2<S>,
    pub text: Array2<S>,
}

/// Mean contrastive loss over the plan's usable anchors and its gradients.
/// `text[i]` holds sample `i`'s projected text features.
pub fn contrastive_batch_loss<S: Real>(
    plan: &ContrastivePlan,
    pyramids: &[FeaturePyramid<S>],
    text: &[Array2<S>],
    tau: S,
) -> Result<(S, Vec<ContrastiveGrads<S>>)> {
    let mut grads: Vec<ContrastiveGrads<S>> = pyramids
        .iter()
        .zip(text)
        .map(|(p, t)| ContrastiveGrads {
            low: Array2::zeros(p.low.raw_dim()),
            mid: Array2::zeros(p.mid.raw_dim()),
            high: Array2::zeros(p.high.raw_dim()),
            text: Array2::zeros(t.raw_dim()),
        })
        .collect();
    if plan.anchors.is_empty() {
        return Ok((S::zero(), grads));
    }
    let row = |r: &PoolRef| pyramids[r.sample].level(r.level).row(r.t).to_vec();
    let nonzero = |v: &[S]| v.iter().any(|x| *x != S::zero());
    // Features with no direction (an untrained, zero-weight head) carry no
    // similarity: such anchors are skipped and such negatives dropped.
    let mut work = Vec::with_capacity(plan.anchors.len());
    for anchor in &plan.anchors {
        let positive = PoolRef { sample: anchor.sample, t: anchor.t, level: Level::High };
        let f = text[anchor.sample].row(anchor.t).to_vec();
        if !nonzero(&f) || !nonzero(&row(&positive)) {
            continue;
        }
        let refs: Vec<PoolRef> = std::iter::once(positive)
            .chain(anchor.negatives.iter().copied().filter(|r| nonzero(&row(r))))
            .collect();
        work.push((anchor, f, refs));
    }
    if work.is_empty() {
        return Ok((S::zero(), grads));
    }
    let scale = S::one() / S::lit(work.len() as f64);
    let mut total = S::zero();
    for (anchor, f, refs) in work {
        let rows: Vec<Vec<S>> = refs.iter().map(row).collect();
        let pool: Vec<&[S]> = rows.iter().map(Vec::as_slice).collect();
        let (loss, dtext, dpool) = contrastive_loss_grad(&f, &pool, 0, tau)?;
        total += loss;
        for (d, v) in grads[anchor.sample].text.row_mut(anchor.t).iter_mut().zip(&dtext) {
            *d += scale * *v;
        }
        for (r, dv) in refs.iter().zip(&dpool) {
            let g = &mut grads[r.sample];
            let target = match r.level {
                Level::Low => &mut g.low,
                Level::Mid => &mut g.mid,
                Level::High => &mut g.high,
            };
            for (d, v) in target.row_mut(r.t).iter_mut().zip(dv) {
                *d += scale * *v;
            }
        }
    }
    Ok((total * scale, grads))
}

/// Mean cosine similarity of each anchor's text feature to its positive and
/// to its sampled negatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentStats {
    pub positive: f64,
    pub negative: f64,
    pub anchors: usize,
}

pub fn alignment_stats<S: Real>(plan: &ContrastivePlan, pyramids: &[FeaturePyramid<S>], text: &[Array2<S>]) -> Result<AlignmentStats> {
    let (mut pos, mut neg, mut n_neg, mut anchors) = (0.0, 0.0, 0usize, 0usize);
    for anchor in &plan.anchors {
        let f = text[anchor.sample].row(anchor.t).to_vec();
        let p = pyramids[anchor.sample].high.row(anchor.t).to_vec();
        let Ok(sp) = cosine_similarity(&f, &p) else { continue };
        pos += sp.as_f64();
        anchors += 1;
        for r in &anchor.negatives {
            if let Ok(sn) = cosine_similarity(&f, &pyramids[r.sample].level(r.level).row(r.t).to_vec()) {
                neg += sn.as_f64();
                n_neg += 1;
            }
        }
    }
    if anchors == 0 || n_neg == 0 {
        return Err(Error::Invalid("no usable anchors for alignment statistics".into()));
    }
    Ok(AlignmentStats { positive: pos / anchors as f64, negative: neg / n_neg as f64, anchors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = [0.3, -2.0, 5.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0f64).abs() < 1e-15);
        assert!((cosine_similarity(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96f64).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn singleton_pool_has_zero_loss() {
        let f = [0.2, 0.7, -0.1];
        for tau in [0.07, 1.0, 50.0] {
            let pos = [0.9, -0.4, 0.3];
            assert_eq!(contrastive_loss(&f, &[&pos], 0, tau).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_term_pool_matches_hand_evaluation() {
        // sim(+) = 1, sim(-) = 0, tau = 1 → log(1 + e^{-1})
        let f = [1.0, 0.0];
        let loss = contrastive_loss(&f, &[&[2.0, 0.0], &[0.0, 3.0]], 0, 1.0).unwrap();
        let expected = (1.0f64 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn large_temperature_tends_to_log_pool_size() {
        let f = [1.0, 0.5, -0.2];
        let pool: Vec<[f64; 3]> = vec![[1.0, 0.4, -0.1], [-1.0, 0.0, 0.3], [0.2, 0.9, 0.9], [0.0, -1.0, 0.0], [0.5, 0.5, 0.5]];
        let refs: Vec<&[f64]> = pool.iter().map(|p| p.as_slice()).collect();
        let loss = contrastive_loss(&f, &refs, 0, 1e6).unwrap();
        assert!((loss - (5.0f64).ln()).abs() < 1e-3);
    }

    #[test]
    fn invalid_pools() {
        let f = [1.0, 0.0];
        assert!(contrastive_loss::<f64>(&f, &[], 0, 1.0).is_err());
        assert!(contrastive_loss(&f, &[&[1.0, 0.0]], 0, 0.0).is_err());
        assert!(contrastive_loss(&f, &[&[1.0, 0.0]], 0, -1.0).is_err());
        assert!(contrastive_loss(&f, &[&[0.0, 0.0]], 0, 1.0).is_err());
    }

    fn pyramid(t: usize, offset: f64) -> FeaturePyramid<f64> {
        let m = |lvl: f64| Array2::from_shape_fn((t, 2), |(i, j)| offset + lvl + i as f64 + j as f64 * 0.1);
        FeaturePyramid {
            low: m(0.0),
            mid: m(100.0),
            high: m(200.0),
        }
    }

    #[test]
    fn pool_enumeration_for_one_sample_two_frames() {
        // T = 2: one other high + low/mid at both frames = 5
        let batch = vec![pyramid(2, 0.0)];
        assert_eq!(negative_pool_size(&[2]), 5);
        let negs = sample_negatives(&batch, (0, 0), 5, 9).unwrap();
        assert_eq!(negs.len(), 5);
        let anchor_high = batch[0].high.row(0).to_vec();
        assert!(!negs.contains(&anchor_high));
        assert!(negs.contains(&batch[0].low.row(0).to_vec()));
        assert!(negs.contains(&batch[0].mid.row(0).to_vec()));
        assert!(negs.contains(&batch[0].high.row(1).to_vec()));
        assert!(sample_negatives(&batch, (0, 0), 6, 9).is_err());
        assert!(sample_negatives(&batch, (0, 0), 0, 9).unwrap().is_empty());
        assert!(sample_negatives(&[pyramid(1, 0.0)], (0, 0), 1, 9).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let batch = vec![pyramid(5, 0.0), pyramid(3, 1000.0)];
        let a = sample_negatives(&batch, (1, 2), 8, 42).unwrap();
        let b = sample_negatives(&batch, (1, 2), 8, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pool_refs_cover_everything_but_the_anchor_high() {
        let lengths = [3, 2];
        let anchor = (1, 0);
        let n = negative_pool_size(&lengths);
        let refs: Vec<PoolRef> = (0..n).map(|i| pool_ref(&lengths, anchor, i)).collect();
        assert_eq!(refs.len(), 14);
        assert!(!refs.contains(&PoolRef { sample: 1, t: 0, level: Level::High }));
        for i in 0..n {
            for j in 0..i {
                assert_ne!(refs[i], refs[j]);
            }
        }
    }

    fn fd_rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    #[test]
    fn batch_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lens = [4, 3];
        let rnd = |rng: &mut ChaCha8Rng, t: usize| Array2::from_shape_simple_fn((t, 3), || rng.random_range(-1.0..1.0));
        let pyrs: Vec<FeaturePyramid<f64>> = lens
            .iter()
            .map(|&t| FeaturePyramid { low: rnd(&mut rng, t), mid: rnd(&mut rng, t), high: rnd(&mut rng, t) })
            .collect();
        let text: Vec<Array2<f64>> = lens.iter().map(|&t| rnd(&mut rng, t)).collect();
        let masks = vec![vec![true, false, true, true], vec![true, true, false]];
        let plan = plan_contrastive(&masks, 5, &mut rng).unwrap();
        assert_eq!(plan.anchors.len(), 5);
        let tau = 0.5;
        let (_, grads) = contrastive_batch_loss(&plan, &pyrs, &text, tau).unwrap();
        let h = 1e-5;
        for s in 0..2 {
            for which in 0..4 {
                for t in 0..lens[s] {
                    for j in 0..3 {
                        let eval = |d: f64| {
                            let mut p = pyrs.clone();
                            let mut tx = text.clone();
                            match which {
                                0 => p[s].low[[t, j]] += d,
                                1 => p[s].mid[[t, j]] += d,
                                2 => p[s].high[[t, j]] += d,
                                _ => tx[s][[t, j]] += d,
                            }
                            contrastive_batch_loss(&plan, &p, &tx, tau).unwrap().0
                        };
                        let fd = (eval(h) - eval(-h)) / (2.0 * h);
                        let g = &grads[s];
                        let a = [&g.low, &g.mid, &g.high, &g.text][which][[t, j]];
                        assert!(fd_rel(fd, a) < 1e-4, "s{s} w{which} t{t} j{j}: {fd} vs {a}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_features_are_skipped() {
        let zero = FeaturePyramid { low: Array2::zeros((3, 2)), mid: Array2::zeros((3, 2)), high: Array2::zeros((3, 2)) };
        let text = vec![Array2::from_elem((3, 2), 1.0)];
        let plan = plan_contrastive(&[vec![true; 3]], 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (loss, grads) = contrastive_batch_loss(&plan, &[zero], &text, 0.1).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads[0].text.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_bounded_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let s = cosine_similarity(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((s - cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
            prop_assert!((s - cosine_similarity(&scaled, &b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn loss_is_scale_invariant_and_monotone_in_positive_similarity(
            f in proptest::collection::vec(-1.0f64..1.0, 3),
            negs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 1..6),
            c in 0.1f64..10.0,
            tau in 0.05f64..2.0,
        ) {
            prop_assume!(f.iter().map(|v| v * v).sum::<f64>() > 1e-2);
            prop_assume!(negs.iter().all(|n| n.iter().map(|v| v * v).sum::<f64>() > 1e-2));
            // positive rotated progressively toward f
            let ortho = [f[1], -f[0], 0.0];
            prop_assume!(ortho.iter().map(|v| v * v).sum::<f64>() > 1e-2);
            let mut last = f64::INFINITY;
            for step in 0..5 {
                let w = step as f64 / 4.0;
                let pos: Vec<f64> = f.iter().zip(&ortho).map(|(a, b)| w * a + (1.0 - w) * b).collect();
                let mut pool: Vec<&[f64]> = vec![&pos];
                pool.extend(negs.iter().map(|n| n.as_slice()));
                let loss = contrastive_loss(&f, &pool, 0, tau).unwrap();
                prop_assert!(loss < last);
                last = loss;

                let fs: Vec<f64> = f.iter().map(|v| v * c).collect();
                let scaled: Vec<Vec<f64>> = std::iter::once(&pos).chain(negs.iter()).map(|v| v.iter().map(|x| x * c).collect()).collect();
                let spool: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
                prop_assert!((contrastive_loss(&fs, &spool, 0, tau).unwrap() - loss).abs() < 1e-9);
            }
        }
    }
}
