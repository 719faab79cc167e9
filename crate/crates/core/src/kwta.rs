//! k-Winners-Take-All activation.
//!
//! `phi_k(y)` keeps the `k` largest entries of `y` and zeroes the rest. When
//! several entries tie for the `k`-th place, the ones with smaller indices win.
//! Convolutional outputs are treated as one long `C*H*W` vector.

use std::cmp::Ordering;

use crate::error::{arg, shape, Result};
use crate::tensor::{Real, Tensor};

/// `max(1, floor(gamma * n))`.
pub fn k_from_gamma(gamma: f64, n: usize) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(arg(format!("sparsity ratio must lie in (0, 1], got {gamma}")));
    }
    if n == 0 {
        return Err(arg("layer width must be positive"));
    }
    let k = (gamma * n as f64).floor() as usize;
    Ok(k.clamp(1, n))
}

/// Sparsity ratio of a k-WTA layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KwtaConfig {
    gamma: f64,
}

impl KwtaConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        k_from_gamma(gamma, 1)?;
        Ok(KwtaConfig { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn k_for(&self, n: usize) -> Result<usize> {
        k_from_gamma(self.gamma, n)
    }
}

/// Sorted index set of the winners of one k-WTA evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationPattern {
    indices: Vec<usize>,
    n: usize,
}

impl ActivationPattern {
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(arg("activation pattern has repeated indices"));
        }
        if indices.last().is_some_and(|&i| i >= n) {
            return Err(arg(format!("activation pattern index out of range for width {n}")));
        }
        if indices.is_empty() {
            return Err(arg("activation pattern must be nonempty"));
        }
        Ok(ActivationPattern { indices, n })
    }

    /// For callers that already hold a sorted, in-range, possibly empty set.
    pub(crate) fn from_sorted_unchecked(indices: Vec<usize>, n: usize) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        ActivationPattern { indices, n }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn width(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn intersection_len(&self, other: &ActivationPattern) -> usize {
        let (mut a, mut b, mut count) = (0, 0, 0);
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                Ordering::Less => a += 1,
                Ordering::Greater => b += 1,
                Ordering::Equal => {
                    count += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        count
    }

    pub fn is_disjoint(&self, other: &ActivationPattern) -> bool {
        self.intersection_len(other) == 0
    }

    /// Indices in `self` but not in `other`.
    pub fn difference(&self, other: &ActivationPattern) -> Vec<usize> {
        self.indices.iter().copied().filter(|&i| !other.contains(i)).collect()
    }
}

/// Winner-first order: larger value first, then smaller index.
#[inline]
fn rank<T: Real>(y: &[T], a: usize, b: usize) -> Ordering {
    let (va, vb) = (y[a], y[b]);
    match vb.partial_cmp(&va) {
        Some(Ordering::Equal) | None => match (va.is_nan(), vb.is_nan()) {
            (false, true) => Ordering::Less,
            (true, false) => Ordering::Greater,
            _ => a.cmp(&b),
        },
        Some(o) => o,
    }
}

/// Ascending indices of the `k` winners of `y`.
///
/// Uses partial selection, `O(N)` on average; the ranking is a strict total
/// order so the chosen set is exactly the first `k` of a full sort.
pub fn winners<T: Real>(y: &[T], k: usize) -> Result<Vec<usize>> {
    let n = y.len();
    if k == 0 || k > n {
        return Err(arg(format!("k = {k} out of range for width {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank(y, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Applies `phi_k` to `y` in place and returns the winners.
pub fn apply_in_place<T: Real>(y: &mut [T], k: usize) -> Result<ActivationPattern> {
    let win = winners(y, k)?;
    let mut next = win.iter().peekable();
    for (j, v) in y.iter_mut().enumerate() {
        if next.peek() == Some(&&j) {
            next.next();
        } else {
            *v = T::zero();
        }
    }
    Ok(ActivationPattern {
        indices: win,
        n: y.len(),
    })
}

/// Gap between the `k`-th and `(k+1)`-th largest entries; `None` when `k == N`.
pub fn winner_margin<T: Real>(y: &[T], k: usize) -> Result<Option<T>> {
    let n = y.len();
    if k == 0 || k > n {
        return Err(arg(format!("k = {k} out of range for width {n}")));
    }
    if k == n {
        return Ok(None);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.select_nth_unstable_by(k, |&a, &b| rank(y, a, b));
    let next = y[idx[k]];
    let kth = idx[..k].iter().map(|&i| y[i]).fold(T::infinity(), |m, v| m.min(v));
    Ok(Some(kth - next))
}

fn require_vector<T: Real>(y: &Tensor<T>) -> Result<()> {
    if y.rank() != 1 {
        return Err(shape(format!("expected a vector, got shape {:?}", y.shape())));
    }
    Ok(())
}

pub fn kwta_forward<T: Real>(y: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    require_vector(y)?;
    let mut out = y.clone();
    apply_in_place(out.data_mut(), k)?;
    Ok(out)
}

pub fn activation_pattern<T: Real>(y: &Tensor<T>, k: usize) -> Result<ActivationPattern> {
    require_vector(y)?;
    Ok(ActivationPattern {
        indices: winners(y.data(), k)?,
        n: y.len(),
    })
}

/// Passes gradient through winners only.
pub fn kwta_backward<T: Real>(grad_out: &Tensor<T>, pattern: &ActivationPattern) -> Result<Tensor<T>> {
    require_vector(grad_out)?;
    if grad_out.len() != pattern.width() {
        return Err(shape(format!(
            "gradient of width {} for a pattern of width {}",
            grad_out.len(),
            pattern.width()
        )));
    }
    let mut out = Tensor::zeros(grad_out.shape())?;
    for &j in pattern.indices() {
        out.data_mut()[j] = grad_out.data()[j];
    }
    Ok(out)
}

/// k-WTA over a whole `[C, H, W]` feature map flattened to one vector.
pub fn kwta_forward_chw<T: Real>(t: &Tensor<T>, cfg: KwtaConfig) -> Result<Tensor<T>> {
    if t.rank() != 3 {
        return Err(shape(format!("expected [C, H, W], got {:?}", t.shape())));
    }
    let k = cfg.k_for(t.len())?;
    let mut out = t.clone();
    apply_in_place(out.data_mut(), k)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    /// Stable full sort on (value desc, index asc).
    fn sort_oracle(y: &[f64], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..y.len()).collect();
        idx.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).unwrap().then(a.cmp(&b)));
        let mut top = idx[..k].to_vec();
        top.sort_unstable();
        top
    }

    fn masked(y: &[f64], keep: &[usize]) -> Vec<f64> {
        (0..y.len())
            .map(|j| if keep.contains(&j) { y[j] } else { 0.0 })
            .collect()
    }

    #[test]
    fn k_rule() {
        assert_eq!(k_from_gamma(0.1, 64).unwrap(), 6);
        assert_eq!(k_from_gamma(1.0, 5).unwrap(), 5);
        assert_eq!(k_from_gamma(0.01, 10).unwrap(), 1);
        assert!(k_from_gamma(0.0, 10).is_err());
        assert!(k_from_gamma(1.5, 10).is_err());
        assert!(k_from_gamma(f64::NAN, 10).is_err());
    }

    #[test]
    fn forward_examples() {
        let y = Tensor::vector(vec![3.0, 1.0, 2.0, 5.0]);
        assert_eq!(kwta_forward(&y, 2).unwrap().data(), &[3.0, 0.0, 0.0, 5.0]);
        let tie = Tensor::vector(vec![2.0, 2.0, 1.0]);
        assert_eq!(kwta_forward(&tie, 1).unwrap().data(), &[2.0, 0.0, 0.0]);
        assert!(kwta_forward(&y, 0).is_err());
        assert!(kwta_forward(&y, 5).is_err());
    }

    #[test]
    fn pattern_examples() {
        let y = Tensor::vector(vec![3.0, 1.0, 2.0, 5.0]);
        assert_eq!(activation_pattern(&y, 2).unwrap().indices(), &[0, 3]);
        let zeros = Tensor::vector(vec![0.0, 0.0, 0.0]);
        assert_eq!(activation_pattern(&zeros, 2).unwrap().indices(), &[0, 1]);
    }

    #[test]
    fn backward_examples() {
        let p = ActivationPattern::new(vec![0, 3], 4).unwrap();
        let g = Tensor::vector(vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(kwta_backward(&g, &p).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
        let z = Tensor::vector(vec![0.0; 4]);
        assert_eq!(kwta_backward(&z, &p).unwrap().data(), &[0.0; 4]);
        let short = Tensor::vector(vec![1.0; 3]);
        assert!(kwta_backward(&short, &p).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Scalar loss L(y) = c . phi_k(y) at a point with a clear k-th gap.
        let mut rng = Rng::new(5);
        let n = 32;
        let k = 7;
        let c: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let mut y: Vec<f64>;
        loop {
            y = (0..n).map(|_| rng.standard_normal()).collect();
            if winner_margin(&y, k).unwrap().unwrap() > 1e-3 {
                break;
            }
        }
        let loss = |v: &[f64]| -> f64 {
            let out = kwta_forward(&Tensor::vector(v.to_vec()), k).unwrap();
            out.data().iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let pattern = activation_pattern(&Tensor::vector(y.clone()), k).unwrap();
        let analytic = kwta_backward(&Tensor::vector(c.clone()), &pattern).unwrap();
        let h = 1e-6;
        for j in 0..n {
            let mut up = y.clone();
            up[j] += h;
            let mut dn = y.clone();
            dn[j] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            let a = analytic.data()[j];
            let scale = a.abs().max(fd.abs());
            if scale > 1e-9 {
                assert!((a - fd).abs() / scale < 1e-5, "unit {j}: {a} vs {fd}");
            } else {
                assert!((a - fd).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn chw_examples() {
        let t = Tensor::new(vec![1, 1, 4], vec![3.0, 1.0, 2.0, 5.0]).unwrap();
        let cfg = KwtaConfig::new(0.5).unwrap();
        let out = kwta_forward_chw(&t, cfg).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4]);
        assert_eq!(out.data(), &[3.0, 0.0, 0.0, 5.0]);

        let mut rng = Rng::new(9);
        let r = Tensor::new(vec![3, 2, 2], (0..12).map(|_| rng.standard_normal()).collect()).unwrap();
        let id = kwta_forward_chw(&r, KwtaConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(id, r);

        let quarter = kwta_forward_chw(&r, KwtaConfig::new(0.25).unwrap()).unwrap();
        let expected = masked(r.data(), &sort_oracle(r.data(), 3));
        assert_eq!(quarter.data(), expected.as_slice());
        assert_eq!(quarter.shape(), r.shape());
    }

    #[test]
    fn random_vectors_match_sort_oracle() {
        let mut rng = Rng::new(1);
        for _ in 0..10_000 {
            let y: Vec<f64> = (0..128).map(|_| rng.standard_normal()).collect();
            let out = kwta_forward(&Tensor::vector(y.clone()), 13).unwrap();
            assert_eq!(out.data(), masked(&y, &sort_oracle(&y, 13)).as_slice());
        }
        for _ in 0..1000 {
            let y: Vec<f64> = (0..64).map(|_| rng.standard_normal()).collect();
            let k = 1 + rng.below(64);
            let p = activation_pattern(&Tensor::vector(y.clone()), k).unwrap();
            assert_eq!(p.indices(), sort_oracle(&y, k).as_slice());
        }
    }

    #[test]
    fn margin_reports_gap() {
        let y = [5.0, 1.0, 4.0, 2.0];
        assert_eq!(winner_margin(&y, 2).unwrap(), Some(2.0));
        assert_eq!(winner_margin(&y, 4).unwrap(), None);
    }

    #[test]
    fn pattern_set_operations() {
        let a = ActivationPattern::new(vec![4, 1, 7], 10).unwrap();
        let b = ActivationPattern::new(vec![2, 7], 10).unwrap();
        assert_eq!(a.indices(), &[1, 4, 7]);
        assert_eq!(a.intersection_len(&b), 1);
        assert!(!a.is_disjoint(&b));
        assert_eq!(a.difference(&b), vec![1, 4]);
        assert!(ActivationPattern::new(vec![1, 1], 3).is_err());
        assert!(ActivationPattern::new(vec![3], 3).is_err());
    }

    #[test]
    fn negative_winners_are_not_idempotent() {
        // Zeroed losers outrank negative winners on a second pass.
        let once = kwta_forward(&Tensor::vector(vec![-1.0, -1.0]), 1).unwrap();
        assert_eq!(once.data(), &[-1.0, 0.0]);
        assert_eq!(kwta_forward(&once, 1).unwrap().data(), &[0.0, 0.0]);
    }

    fn tied_vector() -> impl Strategy<Value = Vec<f64>> {
        // Small integer values force plenty of ties.
        prop::collection::vec((-3i32..4).prop_map(f64::from), 1..48)
    }

    proptest! {
        #[test]
        fn idempotent_when_kth_value_nonnegative(y in tied_vector(), kf in 0.0f64..1.0) {
            let k = 1 + ((y.len() - 1) as f64 * kf) as usize;
            let kth = y[sort_oracle(&y, k).into_iter().min_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap()];
            prop_assume!(kth >= 0.0);
            let once = kwta_forward(&Tensor::vector(y), k).unwrap();
            let twice = kwta_forward(&once, k).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn exactly_k_winners_under_ties(y in tied_vector(), kf in 0.0f64..1.0) {
            let k = 1 + ((y.len() - 1) as f64 * kf) as usize;
            let p = activation_pattern(&Tensor::vector(y.clone()), k).unwrap();
            prop_assert_eq!(p.k(), k);
            let oracle = sort_oracle(&y, k);
            prop_assert_eq!(p.indices(), oracle.as_slice());
        }

        #[test]
        fn pattern_invariant_to_positive_scale(seed in 0u64..10_000, c in 1e-3f64..1e3) {
            let mut rng = Rng::new(seed);
            let y: Vec<f64> = (0..40).map(|_| rng.standard_normal()).collect();
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            let k = 1 + rng.below(40);
            prop_assert_eq!(
                activation_pattern(&Tensor::vector(y), k).unwrap(),
                activation_pattern(&Tensor::vector(scaled), k).unwrap()
            );
        }
    }
}
