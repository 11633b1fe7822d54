//! Deterministic math kernels shared by every other module.
//!
//! Everything in here is a pure function over `f64` slices, plus [`SeededRng`],
//! the single source of randomness in the crate. Entropies are in nats.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major matrix with dimensions fixed at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += scale * other`, rejecting shape mismatches.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::InvalidInput(format!(
                "matrix shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Seeded randomness
// ---------------------------------------------------------------------------

/// Reproducible random generator with named substream derivation.
///
/// `substream(label)` derives an independent generator from the parent's seed
/// and the label only, never from the parent's draw position, so two
/// generators built from the same seed and label path always produce the same
/// sequence no matter what else was drawn in between.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, label: &str) -> SeededRng {
        SeededRng::new(splitmix(self.seed ^ fnv1a(label.as_bytes())))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`; returns `lo` when the range is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `[0, n)`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index: empty range");
        self.inner.gen_range(0..n)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        if sd == 0.0 {
            return mean;
        }
        Normal::new(mean, sd)
            .expect("normal: bad standard deviation")
            .sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }

    /// `k` distinct indices sampled uniformly from `[0, n)`, in ascending order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "sample_indices: k exceeds population");
        let mut picked = rand::seq::index::sample(&mut self.inner, n, k).into_vec();
        picked.sort_unstable();
        picked
    }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Numerically stable softmax (max-subtraction).
pub fn softmax(zs: &[f64]) -> Result<Vec<f64>> {
    if zs.is_empty() {
        return Err(Error::InvalidInput("softmax: empty input".into()));
    }
    if zs.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("softmax: non-finite input".into()));
    }
    let max = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = zs.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Shannon entropy in nats of a probability vector, with `0 ln 0 = 0`.
pub fn entropy(ps: &[f64]) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::InvalidInput("entropy: empty input".into()));
    }
    if ps.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidInput(
            "entropy: input is not a probability vector".into(),
        ));
    }
    let sum: f64 = ps.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "entropy: probabilities sum to {sum}, not 1"
        )));
    }
    Ok(ps.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
}

/// Population variance (divide by n, not n-1).
pub fn variance(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("variance: empty input".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Ok(xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

/// Pearson correlation together with its degeneracy marker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// True when either input had zero variance; `r` is then 0 by convention.
    pub degenerate: bool,
}

/// Pearson correlation coefficient of two equal-length sequences.
///
/// A constant sequence on either side carries no correlation information, so
/// instead of producing NaN the kernel returns `r = 0` with the degenerate
/// flag set.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "pearson: length mismatch ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput(
            "pearson: need at least two points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(Correlation {
            r: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        r: (cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Result of a top-k selection.
#[derive(Clone, Debug)]
pub struct TopK<K> {
    pub keys: Vec<K>,
    /// Set when fewer than `k` entries were available.
    pub truncated: bool,
}

/// The `k` keys with the highest scores.
///
/// Ties are broken by ascending key order, which for (instance, annotator)
/// keys means ascending instance id, then ascending annotator id. Asking for
/// more than the pool holds returns the whole pool with `truncated` set.
pub fn top_k<K: Ord + Clone>(scored: &[(K, f64)], k: usize) -> TopK<K> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .1
            .total_cmp(&scored[a].1)
            .then_with(|| scored[a].0.cmp(&scored[b].0))
    });
    let take = k.min(scored.len());
    TopK {
        keys: order[..take].iter().map(|&i| scored[i].0.clone()).collect(),
        truncated: k > scored.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Reference values below were computed with a 50-digit decimal
    // implementation of the same formulas.

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 1000.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_reference() {
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.090030573170380458, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.244728471054797652, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.665240955774821890, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn entropy_known_values() {
        assert_abs_diff_eq!(
            entropy(&[0.5, 0.5]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            entropy(&[0.9, 0.1]).unwrap(),
            0.325082973391448240,
            epsilon = 1e-12
        );
    }

    #[test]
    fn entropy_rejects_non_distributions() {
        assert!(entropy(&[]).is_err());
        assert!(entropy(&[-0.1, 1.1]).is_err());
        assert!(entropy(&[0.4, 0.4]).is_err());
    }

    #[test]
    fn variance_known_values() {
        assert_eq!(variance(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap(), 0.25);
        assert_eq!(variance(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            variance(&[1.0, 0.0, 0.0]).unwrap(),
            2.0 / 9.0,
            epsilon = 1e-15
        );
        assert!(variance(&[]).is_err());
    }

    #[test]
    fn pearson_known_values() {
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(r.r, 1.0, epsilon = 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r.r, -1.0, epsilon = 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_abs_diff_eq!(r.r, 0.831521840620299900, epsilon = 1e-12);
        assert!(!r.degenerate);
    }

    #[test]
    fn pearson_degenerate_on_constant_input() {
        let r = pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.r, 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn pearson_rejects_mismatched_lengths() {
        assert!(pearson(&[1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn top_k_argmax_and_ties() {
        let scored = vec![("a", 0.2), ("b", 0.9), ("c", 0.5)];
        assert_eq!(top_k(&scored, 1).keys, vec!["b"]);
        let tied = vec![("a", 0.5), ("b", 0.5)];
        assert_eq!(top_k(&tied, 1).keys, vec!["a"]);
    }

    #[test]
    fn top_k_truncates_with_flag() {
        let scored = vec![("a", 0.1), ("b", 0.2)];
        let out = top_k(&scored, 5);
        assert_eq!(out.keys, vec!["b", "a"]);
        assert!(out.truncated);
        assert!(!top_k(&scored, 2).truncated);
    }

    #[test]
    fn top_k_matches_full_sort_oracle() {
        let mut rng = SeededRng::new(42);
        let scored: Vec<(u32, f64)> = (0..100u32).map(|i| (i, rng.next_f64())).collect();
        let got = top_k(&scored, 10);
        let mut sorted = scored.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let want: Vec<u32> = sorted[..10].iter().map(|(k, _)| *k).collect();
        assert_eq!(got.keys, want);
    }

    #[test]
    fn rng_substreams_reproduce() {
        let a = SeededRng::new(7);
        let b = SeededRng::new(7);
        let mut s1 = a.substream("init");
        let mut s2 = b.substream("init");
        for _ in 0..10_000 {
            assert_eq!(s1.next_f64().to_bits(), s2.next_f64().to_bits());
        }
    }

    #[test]
    fn rng_substreams_are_independent_of_parent_position() {
        let mut parent = SeededRng::new(3);
        let before = parent.substream("x");
        for _ in 0..100 {
            parent.next_f64();
        }
        let mut after = parent.substream("x");
        let mut before = before;
        for _ in 0..100 {
            assert_eq!(before.next_f64().to_bits(), after.next_f64().to_bits());
        }
    }

    #[test]
    fn rng_distinct_labels_diverge() {
        let root = SeededRng::new(11);
        let mut a = root.substream("a");
        let mut b = root.substream("b");
        let same = (0..32).all(|_| a.next_f64() == b.next_f64());
        assert!(!same);
    }

    #[test]
    fn matrix_shape_checks() {
        assert!(Matrix::from_vec(2, 3, vec![0.0; 5]).is_err());
        let mut m = Matrix::zeros(2, 2);
        let bad = Matrix::zeros(3, 2);
        assert!(m.add_scaled(&bad, 1.0).is_err());
        let good = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        m.add_scaled(&good, 2.0).unwrap();
        assert_eq!(m.row(1), &[6.0, 8.0]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn finite_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-30.0f64..30.0, 1..max_len)
        }

        proptest! {
            #[test]
            fn softmax_sums_to_one(zs in finite_vec(12)) {
                let p = softmax(&zs).unwrap();
                let sum: f64 = p.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&x| x >= 0.0));
            }

            #[test]
            fn softmax_is_shift_invariant(zs in finite_vec(12), c in -100.0f64..100.0) {
                let p = softmax(&zs).unwrap();
                let shifted: Vec<f64> = zs.iter().map(|z| z + c).collect();
                let q = softmax(&shifted).unwrap();
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn entropy_bounded_by_ln_n(zs in finite_vec(12)) {
                let p = softmax(&zs).unwrap();
                let h = entropy(&p).unwrap();
                prop_assert!(h >= -1e-12);
                prop_assert!(h <= (p.len() as f64).ln() + 1e-9);
            }

            #[test]
            fn uniform_maximizes_entropy(n in 2usize..10) {
                let p = vec![1.0 / n as f64; n];
                let h = entropy(&p).unwrap();
                prop_assert!((h - (n as f64).ln()).abs() < 1e-9);
            }

            #[test]
            fn variance_affine_rule(xs in finite_vec(12), a in -5.0f64..5.0, b in -5.0f64..5.0) {
                let v = variance(&xs).unwrap();
                let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let w = variance(&ys).unwrap();
                prop_assert!((w - a * a * v).abs() < 1e-9 * (1.0 + v.abs()));
            }

            #[test]
            fn pearson_positive_affine_invariance(
                xs in prop::collection::vec(-10.0f64..10.0, 3..10),
                a in 0.1f64..5.0,
                b in -5.0f64..5.0,
            ) {
                let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x + (i as f64).sin()).collect();
                let r1 = pearson(&xs, &ys).unwrap();
                let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let r2 = pearson(&scaled, &ys).unwrap();
                if !r1.degenerate && !r2.degenerate {
                    prop_assert!((r1.r - r2.r).abs() < 1e-9);
                }
            }

            #[test]
            fn top_k_agrees_with_sort(
                scores in prop::collection::vec(0.0f64..1.0, 1..40),
                k in 1usize..50,
            ) {
                let scored: Vec<(usize, f64)> = scores.iter().cloned().enumerate().collect();
                let got = top_k(&scored, k);
                let mut sorted = scored.clone();
                sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                let take = k.min(sorted.len());
                let want: Vec<usize> = sorted[..take].iter().map(|(i, _)| *i).collect();
                prop_assert_eq!(got.keys, want);
                prop_assert_eq!(got.truncated, k > scores.len());
            }
        }
    }
}
