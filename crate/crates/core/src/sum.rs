//! Deterministic pairwise summation.
//!
//! Every reduction in the crate goes through these helpers. The split points
//! depend only on the length of the input, never on the thread count, so the
//! result is bit-identical whether or not the work is spread over a pool.

use num_complex::Complex64;
use std::ops::Add;

/// Below this many terms a block is summed left to right.
const BLOCK: usize = 16;
/// Above this many terms the two halves are handed to `rayon::join`.
const PAR_THRESHOLD: usize = 1 << 15;

fn pairwise<T, F>(lo: usize, hi: usize, term: &F) -> T
where
    T: Add<Output = T> + Default + Copy + Send,
    F: Fn(usize) -> T + Sync,
{
    let n = hi - lo;
    if n <= BLOCK {
        let mut acc = T::default();
        for i in lo..hi {
            acc = acc + term(i);
        }
        return acc;
    }
    let mid = lo + n / 2;
    if n >= PAR_THRESHOLD {
        let (a, b) = rayon::join(|| pairwise(lo, mid, term), || pairwise(mid, hi, term));
        a + b
    } else {
        pairwise(lo, mid, term) + pairwise(mid, hi, term)
    }
}

/// Pairwise sum of `term(0) + ... + term(n - 1)`.
pub fn pairwise_sum<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    pairwise(0, n, &term)
}

/// Complex counterpart of [`pairwise_sum`].
pub fn pairwise_sum_c<F>(n: usize, term: F) -> Complex64
where
    F: Fn(usize) -> Complex64 + Sync,
{
    pairwise(0, n, &term)
}

/// Streaming pairwise accumulator for equal-length vectors.
///
/// Pushing `n` vectors and calling [`VecAccumulator::finish`] yields the same
/// bracketing as a binary-counter cascade: partial sums of equal rank are
/// merged as soon as both exist. Memory stays at `O(log n)` vectors.
pub struct VecAccumulator {
    len: usize,
    stack: Vec<(u32, Vec<Complex64>)>,
}

impl VecAccumulator {
    pub fn new(len: usize) -> Self {
        Self { len, stack: Vec::new() }
    }

    pub fn push(&mut self, v: Vec<Complex64>) {
        debug_assert_eq!(v.len(), self.len);
        let mut cur = (0u32, v);
        while let Some(top) = self.stack.last() {
            if top.0 != cur.0 {
                break;
            }
            let (rank, mut prev) = self.stack.pop().unwrap();
            for (p, c) in prev.iter_mut().zip(&cur.1) {
                *p += c;
            }
            cur = (rank + 1, prev);
        }
        self.stack.push(cur);
    }

    pub fn finish(mut self) -> Vec<Complex64> {
        let mut out = match self.stack.pop() {
            Some((_, v)) => v,
            None => return vec![Complex64::new(0.0, 0.0); self.len],
        };
        while let Some((_, prev)) = self.stack.pop() {
            for (o, p) in out.iter_mut().zip(prev) {
                *o = p + *o;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum_on_integers() {
        let s = pairwise_sum(1000, |i| i as f64);
        assert_eq!(s, 499_500.0);
    }

    #[test]
    fn empty_sum_is_zero() {
        assert_eq!(pairwise_sum(0, |_| 1.0), 0.0);
        assert_eq!(pairwise_sum_c(0, |_| Complex64::new(1.0, 1.0)), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn pairwise_beats_naive_on_cancellation() {
        // 1 followed by many tiny terms: naive left-to-right loses them.
        let n = 1 << 20;
        let term = |i: usize| if i == 0 { 1.0 } else { 1e-16 };
        let s = pairwise_sum(n, term);
        let naive = (0..n).fold(0.0, |acc, i| acc + term(i));
        let exact = 1.0 + (n - 1) as f64 * 1e-16;
        assert!((s - exact).abs() < 1e-14);
        assert!((naive - exact).abs() > 1e-11);
    }

    #[test]
    fn accumulator_equals_elementwise_sum() {
        let mut acc = VecAccumulator::new(3);
        for k in 0..37 {
            acc.push(vec![Complex64::new(k as f64, 1.0); 3]);
        }
        let out = acc.finish();
        for z in out {
            assert_eq!(z, Complex64::new(666.0, 37.0));
        }
    }

    #[test]
    fn accumulator_empty_is_zero() {
        assert_eq!(VecAccumulator::new(2).finish(), vec![Complex64::new(0.0, 0.0); 2]);
    }
}
