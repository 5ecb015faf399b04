const BLOCK: usize = 32;

/// Σ_{i<n} f(i) with sequential blocks of 32 terms combined by a balanced
/// binary tree. The tree depends only on n, so the rounding is reproducible.
pub fn pairwise_sum<T, F>(n: usize, zero: T, f: F) -> T
where
    T: Copy + std::ops::Add<Output = T>,
    F: Fn(usize) -> T,
{
    fn rec<T: Copy + std::ops::Add<Output = T>, F: Fn(usize) -> T>(lo: usize, hi: usize, zero: T, f: &F) -> T {
        if hi - lo <= BLOCK {
            let mut acc = zero;
            for i in lo..hi {
                acc = acc + f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, zero, f) + rec(mid, hi, zero, f)
        }
    }
    rec(0, n, zero, &f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_integers_exactly() {
        for n in [0usize, 1, 31, 32, 33, 100, 1000] {
            let s = pairwise_sum(n, 0.0, |i| i as f64);
            assert_eq!(s, (n * n.saturating_sub(1) / 2) as f64);
        }
    }

    #[test]
    fn beats_naive_accumulation() {
        let n = 1 << 20;
        let naive: f32 = (0..n).map(|_| 0.1f32).sum();
        let tree = pairwise_sum(n, 0.0f32, |_| 0.1f32);
        let exact = 0.1f64 * n as f64;
        assert!(((tree as f64) - exact).abs() < ((naive as f64) - exact).abs());
    }
}
