//! Order statistics and pair sampling.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Percentile `p` in `[0, 100]` of ascending `sorted` values, interpolating
/// linearly between order statistics (`h = (n - 1) p / 100`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 100.0) / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, p)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

/// Index pairs `(i, j)`, `i < j < n`, in row-major order: all of them when
/// there are at most `max_pairs`, otherwise a seeded draw without replacement.
pub fn sample_pairs(n: usize, max_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let pair_at = |mut r: usize| {
        let mut i = 0;
        while r >= n - 1 - i {
            r -= n - 1 - i;
            i += 1;
        }
        (i, i + 1 + r)
    };
    if total <= max_pairs {
        return (0..total).map(pair_at).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, max_pairs).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(pair_at).collect()
}
