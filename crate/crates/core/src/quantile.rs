//! Quantiles with linear interpolation between order statistics.
//!
//! For `n` samples and level `p`, the position is `h = (n - 1)·p` and the
//! quantile is `x[⌊h⌋] + (h - ⌊h⌋)·(x[⌊h⌋ + 1] - x[⌊h⌋])` on the sorted data.

use std::cmp::Ordering;

fn position(n: usize, p: f64) -> (usize, f64) {
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = (h.floor() as usize).min(n - 1);
    (lo, h - lo as f64)
}

fn lerp(lo: f64, hi: f64, frac: f64) -> f64 {
    if frac == 0.0 {
        lo
    } else {
        lo + frac * (hi - lo)
    }
}

/// Quantile of already sorted (ascending) data.
///
/// Panics on an empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let (lo, frac) = position(sorted.len(), p);
    let hi = (lo + 1).min(sorted.len() - 1);
    lerp(sorted[lo], sorted[hi], frac)
}

/// Quantile of unsorted data, by exact selection. Reorders `data`.
///
/// NaN samples compare as equal to everything; callers keep data finite.
pub fn quantile_select(data: &mut [f64], p: f64) -> f64 {
    assert!(!data.is_empty(), "quantile of empty data");
    let (lo, frac) = position(data.len(), p);
    let (_, &mut lo_val, upper) = data.select_nth_unstable_by(lo, total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lerp(lo_val, hi_val, frac)
}

/// Sorts ascending with a total order.
pub fn sort_values(data: &mut [f64]) {
    data.sort_unstable_by(total_cmp);
}

fn total_cmp(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_between_order_statistics() {
        let data = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&data, 0.0), 0.0);
        assert_eq!(quantile_sorted(&data, 1.0), 3.0);
        assert!((quantile_sorted(&data, 0.5) - 1.5).abs() < 1e-15);
        assert!((quantile_sorted(&data, 0.1) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_sample() {
        assert_eq!(quantile_sorted(&[0.7], 0.3), 0.7);
        assert_eq!(quantile_select(&mut [0.7], 0.9), 0.7);
    }

    #[test]
    fn selection_matches_sort() {
        let mut state = 12345u64;
        let data: Vec<f64> = (0..1001)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let mut sorted = data.clone();
        sort_values(&mut sorted);
        for p in [0.0, 0.005, 0.25, 0.5, 0.731, 0.995, 1.0] {
            let mut scratch = data.clone();
            assert_eq!(quantile_select(&mut scratch, p), quantile_sorted(&sorted, p));
        }
    }
}
