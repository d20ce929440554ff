//! Small order-statistic and summary helpers.

use crate::scalar::{total_cmp, Real};

/// 1-based rank `ceil(q * m)` with a guard against round-off just above an
/// integer (e.g. `0.9 * 100` evaluating to `90.00000000000001`).
pub fn ceil_rank(q: f64, m: usize) -> usize {
    let raw = q * m as f64;
    let guarded = raw - 1e-9 * raw.abs().max(1.0);
    guarded.ceil().max(0.0) as usize
}

/// 1-based rank `floor(q * m)`, guarded against round-off just below an
/// integer.
pub fn floor_rank(q: f64, m: usize) -> usize {
    let raw = q * m as f64;
    let guarded = raw + 1e-9 * raw.abs().max(1.0);
    guarded.floor().max(0.0) as usize
}

/// The `k`-th smallest value (1-based), reordering `values`.
pub fn kth_smallest<T: Real>(values: &mut [T], k: usize) -> T {
    assert!(k >= 1 && k <= values.len(), "rank {k} out of 1..={}", values.len());
    *values.select_nth_unstable_by(k - 1, total_cmp).1
}

/// Empirical `tau`-quantile that minimizes the mean pinball loss: the
/// `max(1, ceil(n * tau))`-th smallest value. Reorders `values`.
pub fn pinball_quantile<T: Real>(values: &mut [T], tau: T) -> T {
    let k = ceil_rank(tau.as_f64(), values.len()).clamp(1, values.len());
    kth_smallest(values, k)
}

/// Linearly interpolated percentile of sorted data at fraction `p`.
pub fn interpolated_quantile<T: Real>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = T::of(pos - lo as f64);
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

pub fn mean<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::nan();
    }
    values.iter().copied().sum::<T>() / T::of_usize(values.len())
}
