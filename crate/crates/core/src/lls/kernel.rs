//! Rank-scale kernel weights.

use std::ops::Range;

/// 0.75·(1 − u²) on (−1, 1), zero elsewhere.
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Kernel weight of rank `r` around `center` for a window covering a share
/// `bandwidth` of the rank scale.
pub fn rank_weight(r: f64, center: f64, bandwidth: f64) -> f64 {
    epanechnikov((r - center) / (bandwidth / 2.0))
}

/// Positions in ascending `sorted` whose kernel weight around `center` can be
/// positive.
pub fn window(sorted: &[f64], center: f64, bandwidth: f64) -> Range<usize> {
    let half = bandwidth / 2.0;
    let start = sorted.partition_point(|&r| (r - center) / half <= -1.0);
    let end = sorted.partition_point(|&r| (r - center) / half < 1.0);
    start..end.max(start)
}
