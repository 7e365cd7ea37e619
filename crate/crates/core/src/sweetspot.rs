//! Sweet-spot detection: sparsity levels where accuracy and an
//! interpretability metric improve together over the previous pool entry.

use alloc::vec::Vec;

/// One pool entry's position in a (sparsity, accuracy, metric) series.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeriesPoint {
    pub sparsity: f64,
    pub accuracy: f64,
    pub metric: f64,
}

/// Indices `i >= 1` where both accuracy and metric improve on entry `i-1`.
/// `strict` demands real improvement (`>`); otherwise ties count (`>=`).
/// Series shorter than two entries have no comparisons and yield nothing.
pub fn find_sweet_spot_indices(series: &[SeriesPoint], strict: bool) -> Vec<usize> {
    debug_assert!(
        series.windows(2).all(|w| w[0].sparsity <= w[1].sparsity),
        "series must be ordered by increasing sparsity"
    );
    let improves = |a: f64, b: f64| if strict { b > a } else { b >= a };
    (1..series.len())
        .filter(|&i| {
            improves(series[i - 1].accuracy, series[i].accuracy)
                && improves(series[i - 1].metric, series[i].metric)
        })
        .collect()
}

/// The sparsity levels at the sweet-spot indices.
pub fn find_sweet_spots(series: &[SeriesPoint], strict: bool) -> Vec<f64> {
    find_sweet_spot_indices(series, strict)
        .into_iter()
        .map(|i| series[i].sparsity)
        .collect()
}
