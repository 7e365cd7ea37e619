//! Relevance-localization scores: how much of a saliency map's mass and how
//! many of its top-ranked pixels fall inside the ground-truth object mask,
//! plus the population statistics used to aggregate scores over a dataset.

use alloc::vec::Vec;

use crate::dataset::Mask;
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// The two per-sample localization scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpMetric {
    /// Fraction of total relevance mass inside the object mask.
    Rma,
    /// Fraction of the top-|mask| ranked pixels inside the object mask.
    Rra,
}

impl InterpMetric {
    pub const ALL: [InterpMetric; 2] = [InterpMetric::Rma, InterpMetric::Rra];

    pub fn name(self) -> &'static str {
        match self {
            InterpMetric::Rma => "rma",
            InterpMetric::Rra => "rra",
        }
    }
}

fn check_inputs(map: &Tensor<f64>, mask: &Mask) -> Result<()> {
    if *map.shape() != [mask.height(), mask.width()] {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "relevance map {:?} does not match mask {}x{}",
            map.shape(),
            mask.height(),
            mask.width()
        )));
    }
    if mask.count_foreground() == 0 {
        return Err(CoreError::EmptyMask);
    }
    Ok(())
}

/// Relevance mass inside the mask over total relevance mass.
///
/// Errors with [`CoreError::EmptyMask`] when the mask has no foreground and
/// [`CoreError::DegenerateRelevance`] when the map's total mass is zero.
pub fn relevance_mass_accuracy(map: &Tensor<f64>, mask: &Mask) -> Result<f64> {
    check_inputs(map, mask)?;
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    let w = mask.width();
    for y in 0..mask.height() {
        for x in 0..w {
            let v = map.data()[y * w + x];
            total += v;
            if mask.get(y, x) {
                inside += v;
            }
        }
    }
    if total == 0.0 {
        return Err(CoreError::DegenerateRelevance);
    }
    Ok(inside / total)
}

/// Fraction of the K highest-relevance pixels lying inside the mask, with
/// K = the mask's foreground size. Equal values rank by flat pixel index
/// ascending, so the score is deterministic on constant regions.
pub fn relevance_rank_accuracy(map: &Tensor<f64>, mask: &Mask) -> Result<f64> {
    check_inputs(map, mask)?;
    if map.iter().sum::<f64>() == 0.0 {
        return Err(CoreError::DegenerateRelevance);
    }
    let k = mask.count_foreground();
    let mut order: Vec<usize> = (0..map.len()).collect();
    order.sort_by(|&a, &b| {
        map.data()[b]
            .total_cmp(&map.data()[a])
            .then_with(|| a.cmp(&b))
    });
    let w = mask.width();
    let hits = order[..k].iter().filter(|&&i| mask.get(i / w, i % w)).count();
    Ok(hits as f64 / k as f64)
}

pub fn score_map(map: &Tensor<f64>, mask: &Mask, metric: InterpMetric) -> Result<f64> {
    match metric {
        InterpMetric::Rma => relevance_mass_accuracy(map, mask),
        InterpMetric::Rra => relevance_rank_accuracy(map, mask),
    }
}

/// Population statistics over the scored samples of one evaluation cell.
/// Degenerate samples contribute to `degenerate` but not to `mean`/`std`/`n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub degenerate: usize,
}

impl ScoreStats {
    /// Population mean/std of `scores`, recording `degenerate` exclusions.
    pub fn from_scores(scores: &[f64], degenerate: usize) -> Self {
        let n = scores.len();
        if n == 0 {
            return Self {
                degenerate,
                ..Self::default()
            };
        }
        let mean = scores.iter().sum::<f64>() / n as f64;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: libm::sqrt(var),
            n,
            degenerate,
        }
    }
}

/// Score every (map, mask) pair and aggregate. Degenerate maps are excluded
/// from the statistics and counted; an empty mask is a data error and aborts.
pub fn score_dataset<'a>(
    pairs: impl IntoIterator<Item = (&'a Tensor<f64>, &'a Mask)>,
    metric: InterpMetric,
) -> Result<ScoreStats> {
    let mut scores = Vec::new();
    let mut degenerate = 0usize;
    for (map, mask) in pairs {
        match score_map(map, mask, metric) {
            Ok(s) => scores.push(s),
            Err(CoreError::DegenerateRelevance) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(ScoreStats::from_scores(&scores, degenerate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Stream};
    use rand::Rng;

    fn mask_from(h: usize, w: usize, fg: &[(usize, usize)]) -> Mask {
        let mut data = alloc::vec![false; h * w];
        for &(y, x) in fg {
            data[y * w + x] = true;
        }
        Mask::new(h, w, data)
    }

    #[test]
    fn uniform_map_scores_the_mask_fraction() {
        let map = Tensor::full([2, 2], 1.0f64);
        let mask = mask_from(2, 2, &[(1, 1)]);
        assert_eq!(relevance_mass_accuracy(&map, &mask).unwrap(), 0.25);
    }

    #[test]
    fn mass_ratio_counts_inside_over_total() {
        let map = Tensor::new([2, 2], alloc::vec![3.0, 1.0, 0.0, 0.0]);
        let mask = mask_from(2, 2, &[(0, 0)]);
        assert_eq!(relevance_mass_accuracy(&map, &mask).unwrap(), 0.75);
    }

    #[test]
    fn rank_score_takes_the_top_mask_sized_set() {
        let map = Tensor::new([2, 2], alloc::vec![0.9, 0.1, 0.5, 0.2]);
        let mask = mask_from(2, 2, &[(0, 0), (1, 0)]);
        assert_eq!(relevance_rank_accuracy(&map, &mask).unwrap(), 1.0);
    }

    #[test]
    fn rank_ties_resolve_to_the_earliest_pixel() {
        let map = Tensor::new([2, 2], alloc::vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(
            relevance_rank_accuracy(&map, &mask_from(2, 2, &[(0, 0)])).unwrap(),
            1.0
        );
        assert_eq!(
            relevance_rank_accuracy(&map, &mask_from(2, 2, &[(0, 1)])).unwrap(),
            0.0
        );
    }

    #[test]
    fn empty_mask_and_zero_map_are_distinct_errors() {
        let map = Tensor::full([2, 2], 1.0f64);
        let empty = Mask::new(2, 2, alloc::vec![false; 4]);
        for metric in InterpMetric::ALL {
            assert!(matches!(
                score_map(&map, &empty, metric),
                Err(CoreError::EmptyMask)
            ));
        }
        let zero = Tensor::zeros([2, 2]);
        let mask = mask_from(2, 2, &[(0, 0)]);
        for metric in InterpMetric::ALL {
            assert!(matches!(
                score_map(&zero, &mask, metric),
                Err(CoreError::DegenerateRelevance)
            ));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let map = Tensor::full([2, 3], 1.0f64);
        let mask = mask_from(2, 2, &[(0, 0)]);
        assert!(matches!(
            relevance_mass_accuracy(&map, &mask),
            Err(CoreError::ShapeMismatch(_))
        ));
    }

    /// Selection-style oracle: repeatedly take the largest remaining value
    /// (earliest pixel on ties) and count mask membership.
    fn oracle_rank(map: &Tensor<f64>, mask: &Mask) -> f64 {
        let k = mask.count_foreground();
        let mut taken = alloc::vec![false; map.len()];
        let mut hits = 0usize;
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for i in 0..map.len() {
                let better = match best {
                    None => true,
                    Some(b) => map.data()[i] > map.data()[b],
                };
                if !taken[i] && better {
                    best = Some(i);
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            if mask.get(b / mask.width(), b % mask.width()) {
                hits += 1;
            }
        }
        hits as f64 / k as f64
    }

    #[test]
    fn rank_score_matches_selection_oracle() {
        let mut rng = rng_for(50, Stream::Fixture, 0);
        for case in 0..30 {
            let (h, w) = (rng.gen_range(2..7), rng.gen_range(2..7));
            // Coarse quantization forces plenty of ties.
            let map = Tensor::from_fn([h, w], |_| rng.gen_range(0..4) as f64);
            let mut fg: alloc::vec::Vec<(usize, usize)> = alloc::vec::Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if rng.gen_bool(0.4) {
                        fg.push((y, x));
                    }
                }
            }
            if fg.is_empty() {
                fg.push((0, 0));
            }
            let mask = mask_from(h, w, &fg);
            if map.iter().sum::<f64>() == 0.0 {
                continue;
            }
            let got = relevance_rank_accuracy(&map, &mask).unwrap();
            assert_eq!(got, oracle_rank(&map, &mask), "case {case}");
        }
    }

    #[test]
    fn mass_ratio_matches_pixel_loop_oracle() {
        let mut rng = rng_for(51, Stream::Fixture, 0);
        for _ in 0..30 {
            let (h, w) = (rng.gen_range(2..7), rng.gen_range(2..7));
            let map = Tensor::from_fn([h, w], |_| rng.gen_range(0.0..1.0f64));
            let mask = Mask::new(h, w, (0..h * w).map(|_| rng.gen_bool(0.5)).collect());
            if mask.count_foreground() == 0 {
                continue;
            }
            let mut inside = 0.0;
            let mut total = 0.0;
            for y in 0..h {
                for x in 0..w {
                    total += map.at2(y, x);
                    if mask.get(y, x) {
                        inside += map.at2(y, x);
                    }
                }
            }
            let got = relevance_mass_accuracy(&map, &mask).unwrap();
            assert!((got - inside / total).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_are_invariant_to_positive_rescaling() {
        let mut rng = rng_for(52, Stream::Fixture, 0);
        let map = Tensor::from_fn([4, 4], |_| rng.gen_range(0.0..1.0f64));
        // Powers of two rescale exactly in floating point, so the equality
        // below is bitwise, not approximate.
        let scaled = map.map(|v| v * 4.0);
        let mask = mask_from(4, 4, &[(0, 1), (2, 3), (3, 0)]);
        for metric in InterpMetric::ALL {
            assert_eq!(
                score_map(&map, &mask, metric).unwrap(),
                score_map(&scaled, &mask, metric).unwrap()
            );
        }
    }

    #[test]
    fn aggregation_excludes_degenerate_maps() {
        let m1 = Tensor::new([1, 2], alloc::vec![1.0, 4.0]);
        let m2 = Tensor::new([1, 2], alloc::vec![3.0, 2.0]);
        let zero = Tensor::<f64>::zeros([1, 2]);
        let mask = mask_from(1, 2, &[(0, 0)]);
        let stats = score_dataset(
            [(&m1, &mask), (&m2, &mask), (&zero, &mask)],
            InterpMetric::Rma,
        )
        .unwrap();
        assert!((stats.mean - 0.4).abs() < 1e-15);
        assert!((stats.std - 0.2).abs() < 1e-15);
        assert_eq!(stats.n, 2);
        assert_eq!(stats.degenerate, 1);
    }

    #[test]
    fn single_score_has_zero_spread() {
        let stats = ScoreStats::from_scores(&[0.7], 0);
        assert_eq!(stats.mean, 0.7);
        assert_eq!(stats.std, 0.0);
        assert_eq!(stats.n, 1);
    }
}
