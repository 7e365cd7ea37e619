//! Global magnitude pruning with binary masks, and the iterative
//! prune-then-retrain loop that rewinds the learning-rate schedule.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::dataset::Sample;
use crate::error::{CoreError, Result};
use crate::nn::{train, AnyModel, ModelSpec, ParamSet, Schedule, TrainReport};
use crate::scalar::Scalar;

/// Binary keep/drop mask over exactly the prunable parameter tensors.
/// `true` = the weight survives. Entries only ever flip to `false`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneMask {
    entries: BTreeMap<String, Vec<bool>>,
}

impl PruneMask {
    /// All-ones mask covering the prunable tensors of a parameter set.
    pub fn all_ones<S: Scalar>(params: &ParamSet<S>) -> Self {
        let entries = params
            .iter()
            .filter(|(_, p)| p.prunable)
            .map(|(name, p)| (name.to_string(), alloc::vec![true; p.values.len()]))
            .collect();
        Self { entries }
    }

    /// Rebuild from persisted entries (checked against a model on use).
    pub fn from_entries(entries: BTreeMap<String, Vec<bool>>) -> Self {
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Result<&[bool]> {
        self.entries
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| CoreError::UnknownName(name.to_string()))
    }

    /// (name, kept-flags) pairs in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[bool])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn n_total(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn n_zeros(&self) -> usize {
        self.entries
            .values()
            .flat_map(|v| v.iter())
            .filter(|&&kept| !kept)
            .count()
    }

    /// Verify the mask covers exactly the prunable tensors of `params`,
    /// with matching lengths.
    pub fn check_matches<S: Scalar>(&self, params: &ParamSet<S>) -> Result<()> {
        let mut covered = 0;
        for (name, p) in params.iter() {
            if !p.prunable {
                continue;
            }
            covered += 1;
            let m = self.get(name).map_err(|_| {
                CoreError::MaskMismatch(alloc::format!("mask missing tensor {name}"))
            })?;
            if m.len() != p.values.len() {
                return Err(CoreError::MaskMismatch(alloc::format!(
                    "mask for {name} has {} entries, tensor has {}",
                    m.len(),
                    p.values.len()
                )));
            }
        }
        if covered != self.entries.len() {
            return Err(CoreError::MaskMismatch(alloc::format!(
                "mask covers {} tensors, model has {covered} prunable tensors",
                self.entries.len()
            )));
        }
        Ok(())
    }

    /// Zero every dropped position in `params` (weights, gradients, or
    /// optimizer state — anything shaped like the parameters).
    pub fn apply_to<S: Scalar>(&self, params: &mut ParamSet<S>) {
        for (name, kept) in &self.entries {
            let t = params
                .get_mut(name)
                .expect("mask/model consistency checked on entry");
            for (v, &keep) in t.data_mut().iter_mut().zip(kept) {
                if !keep {
                    *v = S::ZERO;
                }
            }
        }
    }

    /// True when every position dropped in `earlier` is still dropped here —
    /// the monotonicity invariant of iterative pruning.
    pub fn refines(&self, earlier: &PruneMask) -> bool {
        self.entries.len() == earlier.entries.len()
            && self.entries.iter().all(|(name, kept)| {
                earlier.entries.get(name).is_some_and(|prev| {
                    kept.len() == prev.len()
                        && kept.iter().zip(prev).all(|(&now, &before)| before || !now)
                })
            })
    }
}

/// Fraction of prunable weights dropped by the mask.
pub fn sparsity_of(mask: &PruneMask) -> f64 {
    let total = mask.n_total();
    if total == 0 {
        return 0.0;
    }
    mask.n_zeros() as f64 / total as f64
}

/// Fraction of ALL parameters (prunable or not) dropped by the mask —
/// the companion accounting, since non-prunable parameters are never masked.
pub fn sparsity_all<S: Scalar>(mask: &PruneMask, params: &ParamSet<S>) -> f64 {
    mask.n_zeros() as f64 / params.n_params() as f64
}

/// Count pruned per round: round-half-up(k · survivors).
fn prune_quota(k: f64, survivors: usize) -> usize {
    libm::floor(k * survivors as f64 + 0.5) as usize
}

/// Drop the `round-half-up(k · survivors)` smallest-magnitude surviving
/// weights, compared globally across all prunable tensors. Ties are broken
/// by (tensor name lexicographic, flat index ascending). Dropped weights are
/// zeroed in the model. Returns the number newly dropped.
pub fn global_magnitude_prune<S: Scalar>(
    params: &mut ParamSet<S>,
    mask: &mut PruneMask,
    k: f64,
) -> Result<usize> {
    if !(0.0..1.0).contains(&k) {
        return Err(CoreError::Config(alloc::format!(
            "prune fraction k={k} must lie in [0, 1)"
        )));
    }
    mask.check_matches(params)?;

    // Survivors in (name, flat index) order; a stable sort on magnitude then
    // realizes the documented tie rule.
    let names: Vec<String> = mask.entries.keys().cloned().collect();
    let mut survivors: Vec<(f64, u32, u32)> = Vec::new();
    for (ni, name) in names.iter().enumerate() {
        let weights = params.get(name)?;
        let kept = &mask.entries[name];
        for (i, (&w, &keep)) in weights.iter().zip(kept).enumerate() {
            if keep {
                survivors.push((w.to_f64().abs(), ni as u32, i as u32));
            }
        }
    }
    let quota = prune_quota(k, survivors.len());
    if quota == 0 {
        return Ok(0);
    }
    survivors.sort_by(|a, b| a.0.total_cmp(&b.0));
    for &(_, ni, i) in &survivors[..quota] {
        let name = &names[ni as usize];
        mask.entries.get_mut(name).unwrap()[i as usize] = false;
        params.get_mut(name)?.data_mut()[i as usize] = S::ZERO;
    }
    Ok(quota)
}

/// One pool entry produced by the iterative sweep.
#[derive(Clone, Debug)]
pub struct PoolEntryInfo {
    /// Iteration index; 0 is the dense model.
    pub index: usize,
    /// Mask zeros over prunable weights.
    pub sparsity_prunable: f64,
    /// Mask zeros over all parameters.
    pub sparsity_all: f64,
    /// Weights newly dropped entering this entry.
    pub newly_pruned: usize,
    pub train_report: TrainReport,
}

/// Train a dense model, then iterate prune → retrain (restarting the same
/// learning-rate curve on the current weights) until sparsity reaches
/// `target`. Every entry is handed to `persist` before the next iteration
/// starts, so an aborted sweep leaves a valid partial pool behind.
pub fn lrr_sweep<S, F>(
    spec: &ModelSpec,
    data: &[Sample],
    schedule: &Schedule,
    k: f64,
    target: f64,
    mut persist: F,
) -> Result<Vec<PoolEntryInfo>>
where
    S: Scalar,
    F: FnMut(&PoolEntryInfo, &AnyModel<S>, &PruneMask) -> Result<()>,
{
    check_sweep_params(k, target)?;
    let mut model = AnyModel::<S>::build(spec)?;
    let mut mask = PruneMask::all_ones(model.params());
    let report = train(&mut model, data, schedule, Some(&mask))?;
    let dense = PoolEntryInfo {
        index: 0,
        sparsity_prunable: 0.0,
        sparsity_all: 0.0,
        newly_pruned: 0,
        train_report: report,
    };
    persist(&dense, &model, &mask)?;
    let mut entries = alloc::vec![dense];
    let rest = lrr_continue(&mut model, &mut mask, data, schedule, k, target, 1, persist)?;
    entries.extend(rest);
    Ok(entries)
}

/// Continue a sweep from an existing (model, mask) state — the resume path.
/// Returns only the entries produced by this call.
#[allow(clippy::too_many_arguments)]
pub fn lrr_continue<S, F>(
    model: &mut AnyModel<S>,
    mask: &mut PruneMask,
    data: &[Sample],
    schedule: &Schedule,
    k: f64,
    target: f64,
    next_index: usize,
    mut persist: F,
) -> Result<Vec<PoolEntryInfo>>
where
    S: Scalar,
    F: FnMut(&PoolEntryInfo, &AnyModel<S>, &PruneMask) -> Result<()>,
{
    check_sweep_params(k, target)?;
    let mut entries = Vec::new();
    let mut index = next_index;
    while sparsity_of(mask) < target {
        let newly_pruned = global_magnitude_prune(model.params_mut(), mask, k)?;
        if newly_pruned == 0 {
            return Err(CoreError::Config(alloc::format!(
                "k={k} prunes zero weights per round at {} survivors; sweep cannot reach {target}",
                mask.n_total() - mask.n_zeros()
            )));
        }
        let train_report = train(model, data, schedule, Some(mask))?;
        let info = PoolEntryInfo {
            index,
            sparsity_prunable: sparsity_of(mask),
            sparsity_all: sparsity_all(mask, model.params()),
            newly_pruned,
            train_report,
        };
        persist(&info, model, mask)?;
        entries.push(info);
        index += 1;
    }
    Ok(entries)
}

fn check_sweep_params(k: f64, target: f64) -> Result<()> {
    if !(k > 0.0 && k < 1.0) {
        return Err(CoreError::Config(alloc::format!(
            "prune fraction k={k} must lie in (0, 1)"
        )));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(CoreError::Config(alloc::format!(
            "target sparsity {target} must lie in (0, 1)"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_shapes_dataset, DatasetSpec, ShapeClass};
    use crate::nn::CnnSpec;
    use crate::rng::{rng_for, Stream};
    use crate::tensor::Tensor;
    use rand::Rng;

    fn single_tensor(values: &[f32]) -> (ParamSet<f32>, PruneMask) {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new([values.len()], values.to_vec()), true);
        let m = PruneMask::all_ones(&p);
        (p, m)
    }

    /// Independent oracle: survivors sorted by (|w|, name, index), prune the
    /// first round-half-up(k·n).
    fn oracle_prune_set(
        params: &ParamSet<f32>,
        mask: &PruneMask,
        k: f64,
    ) -> alloc::vec::Vec<(String, usize)> {
        let mut surv: alloc::vec::Vec<(f64, String, usize)> = alloc::vec::Vec::new();
        for (name, kept) in mask.iter() {
            let w = params.get(name).unwrap();
            for i in 0..kept.len() {
                if kept[i] {
                    surv.push((w.data()[i].abs() as f64, name.to_string(), i));
                }
            }
        }
        surv.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        let quota = libm::floor(k * surv.len() as f64 + 0.5) as usize;
        surv[..quota]
            .iter()
            .map(|(_, n, i)| (n.clone(), *i))
            .collect()
    }

    #[test]
    fn halving_prunes_the_two_smallest_magnitudes() {
        let (mut p, mut m) = single_tensor(&[0.1, -0.5, 0.3, -0.05]);
        let n = global_magnitude_prune(&mut p, &mut m, 0.5).unwrap();
        assert_eq!(n, 2);
        assert_eq!(m.get("w").unwrap(), &[false, true, true, false]);
        assert_eq!(p.get("w").unwrap().data(), &[0.0, -0.5, 0.3, 0.0]);
        assert_eq!(sparsity_of(&m), 0.5);
    }

    #[test]
    fn zero_fraction_prunes_nothing() {
        let (mut p, mut m) = single_tensor(&[0.1, -0.5, 0.3, -0.05]);
        let before = m.clone();
        let n = global_magnitude_prune(&mut p, &mut m, 0.0).unwrap();
        assert_eq!(n, 0);
        assert_eq!(m, before);
    }

    #[test]
    fn second_round_prunes_among_survivors_only() {
        let (mut p, mut m) = single_tensor(&[0.1, -0.5, 0.3, -0.05]);
        global_magnitude_prune(&mut p, &mut m, 0.5).unwrap();
        let n = global_magnitude_prune(&mut p, &mut m, 0.5).unwrap();
        assert_eq!(n, 1);
        assert_eq!(m.get("w").unwrap(), &[false, true, false, false]);
        assert_eq!(sparsity_of(&m), 0.75);
    }

    #[test]
    fn invalid_fraction_and_mismatched_mask_error() {
        let (mut p, mut m) = single_tensor(&[1.0, 2.0]);
        assert!(global_magnitude_prune(&mut p, &mut m, 1.0).is_err());
        assert!(global_magnitude_prune(&mut p, &mut m, -0.1).is_err());
        let (other, _) = single_tensor(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            m.check_matches(&other),
            Err(CoreError::MaskMismatch(_))
        ));
    }

    #[test]
    fn matches_sort_oracle_across_tensors() {
        let mut rng = rng_for(17, Stream::Fixture, 0);
        let mut p = ParamSet::<f32>::new();
        p.insert("a.weight", Tensor::from_fn([40], |_| rng.gen_range(-1.0..1.0f32)), true);
        p.insert("b.bias", Tensor::from_fn([10], |_| rng.gen_range(-1.0..1.0f32)), false);
        p.insert("c.weight", Tensor::from_fn([60], |_| rng.gen_range(-1.0..1.0f32)), true);
        let mut m = PruneMask::all_ones(&p);
        for round in 0..4 {
            let expect = oracle_prune_set(&p, &m, 0.3);
            let before = m.clone();
            let n = global_magnitude_prune(&mut p, &mut m, 0.3).unwrap();
            assert_eq!(n, expect.len(), "round {round}");
            let mut actually: alloc::vec::Vec<(String, usize)> = alloc::vec::Vec::new();
            for (name, kept) in m.iter() {
                let prev = before.get(name).unwrap();
                for i in 0..kept.len() {
                    if prev[i] && !kept[i] {
                        actually.push((name.to_string(), i));
                    }
                }
            }
            actually.sort();
            let mut expect_sorted = expect.clone();
            expect_sorted.sort();
            assert_eq!(actually, expect_sorted, "round {round}");
            assert!(m.refines(&before));
        }
    }

    #[test]
    fn survivors_dominate_pruned_magnitudes() {
        let mut rng = rng_for(18, Stream::Fixture, 0);
        let (mut p, mut m) = single_tensor(
            &(0..101).map(|_| rng.gen_range(-2.0..2.0f32)).collect::<alloc::vec::Vec<_>>(),
        );
        let before = p.get("w").unwrap().clone();
        global_magnitude_prune(&mut p, &mut m, 0.37).unwrap();
        let kept = m.get("w").unwrap();
        let max_pruned = before
            .data()
            .iter()
            .zip(kept)
            .filter(|(_, &k)| !k)
            .map(|(w, _)| w.abs())
            .fold(0.0f32, f32::max);
        for (w, &k) in before.data().iter().zip(kept) {
            if k {
                assert!(w.abs() >= max_pruned);
            }
        }
    }

    #[test]
    fn ties_break_by_name_then_index() {
        let mut p = ParamSet::<f32>::new();
        p.insert("z.weight", Tensor::full([2], 0.5f32), true);
        p.insert("a.weight", Tensor::full([2], 0.5f32), true);
        let mut m = PruneMask::all_ones(&p);
        global_magnitude_prune(&mut p, &mut m, 0.5).unwrap();
        // All four magnitudes tie; the first two in (name, index) order go.
        assert_eq!(m.get("a.weight").unwrap(), &[false, false]);
        assert_eq!(m.get("z.weight").unwrap(), &[true, true]);
    }

    #[test]
    fn repeated_rounds_track_closed_form() {
        let mut rng = rng_for(19, Stream::Fixture, 1);
        let n = 1000usize;
        let (mut p, mut m) = single_tensor(
            &(0..n).map(|_| rng.gen_range(-1.0..1.0f32)).collect::<alloc::vec::Vec<_>>(),
        );
        let k = 0.2;
        for round in 1..=8 {
            global_magnitude_prune(&mut p, &mut m, k).unwrap();
            let expect = 1.0 - libm::pow(1.0 - k, round as f64);
            let tol = round as f64 / n as f64;
            assert!(
                (sparsity_of(&m) - expect).abs() <= tol,
                "round {round}: {} vs {expect}",
                sparsity_of(&m)
            );
        }
    }

    fn tiny_dataset(n: usize) -> alloc::vec::Vec<Sample> {
        generate_shapes_dataset(&DatasetSpec {
            n_samples: n,
            image_size: 16,
            classes: alloc::vec![ShapeClass::Circle, ShapeClass::Square],
            textured_background: false,
            seed: 40,
        })
        .unwrap()
    }

    #[test]
    fn sweep_produces_increasing_sparsities_and_rewound_schedules() {
        let spec = ModelSpec::Cnn(CnnSpec {
            image_size: 16,
            widths: alloc::vec![4, 6],
            n_classes: 2,
            seed: 7,
        });
        let data = tiny_dataset(24);
        let schedule = Schedule {
            epochs: 2,
            batch_size: 8,
            base_lr: 0.05,
            momentum: 0.9,
            decay_at: 1,
            decay_factor: 0.1,
            seed: 5,
        };
        let mut persisted: alloc::vec::Vec<(usize, f64, f64)> = alloc::vec::Vec::new();
        let entries = lrr_sweep::<f32, _>(&spec, &data, &schedule, 0.2, 0.45, |info, model, mask| {
            // Masked weights must be exactly zero in the persisted state.
            let mut max_masked = 0.0f64;
            for (name, kept) in mask.iter() {
                let w = model.params().get(name).unwrap();
                for (v, &keep) in w.iter().zip(kept) {
                    if !keep {
                        max_masked = max_masked.max(v.abs() as f64);
                    }
                }
            }
            persisted.push((info.index, info.sparsity_prunable, max_masked));
            Ok(())
        })
        .unwrap();

        assert_eq!(entries.len(), 4, "k=0.2 to T=0.45 is dense + 3 rounds");
        let n_prunable = 9 * 3 * 4 + 9 * 4 * 6 + 6 * 2;
        for (i, e) in entries.iter().enumerate() {
            assert_eq!(e.index, i);
            let expect = 1.0 - libm::pow(0.8, i as f64);
            assert!((e.sparsity_prunable - expect).abs() <= i as f64 / n_prunable as f64);
            // Learning-rate rewinding: every retraining iteration replays the
            // exact configured curve.
            assert_eq!(e.train_report.lr_values, schedule.lr_curve());
            if i > 0 {
                assert!(e.sparsity_prunable > entries[i - 1].sparsity_prunable);
            }
        }
        assert!(entries.last().unwrap().sparsity_prunable >= 0.45);
        assert_eq!(persisted.len(), 4);
        assert!(persisted.iter().all(|&(_, _, mm)| mm == 0.0));
    }
}
