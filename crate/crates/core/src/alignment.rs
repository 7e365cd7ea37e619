//! Robustness evaluation: classification accuracy under each distortion
//! kind and level, for every model in a sparsity pool.
//!
//! Distorted images are generated on the fly from per-(image, level) derived
//! seeds, so rows reproduce bit-identically without storing distorted
//! copies, and every image sees a fresh noise field.

use alloc::vec::Vec;

use crate::dataset::{apply_distortion, DistortionKind, DistortionSpec, Sample};
use crate::error::{CoreError, Result};
use crate::nn::{argmax, AnyModel};
use crate::parallel;
use crate::rng::mix;
use crate::scalar::Scalar;

/// One distortion kind with the levels it is evaluated at.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DistortionPlan {
    pub kind: DistortionKind,
    pub levels: Vec<f32>,
}

/// The default evaluation grid: every kind, identity level first, then a
/// ramp toward heavy distortion within the kind's legal range.
pub fn standard_plans() -> Vec<DistortionPlan> {
    let plan = |kind, levels: &[f32]| DistortionPlan {
        kind,
        levels: levels.to_vec(),
    };
    alloc::vec![
        plan(DistortionKind::Greyscale, &[0.0, 0.5, 1.0]),
        plan(DistortionKind::FalseColour, &[0.0, 0.5, 1.0]),
        plan(DistortionKind::Contrast, &[1.0, 0.6, 0.3, 0.1, 0.05]),
        plan(DistortionKind::UniformNoise, &[0.0, 0.1, 0.2, 0.35, 0.5, 1.0]),
        plan(DistortionKind::LowPass, &[0.0, 1.0, 2.0, 4.0]),
        plan(DistortionKind::HighPass, &[0.0, 0.5, 1.0, 3.0]),
        plan(DistortionKind::Rotation, &[0.0, 15.0, 45.0, 90.0, 180.0]),
        plan(DistortionKind::Silhouette, &[0.0, 1.0]),
        plan(DistortionKind::Edge, &[0.0, 0.08, 0.16]),
    ]
}

/// Accuracy of one model on one (kind, level) cell.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlignmentRow {
    pub kind: DistortionKind,
    pub level: f32,
    /// correct / n, exactly.
    pub accuracy: f64,
    pub n: usize,
}

/// Seed for the distortion of one (image, level) cell, derived so that every
/// image gets an independent noise field and changing the level changes the
/// field.
fn cell_seed(base: u64, sample_index: usize, level: f32) -> u64 {
    mix(mix(base ^ (level.to_bits() as u64)) ^ sample_index as u64)
}

/// Accuracy over `data` with `kind` at `level` applied to every image.
/// Predictions on identity levels are bit-identical to the clean path.
pub fn distorted_accuracy<S: Scalar>(
    model: &AnyModel<S>,
    data: &[Sample],
    kind: DistortionKind,
    level: f32,
    seed: u64,
) -> Result<AlignmentRow> {
    if data.is_empty() {
        return Err(CoreError::EmptyInput("empty evaluation dataset".into()));
    }
    DistortionSpec::new(kind, level, 0).validate()?;
    let outcomes = parallel::map_indexed(data.len(), |i| -> Result<bool> {
        let sample = &data[i];
        let spec = DistortionSpec::new(kind, level, cell_seed(seed, i, level));
        let distorted = apply_distortion(&sample.image, Some(&sample.mask), &spec)?;
        let logits = model.logits(&distorted.cast::<S>())?;
        Ok(argmax(&logits) == sample.label)
    });
    let mut correct = 0usize;
    for o in outcomes {
        correct += usize::from(o?);
    }
    Ok(AlignmentRow {
        kind,
        level,
        accuracy: correct as f64 / data.len() as f64,
        n: data.len(),
    })
}

/// Evaluate one model across the whole distortion grid: one row per
/// (kind, level), in plan order.
pub fn distortion_sweep<S: Scalar>(
    model: &AnyModel<S>,
    data: &[Sample],
    plans: &[DistortionPlan],
    seed: u64,
) -> Result<Vec<AlignmentRow>> {
    if plans.is_empty() || plans.iter().any(|p| p.levels.is_empty()) {
        return Err(CoreError::EmptyInput("empty distortion grid".into()));
    }
    let mut rows = Vec::new();
    for plan in plans {
        for &level in &plan.levels {
            rows.push(distorted_accuracy(model, data, plan.kind, level, seed)?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_shapes_dataset, DatasetSpec, ShapeClass};
    use crate::nn::{accuracy, AnyModel, CnnSpec, ModelSpec};

    fn fixture() -> (AnyModel<f32>, Vec<Sample>) {
        let model = AnyModel::build(&ModelSpec::Cnn(CnnSpec {
            image_size: 16,
            widths: alloc::vec![4, 6],
            n_classes: 3,
            seed: 70,
        }))
        .unwrap();
        let data = generate_shapes_dataset(&DatasetSpec {
            n_samples: 20,
            image_size: 16,
            classes: alloc::vec![
                ShapeClass::Circle,
                ShapeClass::Square,
                ShapeClass::Triangle
            ],
            textured_background: false,
            seed: 71,
        })
        .unwrap();
        (model, data)
    }

    #[test]
    fn identity_levels_reproduce_clean_accuracy_exactly() {
        let (model, data) = fixture();
        let clean = accuracy(&model, &data).unwrap();
        for kind in DistortionKind::ALL {
            let row =
                distorted_accuracy(&model, &data, kind, kind.identity_level(), 99).unwrap();
            assert_eq!(row.accuracy, clean, "{kind:?}");
            assert_eq!(row.n, data.len());
        }
    }

    #[test]
    fn sweep_emits_one_row_per_kind_level_pair() {
        let (model, data) = fixture();
        let plans = alloc::vec![
            DistortionPlan {
                kind: DistortionKind::Greyscale,
                levels: alloc::vec![0.0, 1.0],
            },
            DistortionPlan {
                kind: DistortionKind::UniformNoise,
                levels: alloc::vec![0.0, 0.3, 1.0],
            },
        ];
        let rows = distortion_sweep(&model, &data, &plans, 5).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].kind, DistortionKind::Greyscale);
        assert_eq!(rows[2].kind, DistortionKind::UniformNoise);
        // Deterministic replay, including the stochastic kind.
        let again = distortion_sweep(&model, &data, &plans, 5).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn noise_fields_differ_across_images_and_levels() {
        let (_, data) = fixture();
        let img = &data[0].image;
        let spec_a = DistortionSpec::new(
            DistortionKind::UniformNoise,
            1.0,
            super::cell_seed(5, 0, 1.0),
        );
        let spec_b = DistortionSpec::new(
            DistortionKind::UniformNoise,
            1.0,
            super::cell_seed(5, 1, 1.0),
        );
        let spec_c = DistortionSpec::new(
            DistortionKind::UniformNoise,
            0.5,
            super::cell_seed(5, 0, 0.5),
        );
        let a = apply_distortion(img, None, &spec_a).unwrap();
        let b = apply_distortion(img, None, &spec_b).unwrap();
        let c = apply_distortion(img, None, &spec_c).unwrap();
        assert_ne!(a.data(), b.data(), "same image index must not reuse noise");
        assert_ne!(a.data(), c.data(), "levels must not share noise fields");
    }

    #[test]
    fn empty_inputs_and_bad_levels_are_rejected() {
        let (model, data) = fixture();
        assert!(distorted_accuracy(&model, &[], DistortionKind::Greyscale, 0.0, 0).is_err());
        assert!(distorted_accuracy(&model, &data, DistortionKind::Greyscale, 7.0, 0).is_err());
        assert!(distortion_sweep(&model, &data, &[], 0).is_err());
    }

    #[test]
    fn standard_grid_covers_every_kind_with_identity_first() {
        let plans = standard_plans();
        assert_eq!(plans.len(), DistortionKind::ALL.len());
        for plan in &plans {
            assert_eq!(plan.levels[0], plan.kind.identity_level(), "{:?}", plan.kind);
            for &l in &plan.levels {
                assert!(DistortionSpec::new(plan.kind, l, 0).validate().is_ok());
            }
        }
    }
}
