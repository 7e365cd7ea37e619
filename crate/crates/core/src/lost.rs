//! Unsupervised single-object discovery from patch feature similarities.
//!
//! The pipeline turns a model's spatial features into one predicted box per
//! image: build the patch-to-patch similarity graph, pick the patch with the
//! fewest positive correlations as the seed (foreground patches are the
//! minority, so they correlate with fewer patches), expand the seed to its
//! positively-correlated set, and box the 4-connected group of patches that
//! align with the expanded set's mean feature.

use alloc::vec::Vec;

use crate::dataset::BoundingBox;
use crate::error::{CoreError, Result};
use crate::nn::{AnyModel, AnyTrace, ModelSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Feature-preparation knobs. Centering subtracts the per-dimension mean
/// over patches before similarities are taken — rectified convolutional
/// features are all-positive and correlate everywhere without it, so it
/// defaults on for that family and off for attention keys.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LostSettings {
    /// Per-family default when `None`: on for "cnn", off for "vit".
    pub center_features: Option<bool>,
    /// L2-normalize each patch vector (cosine similarities).
    pub l2_normalize: bool,
}

impl Default for LostSettings {
    fn default() -> Self {
        Self {
            center_features: None,
            l2_normalize: false,
        }
    }
}

/// Patch-level feature matrix plus the geometry to map patches to pixels.
#[derive(Clone, Debug)]
pub struct PatchFeatures {
    /// `[patches, dim]`, row-major over the `grid x grid` patch layout.
    pub features: Tensor<f64>,
    pub grid: usize,
    /// Image pixels per patch side.
    pub patch_px: usize,
}

/// Extract per-patch features from a forward trace: spatial vectors of the
/// final convolutional map, or key projections of the patch tokens in the
/// final attention layer.
pub fn patch_features<S: Scalar>(
    model: &AnyModel<S>,
    trace: &AnyTrace<S>,
    settings: &LostSettings,
) -> Result<PatchFeatures> {
    let (mut features, grid, patch_px, default_center) = match model.spec() {
        ModelSpec::Cnn(spec) => {
            let layer = model.cam_layer().expect("convolutional model");
            let act = model.activation(trace, &layer)?;
            let (h, w, c) = (act.shape()[0], act.shape()[1], act.shape()[2]);
            debug_assert_eq!(h, w);
            let mut rows = Tensor::<f64>::zeros([h * w, c]);
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        rows.data_mut()[(y * w + x) * c + ch] = act.at3(y, x, ch).to_f64();
                    }
                }
            }
            (rows, h, spec.image_size / h, true)
        }
        ModelSpec::Vit(spec) => {
            let keys = model.activation(trace, "patch_keys")?;
            (keys.cast::<f64>(), spec.grid(), spec.patch_size, false)
        }
    };

    let (p, d) = (features.shape()[0], features.shape()[1]);
    if settings.center_features.unwrap_or(default_center) {
        for j in 0..d {
            let mean = (0..p).map(|i| features.at2(i, j)).sum::<f64>() / p as f64;
            for i in 0..p {
                features.data_mut()[i * d + j] -= mean;
            }
        }
    }
    if settings.l2_normalize {
        for i in 0..p {
            let row = &mut features.data_mut()[i * d..(i + 1) * d];
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            if norm > 0.0 {
                for v in row {
                    *v /= norm;
                }
            }
        }
    }
    Ok(PatchFeatures {
        features,
        grid,
        patch_px,
    })
}

/// Dense `[P, P]` matrix of pairwise dot products.
pub fn similarity_graph(features: &Tensor<f64>) -> Tensor<f64> {
    let (p, d) = (features.shape()[0], features.shape()[1]);
    let mut sims = Tensor::zeros([p, p]);
    for i in 0..p {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..d {
                s += features.at2(i, k) * features.at2(j, k);
            }
            sims.data_mut()[i * p + j] = s;
        }
    }
    sims
}

/// The patch with the fewest positive similarities to OTHER patches
/// (self-similarity excluded); ties go to the lowest index.
pub fn select_seed(sims: &Tensor<f64>) -> usize {
    let p = sims.shape()[0];
    let mut best = 0usize;
    let mut best_count = usize::MAX;
    for i in 0..p {
        let count = (0..p)
            .filter(|&j| j != i && sims.at2(i, j) > 0.0)
            .count();
        if count < best_count {
            best_count = count;
            best = i;
        }
    }
    best
}

/// The seed plus every patch positively correlated with it.
pub fn expand_seed(sims: &Tensor<f64>, seed: usize) -> Vec<usize> {
    let p = sims.shape()[0];
    (0..p)
        .filter(|&j| j == seed || sims.at2(seed, j) > 0.0)
        .collect()
}

/// Predicted pixel box: patches whose features align with the expanded
/// set's mean vector form a foreground map; the box bounds the 4-connected
/// region of that map containing the seed, scaled to pixels.
pub fn extract_box(patches: &PatchFeatures, seed: usize, expanded: &[usize]) -> BoundingBox {
    let (p, d) = (patches.features.shape()[0], patches.features.shape()[1]);
    let g = patches.grid;
    debug_assert_eq!(p, g * g);

    let mut centroid = alloc::vec![0.0f64; d];
    for &i in expanded {
        for j in 0..d {
            centroid[j] += patches.features.at2(i, j);
        }
    }
    for v in &mut centroid {
        *v /= expanded.len() as f64;
    }

    let mut fg = alloc::vec![false; p];
    for i in 0..p {
        let score: f64 = (0..d).map(|j| patches.features.at2(i, j) * centroid[j]).sum();
        fg[i] = score > 0.0;
    }
    fg[seed] = true;

    // Flood-fill the seed's 4-connected component.
    let mut member = alloc::vec![false; p];
    let mut queue = alloc::vec![seed];
    member[seed] = true;
    while let Some(i) = queue.pop() {
        let (r, c) = (i / g, i % g);
        let mut push = |n: usize| {
            if fg[n] && !member[n] {
                member[n] = true;
                queue.push(n);
            }
        };
        if r > 0 {
            push(i - g);
        }
        if r + 1 < g {
            push(i + g);
        }
        if c > 0 {
            push(i - 1);
        }
        if c + 1 < g {
            push(i + 1);
        }
    }

    let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
    for i in 0..p {
        if member[i] {
            let (r, c) = (i / g, i % g);
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
        }
    }
    let ps = patches.patch_px;
    BoundingBox {
        xmin: cmin * ps,
        ymin: rmin * ps,
        xmax: (cmax + 1) * ps,
        ymax: (rmax + 1) * ps,
    }
}

/// Run the full discovery pipeline for one image trace.
pub fn discover_box<S: Scalar>(
    model: &AnyModel<S>,
    trace: &AnyTrace<S>,
    settings: &LostSettings,
) -> Result<BoundingBox> {
    let patches = patch_features(model, trace, settings)?;
    let sims = similarity_graph(&patches.features);
    let seed = select_seed(&sims);
    let expanded = expand_seed(&sims, seed);
    Ok(extract_box(&patches, seed, &expanded))
}

/// Intersection-over-union of two half-open pixel boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = a.xmax.min(b.xmax).saturating_sub(a.xmin.max(b.xmin));
    let iy = a.ymax.min(b.ymax).saturating_sub(a.ymin.max(b.ymin));
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// Localization quality over a dataset: the fraction of predictions whose
/// overlap with ground truth reaches 0.5, plus the mean overlap itself.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorLoc {
    /// Fraction of samples with IoU >= 0.5.
    pub corloc: f64,
    pub mean_iou: f64,
    pub n: usize,
}

/// Aggregate predicted/ground-truth box pairs.
pub fn corloc_dataset(pairs: &[(BoundingBox, BoundingBox)]) -> Result<CorLoc> {
    if pairs.is_empty() {
        return Err(CoreError::EmptyInput("no box pairs to score".into()));
    }
    let ious: Vec<f64> = pairs.iter().map(|(p, g)| iou(p, g)).collect();
    let n = ious.len();
    Ok(CorLoc {
        corloc: ious.iter().filter(|&&v| v >= 0.5).count() as f64 / n as f64,
        mean_iou: ious.iter().sum::<f64>() / n as f64,
        n,
    })
}
