//! Synthetic shapes dataset with exact segmentation masks and boxes.
//!
//! Each sample is a colored geometric shape on a (optionally textured)
//! background. Masks come straight from the analytic point-in-shape test and
//! boxes from scanning the mask, so localization and relevance ground truth
//! are exact by construction. Generation is a pure function of
//! (spec, sample index): samples can be produced in any order, in parallel,
//! and regenerate bit-identically.

mod distort;
mod shapes;

pub use distort::{apply_distortion, DistortionKind, DistortionSpec};
pub use shapes::ShapeClass;

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::parallel;
use crate::rng::{rng_for, Stream};
use crate::tensor::Tensor;

/// Axis-aligned box in pixel coordinates, half-open on both axes:
/// `x in [xmin, xmax)`, `y in [ymin, ymax)`, area `(xmax-xmin)*(ymax-ymin)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub xmin: usize,
    pub ymin: usize,
    pub xmax: usize,
    pub ymax: usize,
}

impl BoundingBox {
    pub fn area(&self) -> usize {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    pub fn is_valid_within(&self, w: usize, h: usize) -> bool {
        self.xmin < self.xmax && self.ymin < self.ymax && self.xmax <= w && self.ymax <= h
    }
}

/// Binary segmentation mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), h * w);
        Self { h, w, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box of the foreground, scanning every pixel.
    pub fn tight_bbox(&self) -> Option<BoundingBox> {
        let (mut xmin, mut ymin) = (usize::MAX, usize::MAX);
        let (mut xmax, mut ymax) = (0usize, 0usize);
        let mut any = false;
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) {
                    any = true;
                    xmin = xmin.min(x);
                    ymin = ymin.min(y);
                    xmax = xmax.max(x + 1);
                    ymax = ymax.max(y + 1);
                }
            }
        }
        any.then_some(BoundingBox {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }
}

/// One dataset unit: image, class label, exact mask, tight box.
#[derive(Clone, Debug)]
pub struct Sample {
    /// H x W x 3 image, values in [0, 1].
    pub image: Tensor<f32>,
    pub label: usize,
    pub mask: Mask,
    pub bbox: BoundingBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub image_size: usize,
    pub classes: Vec<ShapeClass>,
    pub textured_background: bool,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(CoreError::Config(format!(
                "image_size {} too small to place the minimum shape (need >= 16)",
                self.image_size
            )));
        }
        if self.classes.len() < 2 {
            return Err(CoreError::Config(
                "need at least 2 shape classes".to_string(),
            ));
        }
        let mut seen = self.classes.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(CoreError::Config("duplicate shape classes".to_string()));
        }
        Ok(())
    }
}

/// Generate the dataset described by `spec`.
///
/// Class labels cycle through `spec.classes`, keeping the distribution
/// balanced within one sample. Deterministic given the spec (including its
/// seed); `n_samples == 0` yields an empty dataset.
pub fn generate_shapes_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let samples = parallel::map_indexed(spec.n_samples, |i| generate_sample(spec, i));
    for s in &samples {
        debug_assert!(s.mask.count_foreground() >= 1);
    }
    Ok(samples)
}

/// Generate the i-th sample of the dataset, independent of all others.
pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Sample {
    let mut rng = rng_for(spec.seed, Stream::DatasetSample, index as u64);
    let label = index % spec.classes.len();
    let class = spec.classes[label];
    let size = spec.image_size;

    // Shape geometry: half-extent and a center that keeps it fully inside.
    let half: f32 = rng.gen_range(0.14..0.30) * size as f32;
    let margin = half + 1.0;
    let cx: f32 = rng.gen_range(margin..(size as f32 - margin));
    let cy: f32 = rng.gen_range(margin..(size as f32 - margin));
    let theta: f32 = if class.is_rotatable() {
        rng.gen_range(-0.35..0.35)
    } else {
        0.0
    };

    // Colors: hues held apart so the figure never melts into the ground.
    let fg_hue: f32 = rng.gen_range(0.0..1.0);
    let bg_hue = (fg_hue + 0.25 + rng.gen_range(0.0..0.5)) % 1.0;
    let fg = hsv_to_rgb(fg_hue, rng.gen_range(0.6..0.95), rng.gen_range(0.6..0.95));
    let bg = hsv_to_rgb(bg_hue, rng.gen_range(0.4..0.85), rng.gen_range(0.5..0.95));

    // Background texture: two oriented sinusoidal gratings.
    let tex = if spec.textured_background {
        Some(shapes::Gratings::sample(&mut rng, size))
    } else {
        None
    };
    let jitter: f32 = 0.015;

    let mut mask = vec![false; size * size];
    let mut image = vec![0.0f32; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let px = x as f32 + 0.5;
            let py = y as f32 + 0.5;
            let inside = shapes::contains(class, px - cx, py - cy, half, theta);
            mask[y * size + x] = inside;
            let base = if inside {
                fg
            } else if let Some(t) = &tex {
                let m = 1.0 + t.eval(px, py);
                [bg[0] * m, bg[1] * m, bg[2] * m]
            } else {
                bg
            };
            for c in 0..3 {
                let noise: f32 = rng.gen_range(-jitter..jitter);
                image[(y * size + x) * 3 + c] = (base[c] + noise).clamp(0.0, 1.0);
            }
        }
    }

    let mask = Mask::new(size, size, mask);
    let bbox = mask
        .tight_bbox()
        .expect("generated shape always covers at least one pixel");
    Sample {
        image: Tensor::new([size, size, 3], image),
        label,
        mask,
        bbox,
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h % 1.0) * 6.0;
    let i = h6 as usize % 6;
    let f = h6 - h6 as usize as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
