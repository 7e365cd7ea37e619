//! Parametric image distortions, a procedurally generable stand-in for the
//! distortion-robustness benchmark suites.
//!
//! Every kind has a documented identity level that returns the input
//! unchanged (bit-exact pass-through): `contrast -> 1.0`, all others `0.0`.
//! Outputs are clamped to [0, 1] and deterministic given
//! `(image, DistortionSpec)` — stochastic kinds derive their noise from
//! `DistortionSpec::seed`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::{rng_for, Stream};
use crate::tensor::Tensor;

use super::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    /// Blend toward the luma image. Level: blend in [0, 1].
    Greyscale,
    /// Blend toward hue-opponent colors (2*luma - p). Level: blend in [0, 1].
    FalseColour,
    /// p -> 0.5 + c * (p - 0.5). Level: factor c in [0, 8]; identity 1.
    Contrast,
    /// Blend toward a per-pixel uniform noise field (shared across
    /// channels). Level: blend in [0, 1]; at 1 the output is pure noise,
    /// independent of the input.
    UniformNoise,
    /// Gaussian blur. Level: sigma in [0, 8].
    LowPass,
    /// p - blur_sigma(p) + 0.5. Level: sigma in [0, 8]; level 0 passes through.
    HighPass,
    /// Rotation about the image center. Level: degrees in [-360, 360].
    /// Multiples of 90 are exact pixel permutations, other angles bilinear.
    Rotation,
    /// Blend toward foreground-black-on-white. Level: blend in [0, 1].
    /// Needs the sample's segmentation mask for any level > 0.
    Silhouette,
    /// Binarized Sobel gradient magnitude (edges black on white).
    /// Level: threshold in (0, 1]; level 0 passes through.
    Edge,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 9] = [
        DistortionKind::Greyscale,
        DistortionKind::FalseColour,
        DistortionKind::Contrast,
        DistortionKind::UniformNoise,
        DistortionKind::LowPass,
        DistortionKind::HighPass,
        DistortionKind::Rotation,
        DistortionKind::Silhouette,
        DistortionKind::Edge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::Greyscale => "greyscale",
            DistortionKind::FalseColour => "false_colour",
            DistortionKind::Contrast => "contrast",
            DistortionKind::UniformNoise => "uniform_noise",
            DistortionKind::LowPass => "low_pass",
            DistortionKind::HighPass => "high_pass",
            DistortionKind::Rotation => "rotation",
            DistortionKind::Silhouette => "silhouette",
            DistortionKind::Edge => "edge",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// The level at which this kind is the identity function.
    pub fn identity_level(self) -> f32 {
        match self {
            DistortionKind::Contrast => 1.0,
            _ => 0.0,
        }
    }

    /// Documented valid level range (inclusive).
    pub fn level_range(self) -> (f32, f32) {
        match self {
            DistortionKind::Greyscale
            | DistortionKind::FalseColour
            | DistortionKind::Silhouette
            | DistortionKind::UniformNoise
            | DistortionKind::Edge => (0.0, 1.0),
            DistortionKind::Contrast => (0.0, 8.0),
            DistortionKind::LowPass | DistortionKind::HighPass => (0.0, 8.0),
            DistortionKind::Rotation => (-360.0, 360.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: f32,
    /// Seed for stochastic kinds (uniform noise). Part of the function input:
    /// the same (image, spec) always produces the same output.
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: f32, seed: u64) -> Self {
        Self { kind, level, seed }
    }

    pub fn is_identity(&self) -> bool {
        self.level == self.kind.identity_level()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.kind.level_range();
        if !self.level.is_finite() || self.level < lo || self.level > hi {
            return Err(CoreError::LevelOutOfRange {
                kind: self.kind.name(),
                level: self.level,
            });
        }
        Ok(())
    }
}

/// Apply a distortion to an H x W x 3 image in [0, 1].
///
/// `mask` is only consulted by mask-dependent kinds (silhouette); passing
/// `None` for those at a non-identity level is an error.
pub fn apply_distortion(
    image: &Tensor<f32>,
    mask: Option<&Mask>,
    spec: &DistortionSpec,
) -> Result<Tensor<f32>> {
    spec.validate()?;
    let dims = image.shape();
    if dims.len() != 3 || dims[2] != 3 {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "distortion expects H x W x 3, got {dims:?}"
        )));
    }
    if spec.is_identity() {
        return Ok(image.clone());
    }
    let (h, w) = (dims[0], dims[1]);
    let lvl = spec.level;
    let out = match spec.kind {
        DistortionKind::Greyscale => per_pixel(image, |p| {
            let l = luma(p);
            [lerp(p[0], l, lvl), lerp(p[1], l, lvl), lerp(p[2], l, lvl)]
        }),
        DistortionKind::FalseColour => per_pixel(image, |p| {
            let l = luma(p);
            let f = |v: f32| lerp(v, (2.0 * l - v).clamp(0.0, 1.0), lvl);
            [f(p[0]), f(p[1]), f(p[2])]
        }),
        DistortionKind::Contrast => per_pixel(image, |p| {
            let f = |v: f32| (0.5 + lvl * (v - 0.5)).clamp(0.0, 1.0);
            [f(p[0]), f(p[1]), f(p[2])]
        }),
        DistortionKind::UniformNoise => {
            let mut rng = rng_for(spec.seed, Stream::Distortion, 0);
            let mut out = image.clone();
            let data = out.data_mut();
            for px in 0..h * w {
                let n: f32 = rng.gen_range(0.0..=1.0);
                for c in 0..3 {
                    let v = &mut data[px * 3 + c];
                    *v = lerp(*v, n, lvl);
                }
            }
            out
        }
        DistortionKind::LowPass => gaussian_blur(image, lvl),
        DistortionKind::HighPass => {
            let blurred = gaussian_blur(image, lvl);
            let mut out = image.clone();
            for (o, b) in out.data_mut().iter_mut().zip(blurred.data()) {
                *o = (*o - *b + 0.5).clamp(0.0, 1.0);
            }
            out
        }
        DistortionKind::Rotation => rotate(image, lvl),
        DistortionKind::Silhouette => {
            let mask = mask.ok_or(CoreError::MaskRequired("silhouette"))?;
            if mask.height() != h || mask.width() != w {
                return Err(CoreError::ShapeMismatch(alloc::format!(
                    "silhouette mask {}x{} vs image {}x{}",
                    mask.height(),
                    mask.width(),
                    h,
                    w
                )));
            }
            let mut out = image.clone();
            let data = out.data_mut();
            for y in 0..h {
                for x in 0..w {
                    let target = if mask.get(y, x) { 0.0 } else { 1.0 };
                    for c in 0..3 {
                        let v = &mut data[(y * w + x) * 3 + c];
                        *v = lerp(*v, target, lvl);
                    }
                }
            }
            out
        }
        DistortionKind::Edge => {
            let grey: Vec<f32> = (0..h * w)
                .map(|px| {
                    let d = image.data();
                    luma(&[d[px * 3], d[px * 3 + 1], d[px * 3 + 2]])
                })
                .collect();
            // Sobel magnitude normalized by its maximum possible value.
            let norm = 1.0 / (4.0 * core::f32::consts::SQRT_2);
            let mut out = Tensor::zeros([h, w, 3]);
            let data = out.data_mut();
            let at = |y: i64, x: i64| -> f32 {
                let y = y.clamp(0, h as i64 - 1) as usize;
                let x = x.clamp(0, w as i64 - 1) as usize;
                grey[y * w + x]
            };
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                        - at(y - 1, x - 1)
                        - 2.0 * at(y, x - 1)
                        - at(y + 1, x - 1);
                    let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                        - at(y - 1, x - 1)
                        - 2.0 * at(y - 1, x)
                        - at(y - 1, x + 1);
                    let mag = libm::sqrtf(gx * gx + gy * gy) * norm;
                    let v = if mag > lvl { 0.0 } else { 1.0 };
                    let px = (y as usize * w + x as usize) * 3;
                    data[px] = v;
                    data[px + 1] = v;
                    data[px + 2] = v;
                }
            }
            out
        }
    };
    Ok(out)
}

#[inline]
fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

#[inline]
// Exact at both endpoints (t=0 gives a, t=1 gives b bit-for-bit), which the
// full-strength noise blend relies on.
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    (1.0 - t) * a + t * b
}

fn per_pixel(image: &Tensor<f32>, f: impl Fn(&[f32; 3]) -> [f32; 3]) -> Tensor<f32> {
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let v = f(&[px[0], px[1], px[2]]);
        px.copy_from_slice(&v);
    }
    out
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = libm::ceilf(3.0 * sigma) as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    let denom = 2.0 * sigma * sigma;
    for i in 0..=2 * radius {
        let d = i as f32 - radius as f32;
        k.push(libm::expf(-d * d / denom));
    }
    let sum: f32 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn gaussian_blur(image: &Tensor<f32>, sigma: f32) -> Tensor<f32> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let reflect = |i: i64, n: usize| -> usize {
        // Reflect-101 border: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
        let n = n as i64;
        let mut i = i;
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
        }
        i as usize
    };
    // Horizontal pass.
    let mut tmp = vec![0.0f32; h * w * 3];
    let src = image.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = reflect(x as i64 + ki as i64 - radius as i64, w);
                    acc += kv * src[(y * w + sx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    // Vertical pass.
    let mut out = Tensor::zeros([h, w, 3]);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = reflect(y as i64 + ki as i64 - radius as i64, h);
                    acc += kv * tmp[(sy * w + x) * 3 + c];
                }
                data[(y * w + x) * 3 + c] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn rotate(image: &Tensor<f32>, degrees: f32) -> Tensor<f32> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let quarter = degrees / 90.0;
    if libm::fabsf(quarter - libm::roundf(quarter)) < 1e-6 {
        let turns = ((libm::roundf(quarter) as i64 % 4) + 4) % 4;
        return rotate_quarter(image, turns as usize);
    }
    let rad = degrees.to_radians();
    let (sin, cos) = (libm::sinf(rad), libm::cosf(rad));
    let (cx, cy) = (w as f32 / 2.0, h as f32 / 2.0);
    let src = image.data();
    let mut out = Tensor::zeros([h, w, 3]);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            // Inverse-map the destination pixel center into the source.
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            let sx = cos * dx + sin * dy + cx - 0.5;
            let sy = -sin * dx + cos * dy + cy - 0.5;
            for c in 0..3 {
                let v = if sx < -0.5 || sy < -0.5 || sx > w as f32 - 0.5 || sy > h as f32 - 0.5 {
                    0.5
                } else {
                    let x0 = libm::floorf(sx) as i64;
                    let y0 = libm::floorf(sy) as i64;
                    let fx = sx - x0 as f32;
                    let fy = sy - y0 as f32;
                    let get = |yy: i64, xx: i64| -> f32 {
                        let yy = yy.clamp(0, h as i64 - 1) as usize;
                        let xx = xx.clamp(0, w as i64 - 1) as usize;
                        src[(yy * w + xx) * 3 + c]
                    };
                    (1.0 - fy) * ((1.0 - fx) * get(y0, x0) + fx * get(y0, x0 + 1))
                        + fy * ((1.0 - fx) * get(y0 + 1, x0) + fx * get(y0 + 1, x0 + 1))
                };
                data[(y * w + x) * 3 + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn rotate_quarter(image: &Tensor<f32>, turns: usize) -> Tensor<f32> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if turns == 0 {
        return image.clone();
    }
    assert_eq!(h, w, "quarter-turn rotation assumes square images");
    let n = h;
    let src = image.data();
    let mut out = Tensor::zeros([n, n, 3]);
    let data = out.data_mut();
    for y in 0..n {
        for x in 0..n {
            // Counter-clockwise quarter turns of the content.
            let (sy, sx) = match turns {
                1 => (x, n - 1 - y),
                2 => (n - 1 - y, n - 1 - x),
                _ => (n - 1 - x, y),
            };
            for c in 0..3 {
                data[(y * n + x) * 3 + c] = src[(sy * n + sx) * 3 + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_sample, DatasetSpec, ShapeClass};
    use alloc::vec;

    fn test_image() -> Tensor<f32> {
        let spec = DatasetSpec {
            n_samples: 1,
            image_size: 16,
            classes: vec![ShapeClass::Circle, ShapeClass::Square],
            textured_background: true,
            seed: 5,
        };
        generate_sample(&spec, 0).image
    }

    #[test]
    fn identity_levels_pass_through() {
        let img = test_image();
        for kind in DistortionKind::ALL {
            let spec = DistortionSpec::new(kind, kind.identity_level(), 9);
            let out = apply_distortion(&img, None, &spec).unwrap();
            assert_eq!(out.data(), img.data(), "{kind:?} identity not exact");
        }
    }

    #[test]
    fn contrast_fixed_point_at_half() {
        let img = Tensor::full([4, 4, 3], 0.5f32);
        for c in [0.0, 0.3, 1.7, 4.0] {
            let out = apply_distortion(
                &img,
                None,
                &DistortionSpec::new(DistortionKind::Contrast, c, 0),
            )
            .unwrap();
            assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-7));
        }
    }

    #[test]
    fn full_noise_blend_erases_the_input() {
        // At blend weight 1 the output is the noise field alone, so two
        // different images under the same seed distort identically — the
        // property that makes chance-level accuracy provable at this level.
        let a = test_image();
        let b = a.map(|v| 1.0 - v);
        let spec = DistortionSpec::new(DistortionKind::UniformNoise, 1.0, 9);
        let da = apply_distortion(&a, None, &spec).unwrap();
        let db = apply_distortion(&b, None, &spec).unwrap();
        assert_eq!(da.data(), db.data());
    }

    #[test]
    fn greyscale_idempotent_on_grey_input() {
        let img = Tensor::from_fn([4, 4, 3], |i| (i / 3) as f32 / 16.0);
        let spec = DistortionSpec::new(DistortionKind::Greyscale, 1.0, 0);
        let out = apply_distortion(&img, None, &spec).unwrap();
        for (a, b) in out.iter().zip(img.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn outputs_stay_in_unit_range_and_deterministic() {
        let img = test_image();
        let cases = [
            DistortionSpec::new(DistortionKind::UniformNoise, 0.5, 3),
            DistortionSpec::new(DistortionKind::LowPass, 2.0, 0),
            DistortionSpec::new(DistortionKind::HighPass, 1.5, 0),
            DistortionSpec::new(DistortionKind::Rotation, 37.0, 0),
            DistortionSpec::new(DistortionKind::Rotation, 180.0, 0),
            DistortionSpec::new(DistortionKind::Edge, 0.12, 0),
            DistortionSpec::new(DistortionKind::Contrast, 3.0, 0),
            DistortionSpec::new(DistortionKind::FalseColour, 1.0, 0),
        ];
        for spec in cases {
            let a = apply_distortion(&img, None, &spec).unwrap();
            let b = apply_distortion(&img, None, &spec).unwrap();
            assert_eq!(a.data(), b.data(), "{spec:?} not deterministic");
            assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(a.shape(), img.shape());
        }
    }

    #[test]
    fn rotation_quarter_turns_are_exact_permutations() {
        let img = test_image();
        let r90 = apply_distortion(
            &img,
            None,
            &DistortionSpec::new(DistortionKind::Rotation, 90.0, 0),
        )
        .unwrap();
        let r360: Tensor<f32> = (0..3).fold(r90.clone(), |acc, _| {
            apply_distortion(
                &acc,
                None,
                &DistortionSpec::new(DistortionKind::Rotation, 90.0, 0),
            )
            .unwrap()
        });
        assert_eq!(r360.data(), img.data());
    }

    #[test]
    fn silhouette_requires_mask() {
        let img = test_image();
        let spec = DistortionSpec::new(DistortionKind::Silhouette, 1.0, 0);
        assert!(matches!(
            apply_distortion(&img, None, &spec),
            Err(CoreError::MaskRequired(_))
        ));
    }

    #[test]
    fn silhouette_blackens_foreground() {
        let ds = DatasetSpec {
            n_samples: 1,
            image_size: 16,
            classes: vec![ShapeClass::Circle, ShapeClass::Square],
            textured_background: false,
            seed: 5,
        };
        let sample = generate_sample(&ds, 0);
        let spec = DistortionSpec::new(DistortionKind::Silhouette, 1.0, 0);
        let out = apply_distortion(&sample.image, Some(&sample.mask), &spec).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let expect = if sample.mask.get(y, x) { 0.0 } else { 1.0 };
                for c in 0..3 {
                    assert_eq!(out.at3(y, x, c), expect);
                }
            }
        }
    }

    #[test]
    fn out_of_range_levels_are_rejected() {
        let img = test_image();
        for (kind, level) in [
            (DistortionKind::Greyscale, 1.5),
            (DistortionKind::Contrast, -0.1),
            (DistortionKind::UniformNoise, 3.0),
            (DistortionKind::Rotation, 400.0),
        ] {
            let spec = DistortionSpec::new(kind, level, 0);
            assert!(matches!(
                apply_distortion(&img, None, &spec),
                Err(CoreError::LevelOutOfRange { .. })
            ));
        }
    }
}
