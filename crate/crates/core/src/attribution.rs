//! Gradient-based saliency maps: class-activation maps, guided
//! backpropagation and their combination, integrated gradients, and
//! attention readout.
//!
//! Every producer returns a [`SaliencyMap`]: a raw, un-normalized relevance
//! field over image pixels. Downstream scoring works on ratios and ranks, so
//! maps are never rescaled here, and a map whose total mass is zero is
//! flagged `degenerate` rather than silently renormalized.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::nn::{AnyModel, BackpropMode, ModelSpec};
use crate::scalar::Scalar;
use crate::tensor::{upsample_bilinear, Tensor};

/// The saliency methods the evaluation harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum AttributionMethod {
    #[serde(rename = "gradcam")]
    GradCam,
    #[serde(rename = "guided_bp")]
    GuidedBp,
    #[serde(rename = "guided_gradcam")]
    GuidedGradCam,
    #[serde(rename = "ig")]
    Ig,
    #[serde(rename = "attention")]
    Attention,
}

impl AttributionMethod {
    pub const ALL: [AttributionMethod; 5] = [
        AttributionMethod::GradCam,
        AttributionMethod::GuidedBp,
        AttributionMethod::GuidedGradCam,
        AttributionMethod::Ig,
        AttributionMethod::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributionMethod::GradCam => "gradcam",
            AttributionMethod::GuidedBp => "guided_bp",
            AttributionMethod::GuidedGradCam => "guided_gradcam",
            AttributionMethod::Ig => "ig",
            AttributionMethod::Attention => "attention",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| CoreError::UnknownName(name.to_string()))
    }

    /// Whether the method is defined for a model family ("cnn" / "vit").
    /// Activation maps need a convolutional feature layer; attention readout
    /// needs attention.
    pub fn supports(self, family: &str) -> bool {
        match self {
            AttributionMethod::GradCam | AttributionMethod::GuidedGradCam => family == "cnn",
            AttributionMethod::Attention => family == "vit",
            AttributionMethod::GuidedBp | AttributionMethod::Ig => true,
        }
    }
}

/// How signed per-pixel attributions become non-negative relevance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionPolicy {
    /// Keep positive evidence only (negatives clamp to zero).
    #[default]
    ClampNegative,
    /// Treat negative evidence as equally relevant (absolute value).
    Absolute,
}

/// Knobs shared by the saliency producers.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AttributionSettings {
    pub policy: ReductionPolicy,
    /// Trapezoid subdivisions for integrated gradients.
    pub ig_steps: usize,
}

impl Default for AttributionSettings {
    fn default() -> Self {
        Self {
            policy: ReductionPolicy::ClampNegative,
            ig_steps: 64,
        }
    }
}

/// A per-pixel relevance field over the input image, in raw (un-normalized)
/// units. `degenerate` marks a map with zero total mass, which carries no
/// ranking information and is excluded from score aggregation.
#[derive(Clone, Debug)]
pub struct SaliencyMap {
    /// Non-negative relevance, shape `[H, W]`.
    pub values: Tensor<f64>,
    pub degenerate: bool,
}

impl SaliencyMap {
    fn from_values(values: Tensor<f64>) -> Self {
        let total: f64 = values.iter().sum();
        Self {
            degenerate: total == 0.0,
            values,
        }
    }
}

/// Collapse signed attributions to a non-negative `[H, W]` relevance map:
/// channels are summed first, then the policy is applied pixelwise.
pub fn reduce_to_relevance(attr: &Tensor<f64>, policy: ReductionPolicy) -> Result<SaliencyMap> {
    let reduced = match *attr.shape() {
        [_, _] => attr.clone(),
        [h, w, c] => {
            let mut out = Tensor::zeros([h, w]);
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0;
                    for ch in 0..c {
                        s += attr.at3(y, x, ch);
                    }
                    out.data_mut()[y * w + x] = s;
                }
            }
            out
        }
        _ => {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "attributions must be [H, W] or [H, W, C], got {:?}",
                attr.shape()
            )))
        }
    };
    let values = match policy {
        ReductionPolicy::ClampNegative => reduced.map(|v| v.max(0.0)),
        ReductionPolicy::Absolute => reduced.map(f64::abs),
    };
    Ok(SaliencyMap::from_values(values))
}

/// Class-activation map from the designated convolutional layer: channels of
/// the layer's post-activation map are combined with weights equal to the
/// spatial mean of the target-logit gradient, negatives are clamped, and the
/// result is upsampled bilinearly to input resolution.
pub fn gradcam<S: Scalar>(
    model: &AnyModel<S>,
    image: &Tensor<S>,
    class: usize,
) -> Result<SaliencyMap> {
    let layer = model.cam_layer().ok_or_else(|| {
        CoreError::UnsupportedFamily(
            "class-activation maps need a convolutional feature layer".to_string(),
        )
    })?;
    let trace = model.trace(image)?;
    let act = model.activation(&trace, &layer)?;
    let grads = model.gradients(image, class, &[layer.as_str()], BackpropMode::Standard)?;
    let grad = &grads[&layer];
    let (h, w, c) = (act.shape()[0], act.shape()[1], act.shape()[2]);

    let mut weights = alloc::vec![0.0f64; c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                weights[ch] += grad.at3(y, x, ch).to_f64();
            }
        }
    }
    let inv_area = 1.0 / (h * w) as f64;
    for wgt in &mut weights {
        *wgt *= inv_area;
    }

    let mut cam = Tensor::<f64>::zeros([h, w]);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for ch in 0..c {
                s += weights[ch] * act.at3(y, x, ch).to_f64();
            }
            cam.data_mut()[y * w + x] = s.max(0.0);
        }
    }
    let size = model.image_size();
    Ok(SaliencyMap::from_values(upsample_bilinear(
        &cam, size, size,
    )))
}

/// Signed input-gradient attribution `[H, W, 3]` where every rectifier
/// backward pass additionally zeroes negative upstream gradients.
pub fn guided_backprop<S: Scalar>(
    model: &AnyModel<S>,
    image: &Tensor<S>,
    class: usize,
) -> Result<Tensor<f64>> {
    let grads = model.gradients(image, class, &["input"], BackpropMode::GuidedRelu)?;
    Ok(grads["input"].cast::<f64>())
}

/// Pixelwise product of the upsampled class-activation map with the
/// policy-reduced guided-backpropagation map.
pub fn guided_gradcam<S: Scalar>(
    model: &AnyModel<S>,
    image: &Tensor<S>,
    class: usize,
    policy: ReductionPolicy,
) -> Result<SaliencyMap> {
    let cam = gradcam(model, image, class)?;
    let gbp = reduce_to_relevance(&guided_backprop(model, image, class)?, policy)?;
    combine_pixelwise(&cam.values, &gbp.values)
}

fn combine_pixelwise(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<SaliencyMap> {
    if a.shape() != b.shape() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "cannot combine maps of shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
    Ok(SaliencyMap::from_values(Tensor::new(
        a.shape().to_vec(),
        data,
    )))
}

/// Integrated-gradients attribution with its completeness diagnostics.
#[derive(Clone, Debug)]
pub struct IgAttribution {
    /// Signed attributions, same shape as the input.
    pub attributions: Tensor<f64>,
    /// Target logit at the input minus at the baseline.
    pub output_delta: f64,
    /// |sum of attributions − output_delta|; shrinks as steps grow.
    pub completeness_residual: f64,
}

/// Path integral of the input gradient from `baseline` (default: black) to
/// `image`, evaluated with the trapezoid rule on `steps` subdivisions and
/// scaled by the input-baseline difference.
pub fn integrated_gradients<S: Scalar>(
    model: &AnyModel<S>,
    image: &Tensor<S>,
    baseline: Option<&Tensor<S>>,
    steps: usize,
    class: usize,
) -> Result<IgAttribution> {
    if steps == 0 {
        return Err(CoreError::Config(
            "integrated gradients needs at least one integration step".to_string(),
        ));
    }
    let black = Tensor::zeros(image.shape().to_vec());
    let base = baseline.unwrap_or(&black);
    if base.shape() != image.shape() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "baseline shape {:?} does not match image shape {:?}",
            base.shape(),
            image.shape()
        )));
    }

    let n = image.len();
    let mut avg_grad = alloc::vec![0.0f64; n];
    for i in 0..=steps {
        let alpha = S::from_f64(i as f64 / steps as f64);
        let point = Tensor::from_fn(image.shape().to_vec(), |j| {
            let b = base.data()[j];
            b + alpha * (image.data()[j] - b)
        });
        let grads = model.gradients(&point, class, &["input"], BackpropMode::Standard)?;
        let weight = if i == 0 || i == steps { 0.5 } else { 1.0 };
        for (acc, g) in avg_grad.iter_mut().zip(grads["input"].iter()) {
            *acc += weight * g.to_f64();
        }
    }
    let inv_steps = 1.0 / steps as f64;
    let attributions = Tensor::from_fn(image.shape().to_vec(), |j| {
        (image.data()[j].to_f64() - base.data()[j].to_f64()) * avg_grad[j] * inv_steps
    });

    let output_delta =
        model.logits(image)?[class].to_f64() - model.logits(base)?[class].to_f64();
    let completeness_residual = (attributions.iter().sum::<f64>() - output_delta).abs();
    Ok(IgAttribution {
        attributions,
        output_delta,
        completeness_residual,
    })
}

/// Class-independent saliency from the final attention layer: the class
/// token's attention row, averaged over heads, restricted to patch tokens,
/// normalized to unit mass on the patch grid, and upsampled bilinearly.
pub fn attention_map<S: Scalar>(model: &AnyModel<S>, image: &Tensor<S>) -> Result<SaliencyMap> {
    let ModelSpec::Vit(spec) = model.spec() else {
        return Err(CoreError::UnsupportedFamily(
            "attention readout needs an attention model".to_string(),
        ));
    };
    let trace = model.trace(image)?;
    let attn = model.activation(&trace, &alloc::format!("attn{}", spec.depth - 1))?;
    let heads = attn.shape()[0];
    let patches = attn.shape()[1] - 1;

    let mut vals = alloc::vec![0.0f64; patches];
    for h in 0..heads {
        for j in 0..patches {
            vals[j] += attn.at3(h, 0, j + 1).to_f64();
        }
    }
    // Attention rows are strictly positive, so the patch mass is too; head
    // averaging cancels in the normalization.
    let total: f64 = vals.iter().sum();
    for v in &mut vals {
        *v /= total;
    }
    let grid = spec.grid();
    let patch_map = Tensor::new([grid, grid], vals);
    let size = model.image_size();
    Ok(SaliencyMap::from_values(upsample_bilinear(
        &patch_map, size, size,
    )))
}

/// Produce the saliency map for one (model, image, class, method) cell,
/// using black-baseline integrated gradients.
pub fn compute_saliency<S: Scalar>(
    model: &AnyModel<S>,
    image: &Tensor<S>,
    class: usize,
    method: AttributionMethod,
    settings: &AttributionSettings,
) -> Result<SaliencyMap> {
    match method {
        AttributionMethod::GradCam => gradcam(model, image, class),
        AttributionMethod::GuidedBp => {
            reduce_to_relevance(&guided_backprop(model, image, class)?, settings.policy)
        }
        AttributionMethod::GuidedGradCam => guided_gradcam(model, image, class, settings.policy),
        AttributionMethod::Ig => {
            let ig = integrated_gradients(model, image, None, settings.ig_steps, class)?;
            reduce_to_relevance(&ig.attributions, settings.policy)
        }
        AttributionMethod::Attention => attention_map(model, image),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{CnnSpec, VitSpec};
    use crate::rng::{rng_for, Stream};
    use rand::Rng;

    fn cnn_model() -> AnyModel<f32> {
        AnyModel::build(&ModelSpec::Cnn(CnnSpec {
            image_size: 16,
            widths: alloc::vec![4, 8],
            n_classes: 3,
            seed: 31,
        }))
        .unwrap()
    }

    fn vit_model() -> AnyModel<f32> {
        AnyModel::build(&ModelSpec::Vit(VitSpec {
            image_size: 16,
            patch_size: 4,
            dim: 12,
            depth: 2,
            heads: 2,
            mlp_hidden: 24,
            n_classes: 3,
            seed: 32,
        }))
        .unwrap()
    }

    fn random_image(size: usize, seed: u64) -> Tensor<f32> {
        let mut rng = rng_for(seed, Stream::Fixture, 7);
        Tensor::from_fn([size, size, 3], |_| rng.gen_range(0.0..1.0f32))
    }

    #[test]
    fn reduction_policies_follow_their_definitions() {
        let signed = Tensor::new([1, 2], alloc::vec![-2.0, 1.0]);
        let abs = reduce_to_relevance(&signed, ReductionPolicy::Absolute).unwrap();
        assert_eq!(abs.values.data(), &[2.0, 1.0]);
        assert!(!abs.degenerate);

        let clamped = reduce_to_relevance(&signed, ReductionPolicy::ClampNegative).unwrap();
        assert_eq!(clamped.values.data(), &[0.0, 1.0]);
        assert!(!clamped.degenerate);

        let all_negative = Tensor::new([1, 2], alloc::vec![-1.0, -2.0]);
        let zeroed = reduce_to_relevance(&all_negative, ReductionPolicy::ClampNegative).unwrap();
        assert_eq!(zeroed.values.data(), &[0.0, 0.0]);
        assert!(zeroed.degenerate);
    }

    #[test]
    fn reduction_sums_channels_before_the_policy() {
        // Channel sum is -0.5: clamping after the sum gives zero, while
        // clamping before it would have given 1.5.
        let attr = Tensor::new([1, 1, 3], alloc::vec![1.0, -2.0, 0.5]);
        let clamped = reduce_to_relevance(&attr, ReductionPolicy::ClampNegative).unwrap();
        assert_eq!(clamped.values.data(), &[0.0]);
        let abs = reduce_to_relevance(&attr, ReductionPolicy::Absolute).unwrap();
        assert_eq!(abs.values.data(), &[0.5]);
    }

    #[test]
    fn combination_is_a_pixelwise_product() {
        let cam = Tensor::new([2, 2], alloc::vec![1.0, 0.0, 0.5, 1.0]);
        let gbp = Tensor::new([2, 2], alloc::vec![2.0, 3.0, 4.0, 0.0]);
        let out = combine_pixelwise(&cam, &gbp).unwrap();
        assert_eq!(out.values.data(), &[2.0, 0.0, 2.0, 0.0]);
        assert!(!out.degenerate);
    }

    #[test]
    fn cam_matches_direct_formula() {
        let model = cnn_model();
        let image = random_image(16, 1);
        for class in 0..3 {
            let got = gradcam(&model, &image, class).unwrap();

            let trace = model.trace(&image).unwrap();
            let act = model.activation(&trace, "conv1").unwrap();
            let grad = &model
                .gradients(&image, class, &["conv1"], BackpropMode::Standard)
                .unwrap()["conv1"];
            let (h, w, c) = (8, 8, 8);
            let mut expect = Tensor::<f64>::zeros([h, w]);
            for ch in 0..c {
                let mut wgt = 0.0f64;
                for y in 0..h {
                    for x in 0..w {
                        wgt += grad.at3(y, x, ch) as f64;
                    }
                }
                wgt /= (h * w) as f64;
                for y in 0..h {
                    for x in 0..w {
                        expect.data_mut()[y * w + x] += wgt * act.at3(y, x, ch) as f64;
                    }
                }
            }
            let expect = upsample_bilinear(&expect.map(|v| v.max(0.0)), 16, 16);
            for (a, b) in got.values.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn cam_is_nonnegative_and_input_sized() {
        let model = cnn_model();
        let map = gradcam(&model, &random_image(16, 2), 1).unwrap();
        assert_eq!(map.values.shape(), [16, 16]);
        assert!(map.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cam_requires_a_convolutional_model() {
        let model = vit_model();
        let err = gradcam(&model, &random_image(16, 3), 0).unwrap_err();
        assert!(matches!(err, CoreError::UnsupportedFamily(_)));
        let err = guided_gradcam(&model, &random_image(16, 3), 0, ReductionPolicy::default())
            .unwrap_err();
        assert!(matches!(err, CoreError::UnsupportedFamily(_)));
    }

    #[test]
    fn guided_equals_standard_when_nothing_is_gated() {
        // One conv block only: a large positive bias keeps its rectifier
        // active, and a non-negative head keeps the upstream gradient
        // non-negative, so the guided rule has nothing to zero. (With more
        // blocks, signed inner conv weights could flip gradient signs.)
        let mut model = AnyModel::<f32>::build(&ModelSpec::Cnn(CnnSpec {
            image_size: 16,
            widths: alloc::vec![4],
            n_classes: 3,
            seed: 31,
        }))
        .unwrap();
        let b = model.params_mut().get_mut("conv0.bias").unwrap();
        *b = Tensor::full(b.shape().to_vec(), 100.0f32);
        let head = model.params_mut().get_mut("head.weight").unwrap();
        *head = head.map(f32::abs);

        let image = random_image(16, 4);
        let guided = guided_backprop(&model, &image, 0).unwrap();
        let standard = &model
            .gradients(&image, 0, &["input"], BackpropMode::Standard)
            .unwrap()["input"];
        for (g, s) in guided.iter().zip(standard.iter()) {
            assert_eq!(*g, *s as f64);
        }
    }

    #[test]
    fn guided_differs_from_standard_in_general() {
        let model = cnn_model();
        let image = random_image(16, 5);
        let guided = guided_backprop(&model, &image, 0).unwrap();
        let standard = &model
            .gradients(&image, 0, &["input"], BackpropMode::Standard)
            .unwrap()["input"];
        assert!(guided
            .iter()
            .zip(standard.iter())
            .any(|(g, s)| (*g - *s as f64).abs() > 1e-12));
    }

    #[test]
    fn path_integral_is_exact_for_affine_models() {
        // A big positive bias keeps the single rectifier active on the whole
        // integration path, making the logit affine in the image; then the
        // average gradient is constant and the attribution is exactly
        // (input − baseline) ⊙ gradient with zero completeness residual.
        let mut model = AnyModel::<f32>::build(&ModelSpec::Cnn(CnnSpec {
            image_size: 8,
            widths: alloc::vec![4],
            n_classes: 2,
            seed: 33,
        }))
        .unwrap();
        let b = model.params_mut().get_mut("conv0.bias").unwrap();
        *b = Tensor::full(b.shape().to_vec(), 100.0f32);

        let image = random_image(8, 6);
        let ig = integrated_gradients(&model, &image, None, 4, 1).unwrap();
        let grad = &model
            .gradients(&image, 1, &["input"], BackpropMode::Standard)
            .unwrap()["input"];
        for (j, a) in ig.attributions.iter().enumerate() {
            let direct = image.data()[j] as f64 * grad.data()[j] as f64;
            assert!((a - direct).abs() <= 1e-6, "{a} vs {direct}");
        }
        assert!(ig.completeness_residual <= 1e-3 * (1.0 + ig.output_delta.abs()));
    }

    #[test]
    fn path_integral_residual_shrinks_with_steps() {
        let model = cnn_model();
        let image = random_image(16, 8);
        let coarse = integrated_gradients(&model, &image, None, 16, 2).unwrap();
        let fine = integrated_gradients(&model, &image, None, 256, 2).unwrap();
        assert!(fine.completeness_residual <= coarse.completeness_residual + 1e-6);
    }

    #[test]
    fn path_integral_rejects_zero_steps_and_bad_baselines() {
        let model = cnn_model();
        let image = random_image(16, 9);
        assert!(integrated_gradients(&model, &image, None, 0, 0).is_err());
        let bad = Tensor::<f32>::zeros([8, 8, 3]);
        assert!(integrated_gradients(&model, &image, Some(&bad), 4, 0).is_err());
    }

    #[test]
    fn attention_readout_normalizes_patch_mass() {
        // Patch size 1 makes the patch grid coincide with the pixel grid, so
        // the upsample is the identity and the map's unit mass is observable.
        let model = AnyModel::<f32>::build(&ModelSpec::Vit(VitSpec {
            image_size: 8,
            patch_size: 1,
            dim: 8,
            depth: 1,
            heads: 2,
            mlp_hidden: 16,
            n_classes: 2,
            seed: 34,
        }))
        .unwrap();
        let map = attention_map(&model, &random_image(8, 10)).unwrap();
        assert_eq!(map.values.shape(), [8, 8]);
        assert!(map.values.iter().all(|&v| v > 0.0));
        assert!((map.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(!map.degenerate);
    }

    #[test]
    fn attention_readout_requires_an_attention_model() {
        let model = cnn_model();
        let err = attention_map(&model, &random_image(16, 11)).unwrap_err();
        assert!(matches!(err, CoreError::UnsupportedFamily(_)));
    }

    #[test]
    fn dispatch_respects_family_support() {
        let settings = AttributionSettings {
            ig_steps: 4,
            ..Default::default()
        };
        let cnn = cnn_model();
        let vit = vit_model();
        let image = random_image(16, 12);
        for method in AttributionMethod::ALL {
            for (model, family) in [(&cnn, "cnn"), (&vit, "vit")] {
                let out = compute_saliency(model, &image, 0, method, &settings);
                assert_eq!(out.is_ok(), method.supports(family), "{method:?} on {family}");
                if let Ok(map) = out {
                    assert_eq!(map.values.shape(), [16, 16]);
                    assert!(map.values.iter().all(|v| v.is_finite()));
                }
            }
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in AttributionMethod::ALL {
            assert_eq!(AttributionMethod::from_name(m.name()).unwrap(), m);
        }
        assert!(AttributionMethod::from_name("nope").is_err());
    }
}
