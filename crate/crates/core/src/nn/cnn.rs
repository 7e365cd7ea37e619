//! A compact convolutional backbone: repeated [3x3 conv → ReLU → 2x2 pool]
//! blocks (the final block skips the pool so the last feature map keeps
//! spatial support), global average pooling, and a linear head.
//!
//! Input pixels arrive in [0,1] and are shifted by −0.5 before the first
//! convolution — the usual zero-centering that keeps the loss surface well
//! conditioned. The shift has a unit Jacobian, so gradients with respect to
//! the input are unaffected.
//!
//! Parameter names: `conv{i}.weight` `[3,3,c_in,c_out]`, `conv{i}.bias`,
//! `head.weight` `[c_last, n_classes]`, `head.bias`. Activation names exposed
//! to gradient consumers: `conv{i}` = the post-ReLU feature map of block `i`;
//! the last one is the designated spatial layer for class-activation maps.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::{rng_for, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::ops::{
    conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, dims3, maxpool2_backward,
    maxpool2_forward, relu_backward, relu_forward,
};
use super::params::ParamSet;
use super::{BackwardResult, BackwardWants};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub image_size: usize,
    /// Output channels per conv block; the length sets the depth.
    pub widths: Vec<usize>,
    pub n_classes: usize,
    pub seed: u64,
}

impl CnnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(CoreError::Config("cnn needs at least one conv block".into()));
        }
        if self.n_classes < 2 {
            return Err(CoreError::Config("need at least 2 classes".into()));
        }
        let pools = self.widths.len() - 1;
        if self.image_size % (1 << pools) != 0 {
            return Err(CoreError::Config(format!(
                "image size {} not divisible by 2^{pools} pooling stages",
                self.image_size
            )));
        }
        if self.last_map_size() < 4 {
            return Err(CoreError::Config(format!(
                "final feature map {}x{} too small for spatial attribution; need >= 4",
                self.last_map_size(),
                self.last_map_size()
            )));
        }
        Ok(())
    }

    /// Side length of the final conv feature map.
    pub fn last_map_size(&self) -> usize {
        self.image_size >> (self.widths.len() - 1)
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Closed-form parameter count: Σ blocks (9·c_in·c_out + c_out) plus the
    /// head (c_last·n_classes + n_classes).
    pub fn param_count(&self) -> usize {
        let mut cin = 3;
        let mut total = 0;
        for &cout in &self.widths {
            total += 9 * cin * cout + cout;
            cin = cout;
        }
        total + cin * self.n_classes + self.n_classes
    }
}

#[derive(Clone, Debug)]
pub struct CnnModel<S> {
    spec: CnnSpec,
    pub params: ParamSet<S>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct CnnTrace<S> {
    pub logits: Vec<S>,
    /// The zero-centered input as fed to `conv0` (the first conv's backward
    /// needs its own forward input, and the centering shift has unit
    /// Jacobian).
    input: Tensor<S>,
    /// Post-ReLU activation of each block (the named `conv{i}` maps).
    post: Vec<Tensor<S>>,
    /// Post-pool output of each non-final block.
    pooled: Vec<Tensor<S>>,
    pool_argmax: Vec<Vec<u32>>,
    /// Global-average-pooled feature vector feeding the head.
    gap: Vec<S>,
}

impl<S: Scalar> CnnModel<S> {
    pub fn build(spec: &CnnSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let mut cin = 3usize;
        let mut stream = 0u64;
        for (i, &cout) in spec.widths.iter().enumerate() {
            let w = init_relu_uniform::<S>(&[3, 3, cin, cout], 9 * cin, spec.seed, &mut stream);
            params.insert(&format!("conv{i}.weight"), w, true);
            params.insert(&format!("conv{i}.bias"), Tensor::zeros([cout]), false);
            cin = cout;
        }
        let head = init_uniform::<S>(
            &[cin, spec.n_classes],
            cin,
            spec.n_classes,
            spec.seed,
            &mut stream,
        );
        params.insert("head.weight", head, true);
        params.insert("head.bias", Tensor::zeros([spec.n_classes]), false);
        debug_assert_eq!(params.n_params(), spec.param_count());
        Ok(Self {
            spec: spec.clone(),
            params,
        })
    }

    pub fn spec(&self) -> &CnnSpec {
        &self.spec
    }

    pub fn depth(&self) -> usize {
        self.spec.widths.len()
    }

    /// Names of the post-ReLU activations available from the trace.
    pub fn activation_names(&self) -> Vec<String> {
        (0..self.depth()).map(|i| format!("conv{i}")).collect()
    }

    /// The designated spatial layer for class-activation mapping.
    pub fn cam_layer(&self) -> String {
        format!("conv{}", self.depth() - 1)
    }

    pub fn forward(&self, image: &Tensor<S>) -> Result<CnnTrace<S>> {
        image.check_shape(
            &[self.spec.image_size, self.spec.image_size, 3],
            "cnn input",
        )?;
        let depth = self.depth();
        let mut post = Vec::with_capacity(depth);
        let mut pooled = Vec::with_capacity(depth.saturating_sub(1));
        let mut pool_argmax = Vec::with_capacity(depth.saturating_sub(1));
        // Zero-center the [0,1] input; unit Jacobian, so input gradients are
        // those of the original image.
        let centered = image.map(|v| v - S::from_f64(0.5));
        let mut x = centered.clone();
        for i in 0..depth {
            let w = self.params.get(&format!("conv{i}.weight"))?;
            let b = self.params.get(&format!("conv{i}.bias"))?;
            let act = relu_forward(&conv3x3_forward(&x, w, b.data()));
            post.push(act.clone());
            if i + 1 < depth {
                let (p, arg) = maxpool2_forward(&act);
                pool_argmax.push(arg);
                pooled.push(p.clone());
                x = p;
            } else {
                x = act;
            }
        }
        // Global average pool over the final map.
        let (mh, mw, c) = dims3(&x);
        let inv = S::from_f64(1.0 / (mh * mw) as f64);
        let mut gap = alloc::vec![S::ZERO; c];
        for px in x.data().chunks_exact(c) {
            for (g, &v) in gap.iter_mut().zip(px) {
                *g += v;
            }
        }
        for g in &mut gap {
            *g *= inv;
        }
        let logits = dense_forward(
            &gap,
            self.params.get("head.weight")?,
            self.params.get("head.bias")?.data(),
        );
        Ok(CnnTrace {
            logits,
            input: centered,
            post,
            pooled,
            pool_argmax,
            gap,
        })
    }

    pub fn backward(
        &self,
        trace: &CnnTrace<S>,
        dlogits: &[S],
        wants: &BackwardWants,
    ) -> Result<BackwardResult<S>> {
        let depth = self.depth();
        let mut activations: BTreeMap<String, Tensor<S>> = BTreeMap::new();
        let mut dparams = if wants.params {
            Some(self.params.zeros_like())
        } else {
            None
        };

        // Head.
        let (dgap, dw_head, db_head) =
            dense_backward(&trace.gap, self.params.get("head.weight")?, dlogits);
        if let Some(dp) = dparams.as_mut() {
            *dp.get_mut("head.weight")? = dw_head;
            *dp.get_mut("head.bias")? = Tensor::new([db_head.len()], db_head);
        }

        // Undo the global average pool: spread dgap uniformly.
        let last = &trace.post[depth - 1];
        let (mh, mw, c) = dims3(last);
        let inv = S::from_f64(1.0 / (mh * mw) as f64);
        let mut dx = Tensor::zeros([mh, mw, c]);
        for px in dx.data_mut().chunks_exact_mut(c) {
            for (d, &g) in px.iter_mut().zip(&dgap) {
                *d = g * inv;
            }
        }

        // Conv blocks in reverse. `dx` always holds the gradient w.r.t. the
        // block's output (post-pool where a pool exists).
        for i in (0..depth).rev() {
            let dpost = if i + 1 < depth {
                let shape = {
                    let (h, w, c) = dims3(&trace.post[i]);
                    [h, w, c]
                };
                maxpool2_backward(&dx, &trace.pool_argmax[i], shape)
            } else {
                dx
            };
            let name = format!("conv{i}");
            if wants.activations.iter().any(|n| n == &name) {
                activations.insert(name.clone(), dpost.clone());
            }
            let dpre = relu_backward(&dpost, &trace.post[i], wants.mode);
            let input = if i == 0 { &trace.input } else { &trace.pooled[i - 1] };
            let weight = self.params.get(&format!("conv{i}.weight"))?;
            let want_dinput = i > 0 || wants.input;
            let (dinput, dw, db) = conv3x3_backward(input, weight, &dpre, want_dinput);
            if let Some(dp) = dparams.as_mut() {
                *dp.get_mut(&format!("conv{i}.weight"))? = dw;
                *dp.get_mut(&format!("conv{i}.bias"))? = Tensor::new([db.len()], db);
            }
            dx = dinput.unwrap_or_else(|| Tensor::zeros([1]));
        }

        Ok(BackwardResult {
            input: wants.input.then_some(dx),
            params: dparams,
            activations,
        })
    }

    /// The post-ReLU activation recorded under `name` in the forward trace.
    pub fn activation<'t>(&self, trace: &'t CnnTrace<S>, name: &str) -> Result<&'t Tensor<S>> {
        for i in 0..self.depth() {
            if name == format!("conv{i}") {
                return Ok(&trace.post[i]);
            }
        }
        Err(CoreError::UnknownName(name.into()))
    }
}

/// Glorot-style uniform init on [-a, a] with a = sqrt(6/(fan_in+fan_out)).
/// Values are drawn in f32 and widened, so an f64 twin of an f32 model has
/// exactly the same starting point.
pub(super) fn init_uniform<S: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    seed: u64,
    stream: &mut u64,
) -> Tensor<S> {
    let a = libm::sqrtf(6.0 / (fan_in + fan_out) as f32);
    let mut rng = rng_for(seed, Stream::ModelInit, *stream);
    *stream += 1;
    Tensor::from_fn(shape.to_vec(), |_| {
        S::from_f32(rng.gen_range(-a..a))
    })
}

/// He-style uniform init on [-a, a] with a = sqrt(6/fan_in), the variance
/// gain that keeps activation scale roughly constant through ReLU stacks.
pub(super) fn init_relu_uniform<S: Scalar>(
    shape: &[usize],
    fan_in: usize,
    seed: u64,
    stream: &mut u64,
) -> Tensor<S> {
    let a = libm::sqrtf(6.0 / fan_in as f32);
    let mut rng = rng_for(seed, Stream::ModelInit, *stream);
    *stream += 1;
    Tensor::from_fn(shape.to_vec(), |_| {
        S::from_f32(rng.gen_range(-a..a))
    })
}
