//! A tiny patch transformer: linear patch embedding, class token, learned
//! position embeddings, pre-norm blocks (multi-head self-attention + ReLU
//! MLP), a final layer norm, and a linear head on the class token.
//!
//! Trace entries exposed to consumers: `attn{b}` — the row-stochastic
//! attention probabilities of block `b`, `[heads, T, T]`; `patch_keys` — the
//! last block's key features for patch tokens, `[P, dim]` (the descriptor
//! used by the seed-expansion object-discovery pipeline); `patch_tokens` —
//! the last block's output features for patch tokens, `[P, dim]`.

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

use super::cnn::init_uniform;
use super::ops::{
    add_row_bias, column_sums, dense_backward, dense_forward, layernorm_backward,
    layernorm_forward, matmul, matmul_at, matmul_bt, relu_backward, relu_forward, softmax_rows,
    softmax_rows_backward, LnCache,
};
use super::params::ParamSet;
use super::{BackwardResult, BackwardWants};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitSpec {
    pub image_size: usize,
    pub patch_size: usize,
    /// Token embedding dimension; must be divisible by `heads`.
    pub dim: usize,
    /// Number of transformer blocks.
    pub depth: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl VitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(CoreError::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.depth == 0 || self.mlp_hidden == 0 {
            return Err(CoreError::Config("need depth >= 1 and mlp_hidden >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(CoreError::Config("need at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Patch-token count (class token excluded).
    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_patches() + 1
    }

    /// Flattened patch pixel dimension.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let per_block = 2 * d                       // ln1
            + 4 * (d * d + d)                       // q,k,v,o projections
            + 2 * d                                 // ln2
            + d * self.mlp_hidden + self.mlp_hidden // fc1
            + self.mlp_hidden * d + d;              // fc2
        self.patch_dim() * d + d                    // patch embed
            + d                                     // class token
            + self.n_tokens() * d                   // position embed
            + self.depth * per_block
            + 2 * d                                 // final ln
            + d * self.n_classes + self.n_classes   // head
    }
}

#[derive(Clone, Debug)]
pub struct VitModel<S> {
    spec: VitSpec,
    pub params: ParamSet<S>,
}

struct BlockTrace<S> {
    ln1: LnCache<S>,
    h1: Tensor<S>,
    q: Tensor<S>,
    k: Tensor<S>,
    v: Tensor<S>,
    /// Softmax attention probabilities, [heads, T, T].
    attn: Tensor<S>,
    /// Concatenated per-head attention outputs before the output projection.
    ao: Tensor<S>,
    ln2: LnCache<S>,
    h2: Tensor<S>,
    /// Post-ReLU MLP hidden activations.
    r: Tensor<S>,
    x_out: Tensor<S>,
}

pub struct VitTrace<S> {
    pub logits: Vec<S>,
    patches: Tensor<S>,
    blocks: Vec<BlockTrace<S>>,
    final_ln: LnCache<S>,
    cls_feat: Vec<S>,
}

impl<S: Scalar> VitTrace<S> {
    /// Attention probabilities of one block, `[heads, T, T]`.
    pub fn attention(&self, block: usize) -> &Tensor<S> {
        &self.blocks[block].attn
    }

    /// Last-block key features of the patch tokens, `[P, dim]`.
    pub fn patch_keys(&self) -> Tensor<S> {
        let k = &self.blocks.last().unwrap().k;
        let d = k.shape()[1];
        let p = k.shape()[0] - 1;
        Tensor::new([p, d], k.data()[d..].to_vec())
    }

    /// Last-block output features of the patch tokens, `[P, dim]`.
    pub fn patch_tokens(&self) -> Tensor<S> {
        let x = &self.blocks.last().unwrap().x_out;
        let d = x.shape()[1];
        let p = x.shape()[0] - 1;
        Tensor::new([p, d], x.data()[d..].to_vec())
    }
}

impl<S: Scalar> VitModel<S> {
    pub fn build(spec: &VitSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let mut params = ParamSet::new();
        let mut stream = 0u64;
        params.insert(
            "patch_embed.weight",
            init_uniform::<S>(&[spec.patch_dim(), d], spec.patch_dim(), d, spec.seed, &mut stream),
            true,
        );
        params.insert("patch_embed.bias", Tensor::zeros([d]), false);
        params.insert(
            "cls_token",
            init_small::<S>(&[d], spec.seed, &mut stream),
            false,
        );
        params.insert(
            "pos_embed",
            init_small::<S>(&[spec.n_tokens(), d], spec.seed, &mut stream),
            false,
        );
        for b in 0..spec.depth {
            params.insert(&format!("block{b}.ln1.gamma"), Tensor::full([d], S::ONE), false);
            params.insert(&format!("block{b}.ln1.beta"), Tensor::zeros([d]), false);
            for proj in ["wq", "wk", "wv", "wo"] {
                params.insert(
                    &format!("block{b}.attn.{proj}.weight"),
                    init_uniform::<S>(&[d, d], d, d, spec.seed, &mut stream),
                    true,
                );
                params.insert(&format!("block{b}.attn.{proj}.bias"), Tensor::zeros([d]), false);
            }
            params.insert(&format!("block{b}.ln2.gamma"), Tensor::full([d], S::ONE), false);
            params.insert(&format!("block{b}.ln2.beta"), Tensor::zeros([d]), false);
            params.insert(
                &format!("block{b}.mlp.fc1.weight"),
                init_uniform::<S>(&[d, spec.mlp_hidden], d, spec.mlp_hidden, spec.seed, &mut stream),
                true,
            );
            params.insert(&format!("block{b}.mlp.fc1.bias"), Tensor::zeros([spec.mlp_hidden]), false);
            params.insert(
                &format!("block{b}.mlp.fc2.weight"),
                init_uniform::<S>(&[spec.mlp_hidden, d], spec.mlp_hidden, d, spec.seed, &mut stream),
                true,
            );
            params.insert(&format!("block{b}.mlp.fc2.bias"), Tensor::zeros([d]), false);
        }
        params.insert("final_ln.gamma", Tensor::full([d], S::ONE), false);
        params.insert("final_ln.beta", Tensor::zeros([d]), false);
        params.insert(
            "head.weight",
            init_uniform::<S>(&[d, spec.n_classes], d, spec.n_classes, spec.seed, &mut stream),
            true,
        );
        params.insert("head.bias", Tensor::zeros([spec.n_classes]), false);
        debug_assert_eq!(params.n_params(), spec.param_count());
        Ok(Self {
            spec: spec.clone(),
            params,
        })
    }

    pub fn spec(&self) -> &VitSpec {
        &self.spec
    }

    pub fn activation_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.spec.depth).map(|b| format!("attn{b}")).collect();
        names.push("patch_keys".into());
        names.push("patch_tokens".into());
        names
    }

    pub fn forward(&self, image: &Tensor<S>) -> Result<VitTrace<S>> {
        image.check_shape(
            &[self.spec.image_size, self.spec.image_size, 3],
            "vit input",
        )?;
        let spec = &self.spec;
        let (t, d) = (spec.n_tokens(), spec.dim);
        let patches = image_to_patches(image, spec.patch_size);
        // Embed patches and prepend the class token.
        let mut emb = matmul(&patches, self.params.get("patch_embed.weight")?);
        add_row_bias(&mut emb, self.params.get("patch_embed.bias")?.data());
        let mut x = Tensor::zeros([t, d]);
        x.data_mut()[..d].copy_from_slice(self.params.get("cls_token")?.data());
        x.data_mut()[d..].copy_from_slice(emb.data());
        x.add_assign(self.params.get("pos_embed")?);

        let mut blocks = Vec::with_capacity(spec.depth);
        for b in 0..spec.depth {
            let (block, x_out) = self.block_forward(b, &x)?;
            x = x_out;
            blocks.push(block);
        }

        let (y, final_ln) = layernorm_forward(
            &x,
            self.params.get("final_ln.gamma")?.data(),
            self.params.get("final_ln.beta")?.data(),
        );
        let cls_feat = y.data()[..d].to_vec();
        let logits = dense_forward(
            &cls_feat,
            self.params.get("head.weight")?,
            self.params.get("head.bias")?.data(),
        );
        Ok(VitTrace {
            logits,
            patches,
            blocks,
            final_ln,
            cls_feat,
        })
    }

    fn block_forward(&self, b: usize, x: &Tensor<S>) -> Result<(BlockTrace<S>, Tensor<S>)> {
        let spec = &self.spec;
        let (t, d) = (spec.n_tokens(), spec.dim);
        let (heads, hd) = (spec.heads, spec.dim / spec.heads);
        let scale = S::from_f64(1.0 / libm::sqrt(hd as f64));

        let (h1, ln1) = layernorm_forward(
            x,
            self.params.get(&format!("block{b}.ln1.gamma"))?.data(),
            self.params.get(&format!("block{b}.ln1.beta"))?.data(),
        );
        let project = |proj: &str| -> Result<Tensor<S>> {
            let mut m = matmul(&h1, self.params.get(&format!("block{b}.attn.{proj}.weight"))?);
            add_row_bias(&mut m, self.params.get(&format!("block{b}.attn.{proj}.bias"))?.data());
            Ok(m)
        };
        let q = project("wq")?;
        let k = project("wk")?;
        let v = project("wv")?;

        let mut attn = Tensor::zeros([heads, t, t]);
        let mut ao = Tensor::zeros([t, d]);
        for h in 0..heads {
            let qh = gather_head(&q, h, hd);
            let kh = gather_head(&k, h, hd);
            let vh = gather_head(&v, h, hd);
            let mut scores = matmul_bt(&qh, &kh);
            scores.scale(scale);
            let probs = softmax_rows(&scores);
            attn.data_mut()[h * t * t..(h + 1) * t * t].copy_from_slice(probs.data());
            let oh = matmul(&probs, &vh);
            scatter_head(&mut ao, &oh, h, hd);
        }
        let mut proj = matmul(&ao, self.params.get(&format!("block{b}.attn.wo.weight"))?);
        add_row_bias(&mut proj, self.params.get(&format!("block{b}.attn.wo.bias"))?.data());
        let mut x_mid = x.clone();
        x_mid.add_assign(&proj);

        let (h2, ln2) = layernorm_forward(
            &x_mid,
            self.params.get(&format!("block{b}.ln2.gamma"))?.data(),
            self.params.get(&format!("block{b}.ln2.beta"))?.data(),
        );
        let mut f1 = matmul(&h2, self.params.get(&format!("block{b}.mlp.fc1.weight"))?);
        add_row_bias(&mut f1, self.params.get(&format!("block{b}.mlp.fc1.bias"))?.data());
        let r = relu_forward(&f1);
        let mut f2 = matmul(&r, self.params.get(&format!("block{b}.mlp.fc2.weight"))?);
        add_row_bias(&mut f2, self.params.get(&format!("block{b}.mlp.fc2.bias"))?.data());
        let mut x_out = x_mid;
        x_out.add_assign(&f2);

        let out = x_out.clone();
        Ok((
            BlockTrace {
                ln1,
                h1,
                q,
                k,
                v,
                attn,
                ao,
                ln2,
                h2,
                r,
                x_out,
            },
            out,
        ))
    }

    pub fn backward(
        &self,
        trace: &VitTrace<S>,
        dlogits: &[S],
        wants: &BackwardWants,
    ) -> Result<BackwardResult<S>> {
        let spec = &self.spec;
        let (t, d) = (spec.n_tokens(), spec.dim);
        let mut activations: BTreeMap<String, Tensor<S>> = BTreeMap::new();
        let mut dparams = if wants.params {
            Some(self.params.zeros_like())
        } else {
            None
        };

        // Head and final layer norm (only the class row carries gradient).
        let (dcls, dw_head, db_head) =
            dense_backward(&trace.cls_feat, self.params.get("head.weight")?, dlogits);
        if let Some(dp) = dparams.as_mut() {
            *dp.get_mut("head.weight")? = dw_head;
            *dp.get_mut("head.bias")? = Tensor::new([db_head.len()], db_head);
        }
        let mut dy = Tensor::zeros([t, d]);
        dy.data_mut()[..d].copy_from_slice(&dcls);
        let (mut dx, dgf, dbf) =
            layernorm_backward(&dy, &trace.final_ln, self.params.get("final_ln.gamma")?.data());
        if let Some(dp) = dparams.as_mut() {
            *dp.get_mut("final_ln.gamma")? = Tensor::new([d], dgf);
            *dp.get_mut("final_ln.beta")? = Tensor::new([d], dbf);
        }

        for b in (0..spec.depth).rev() {
            if b + 1 == spec.depth && wants.activations.iter().any(|n| n == "patch_tokens") {
                activations.insert(
                    "patch_tokens".into(),
                    Tensor::new([t - 1, d], dx.data()[d..].to_vec()),
                );
            }
            dx = self.block_backward(b, &trace.blocks[b], dx, wants, dparams.as_mut(), &mut activations)?;
        }

        // Undo embedding: dx is the gradient at x0 = [cls; patch_embed] + pos.
        if let Some(dp) = dparams.as_mut() {
            *dp.get_mut("pos_embed")? = dx.clone();
            *dp.get_mut("cls_token")? = Tensor::new([d], dx.data()[..d].to_vec());
        }
        let dtok = Tensor::new([t - 1, d], dx.data()[d..].to_vec());
        if let Some(dp) = dparams.as_mut() {
            *dp.get_mut("patch_embed.weight")? = matmul_at(&trace.patches, &dtok);
            let db = column_sums(&dtok);
            *dp.get_mut("patch_embed.bias")? = Tensor::new([d], db);
        }
        let input = if wants.input {
            let dpatches = matmul_bt(&dtok, self.params.get("patch_embed.weight")?);
            Some(patches_to_image(&dpatches, spec.image_size, spec.patch_size))
        } else {
            None
        };

        Ok(BackwardResult {
            input,
            params: dparams,
            activations,
        })
    }

    fn block_backward(
        &self,
        b: usize,
        bt: &BlockTrace<S>,
        dx_out: Tensor<S>,
        wants: &BackwardWants,
        mut dparams: Option<&mut ParamSet<S>>,
        activations: &mut BTreeMap<String, Tensor<S>>,
    ) -> Result<Tensor<S>> {
        let spec = &self.spec;
        let (t, d) = (spec.n_tokens(), spec.dim);
        let (heads, hd) = (spec.heads, spec.dim / spec.heads);
        let scale = S::from_f64(1.0 / libm::sqrt(hd as f64));

        // MLP path.
        let w2 = self.params.get(&format!("block{b}.mlp.fc2.weight"))?;
        let w1 = self.params.get(&format!("block{b}.mlp.fc1.weight"))?;
        let dr = matmul_bt(&dx_out, w2);
        if let Some(dp) = dparams.as_deref_mut() {
            *dp.get_mut(&format!("block{b}.mlp.fc2.weight"))? = matmul_at(&bt.r, &dx_out);
            let db = column_sums(&dx_out);
            *dp.get_mut(&format!("block{b}.mlp.fc2.bias"))? = Tensor::new([d], db);
        }
        let df1 = relu_backward(&dr, &bt.r, wants.mode);
        let dh2 = matmul_bt(&df1, w1);
        if let Some(dp) = dparams.as_deref_mut() {
            *dp.get_mut(&format!("block{b}.mlp.fc1.weight"))? = matmul_at(&bt.h2, &df1);
            let db = column_sums(&df1);
            *dp.get_mut(&format!("block{b}.mlp.fc1.bias"))? = Tensor::new([spec.mlp_hidden], db);
        }
        let (dx_ln2, dg2, db2) = layernorm_backward(
            &dh2,
            &bt.ln2,
            self.params.get(&format!("block{b}.ln2.gamma"))?.data(),
        );
        if let Some(dp) = dparams.as_deref_mut() {
            *dp.get_mut(&format!("block{b}.ln2.gamma"))? = Tensor::new([d], dg2);
            *dp.get_mut(&format!("block{b}.ln2.beta"))? = Tensor::new([d], db2);
        }
        let mut dx_mid = dx_out;
        dx_mid.add_assign(&dx_ln2);

        // Attention path.
        let wo = self.params.get(&format!("block{b}.attn.wo.weight"))?;
        let dao = matmul_bt(&dx_mid, wo);
        if let Some(dp) = dparams.as_deref_mut() {
            *dp.get_mut(&format!("block{b}.attn.wo.weight"))? = matmul_at(&bt.ao, &dx_mid);
            let db = column_sums(&dx_mid);
            *dp.get_mut(&format!("block{b}.attn.wo.bias"))? = Tensor::new([d], db);
        }
        let mut dq = Tensor::zeros([t, d]);
        let mut dk = Tensor::zeros([t, d]);
        let mut dv = Tensor::zeros([t, d]);
        let attn_name = format!("attn{b}");
        let want_attn = wants.activations.iter().any(|n| n == &attn_name);
        let mut dattn = want_attn.then(|| Tensor::zeros([heads, t, t]));
        for h in 0..heads {
            let qh = gather_head(&bt.q, h, hd);
            let kh = gather_head(&bt.k, h, hd);
            let vh = gather_head(&bt.v, h, hd);
            let probs = Tensor::new([t, t], bt.attn.data()[h * t * t..(h + 1) * t * t].to_vec());
            let dao_h = gather_head(&dao, h, hd);
            let da = matmul_bt(&dao_h, &vh);
            let dvh = matmul_at(&probs, &dao_h);
            if let Some(dat) = dattn.as_mut() {
                dat.data_mut()[h * t * t..(h + 1) * t * t].copy_from_slice(da.data());
            }
            let mut ds = softmax_rows_backward(&da, &probs);
            ds.scale(scale);
            let dqh = matmul(&ds, &kh);
            let dkh = matmul_at(&ds, &qh);
            scatter_head(&mut dq, &dqh, h, hd);
            scatter_head(&mut dk, &dkh, h, hd);
            scatter_head(&mut dv, &dvh, h, hd);
        }
        if let Some(dat) = dattn {
            activations.insert(attn_name, dat);
        }
        if b + 1 == spec.depth && wants.activations.iter().any(|n| n == "patch_keys") {
            activations.insert(
                "patch_keys".into(),
                Tensor::new([t - 1, d], dk.data()[d..].to_vec()),
            );
        }

        let mut dh1 = Tensor::zeros([t, d]);
        for (proj, dmat) in [("wq", &dq), ("wk", &dk), ("wv", &dv)] {
            let w = self.params.get(&format!("block{b}.attn.{proj}.weight"))?;
            dh1.add_assign(&matmul_bt(dmat, w));
            if let Some(dp) = dparams.as_deref_mut() {
                *dp.get_mut(&format!("block{b}.attn.{proj}.weight"))? = matmul_at(&bt.h1, dmat);
                let db = column_sums(dmat);
                *dp.get_mut(&format!("block{b}.attn.{proj}.bias"))? = Tensor::new([d], db);
            }
        }
        let (dx_ln1, dg1, db1) = layernorm_backward(
            &dh1,
            &bt.ln1,
            self.params.get(&format!("block{b}.ln1.gamma"))?.data(),
        );
        if let Some(dp) = dparams.as_deref_mut() {
            *dp.get_mut(&format!("block{b}.ln1.gamma"))? = Tensor::new([d], dg1);
            *dp.get_mut(&format!("block{b}.ln1.beta"))? = Tensor::new([d], db1);
        }
        let mut dx_in = dx_mid;
        dx_in.add_assign(&dx_ln1);
        Ok(dx_in)
    }
}

/// Small uniform init for embedding-style parameters.
fn init_small<S: Scalar>(shape: &[usize], seed: u64, stream: &mut u64) -> Tensor<S> {
    let mut rng = rng_for(seed, Stream::ModelInit, *stream);
    *stream += 1;
    Tensor::from_fn(shape.to_vec(), |_| S::from_f32(rng.gen_range(-0.02..0.02f32)))
}

/// Flatten an H x W x 3 image into row-major patches, each patch a row of
/// pixels in (y, x, channel) order.
pub fn image_to_patches<S: Scalar>(image: &Tensor<S>, patch: usize) -> Tensor<S> {
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (gh, gw) = (h / patch, w / patch);
    let pd = patch * patch * c;
    let mut out = Tensor::zeros([gh * gw, pd]);
    let src = image.data();
    let dst = out.data_mut();
    for py in 0..gh {
        for px in 0..gw {
            let row = (py * gw + px) * pd;
            for dy in 0..patch {
                let sy = py * patch + dy;
                let src_off = (sy * w + px * patch) * c;
                let dst_off = row + dy * patch * c;
                dst[dst_off..dst_off + patch * c]
                    .copy_from_slice(&src[src_off..src_off + patch * c]);
            }
        }
    }
    out
}

/// Inverse of `image_to_patches` for gradient scattering.
fn patches_to_image<S: Scalar>(patches: &Tensor<S>, image_size: usize, patch: usize) -> Tensor<S> {
    let g = image_size / patch;
    let c = 3;
    let pd = patch * patch * c;
    let mut out = Tensor::zeros([image_size, image_size, c]);
    let dst = out.data_mut();
    let src = patches.data();
    for py in 0..g {
        for px in 0..g {
            let row = (py * g + px) * pd;
            for dy in 0..patch {
                let sy = py * patch + dy;
                let dst_off = (sy * image_size + px * patch) * c;
                let src_off = row + dy * patch * c;
                dst[dst_off..dst_off + patch * c]
                    .copy_from_slice(&src[src_off..src_off + patch * c]);
            }
        }
    }
    out
}

fn gather_head<S: Scalar>(x: &Tensor<S>, h: usize, hd: usize) -> Tensor<S> {
    let (t, d) = (x.shape()[0], x.shape()[1]);
    let mut out = Tensor::zeros([t, hd]);
    let src = x.data();
    let dst = out.data_mut();
    for ti in 0..t {
        dst[ti * hd..(ti + 1) * hd]
            .copy_from_slice(&src[ti * d + h * hd..ti * d + (h + 1) * hd]);
    }
    out
}

fn scatter_head<S: Scalar>(dst: &mut Tensor<S>, src: &Tensor<S>, h: usize, hd: usize) {
    let (t, d) = (dst.shape()[0], dst.shape()[1]);
    let dd = dst.data_mut();
    let sd = src.data();
    for ti in 0..t {
        dd[ti * d + h * hd..ti * d + (h + 1) * hd].copy_from_slice(&sd[ti * hd..(ti + 1) * hd]);
    }
}
