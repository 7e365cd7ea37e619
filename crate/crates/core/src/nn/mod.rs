//! Differentiable backbones with named parameters, forward traces, and
//! hand-written backward passes.
//!
//! Two families are available behind one dispatch type, [`AnyModel`]: a
//! compact CNN ([`cnn`]) and a tiny patch transformer ([`vit`]). Both run
//! over any [`Scalar`] — `f32` in production, `f64` when tests compare
//! analytic gradients against finite differences.

pub mod cnn;
mod ops;
pub mod params;
mod train;
pub mod vit;

pub use cnn::{CnnModel, CnnSpec, CnnTrace};
pub use ops::argmax;
pub use params::{ParamSet, ParamTensor};
pub use train::{accuracy, cross_entropy_grad, train, Schedule, TrainReport};
pub use vit::{VitModel, VitSpec, VitTrace};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How gradients flow through ReLU during a backward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BackpropMode {
    #[default]
    Standard,
    /// Guided backpropagation: additionally zero positions whose upstream
    /// gradient is negative.
    GuidedRelu,
}

/// What a backward pass should materialize.
#[derive(Clone, Debug, Default)]
pub struct BackwardWants {
    pub input: bool,
    pub params: bool,
    /// Activation names whose gradients to record (see each family's
    /// `activation_names`).
    pub activations: Vec<String>,
    pub mode: BackpropMode,
}

pub struct BackwardResult<S> {
    pub input: Option<Tensor<S>>,
    pub params: Option<ParamSet<S>>,
    pub activations: BTreeMap<String, Tensor<S>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Cnn(CnnSpec),
    Vit(VitSpec),
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Cnn(s) => s.validate(),
            ModelSpec::Vit(s) => s.validate(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            ModelSpec::Cnn(_) => "cnn",
            ModelSpec::Vit(_) => "vit",
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            ModelSpec::Cnn(s) => s.image_size,
            ModelSpec::Vit(s) => s.image_size,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            ModelSpec::Cnn(s) => s.n_classes,
            ModelSpec::Vit(s) => s.n_classes,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelSpec::Cnn(s) => s.seed,
            ModelSpec::Vit(s) => s.seed,
        }
    }

    /// Closed-form total parameter count for the spec.
    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Cnn(s) => s.param_count(),
            ModelSpec::Vit(s) => s.param_count(),
        }
    }
}

/// Family dispatch over the two backbones.
#[derive(Clone, Debug)]
pub enum AnyModel<S> {
    Cnn(CnnModel<S>),
    Vit(VitModel<S>),
}

/// Family dispatch over forward traces.
pub enum AnyTrace<S> {
    Cnn(CnnTrace<S>),
    Vit(VitTrace<S>),
}

impl<S: Scalar> AnyTrace<S> {
    pub fn logits(&self) -> &[S] {
        match self {
            AnyTrace::Cnn(t) => &t.logits,
            AnyTrace::Vit(t) => &t.logits,
        }
    }
}

/// The public forward trace: logits plus every named activation the
/// attribution and object-discovery consumers may request.
pub struct ForwardTrace<S> {
    pub logits: Vec<S>,
    pub activations: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AnyModel<S> {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Cnn(s) => AnyModel::Cnn(CnnModel::build(s)?),
            ModelSpec::Vit(s) => AnyModel::Vit(VitModel::build(s)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            AnyModel::Cnn(m) => ModelSpec::Cnn(m.spec().clone()),
            AnyModel::Vit(m) => ModelSpec::Vit(m.spec().clone()),
        }
    }

    pub fn params(&self) -> &ParamSet<S> {
        match self {
            AnyModel::Cnn(m) => &m.params,
            AnyModel::Vit(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        match self {
            AnyModel::Cnn(m) => &mut m.params,
            AnyModel::Vit(m) => &mut m.params,
        }
    }

    pub fn image_size(&self) -> usize {
        self.spec().image_size()
    }

    pub fn n_classes(&self) -> usize {
        self.spec().n_classes()
    }

    /// Replace parameter values from another set with identical names and
    /// shapes (checkpoint loading).
    pub fn load_params(&mut self, source: &ParamSet<S>) -> Result<()> {
        if source.n_tensors() != self.params().n_tensors() {
            return Err(CoreError::Config(alloc::format!(
                "checkpoint holds {} tensors, model expects {}",
                source.n_tensors(),
                self.params().n_tensors()
            )));
        }
        for (name, p) in self.params_mut().iter_mut() {
            let src = source.get(name)?;
            src.check_shape(p.values.shape(), name)?;
            p.values = src.clone();
        }
        Ok(())
    }

    /// Rebuild the same model with every parameter converted to another
    /// scalar type (used to make f64 twins for finite-difference oracles).
    pub fn cast<T: Scalar>(&self) -> AnyModel<T> {
        let mut twin = AnyModel::<T>::build(&self.spec()).expect("spec already validated");
        let casted = self.params().cast::<T>();
        twin.load_params(&casted).expect("identical names and shapes");
        twin
    }

    /// Activation names whose values and gradients can be requested.
    pub fn activation_names(&self) -> Vec<String> {
        match self {
            AnyModel::Cnn(m) => m.activation_names(),
            AnyModel::Vit(m) => m.activation_names(),
        }
    }

    /// Name of the designated spatial layer for class-activation maps
    /// (`None` for families without one).
    pub fn cam_layer(&self) -> Option<String> {
        match self {
            AnyModel::Cnn(m) => Some(m.cam_layer()),
            AnyModel::Vit(_) => None,
        }
    }

    pub fn trace(&self, image: &Tensor<S>) -> Result<AnyTrace<S>> {
        Ok(match self {
            AnyModel::Cnn(m) => AnyTrace::Cnn(m.forward(image)?),
            AnyModel::Vit(m) => AnyTrace::Vit(m.forward(image)?),
        })
    }

    pub fn backward(
        &self,
        trace: &AnyTrace<S>,
        dlogits: &[S],
        wants: &BackwardWants,
    ) -> Result<BackwardResult<S>> {
        match (self, trace) {
            (AnyModel::Cnn(m), AnyTrace::Cnn(t)) => m.backward(t, dlogits, wants),
            (AnyModel::Vit(m), AnyTrace::Vit(t)) => m.backward(t, dlogits, wants),
            _ => Err(CoreError::Config("trace/model family mismatch".into())),
        }
    }

    /// The recorded value of a named activation from a forward trace.
    pub fn activation(&self, trace: &AnyTrace<S>, name: &str) -> Result<Tensor<S>> {
        match (self, trace) {
            (AnyModel::Cnn(m), AnyTrace::Cnn(t)) => m.activation(t, name).map(Tensor::clone),
            (AnyModel::Vit(m), AnyTrace::Vit(t)) => {
                for b in 0..m.spec().depth {
                    if name == alloc::format!("attn{b}") {
                        return Ok(t.attention(b).clone());
                    }
                }
                match name {
                    "patch_keys" => Ok(t.patch_keys()),
                    "patch_tokens" => Ok(t.patch_tokens()),
                    _ => Err(CoreError::UnknownName(name.to_string())),
                }
            }
            _ => Err(CoreError::Config("trace/model family mismatch".into())),
        }
    }

    pub fn logits(&self, image: &Tensor<S>) -> Result<Vec<S>> {
        Ok(match self.trace(image)? {
            AnyTrace::Cnn(t) => t.logits,
            AnyTrace::Vit(t) => t.logits,
        })
    }

    /// Predicted class: argmax over logits, ties to the lowest index.
    pub fn predict(&self, image: &Tensor<S>) -> Result<usize> {
        Ok(argmax(&self.logits(image)?))
    }

    /// Forward pass exposing logits plus all named activations.
    pub fn predict_with_trace(&self, image: &Tensor<S>) -> Result<ForwardTrace<S>> {
        let trace = self.trace(image)?;
        let mut activations = BTreeMap::new();
        for name in self.activation_names() {
            let value = self.activation(&trace, &name)?;
            activations.insert(name, value);
        }
        Ok(ForwardTrace {
            logits: trace.logits().to_vec(),
            activations,
        })
    }

    /// Gradients of the pre-softmax target-class logit with respect to any
    /// mix of `"input"`, activation names, and parameter names.
    pub fn gradients(
        &self,
        image: &Tensor<S>,
        target_class: usize,
        wanted: &[&str],
        mode: BackpropMode,
    ) -> Result<BTreeMap<String, Tensor<S>>> {
        if target_class >= self.n_classes() {
            return Err(CoreError::Config(alloc::format!(
                "target class {target_class} out of range for {} classes",
                self.n_classes()
            )));
        }
        let act_names = self.activation_names();
        let mut wants = BackwardWants {
            mode,
            ..BackwardWants::default()
        };
        let mut param_names: Vec<&str> = Vec::new();
        for &name in wanted {
            if name == "input" {
                wants.input = true;
            } else if act_names.iter().any(|a| a == name) {
                wants.activations.push(name.to_string());
            } else if self.params().contains(name) {
                wants.params = true;
                param_names.push(name);
            } else {
                return Err(CoreError::UnknownName(name.to_string()));
            }
        }

        let trace = self.trace(image)?;
        let mut dlogits = alloc::vec![S::ZERO; self.n_classes()];
        dlogits[target_class] = S::ONE;
        let result = self.backward(&trace, &dlogits, &wants)?;

        let mut out = BTreeMap::new();
        if wants.input {
            out.insert("input".to_string(), result.input.expect("input requested"));
        }
        for (name, grad) in result.activations {
            out.insert(name, grad);
        }
        if let Some(params) = result.params {
            for name in param_names {
                out.insert(name.to_string(), params.get(name)?.clone());
            }
        }
        Ok(out)
    }
}
