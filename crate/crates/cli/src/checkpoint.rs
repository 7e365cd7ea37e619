//! Model and prune-mask persistence.
//!
//! A checkpoint is a container of all named parameter tensors (f32) plus a
//! JSON sidecar carrying the model spec, the training schedule it was last
//! trained under, and its training report. Loading rebuilds the model from
//! the spec and overwrites its parameters, which validates names and shapes
//! for free. Masks are stored as 0/1 i32 arrays per prunable tensor.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use prunelens_core::nn::{AnyModel, ModelSpec, Schedule, TrainReport};
use prunelens_core::pruning::PruneMask;
use prunelens_core::tensor::Tensor;

use crate::container::{read_arrays, read_sidecar, write_arrays, write_sidecar, Array};

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct CheckpointSidecar {
    pub spec: ModelSpec,
    pub schedule: Schedule,
    pub train_report: TrainReport,
    pub config_hash: String,
}

pub fn save_model(
    path: &Path,
    model: &AnyModel<f32>,
    sidecar: &CheckpointSidecar,
) -> Result<()> {
    let arrays: Vec<(String, Array)> = model
        .params()
        .iter()
        .map(|(name, p)| {
            (
                name.to_string(),
                Array::F32(p.values.shape().to_vec(), p.values.data().to_vec()),
            )
        })
        .collect();
    write_arrays(path, &arrays)?;
    write_sidecar(path, sidecar)
}

pub fn load_model(path: &Path) -> Result<(AnyModel<f32>, CheckpointSidecar)> {
    let sidecar: CheckpointSidecar = read_sidecar(path)?;
    let mut model = AnyModel::<f32>::build(&sidecar.spec)
        .context("rebuilding model from checkpoint sidecar spec")?;
    let arrays = read_arrays(path)?;
    let expected = model.params().names().count();
    if arrays.len() != expected {
        bail!(
            "{}: checkpoint holds {} tensors, model spec declares {expected}",
            path.display(),
            arrays.len()
        );
    }
    for (name, array) in &arrays {
        let tensor = model
            .params_mut()
            .get_mut(name)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        if tensor.shape() != array.shape() {
            bail!(
                "{}: tensor {name} has shape {:?}, expected {:?}",
                path.display(),
                array.shape(),
                tensor.shape()
            );
        }
        let values = array.as_f32()?;
        *tensor = Tensor::new(array.shape().to_vec(), values.to_vec());
    }
    Ok((model, sidecar))
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct MaskSidecar {
    pub config_hash: String,
    pub entry: usize,
}

pub fn save_mask(path: &Path, mask: &PruneMask, sidecar: &MaskSidecar) -> Result<()> {
    let arrays: Vec<(String, Array)> = mask
        .iter()
        .map(|(name, kept)| {
            (
                name.to_string(),
                Array::I32(vec![kept.len()], kept.iter().map(|&b| i32::from(b)).collect()),
            )
        })
        .collect();
    write_arrays(path, &arrays)?;
    write_sidecar(path, sidecar)
}

pub fn load_mask(path: &Path) -> Result<(PruneMask, MaskSidecar)> {
    let sidecar: MaskSidecar = read_sidecar(path)?;
    let arrays = read_arrays(path)?;
    let entries = arrays
        .iter()
        .map(|(name, array)| {
            let v = array.as_i32()?;
            Ok((name.clone(), v.iter().map(|&x| x != 0).collect::<Vec<bool>>()))
        })
        .collect::<Result<std::collections::BTreeMap<_, _>>>()?;
    Ok((PruneMask::from_entries(entries), sidecar))
}

/// 12-hex-digit fingerprint of a model's parameter values (name-ordered raw
/// f32 bytes), used to stamp derived artifacts such as saliency maps.
pub fn model_hash(model: &AnyModel<f32>) -> String {
    let mut hasher = Sha256::new();
    for (name, p) in model.params().iter() {
        hasher.update(name.as_bytes());
        for v in p.values.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(12);
    for byte in digest.iter().take(6) {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}
