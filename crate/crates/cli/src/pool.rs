//! The model pool: a directory of progressively sparser checkpoints built by
//! the prune–retrain loop, described by an ordered JSON manifest.
//!
//! Layout:
//! ```text
//! pool/
//!   manifest.json
//!   entry_000/model.safetensors + model.json   (dense, trained)
//!   entry_000/mask.safetensors  + mask.json
//!   entry_001/...                               (one per pruning round)
//! ```
//!
//! Building is resumable: every entry is persisted (and the manifest
//! rewritten) before the next round starts, so an interrupted sweep leaves a
//! valid partial pool that a later `--resume` run extends instead of
//! retraining from scratch.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use prunelens_core::dataset::Sample;
use prunelens_core::nn::{AnyModel, TrainReport};
use prunelens_core::pruning::{lrr_continue, lrr_sweep, PoolEntryInfo, PruneMask};

use crate::checkpoint::{
    load_mask, load_model, save_mask, save_model, CheckpointSidecar, MaskSidecar,
};
use crate::config::SweepConfig;

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ManifestEntry {
    /// Pruning-iteration index; 0 is the trained dense model.
    pub n: usize,
    /// Sparsity over prunable weights.
    pub sparsity_prunable: f64,
    /// Sparsity over all parameters (biases included).
    pub sparsity_all: f64,
    pub newly_pruned: usize,
    pub checkpoint: String,
    pub mask: String,
    pub train_report: TrainReport,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct Manifest {
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
}

pub fn manifest_path(pool_dir: &Path) -> PathBuf {
    pool_dir.join("manifest.json")
}

pub fn load_manifest(pool_dir: &Path) -> Result<Manifest> {
    let path = manifest_path(pool_dir);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_manifest(pool_dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(pool_dir)?;
    let path = manifest_path(pool_dir);
    fs::write(&path, serde_json::to_string_pretty(manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Does the recorded pool reach the configured target sparsity?
pub fn is_complete(manifest: &Manifest, target: f64) -> bool {
    manifest
        .entries
        .last()
        .is_some_and(|e| e.sparsity_prunable >= target)
}

pub fn entry_model_path(pool_dir: &Path, n: usize) -> PathBuf {
    pool_dir.join(format!("entry_{n:03}/model.safetensors"))
}

pub fn entry_mask_path(pool_dir: &Path, n: usize) -> PathBuf {
    pool_dir.join(format!("entry_{n:03}/mask.safetensors"))
}

/// Load one pool entry's model and mask.
pub fn load_entry(pool_dir: &Path, entry: &ManifestEntry) -> Result<(AnyModel<f32>, PruneMask)> {
    let (model, _) = load_model(&pool_dir.join(&entry.checkpoint))?;
    let (mask, _) = load_mask(&pool_dir.join(&entry.mask))?;
    Ok((model, mask))
}

struct Persister<'a> {
    pool_dir: &'a Path,
    config_hash: String,
    sidecar_base: CheckpointSidecar,
    manifest: Manifest,
}

impl Persister<'_> {
    fn persist(
        &mut self,
        info: &PoolEntryInfo,
        model: &AnyModel<f32>,
        mask: &PruneMask,
    ) -> prunelens_core::error::Result<()> {
        let io = (|| -> Result<()> {
            let n = info.index;
            let model_rel = format!("entry_{n:03}/model.safetensors");
            let mask_rel = format!("entry_{n:03}/mask.safetensors");
            let sidecar = CheckpointSidecar {
                train_report: info.train_report.clone(),
                ..self.sidecar_base.clone()
            };
            save_model(&self.pool_dir.join(&model_rel), model, &sidecar)?;
            save_mask(
                &self.pool_dir.join(&mask_rel),
                mask,
                &MaskSidecar {
                    config_hash: self.config_hash.clone(),
                    entry: n,
                },
            )?;
            self.manifest.entries.push(ManifestEntry {
                n,
                sparsity_prunable: info.sparsity_prunable,
                sparsity_all: info.sparsity_all,
                newly_pruned: info.newly_pruned,
                checkpoint: model_rel,
                mask: mask_rel,
                train_report: info.train_report.clone(),
            });
            write_manifest(self.pool_dir, &self.manifest)
        })();
        io.map_err(|e| prunelens_core::error::CoreError::Persist(e.to_string()))
    }
}

/// Build the pool from scratch, or extend a partial one when `resume` is set
/// and a manifest with a matching config hash exists. Returns the manifest;
/// `trained_rounds` reports how many training runs this call performed.
#[derive(Debug)]
pub struct PoolOutcome {
    pub manifest: Manifest,
    pub trained_rounds: usize,
}

pub fn build_or_resume_pool(
    cfg: &SweepConfig,
    train_data: &[Sample],
    resume: bool,
) -> Result<PoolOutcome> {
    let pool_dir = cfg.pool_dir();
    let hash = cfg.config_hash();
    let spec = cfg.model_spec();
    let schedule = cfg.train_schedule();
    let sidecar_base = CheckpointSidecar {
        spec: spec.clone(),
        schedule: schedule.clone(),
        train_report: TrainReport::default(),
        config_hash: hash.clone(),
    };

    let existing = if resume && manifest_path(&pool_dir).exists() {
        let manifest = load_manifest(&pool_dir)?;
        if manifest.config_hash != hash {
            bail!(
                "pool at {} was built from config {}, current config is {hash}; \
                 delete the pool or change out_dir",
                pool_dir.display(),
                manifest.config_hash
            );
        }
        Some(manifest)
    } else {
        None
    };

    match existing {
        Some(manifest) if is_complete(&manifest, cfg.pruning.target_sparsity) => Ok(PoolOutcome {
            manifest,
            trained_rounds: 0,
        }),
        Some(manifest) => {
            // Extend from the last persisted entry.
            let last = manifest.entries.last().context("manifest has no entries")?;
            let (mut model, mut mask) = load_entry(&pool_dir, last)?;
            let next_index = last.n + 1;
            let mut persister = Persister {
                pool_dir: &pool_dir,
                config_hash: hash,
                sidecar_base,
                manifest,
            };
            let added = lrr_continue(
                &mut model,
                &mut mask,
                train_data,
                &schedule,
                cfg.pruning.k,
                cfg.pruning.target_sparsity,
                next_index,
                |info, model, mask| persister.persist(info, model, mask),
            )?;
            Ok(PoolOutcome {
                manifest: persister.manifest,
                trained_rounds: added.len(),
            })
        }
        None => {
            if pool_dir.exists() {
                fs::remove_dir_all(&pool_dir)
                    .with_context(|| format!("clearing {}", pool_dir.display()))?;
            }
            let mut persister = Persister {
                pool_dir: &pool_dir,
                config_hash: hash.clone(),
                sidecar_base,
                manifest: Manifest {
                    config_hash: hash,
                    entries: Vec::new(),
                },
            };
            let infos = lrr_sweep::<f32, _>(
                &spec,
                train_data,
                &schedule,
                cfg.pruning.k,
                cfg.pruning.target_sparsity,
                |info, model, mask| persister.persist(info, model, mask),
            )?;
            Ok(PoolOutcome {
                manifest: persister.manifest,
                trained_rounds: infos.len(),
            })
        }
    }
}

/// Train only the dense model (pool entry 0); the `train` subcommand.
pub fn train_dense(cfg: &SweepConfig, train_data: &[Sample], resume: bool) -> Result<PoolOutcome> {
    let pool_dir = cfg.pool_dir();
    let hash = cfg.config_hash();
    if resume && manifest_path(&pool_dir).exists() {
        let manifest = load_manifest(&pool_dir)?;
        if manifest.config_hash == hash && !manifest.entries.is_empty() {
            return Ok(PoolOutcome {
                manifest,
                trained_rounds: 0,
            });
        }
    }
    if pool_dir.exists() {
        fs::remove_dir_all(&pool_dir)?;
    }
    let spec = cfg.model_spec();
    let schedule = cfg.train_schedule();
    let mut model = AnyModel::<f32>::build(&spec)?;
    let mask = PruneMask::all_ones(model.params());
    let report = prunelens_core::nn::train(&mut model, train_data, &schedule, Some(&mask))?;
    let mut persister = Persister {
        pool_dir: &pool_dir,
        config_hash: hash.clone(),
        sidecar_base: CheckpointSidecar {
            spec,
            schedule,
            train_report: TrainReport::default(),
            config_hash: hash.clone(),
        },
        manifest: Manifest {
            config_hash: hash,
            entries: Vec::new(),
        },
    };
    let info = PoolEntryInfo {
        index: 0,
        sparsity_prunable: 0.0,
        sparsity_all: 0.0,
        newly_pruned: 0,
        train_report: report,
    };
    persister.persist(&info, &model, &mask)?;
    Ok(PoolOutcome {
        manifest: persister.manifest,
        trained_rounds: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetConfig, ModelConfig, PruningConfig, ScheduleConfig};
    use prunelens_core::dataset::{generate_shapes_dataset, ShapeClass};

    fn tiny_config(dir: &Path) -> SweepConfig {
        SweepConfig {
            out_dir: dir.to_path_buf(),
            dataset: DatasetConfig {
                n_train: 24,
                n_test: 8,
                image_size: 16,
                classes: vec![ShapeClass::Circle, ShapeClass::Square],
                textured_background: true,
            },
            model: ModelConfig::Cnn {
                widths: vec![4, 6],
            },
            schedule: ScheduleConfig {
                epochs: 2,
                batch_size: 8,
                base_lr: 0.05,
                momentum: 0.9,
                decay_at: 1,
                decay_factor: 0.1,
            },
            pruning: PruningConfig {
                k: 0.5,
                target_sparsity: 0.8,
            },
            ..SweepConfig::default()
        }
    }

    fn train_samples(cfg: &SweepConfig) -> Vec<Sample> {
        generate_shapes_dataset(&cfg.train_dataset_spec()).unwrap()
    }

    #[test]
    fn pool_builds_resumes_and_detects_config_changes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let data = train_samples(&cfg);

        // k=0.5 to T=0.8: sparsities 0, .5, .75, .875 -> 4 entries.
        let out = build_or_resume_pool(&cfg, &data, false).unwrap();
        assert_eq!(out.manifest.entries.len(), 4);
        assert_eq!(out.trained_rounds, 4);
        assert!(is_complete(&out.manifest, cfg.pruning.target_sparsity));

        // Resume on a complete pool trains nothing.
        let again = build_or_resume_pool(&cfg, &data, true).unwrap();
        assert_eq!(again.trained_rounds, 0);
        assert_eq!(again.manifest.entries.len(), 4);

        // Every persisted entry loads, and masked weights are exactly zero.
        for entry in &again.manifest.entries {
            let (model, mask) = load_entry(&cfg.pool_dir(), entry).unwrap();
            for (name, kept) in mask.iter() {
                let t = model.params().get(name).unwrap();
                for (v, &keep) in t.iter().zip(kept) {
                    if !keep {
                        assert_eq!(*v, 0.0, "{name}");
                    }
                }
            }
        }

        // A different config must be refused on resume.
        let mut other = cfg.clone();
        other.pruning.k = 0.4;
        let err = build_or_resume_pool(&other, &data, true).unwrap_err();
        assert!(err.to_string().contains("config"));
    }

    #[test]
    fn interrupted_pool_is_extended_not_retrained() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let data = train_samples(&cfg);

        // Build only the dense entry, as `train` would.
        let dense = train_dense(&cfg, &data, false).unwrap();
        assert_eq!(dense.manifest.entries.len(), 1);
        assert_eq!(dense.trained_rounds, 1);

        // Resume completes the remaining rounds only.
        let full = build_or_resume_pool(&cfg, &data, true).unwrap();
        assert_eq!(full.manifest.entries.len(), 4);
        assert_eq!(full.trained_rounds, 3);

        // And the result matches a from-scratch build bit-for-bit.
        let dir2 = tempfile::tempdir().unwrap();
        let cfg2 = SweepConfig {
            out_dir: dir2.path().to_path_buf(),
            ..cfg.clone()
        };
        let scratch = build_or_resume_pool(&cfg2, &data, false).unwrap();
        for (a, b) in full.manifest.entries.iter().zip(&scratch.manifest.entries) {
            let (ma, _) = load_entry(&cfg.pool_dir(), a).unwrap();
            let (mb, _) = load_entry(&cfg2.pool_dir(), b).unwrap();
            for ((name, pa), (_, pb)) in ma.params().iter().zip(mb.params().iter()) {
                assert_eq!(pa.values.data(), pb.values.data(), "tensor {name}");
            }
            assert_eq!(a.sparsity_prunable, b.sparsity_prunable);
        }
    }
}
