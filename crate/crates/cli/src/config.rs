//! Declarative sweep configuration: one TOML file drives data generation,
//! training, pruning, every evaluation, and reporting.
//!
//! A 12-hex-digit hash of the experiment-defining fields (everything except
//! the output directory) stamps every artifact, so outputs from different
//! configurations can never be mixed up and relocating an output directory
//! does not re-key its caches.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use prunelens_core::alignment::{standard_plans, DistortionPlan};
use prunelens_core::attribution::{AttributionMethod, AttributionSettings, ReductionPolicy};
use prunelens_core::dataset::{DatasetSpec, ShapeClass};
use prunelens_core::lost::LostSettings;
use prunelens_core::nn::{CnnSpec, ModelSpec, Schedule, VitSpec};
use prunelens_core::rng::mix;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Global seed; all per-purpose seeds are derived from it.
    pub seed: u64,
    /// Output root for datasets, pool, caches, reports, and plots.
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub pruning: PruningConfig,
    pub attribution: AttributionConfig,
    pub object_discovery: OdConfig,
    pub distortions: DistortionConfig,
    pub sweet_spots: SweetSpotConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            pruning: PruningConfig::default(),
            attribution: AttributionConfig::default(),
            object_discovery: OdConfig::default(),
            distortions: DistortionConfig::default(),
            sweet_spots: SweetSpotConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub classes: Vec<ShapeClass>,
    pub textured_background: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 2000,
            n_test: 500,
            image_size: 32,
            classes: ShapeClass::ALL.to_vec(),
            textured_background: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Cnn {
        widths: Vec<usize>,
    },
    Vit {
        patch_size: usize,
        dim: usize,
        depth: usize,
        heads: usize,
        mlp_hidden: usize,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Cnn {
            widths: vec![8, 16, 32, 32],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f32,
    pub momentum: f32,
    pub decay_at: usize,
    pub decay_factor: f32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            epochs: 12,
            batch_size: 16,
            base_lr: 0.05,
            momentum: 0.9,
            decay_at: 10,
            decay_factor: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PruningConfig {
    /// Fraction of surviving prunable weights removed per round.
    pub k: f64,
    /// Stop once sparsity over prunable weights reaches this value.
    pub target_sparsity: f64,
}

impl Default for PruningConfig {
    fn default() -> Self {
        PruningConfig {
            k: 0.27,
            target_sparsity: 0.95,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    /// Methods to score; those unsupported by the model family are skipped.
    pub methods: Vec<AttributionMethod>,
    pub ig_steps: usize,
    pub reduction: ReductionPolicy,
    /// How many test images feed the saliency-quality metrics.
    pub n_images: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            methods: AttributionMethod::ALL.to_vec(),
            ig_steps: 16,
            reduction: ReductionPolicy::ClampNegative,
            n_images: 128,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OdConfig {
    /// Override per-family feature centering (default: on for cnn, off for vit).
    pub center_features: Option<bool>,
    pub l2_normalize: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionConfig {
    pub plans: Vec<PlanConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub kind: String,
    pub levels: Vec<f32>,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        DistortionConfig {
            plans: standard_plans()
                .into_iter()
                .map(|p| PlanConfig {
                    kind: p.kind.name().to_string(),
                    levels: p.levels,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SweetSpotConfig {
    /// `trajectory` compares each pool entry to its predecessor;
    /// `vs_dense` compares every entry to the dense baseline.
    pub mode: SweetSpotMode,
    /// Strict (>) vs non-strict (>=) improvement.
    pub strict: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweetSpotMode {
    #[default]
    Trajectory,
    VsDense,
}

impl Default for SweetSpotConfig {
    fn default() -> Self {
        SweetSpotConfig {
            mode: SweetSpotMode::Trajectory,
            strict: true,
        }
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: SweepConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec(0).validate()?;
        self.model_spec().validate()?;
        self.train_schedule().validate()?;
        if !(self.pruning.k > 0.0 && self.pruning.k < 1.0) {
            bail!("pruning.k must lie in (0, 1)");
        }
        if !(self.pruning.target_sparsity > 0.0 && self.pruning.target_sparsity < 1.0) {
            bail!("pruning.target_sparsity must lie in (0, 1)");
        }
        if self.attribution.ig_steps == 0 {
            bail!("attribution.ig_steps must be >= 1");
        }
        if self.attribution.n_images == 0 || self.attribution.n_images > self.dataset.n_test {
            bail!(
                "attribution.n_images must lie in 1..={}",
                self.dataset.n_test
            );
        }
        for plan in &self.distortions.plans {
            let p = plan.to_plan()?;
            for &level in &p.levels {
                prunelens_core::dataset::DistortionSpec::new(p.kind, level, 0)
                    .validate()
                    .map_err(|e| {
                        anyhow::anyhow!("distortion {} level {level}: {e}", plan.kind)
                    })?;
            }
        }
        Ok(())
    }

    /// Hash of the experiment-defining fields (out_dir excluded), as 12 hex
    /// digits of SHA-256 over the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.out_dir = PathBuf::new();
        let json = serde_json::to_string(&keyed).expect("config is serializable");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    // ---- derived seeds: one stream per purpose, all from the global seed ----

    pub fn train_data_seed(&self) -> u64 {
        mix(self.seed ^ 0x1)
    }

    pub fn test_data_seed(&self) -> u64 {
        mix(self.seed ^ 0x2)
    }

    pub fn model_seed(&self) -> u64 {
        mix(self.seed ^ 0x3)
    }

    pub fn shuffle_seed(&self) -> u64 {
        mix(self.seed ^ 0x4)
    }

    pub fn distortion_seed(&self) -> u64 {
        mix(self.seed ^ 0x5)
    }

    // ---- assembled core-layer specs ----

    pub fn dataset_spec(&self, split_seed: u64) -> DatasetSpec {
        DatasetSpec {
            n_samples: 0, // caller picks the split size
            image_size: self.dataset.image_size,
            classes: self.dataset.classes.clone(),
            textured_background: self.dataset.textured_background,
            seed: split_seed,
        }
    }

    pub fn train_dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            n_samples: self.dataset.n_train,
            ..self.dataset_spec(self.train_data_seed())
        }
    }

    pub fn test_dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            n_samples: self.dataset.n_test,
            ..self.dataset_spec(self.test_data_seed())
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let n_classes = self.dataset.classes.len();
        let image_size = self.dataset.image_size;
        let seed = self.model_seed();
        match &self.model {
            ModelConfig::Cnn { widths } => ModelSpec::Cnn(CnnSpec {
                image_size,
                widths: widths.clone(),
                n_classes,
                seed,
            }),
            ModelConfig::Vit {
                patch_size,
                dim,
                depth,
                heads,
                mlp_hidden,
            } => ModelSpec::Vit(VitSpec {
                image_size,
                patch_size: *patch_size,
                dim: *dim,
                depth: *depth,
                heads: *heads,
                mlp_hidden: *mlp_hidden,
                n_classes,
                seed,
            }),
        }
    }

    pub fn train_schedule(&self) -> Schedule {
        Schedule {
            epochs: self.schedule.epochs,
            batch_size: self.schedule.batch_size,
            base_lr: self.schedule.base_lr,
            momentum: self.schedule.momentum,
            decay_at: self.schedule.decay_at,
            decay_factor: self.schedule.decay_factor,
            seed: self.shuffle_seed(),
        }
    }

    pub fn attribution_settings(&self) -> AttributionSettings {
        AttributionSettings {
            policy: self.attribution.reduction,
            ig_steps: self.attribution.ig_steps,
        }
    }

    pub fn lost_settings(&self) -> LostSettings {
        LostSettings {
            center_features: self.object_discovery.center_features,
            l2_normalize: self.object_discovery.l2_normalize,
        }
    }

    pub fn distortion_plans(&self) -> Result<Vec<DistortionPlan>> {
        self.distortions.plans.iter().map(|p| p.to_plan()).collect()
    }

    // ---- layout of the output directory ----

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn pool_dir(&self) -> PathBuf {
        self.out_dir.join("pool")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.out_dir.join("cache")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }

    pub fn plot_dir(&self) -> PathBuf {
        self.out_dir.join("plots")
    }

    pub fn saliency_dir(&self) -> PathBuf {
        self.out_dir.join("saliency")
    }
}

impl PlanConfig {
    pub fn to_plan(&self) -> Result<DistortionPlan> {
        let kind = prunelens_core::dataset::DistortionKind::from_name(&self.kind)
            .ok_or_else(|| anyhow::anyhow!("unknown distortion kind {:?}", self.kind))?;
        if self.levels.is_empty() {
            bail!("distortion {} has no levels", self.kind);
        }
        Ok(DistortionPlan {
            kind,
            levels: self.levels.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips_through_toml() {
        let cfg = SweepConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: SweepConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn hash_ignores_out_dir_but_tracks_experiment_fields() {
        let a = SweepConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.config_hash(), c.config_hash());
        let mut d = a.clone();
        d.pruning.k = 0.2;
        assert_ne!(a.config_hash(), d.config_hash());
        assert_eq!(a.config_hash().len(), 12);
    }

    #[test]
    fn derived_seeds_are_distinct_per_purpose() {
        let cfg = SweepConfig::default();
        let seeds = [
            cfg.train_data_seed(),
            cfg.test_data_seed(),
            cfg.model_seed(),
            cfg.shuffle_seed(),
            cfg.distortion_seed(),
        ];
        let mut uniq = seeds.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), seeds.len());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: SweepConfig = toml::from_str(
            r#"
            seed = 11
            [model]
            family = "cnn"
            widths = [4, 8]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.dataset.n_train, 2000);
        assert_eq!(
            cfg.model,
            ModelConfig::Cnn {
                widths: vec![4, 8]
            }
        );
    }

    #[test]
    fn bad_distortion_levels_are_rejected() {
        let mut cfg = SweepConfig::default();
        cfg.distortions.plans = vec![PlanConfig {
            kind: "uniform_noise".into(),
            levels: vec![1.5],
        }];
        assert!(cfg.validate().is_err());
        cfg.distortions.plans = vec![PlanConfig {
            kind: "nonsense".into(),
            levels: vec![0.0],
        }];
        assert!(cfg.validate().is_err());
    }
}
