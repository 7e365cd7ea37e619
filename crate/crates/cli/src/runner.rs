//! End-to-end orchestration: dataset -> pool -> per-entry evaluation cells
//! (cached on disk) -> report, sweet spots, and plots.
//!
//! Every (pool entry, task group) pair is one independently cached cell.
//! A cell file records the config hash, so stale caches from an edited
//! config are never reused. Failures are per-cell: completed cells stay on
//! disk and the outcome reports what is missing.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use prunelens_core::attribution::AttributionMethod;
use prunelens_core::dataset::Sample;
use prunelens_core::nn::AnyModel;

use crate::checkpoint::model_hash;
use crate::config::SweepConfig;
use crate::container::{write_arrays, write_sidecar, Array};
use crate::evals::{
    compute_group, compute_maps, discover_boxes, interp_subset, stack_maps, EvalContext,
    ReportRow, TaskGroup,
};
use crate::pool::{self, Manifest, PoolOutcome};
use crate::report::{sort_rows, sweet_spot_report, write_csv, write_rows_json, write_sweet_spots};
use crate::{data_io, plot};

/// One cached evaluation cell.
#[derive(Serialize, Deserialize)]
pub struct CacheCell {
    pub config_hash: String,
    pub entry: usize,
    pub group: TaskGroup,
    pub rows: Vec<ReportRow>,
}

pub fn cache_path(cfg: &SweepConfig, entry: usize, group: TaskGroup) -> PathBuf {
    cfg.cache_dir()
        .join(format!("entry_{entry:03}_{}.json", group.name()))
}

/// A cached cell's rows, if present and produced by this exact config.
fn read_cell(cfg: &SweepConfig, hash: &str, entry: usize, group: TaskGroup) -> Option<Vec<ReportRow>> {
    let path = cache_path(cfg, entry, group);
    let text = fs::read_to_string(path).ok()?;
    let cell: CacheCell = serde_json::from_str(&text).ok()?;
    (cell.config_hash == hash && cell.entry == entry && cell.group == group).then_some(cell.rows)
}

fn write_cell(cfg: &SweepConfig, cell: &CacheCell) -> Result<()> {
    let path = cache_path(cfg, cell.entry, cell.group);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_string_pretty(cell)?;
    fs::write(&path, json).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub manifest: Manifest,
    /// Training runs actually performed by this invocation.
    pub trained_rounds: usize,
    pub rows: Vec<ReportRow>,
    /// Human-readable descriptions of cells that failed to evaluate.
    pub failures: Vec<String>,
    pub cache_hits: usize,
    /// Cells recomputed and compared against their cache by verification.
    pub cells_verified: usize,
    /// Report and plot files written (empty when the run is incomplete).
    pub report_paths: Vec<PathBuf>,
}

impl SweepOutcome {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Loads or generates both dataset splits under the configured out_dir.
pub fn ensure_data(cfg: &SweepConfig, resume: bool) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let data_dir = cfg.data_dir();
    let train = data_io::ensure_split(&data_dir, "train", &cfg.train_dataset_spec(), resume)?;
    let test = data_io::ensure_split(&data_dir, "test", &cfg.test_dataset_spec(), resume)?;
    Ok((train, test))
}

/// Evaluates `groups` for every pool entry, consulting the cell cache when
/// `use_cache` is set. Returns rows, failures, and which cells were hits.
#[allow(clippy::type_complexity)]
fn evaluate_cells(
    cfg: &SweepConfig,
    manifest: &Manifest,
    test_data: &[Sample],
    groups: &[TaskGroup],
    use_cache: bool,
) -> Result<(Vec<ReportRow>, Vec<String>, Vec<(usize, TaskGroup)>)> {
    let hash = cfg.config_hash();
    let ctx = EvalContext {
        cfg,
        config_hash: hash.clone(),
        test_data,
    };
    let pool_dir = cfg.pool_dir();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut hits = Vec::new();
    for entry in &manifest.entries {
        let mut model: Option<AnyModel<f32>> = None;
        for &group in groups {
            if use_cache {
                if let Some(cached) = read_cell(cfg, &hash, entry.n, group) {
                    rows.extend(cached);
                    hits.push((entry.n, group));
                    continue;
                }
            }
            if model.is_none() {
                match pool::load_entry(&pool_dir, entry) {
                    Ok((m, _)) => model = Some(m),
                    Err(e) => {
                        failures.push(format!("entry {}: loading checkpoint: {e:#}", entry.n));
                        break;
                    }
                }
            }
            let model_ref = model.as_ref().expect("loaded above");
            match compute_group(group, &ctx, entry, model_ref) {
                Ok(cell_rows) => {
                    write_cell(
                        cfg,
                        &CacheCell {
                            config_hash: hash.clone(),
                            entry: entry.n,
                            group,
                            rows: cell_rows.clone(),
                        },
                    )?;
                    rows.extend(cell_rows);
                }
                Err(e) => failures.push(format!("entry {} {}: {e:#}", entry.n, group.name())),
            }
        }
    }
    Ok((rows, failures, hits))
}

/// Recomputes a deterministic 1% sample (at least one) of the cache-hit
/// cells and fails if any differs from its cached rows.
fn verify_cache_sample(
    cfg: &SweepConfig,
    manifest: &Manifest,
    test_data: &[Sample],
    hits: &[(usize, TaskGroup)],
) -> Result<usize> {
    if hits.is_empty() {
        return Ok(0);
    }
    let hash = cfg.config_hash();
    let ctx = EvalContext {
        cfg,
        config_hash: hash.clone(),
        test_data,
    };
    let k = hits.len().div_ceil(100);
    // Seed the pick from the config hash so reruns check the same cells.
    let seed = u64::from_str_radix(&hash[..12], 16).unwrap_or(0);
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut picked = Vec::new();
    while picked.len() < k {
        let i = rng.gen_range(0..hits.len());
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    for i in picked {
        let (n, group) = hits[i];
        let entry = manifest
            .entries
            .iter()
            .find(|e| e.n == n)
            .context("cache cell for unknown pool entry")?;
        let (model, _) = pool::load_entry(&cfg.pool_dir(), entry)?;
        let fresh = compute_group(group, &ctx, entry, &model)?;
        let cached = read_cell(cfg, &hash, n, group)
            .with_context(|| format!("cache cell entry {n} {} vanished", group.name()))?;
        if fresh != cached {
            bail!(
                "cache verification failed: entry {n} {} differs from a fresh recomputation",
                group.name()
            );
        }
    }
    Ok(k)
}

/// The full pipeline. With `resume`, existing artifacts (data, pool entries,
/// evaluation cells) are reused when their config hash matches; otherwise
/// everything is rebuilt from scratch. Report files are only written when
/// every cell evaluated.
pub fn run_sweep(cfg: &SweepConfig, resume: bool, verify_cache: bool) -> Result<SweepOutcome> {
    cfg.validate()?;
    let (train_data, test_data) = ensure_data(cfg, resume)?;
    let PoolOutcome {
        manifest,
        trained_rounds,
    } = pool::build_or_resume_pool(cfg, &train_data, resume)?;
    let (mut rows, failures, hits) =
        evaluate_cells(cfg, &manifest, &test_data, &TaskGroup::ALL, resume)?;
    let cells_verified = if verify_cache {
        verify_cache_sample(cfg, &manifest, &test_data, &hits)?
    } else {
        0
    };

    let mut report_paths = Vec::new();
    if failures.is_empty() {
        sort_rows(cfg, &mut rows);
        let report_dir = cfg.report_dir();
        let csv = report_dir.join("report.csv");
        write_csv(&csv, &rows)?;
        let json = report_dir.join("report.json");
        write_rows_json(&json, &rows)?;
        let spots = sweet_spot_report(cfg, &rows)?;
        let spots_path = report_dir.join("sweet_spots.json");
        write_sweet_spots(&spots_path, &spots)?;
        report_paths.extend([csv, json, spots_path]);
        report_paths.extend(plot::plot_report(&spots, &cfg.plot_dir())?);
    }
    Ok(SweepOutcome {
        manifest,
        trained_rounds,
        rows,
        failures,
        cache_hits: hits.len(),
        cells_verified,
        report_paths,
    })
}

/// Runs a subset of evaluation groups (the `eval-*` subcommands).
/// Prerequisites (data, pool) are always reused when valid and built when
/// missing; `use_cache` governs only the evaluation cells themselves.
pub fn run_groups(
    cfg: &SweepConfig,
    groups: &[TaskGroup],
    use_cache: bool,
) -> Result<SweepOutcome> {
    cfg.validate()?;
    let (train_data, test_data) = ensure_data(cfg, true)?;
    let PoolOutcome {
        manifest,
        trained_rounds,
    } = pool::build_or_resume_pool(cfg, &train_data, true)?;
    let (rows, failures, hits) = evaluate_cells(cfg, &manifest, &test_data, groups, use_cache)?;
    Ok(SweepOutcome {
        manifest,
        trained_rounds,
        rows,
        failures,
        cache_hits: hits.len(),
        cells_verified: 0,
        report_paths: Vec::new(),
    })
}

/// Assembles the report from cached (or freshly computed) cells without
/// forcing recomputation: the `report` subcommand.
pub fn run_report(cfg: &SweepConfig, verify_cache: bool) -> Result<SweepOutcome> {
    run_sweep(cfg, true, verify_cache)
}

#[derive(Serialize)]
struct SaliencySidecar {
    method: String,
    config_hash: String,
    model_hash: String,
    entry: usize,
    reduction: prunelens_core::attribution::ReductionPolicy,
    ig_steps: usize,
    /// Target class per image (the ground-truth label).
    classes: Vec<usize>,
    /// Images whose relevance summed to zero (uniform fallback map).
    degenerate: Vec<usize>,
}

/// Computes and persists saliency maps for one pool entry: one array
/// container per method holding `[N, H, W]` relevance, plus optional PNG
/// heatmaps. Returns the container paths.
pub fn run_attribute(
    cfg: &SweepConfig,
    entry_n: usize,
    methods: &[AttributionMethod],
    png: bool,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let (train_data, test_data) = ensure_data(cfg, true)?;
    let PoolOutcome { manifest, .. } = pool::build_or_resume_pool(cfg, &train_data, true)?;
    let entry = manifest
        .entries
        .iter()
        .find(|e| e.n == entry_n)
        .with_context(|| format!("pool has no entry {entry_n}"))?;
    let (model, _) = pool::load_entry(&cfg.pool_dir(), entry)?;
    let ctx = EvalContext {
        cfg,
        config_hash: cfg.config_hash(),
        test_data: &test_data,
    };
    let subset = interp_subset(&ctx);
    let settings = cfg.attribution_settings();
    let family = model.spec().family_name();
    let dir = cfg.saliency_dir().join(format!("entry_{entry_n:03}"));
    let mut written = Vec::new();
    for &method in methods {
        if !method.supports(family) {
            continue;
        }
        let maps = compute_maps(&model, subset, method, &settings)?;
        let stacked = stack_maps(&maps)?;
        let container = dir.join(format!("{}.safetensors", method.name()));
        write_arrays(
            &container,
            &[(
                "saliency".to_string(),
                Array::F32(stacked.shape().to_vec(), stacked.data().to_vec()),
            )],
        )?;
        write_sidecar(
            &container,
            &SaliencySidecar {
                method: method.name().to_string(),
                config_hash: ctx.config_hash.clone(),
                model_hash: model_hash(&model),
                entry: entry_n,
                reduction: cfg.attribution.reduction,
                ig_steps: cfg.attribution.ig_steps,
                classes: subset.iter().map(|s| s.label).collect(),
                degenerate: maps
                    .iter()
                    .enumerate()
                    .filter_map(|(i, m)| m.degenerate.then_some(i))
                    .collect(),
            },
        )?;
        if png {
            let png_dir = dir.join(method.name());
            for (i, map) in maps.iter().enumerate() {
                plot::heatmap_png(map, 8, &png_dir.join(format!("img_{i:03}.png")))?;
            }
        }
        written.push(container);
    }
    Ok(written)
}

#[derive(Serialize)]
struct BoxLine<'a> {
    image: usize,
    predicted: &'a prunelens_core::dataset::BoundingBox,
    truth: &'a prunelens_core::dataset::BoundingBox,
    iou: f64,
}

/// Dumps per-image discovered boxes for every pool entry as JSON lines:
/// the `eval-od --boxes` path. Returns the files written.
pub fn dump_boxes(cfg: &SweepConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let (train_data, test_data) = ensure_data(cfg, true)?;
    let PoolOutcome { manifest, .. } = pool::build_or_resume_pool(cfg, &train_data, true)?;
    let ctx = EvalContext {
        cfg,
        config_hash: cfg.config_hash(),
        test_data: &test_data,
    };
    let dir = cfg.report_dir().join("boxes");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for entry in &manifest.entries {
        let (model, _) = pool::load_entry(&cfg.pool_dir(), entry)?;
        let (pairs, ious) = discover_boxes(&ctx, &model)?;
        let mut out = String::new();
        for (i, ((pred, truth), iou)) in pairs.iter().zip(&ious).enumerate() {
            out.push_str(&serde_json::to_string(&BoxLine {
                image: i,
                predicted: pred,
                truth,
                iou: *iou,
            })?);
            out.push('\n');
        }
        let path = dir.join(format!("entry_{:03}.jsonl", entry.n));
        fs::write(&path, out)?;
        written.push(path);
    }
    Ok(written)
}
