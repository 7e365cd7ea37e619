//! Per-entry evaluation tasks, each producing report rows.
//!
//! Row population semantics — every row aggregates one per-sample score
//! population, so `mean`/`std`/`n` always mean the same thing:
//!   - `accuracy` and `distortion-accuracy`: 0/1 correctness indicators
//!     (std is the binomial population deviation sqrt(p(1-p))).
//!   - `rma` / `rra`: per-image relevance scores for one attribution method;
//!     degenerate (zero-relevance) maps are excluded from the stats and
//!     counted in `degenerate`.
//!   - `iou`: per-image overlap between the discovered and true boxes.
//!   - `corloc@0.5`: 0/1 indicators of IoU >= 0.5.

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use prunelens_core::attribution::{compute_saliency, AttributionMethod, SaliencyMap};
use prunelens_core::dataset::Sample;
use prunelens_core::lost::{corloc_dataset, discover_box, iou};
use prunelens_core::metrics::{score_dataset, InterpMetric, ScoreStats};
use prunelens_core::nn::{accuracy, AnyModel};
use prunelens_core::parallel::map_indexed;
use prunelens_core::tensor::Tensor;

use crate::config::SweepConfig;
use crate::pool::ManifestEntry;

/// One CSV row: an evaluation cell's score population, stamped with its
/// provenance (config hash, pool entry, sparsities).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ReportRow {
    pub config_hash: String,
    pub entry: usize,
    pub sparsity_prunable: f64,
    pub sparsity_all: f64,
    pub task: String,
    pub method: String,
    pub kind: String,
    /// Distortion level for `distortion-accuracy` rows; empty otherwise.
    pub level: Option<f32>,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub degenerate: usize,
}

/// The task groups the runner schedules and caches independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskGroup {
    Accuracy,
    Interp,
    ObjectDiscovery,
    Alignment,
}

impl TaskGroup {
    pub const ALL: [TaskGroup; 4] = [
        TaskGroup::Accuracy,
        TaskGroup::Interp,
        TaskGroup::ObjectDiscovery,
        TaskGroup::Alignment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskGroup::Accuracy => "accuracy",
            TaskGroup::Interp => "interp",
            TaskGroup::ObjectDiscovery => "od",
            TaskGroup::Alignment => "ha",
        }
    }
}

/// Everything an evaluation needs besides the model itself.
pub struct EvalContext<'a> {
    pub cfg: &'a SweepConfig,
    pub config_hash: String,
    pub test_data: &'a [Sample],
}

impl EvalContext<'_> {
    fn row_base(&self, entry: &ManifestEntry) -> ReportRow {
        ReportRow {
            config_hash: self.config_hash.clone(),
            entry: entry.n,
            sparsity_prunable: entry.sparsity_prunable,
            sparsity_all: entry.sparsity_all,
            task: String::new(),
            method: String::new(),
            kind: String::new(),
            level: None,
            mean: 0.0,
            std: 0.0,
            n: 0,
            degenerate: 0,
        }
    }
}

/// Population standard deviation of a 0/1 indicator with success rate `p`.
fn binomial_std(p: f64) -> f64 {
    (p * (1.0 - p)).max(0.0).sqrt()
}

pub fn compute_group(
    group: TaskGroup,
    ctx: &EvalContext,
    entry: &ManifestEntry,
    model: &AnyModel<f32>,
) -> Result<Vec<ReportRow>> {
    match group {
        TaskGroup::Accuracy => accuracy_rows(ctx, entry, model),
        TaskGroup::Interp => interp_rows(ctx, entry, model),
        TaskGroup::ObjectDiscovery => od_rows(ctx, entry, model),
        TaskGroup::Alignment => ha_rows(ctx, entry, model),
    }
}

/// Plain test-set accuracy as a 0/1 indicator population.
fn accuracy_rows(
    ctx: &EvalContext,
    entry: &ManifestEntry,
    model: &AnyModel<f32>,
) -> Result<Vec<ReportRow>> {
    let p = accuracy(model, ctx.test_data)?;
    Ok(vec![ReportRow {
        task: "accuracy".into(),
        mean: p,
        std: binomial_std(p),
        n: ctx.test_data.len(),
        ..ctx.row_base(entry)
    }])
}

/// Saliency-quality metrics: for each supported attribution method, compute
/// one map per image (target = the true class) and score it against the
/// ground-truth mask with both mass- and rank-based metrics.
fn interp_rows(
    ctx: &EvalContext,
    entry: &ManifestEntry,
    model: &AnyModel<f32>,
) -> Result<Vec<ReportRow>> {
    let settings = ctx.cfg.attribution_settings();
    let family = model.spec().family_name();
    let subset = interp_subset(ctx);
    let mut rows = Vec::new();
    for &method in &ctx.cfg.attribution.methods {
        if !method.supports(family) {
            continue;
        }
        let maps = compute_maps(model, subset, method, &settings)?;
        for metric in [InterpMetric::Rma, InterpMetric::Rra] {
            let pairs = maps
                .iter()
                .zip(subset)
                .map(|(map, sample)| (&map.values, &sample.mask));
            let stats: ScoreStats = score_dataset(pairs, metric)
                .map_err(|e| anyhow!("{} scoring failed: {e}", method.name()))?;
            rows.push(ReportRow {
                task: metric.name().into(),
                method: method.name().into(),
                mean: stats.mean,
                std: stats.std,
                n: stats.n,
                degenerate: stats.degenerate,
                ..ctx.row_base(entry)
            });
        }
    }
    Ok(rows)
}

/// The deterministic saliency-evaluation subset: the first `n_images` test
/// samples.
pub fn interp_subset<'a>(ctx: &'a EvalContext) -> &'a [Sample] {
    let n = ctx.cfg.attribution.n_images.min(ctx.test_data.len());
    &ctx.test_data[..n]
}

/// One saliency map per image, order-preserving parallel map.
pub fn compute_maps(
    model: &AnyModel<f32>,
    samples: &[Sample],
    method: AttributionMethod,
    settings: &prunelens_core::attribution::AttributionSettings,
) -> Result<Vec<SaliencyMap>> {
    let maps = map_indexed(samples.len(), |i| {
        let s = &samples[i];
        compute_saliency(model, &s.image, s.label, method, settings)
    });
    maps.into_iter()
        .enumerate()
        .map(|(i, m)| m.with_context(|| format!("{} on image {i}", method.name())))
        .collect()
}

/// Single-object discovery: per-image boxes, IoU population, and the
/// thresholded localization rate.
fn od_rows(
    ctx: &EvalContext,
    entry: &ManifestEntry,
    model: &AnyModel<f32>,
) -> Result<Vec<ReportRow>> {
    let (pairs, ious) = discover_boxes(ctx, model)?;
    let agg = corloc_dataset(&pairs).map_err(|e| anyhow!("localization scoring: {e}"))?;
    let iou_stats = ScoreStats::from_scores(&ious, 0);
    debug_assert_eq!(iou_stats.mean, agg.mean_iou);
    let base = ctx.row_base(entry);
    Ok(vec![
        ReportRow {
            task: "iou".into(),
            method: "lost".into(),
            mean: agg.mean_iou,
            std: iou_stats.std,
            n: agg.n,
            ..base.clone()
        },
        ReportRow {
            task: "corloc@0.5".into(),
            method: "lost".into(),
            mean: agg.corloc,
            std: binomial_std(agg.corloc),
            n: agg.n,
            ..base
        },
    ])
}

/// Discovered (predicted, ground-truth) box pairs and their IoUs over the
/// whole test set.
pub fn discover_boxes(
    ctx: &EvalContext,
    model: &AnyModel<f32>,
) -> Result<(
    Vec<(prunelens_core::dataset::BoundingBox, prunelens_core::dataset::BoundingBox)>,
    Vec<f64>,
)> {
    let settings = ctx.cfg.lost_settings();
    let boxes = map_indexed(ctx.test_data.len(), |i| {
        let trace = model.trace(&ctx.test_data[i].image)?;
        discover_box(model, &trace, &settings)
    });
    let mut pairs = Vec::with_capacity(ctx.test_data.len());
    let mut ious = Vec::with_capacity(ctx.test_data.len());
    for (i, b) in boxes.into_iter().enumerate() {
        let pred = b.with_context(|| format!("object discovery on image {i}"))?;
        let gt = ctx.test_data[i].bbox;
        ious.push(iou(&pred, &gt));
        pairs.push((pred, gt));
    }
    Ok((pairs, ious))
}

/// Distortion-robustness: accuracy per (kind, level) over the full test set,
/// including each kind's identity level as the clean baseline.
fn ha_rows(
    ctx: &EvalContext,
    entry: &ManifestEntry,
    model: &AnyModel<f32>,
) -> Result<Vec<ReportRow>> {
    let plans = ctx.cfg.distortion_plans()?;
    let rows = prunelens_core::alignment::distortion_sweep(
        model,
        ctx.test_data,
        &plans,
        ctx.cfg.distortion_seed(),
    )?;
    Ok(rows
        .into_iter()
        .map(|r| ReportRow {
            task: "distortion-accuracy".into(),
            kind: r.kind.name().into(),
            level: Some(r.level),
            mean: r.accuracy,
            std: binomial_std(r.accuracy),
            n: r.n,
            ..ctx.row_base(entry)
        })
        .collect())
}

/// Saliency maps stacked into one `[N, H, W]` f32 array for persistence.
pub fn stack_maps(maps: &[SaliencyMap]) -> Result<Tensor<f32>> {
    let first = maps.first().context("no maps to stack")?;
    let (h, w) = (first.values.shape()[0], first.values.shape()[1]);
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        anyhow::ensure!(m.values.shape() == [h, w], "maps have mixed shapes");
        data.extend(m.values.iter().map(|&v| v as f32));
    }
    Ok(Tensor::new([maps.len(), h, w], data))
}
