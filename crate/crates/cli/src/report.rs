//! Report assembly: stable row ordering, CSV and JSON emission, and
//! sweet-spot extraction over the per-entry metric series.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use prunelens_core::sweetspot::{find_sweet_spot_indices, SeriesPoint};

use crate::config::{SweepConfig, SweetSpotMode};
use crate::evals::ReportRow;

/// The fixed CSV column schema. Changing this breaks downstream consumers.
pub const CSV_HEADER: &str =
    "config_hash,entry,sparsity_prunable,sparsity_all,task,method,kind,level,mean,std,n,degenerate";

/// Task emission order within one pool entry.
const TASK_ORDER: [&str; 6] = [
    "accuracy",
    "rma",
    "rra",
    "iou",
    "corloc@0.5",
    "distortion-accuracy",
];

fn task_rank(task: &str) -> usize {
    TASK_ORDER
        .iter()
        .position(|t| *t == task)
        .unwrap_or(TASK_ORDER.len())
}

/// Orders rows by (entry, task, method, distortion plan position).
/// Distortion kinds and levels follow their order in the config so the CSV
/// reads in the same order the sweep was declared.
pub fn sort_rows(cfg: &SweepConfig, rows: &mut [ReportRow]) {
    let kind_rank = |kind: &str| {
        cfg.distortions
            .plans
            .iter()
            .position(|p| p.kind == kind)
            .unwrap_or(usize::MAX)
    };
    let level_rank = |kind: &str, level: Option<f32>| -> usize {
        let Some(level) = level else { return 0 };
        cfg.distortions
            .plans
            .iter()
            .find(|p| p.kind == kind)
            .and_then(|p| p.levels.iter().position(|&l| l == level))
            .unwrap_or(usize::MAX)
    };
    rows.sort_by_key(|r| {
        (
            r.entry,
            task_rank(&r.task),
            r.method.clone(),
            kind_rank(&r.kind),
            level_rank(&r.kind, r.level),
        )
    });
}

/// One CSV line; numeric fields use shortest round-trip decimal form.
pub fn csv_line(row: &ReportRow) -> String {
    let fields = [
        row.config_hash.clone(),
        row.entry.to_string(),
        row.sparsity_prunable.to_string(),
        row.sparsity_all.to_string(),
        row.task.clone(),
        row.method.clone(),
        row.kind.clone(),
        row.level.map(|l| l.to_string()).unwrap_or_default(),
        row.mean.to_string(),
        row.std.to_string(),
        row.n.to_string(),
        row.degenerate.to_string(),
    ];
    debug_assert!(
        fields.iter().all(|f| !f.contains(',') && !f.contains('\n')),
        "CSV fields must not need quoting"
    );
    fields.join(",")
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::with_capacity(rows.len() * 96 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&csv_line(row));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn write_rows_json(path: &Path, rows: &[ReportRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_string_pretty(rows)?;
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}

/// One plotted line: a metric's trajectory across the pool, paired with the
/// accuracy trajectory so joint-improvement points can be flagged.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesReport {
    pub task: String,
    pub method: String,
    pub kind: String,
    pub level: Option<f32>,
    /// Pool entry indices, ascending.
    pub entries: Vec<usize>,
    /// Sparsity over prunable weights per entry (the x axis).
    pub sparsity: Vec<f64>,
    /// Plain test accuracy per entry.
    pub accuracy: Vec<f64>,
    /// The metric's mean per entry.
    pub metric: Vec<f64>,
    /// Positions in `entries` where accuracy and metric improve together.
    pub sweet_spot_indices: Vec<usize>,
    /// The sparsity levels at those positions.
    pub sweet_spots: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweetSpotReport {
    pub config_hash: String,
    pub mode: SweetSpotMode,
    pub strict: bool,
    pub series: Vec<SeriesReport>,
}

/// Builds the per-series sweet-spot report from sorted rows.
///
/// Every distinct (task, method, kind, level) line becomes a series; the
/// accuracy series itself is included (its "metric" is accuracy, so its
/// sweet spots are simply accuracy improvements).
pub fn sweet_spot_report(cfg: &SweepConfig, rows: &[ReportRow]) -> Result<SweetSpotReport> {
    let mut acc_by_entry: Vec<Option<f64>> = Vec::new();
    for row in rows.iter().filter(|r| r.task == "accuracy") {
        if acc_by_entry.len() <= row.entry {
            acc_by_entry.resize(row.entry + 1, None);
        }
        acc_by_entry[row.entry] = Some(row.mean);
    }

    // Group rows by series key, preserving first-seen order of sorted rows.
    let mut keys: Vec<(String, String, String, Option<f32>)> = Vec::new();
    let mut groups: Vec<Vec<&ReportRow>> = Vec::new();
    for row in rows {
        let key = (
            row.task.clone(),
            row.method.clone(),
            row.kind.clone(),
            row.level,
        );
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(row),
            None => {
                keys.push(key);
                groups.push(vec![row]);
            }
        }
    }

    let strict = cfg.sweet_spots.strict;
    let mut series = Vec::with_capacity(groups.len());
    for (key, mut group) in keys.into_iter().zip(groups) {
        group.sort_by_key(|r| r.entry);
        let mut entries = Vec::with_capacity(group.len());
        let mut sparsity = Vec::with_capacity(group.len());
        let mut accuracy = Vec::with_capacity(group.len());
        let mut metric = Vec::with_capacity(group.len());
        for row in &group {
            let acc = acc_by_entry
                .get(row.entry)
                .copied()
                .flatten()
                .with_context(|| format!("no accuracy row for pool entry {}", row.entry))?;
            entries.push(row.entry);
            sparsity.push(row.sparsity_prunable);
            accuracy.push(acc);
            metric.push(row.mean);
        }
        let points: Vec<SeriesPoint> = sparsity
            .iter()
            .zip(&accuracy)
            .zip(&metric)
            .map(|((&s, &a), &m)| SeriesPoint {
                sparsity: s,
                accuracy: a,
                metric: m,
            })
            .collect();
        if points.windows(2).any(|w| w[0].sparsity > w[1].sparsity) {
            bail!("series {key:?} is not ordered by increasing sparsity");
        }
        let sweet_spot_indices = match cfg.sweet_spots.mode {
            SweetSpotMode::Trajectory => find_sweet_spot_indices(&points, strict),
            SweetSpotMode::VsDense => vs_dense_indices(&points, strict),
        };
        let sweet_spots = sweet_spot_indices.iter().map(|&i| sparsity[i]).collect();
        series.push(SeriesReport {
            task: key.0,
            method: key.1,
            kind: key.2,
            level: key.3,
            entries,
            sparsity,
            accuracy,
            metric,
            sweet_spot_indices,
            sweet_spots,
        });
    }
    Ok(SweetSpotReport {
        config_hash: cfg.config_hash(),
        mode: cfg.sweet_spots.mode,
        strict,
        series,
    })
}

/// Entries that beat the first (dense) entry on both accuracy and metric,
/// rather than their immediate predecessor.
fn vs_dense_indices(points: &[SeriesPoint], strict: bool) -> Vec<usize> {
    if points.len() < 2 {
        return Vec::new();
    }
    let improves = |a: f64, b: f64| if strict { b > a } else { b >= a };
    let base = points[0];
    (1..points.len())
        .filter(|&i| {
            improves(base.accuracy, points[i].accuracy) && improves(base.metric, points[i].metric)
        })
        .collect()
}

pub fn write_sweet_spots(path: &Path, report: &SweetSpotReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_string_pretty(report)?;
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(entry: usize, task: &str, method: &str, mean: f64) -> ReportRow {
        ReportRow {
            config_hash: "abc123def456".into(),
            entry,
            sparsity_prunable: entry as f64 * 0.2,
            sparsity_all: entry as f64 * 0.19,
            task: task.into(),
            method: method.into(),
            kind: String::new(),
            level: None,
            mean,
            std: 0.0,
            n: 10,
            degenerate: 0,
        }
    }

    fn ha_row(entry: usize, kind: &str, level: f32, mean: f64) -> ReportRow {
        ReportRow {
            task: "distortion-accuracy".into(),
            kind: kind.into(),
            level: Some(level),
            ..row(entry, "distortion-accuracy", "", mean)
        }
    }

    #[test]
    fn header_and_line_shape() {
        assert_eq!(CSV_HEADER.split(',').count(), 12);
        let line = csv_line(&row(3, "rma", "gradcam", 0.5));
        assert_eq!(line.split(',').count(), 12);
        assert_eq!(
            line,
            "abc123def456,3,0.6000000000000001,0.5700000000000001,rma,gradcam,,,0.5,0,10,0"
        );
        let hline = csv_line(&ha_row(1, "contrast", 0.25, 0.75));
        assert!(hline.contains(",distortion-accuracy,,contrast,0.25,0.75,"));
    }

    #[test]
    fn rows_sort_by_entry_then_task_then_method() {
        let cfg = SweepConfig::default();
        let mut rows = vec![
            ha_row(0, "greyscale", 1.0, 0.8),
            row(1, "accuracy", "", 0.9),
            row(0, "rra", "ig", 0.4),
            row(0, "rma", "ig", 0.4),
            row(0, "rma", "gradcam", 0.5),
            row(0, "accuracy", "", 0.95),
        ];
        sort_rows(&cfg, &mut rows);
        let order: Vec<(usize, &str, &str)> = rows
            .iter()
            .map(|r| (r.entry, r.task.as_str(), r.method.as_str()))
            .collect();
        assert_eq!(
            order,
            vec![
                (0, "accuracy", ""),
                (0, "rma", "gradcam"),
                (0, "rma", "ig"),
                (0, "rra", "ig"),
                (0, "distortion-accuracy", ""),
                (1, "accuracy", ""),
            ]
        );
    }

    #[test]
    fn ha_rows_follow_config_plan_order() {
        let cfg = SweepConfig::default();
        let plans = &cfg.distortions.plans;
        assert!(plans.len() >= 2, "default config should have several kinds");
        let mut rows = Vec::new();
        // Insert in reverse plan order with reversed levels.
        for p in plans.iter().rev() {
            for &l in p.levels.iter().rev() {
                rows.push(ha_row(0, &p.kind, l, 0.5));
            }
        }
        sort_rows(&cfg, &mut rows);
        let mut expect = Vec::new();
        for p in plans {
            for &l in &p.levels {
                expect.push((p.kind.clone(), l));
            }
        }
        let got: Vec<(String, f32)> = rows
            .iter()
            .map(|r| (r.kind.clone(), r.level.unwrap()))
            .collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn csv_roundtrip_field_count_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let rows = vec![row(0, "accuracy", "", 0.9), row(1, "accuracy", "", 0.8)];
        write_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.clone().count(), 2);
        assert!(lines.all(|l| l.split(',').count() == 12));
    }

    #[test]
    fn trajectory_sweet_spots_flag_joint_improvements() {
        let cfg = SweepConfig::default();
        let rows = vec![
            row(0, "accuracy", "", 0.70),
            row(1, "accuracy", "", 0.72),
            row(2, "accuracy", "", 0.69),
            row(0, "rma", "ig", 0.50),
            row(1, "rma", "ig", 0.60),
            row(2, "rma", "ig", 0.70),
        ];
        let report = sweet_spot_report(&cfg, &rows).unwrap();
        let rma = report
            .series
            .iter()
            .find(|s| s.task == "rma")
            .expect("rma series present");
        assert_eq!(rma.sweet_spot_indices, vec![1]);
        assert_eq!(rma.sweet_spots, vec![0.2]);
        assert_eq!(rma.accuracy, vec![0.70, 0.72, 0.69]);
    }

    #[test]
    fn vs_dense_mode_compares_to_entry_zero() {
        let mut cfg = SweepConfig::default();
        cfg.sweet_spots.mode = SweetSpotMode::VsDense;
        let rows = vec![
            row(0, "accuracy", "", 0.70),
            row(1, "accuracy", "", 0.72),
            row(2, "accuracy", "", 0.71),
            row(0, "rma", "ig", 0.50),
            row(1, "rma", "ig", 0.45),
            row(2, "rma", "ig", 0.55),
        ];
        let report = sweet_spot_report(&cfg, &rows).unwrap();
        let rma = report.series.iter().find(|s| s.task == "rma").unwrap();
        // Entry 1 beats dense on accuracy only; entry 2 beats it on both.
        assert_eq!(rma.sweet_spot_indices, vec![2]);
    }

    #[test]
    fn missing_accuracy_row_is_an_error() {
        let cfg = SweepConfig::default();
        let rows = vec![row(0, "rma", "ig", 0.5)];
        assert!(sweet_spot_report(&cfg, &rows).is_err());
    }
}
