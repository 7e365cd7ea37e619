//! Minimal PNG plotting: metric-vs-sparsity line charts with sweet-spot
//! markers, and heatmap rendering for saliency maps. Text uses a built-in
//! 5x7 bitmap font so the binary has no font-file dependencies.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

use prunelens_core::attribution::SaliencyMap;

use crate::report::SweetSpotReport;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
// Plot area bounds inside the canvas.
const LEFT: u32 = 78;
const RIGHT: u32 = 616;
const TOP: u32 = 48;
const BOTTOM: u32 = 430;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([20, 20, 20]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const SPOT: Rgb<u8> = Rgb([214, 39, 40]);

/// Matplotlib-like categorical palette.
const PALETTE: [Rgb<u8>; 10] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
    Rgb([188, 189, 34]),
    Rgb([23, 190, 207]),
];

/// One polyline: points plus the indices to flag with a sweet-spot marker.
pub struct PlotLine {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub marks: Vec<usize>,
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<PlotLine>,
}

impl LinePlot {
    pub fn render(&self) -> RgbImage {
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BG);
        let (x_min, x_max) = padded_range(self.lines.iter().flat_map(|l| l.xs.iter().copied()));
        let (y_min, y_max) = padded_range(self.lines.iter().flat_map(|l| l.ys.iter().copied()));
        let to_px = |x: f64, y: f64| -> (i64, i64) {
            let fx = (x - x_min) / (x_max - x_min);
            let fy = (y - y_min) / (y_max - y_min);
            (
                LEFT as i64 + (fx * f64::from(RIGHT - LEFT)).round() as i64,
                BOTTOM as i64 - (fy * f64::from(BOTTOM - TOP)).round() as i64,
            )
        };

        // Grid and tick labels: 5 divisions per axis.
        for i in 0..=5 {
            let xv = x_min + (x_max - x_min) * f64::from(i) / 5.0;
            let yv = y_min + (y_max - y_min) * f64::from(i) / 5.0;
            let (px, _) = to_px(xv, y_min);
            let (_, py) = to_px(x_min, yv);
            vline(&mut img, px, TOP as i64, BOTTOM as i64, GRID);
            hline(&mut img, LEFT as i64, RIGHT as i64, py, GRID);
            let xl = format_tick(xv);
            draw_text(
                &mut img,
                px - (text_width(&xl, 1) / 2) as i64,
                BOTTOM as i64 + 8,
                &xl,
                1,
                FG,
            );
            let yl = format_tick(yv);
            draw_text(
                &mut img,
                LEFT as i64 - 8 - text_width(&yl, 1) as i64,
                py - 3,
                &yl,
                1,
                FG,
            );
        }
        // Axes on top of the grid.
        hline(&mut img, LEFT as i64, RIGHT as i64, BOTTOM as i64, FG);
        vline(&mut img, LEFT as i64, TOP as i64, BOTTOM as i64, FG);

        // Title and axis labels.
        draw_text(
            &mut img,
            (WIDTH as i64 - text_width(&self.title, 2) as i64) / 2,
            14,
            &self.title,
            2,
            FG,
        );
        draw_text(
            &mut img,
            (WIDTH as i64 - text_width(&self.x_label, 1) as i64) / 2,
            HEIGHT as i64 - 22,
            &self.x_label,
            1,
            FG,
        );
        draw_text(&mut img, 6, TOP as i64 - 16, &self.y_label, 1, FG);

        for (li, line) in self.lines.iter().enumerate() {
            let color = PALETTE[li % PALETTE.len()];
            let pts: Vec<(i64, i64)> = line
                .xs
                .iter()
                .zip(&line.ys)
                .map(|(&x, &y)| to_px(x, y))
                .collect();
            for w in pts.windows(2) {
                draw_segment(&mut img, w[0], w[1], color);
            }
            for &(px, py) in &pts {
                fill_rect(&mut img, px - 2, py - 2, px + 2, py + 2, color);
            }
            for &mi in &line.marks {
                if let Some(&(px, py)) = pts.get(mi) {
                    draw_ring(&mut img, px, py, 6, SPOT);
                    draw_ring(&mut img, px, py, 7, SPOT);
                }
            }
        }

        // Legend when lines are labelled.
        let labelled: Vec<(usize, &PlotLine)> = self
            .lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.label.is_empty())
            .collect();
        if !labelled.is_empty() {
            let lw = labelled
                .iter()
                .map(|(_, l)| text_width(&l.label, 1))
                .max()
                .unwrap_or(0) as i64
                + 26;
            let lx = RIGHT as i64 - lw - 6;
            let mut ly = TOP as i64 + 6;
            for (li, line) in labelled {
                let color = PALETTE[li % PALETTE.len()];
                fill_rect(&mut img, lx, ly + 2, lx + 14, ly + 4, color);
                draw_text(&mut img, lx + 20, ly, &line.label, 1, FG);
                ly += 12;
            }
        }
        img
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.render()
            .save(path)
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Finite plotting range with ~5% padding; degenerate spans are widened.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span == 0.0 {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.1 + 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo - span * 0.05, hi + span * 0.05)
}

/// Compact tick label: up to three decimals, trailing zeros trimmed.
fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 10_000.0 || v.abs() < 0.001) {
        return format!("{v:.1e}");
    }
    let mut s = format!("{v:.3}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        s.pop();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if (0..i64::from(WIDTH)).contains(&x) && (0..i64::from(HEIGHT)).contains(&y) {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn hline(img: &mut RgbImage, x0: i64, x1: i64, y: i64, c: Rgb<u8>) {
    for x in x0.min(x1)..=x0.max(x1) {
        put(img, x, y, c);
    }
}

fn vline(img: &mut RgbImage, x: i64, y0: i64, y1: i64, c: Rgb<u8>) {
    for y in y0.min(y1)..=y0.max(y1) {
        put(img, x, y, c);
    }
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
    for y in y0.min(y1)..=y0.max(y1) {
        hline(img, x0, x1, y, c);
    }
}

/// Bresenham line.
fn draw_segment(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Midpoint circle outline.
fn draw_ring(img: &mut RgbImage, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
    let (mut x, mut y, mut d) = (r, 0i64, 1 - r);
    while x >= y {
        for (dx, dy) in [
            (x, y),
            (y, x),
            (-y, x),
            (-x, y),
            (-x, -y),
            (-y, -x),
            (y, -x),
            (x, -y),
        ] {
            put(img, cx + dx, cy + dy, c);
        }
        y += 1;
        if d < 0 {
            d += 2 * y + 1;
        } else {
            x -= 1;
            d += 2 * (y - x) + 1;
        }
    }
}

/// 5x7 glyphs; each byte is one row, low 5 bits used, MSB-side leftmost.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x0E, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '@' => [0x0E, 0x11, 0x01, 0x0D, 0x15, 0x15, 0x0E],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        'a' => [0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F],
        'b' => [0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E],
        'c' => [0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E],
        'd' => [0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F],
        'e' => [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        'f' => [0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08],
        'g' => [0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E],
        'h' => [0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11],
        'i' => [0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E],
        'j' => [0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C],
        'k' => [0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12],
        'l' => [0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'm' => [0x00, 0x00, 0x1A, 0x15, 0x15, 0x15, 0x15],
        'n' => [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11],
        'o' => [0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E],
        'p' => [0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10],
        'q' => [0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01],
        'r' => [0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10],
        's' => [0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E],
        't' => [0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06],
        'u' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D],
        'v' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'w' => [0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A],
        'x' => [0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11],
        'y' => [0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E],
        'z' => [0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F],
        _ => [0x00; 7], // space and anything unmapped
    }
}

fn text_width(s: &str, scale: u32) -> u32 {
    s.chars().count() as u32 * 6 * scale
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, s: &str, scale: u32, c: Rgb<u8>) {
    let scale = i64::from(scale);
    let mut cx = x;
    for ch in s.chars() {
        let g = glyph(ch.to_ascii_lowercase());
        for (row, bits) in g.iter().enumerate() {
            for col in 0..5 {
                if bits & (0x10 >> col) != 0 {
                    let px = cx + col as i64 * scale;
                    let py = y + row as i64 * scale;
                    fill_rect(img, px, py, px + scale - 1, py + scale - 1, c);
                }
            }
        }
        cx += 6 * scale;
    }
}

/// File-name-safe form of a task/method label.
pub fn sanitize(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        match c {
            '@' => out.push_str("_at_"),
            'a'..='z' | 'A'..='Z' | '0'..='9' => out.push(c.to_ascii_lowercase()),
            _ => out.push('_'),
        }
    }
    out
}

/// Emits one plot per plotted series family:
/// accuracy, each (rma|rra, method), each (iou|corloc, lost), and one plot
/// per distortion kind with a line per level. Returns the written paths.
pub fn plot_report(report: &SweetSpotReport, plot_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(plot_dir)?;
    let mut written = Vec::new();

    // Non-distortion series: one file each.
    for s in report
        .series
        .iter()
        .filter(|s| s.task != "distortion-accuracy")
    {
        let name = if s.method.is_empty() {
            sanitize(&s.task)
        } else {
            format!("{}_{}", sanitize(&s.task), sanitize(&s.method))
        };
        let title = if s.method.is_empty() {
            s.task.clone()
        } else {
            format!("{} ({})", s.task, s.method)
        };
        let plot = LinePlot {
            title,
            x_label: "sparsity (prunable weights)".into(),
            y_label: s.task.clone(),
            lines: vec![PlotLine {
                label: String::new(),
                xs: s.sparsity.clone(),
                ys: s.metric.clone(),
                marks: s.sweet_spot_indices.clone(),
            }],
        };
        let path = plot_dir.join(format!("{name}.png"));
        plot.save(&path)?;
        written.push(path);
    }

    // Distortion series: group by kind, one line per level.
    let mut kinds: Vec<&str> = Vec::new();
    for s in &report.series {
        if s.task == "distortion-accuracy" && !kinds.contains(&s.kind.as_str()) {
            kinds.push(&s.kind);
        }
    }
    for kind in kinds {
        let lines: Vec<PlotLine> = report
            .series
            .iter()
            .filter(|s| s.task == "distortion-accuracy" && s.kind == kind)
            .map(|s| PlotLine {
                label: format!("level {}", s.level.map(|l| l.to_string()).unwrap_or_default()),
                xs: s.sparsity.clone(),
                ys: s.metric.clone(),
                marks: s.sweet_spot_indices.clone(),
            })
            .collect();
        let plot = LinePlot {
            title: format!("accuracy under {kind}"),
            x_label: "sparsity (prunable weights)".into(),
            y_label: "accuracy".into(),
            lines,
        };
        let path = plot_dir.join(format!("distortion_{}.png", sanitize(kind)));
        plot.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Renders a saliency map as a hot-colormap PNG, upscaled by `scale`.
pub fn heatmap_png(map: &SaliencyMap, scale: u32, path: &Path) -> Result<()> {
    let (h, w) = (map.values.shape()[0], map.values.shape()[1]);
    let max = map.values.iter().copied().fold(0.0_f64, f64::max);
    let scale = scale.max(1);
    let mut img = RgbImage::new(w as u32 * scale, h as u32 * scale);
    for y in 0..h {
        for x in 0..w {
            let t = if max > 0.0 {
                map.values.data()[y * w + x] / max
            } else {
                0.0
            };
            let px = hot(t);
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(x as u32 * scale + dx, y as u32 * scale + dy, px);
                }
            }
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

/// Black -> red -> yellow -> white colormap on t in [0,1].
fn hot(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let ch = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SweepConfig;
    use crate::evals::ReportRow;
    use crate::report::sweet_spot_report;

    #[test]
    fn renders_and_saves_a_line_plot() {
        let dir = tempfile::tempdir().unwrap();
        let plot = LinePlot {
            title: "accuracy".into(),
            x_label: "sparsity".into(),
            y_label: "accuracy".into(),
            lines: vec![PlotLine {
                label: "run".into(),
                xs: vec![0.0, 0.2, 0.36, 0.488],
                ys: vec![0.95, 0.96, 0.94, 0.90],
                marks: vec![1],
            }],
        };
        let path = dir.path().join("p.png");
        plot.save(&path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (WIDTH, HEIGHT));
        // Something non-white was drawn.
        assert!(img.pixels().any(|p| *p != BG));
        // A sweet-spot ring in the marker color exists.
        assert!(img.pixels().any(|p| *p == SPOT));
    }

    #[test]
    fn degenerate_ranges_still_render() {
        let plot = LinePlot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            lines: vec![PlotLine {
                label: String::new(),
                xs: vec![0.5, 0.5],
                ys: vec![1.0, 1.0],
                marks: vec![],
            }],
        };
        let img = plot.render();
        assert!(img.pixels().any(|p| *p != BG));
    }

    #[test]
    fn tick_formatting_is_compact() {
        assert_eq!(format_tick(0.25), "0.25");
        assert_eq!(format_tick(1.0), "1");
        assert_eq!(format_tick(-0.0001), "-1.0e-4");
        assert_eq!(format_tick(0.0), "0");
        assert_eq!(format_tick(0.3000001), "0.3");
    }

    #[test]
    fn sanitizes_task_labels() {
        assert_eq!(sanitize("corloc@0.5"), "corloc_at_0_5");
        assert_eq!(sanitize("guided_gradcam"), "guided_gradcam");
        assert_eq!(sanitize("distortion-accuracy"), "distortion_accuracy");
    }

    #[test]
    fn one_file_per_series_family() {
        let cfg = SweepConfig::default();
        let mk = |entry: usize, task: &str, method: &str, kind: &str, level: Option<f32>| ReportRow {
            config_hash: "x".into(),
            entry,
            sparsity_prunable: entry as f64 * 0.2,
            sparsity_all: entry as f64 * 0.19,
            task: task.into(),
            method: method.into(),
            kind: kind.into(),
            level,
            mean: 0.5 + entry as f64 * 0.01,
            std: 0.0,
            n: 4,
            degenerate: 0,
        };
        let mut rows = Vec::new();
        for e in 0..3 {
            rows.push(mk(e, "accuracy", "", "", None));
            rows.push(mk(e, "rma", "gradcam", "", None));
            rows.push(mk(e, "rma", "ig", "", None));
            rows.push(mk(e, "iou", "lost", "", None));
            rows.push(mk(e, "distortion-accuracy", "", "contrast", Some(0.5)));
            rows.push(mk(e, "distortion-accuracy", "", "contrast", Some(1.0)));
            rows.push(mk(e, "distortion-accuracy", "", "rotation", Some(90.0)));
        }
        let report = sweet_spot_report(&cfg, &rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = plot_report(&report, dir.path()).unwrap();
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"accuracy.png".to_string()));
        assert!(names.contains(&"rma_gradcam.png".to_string()));
        assert!(names.contains(&"rma_ig.png".to_string()));
        assert!(names.contains(&"iou_lost.png".to_string()));
        assert!(names.contains(&"distortion_contrast.png".to_string()));
        assert!(names.contains(&"distortion_rotation.png".to_string()));
        assert_eq!(names.len(), 6);
        assert!(written.iter().all(|p| p.exists()));
    }

    #[test]
    fn heatmap_scales_and_colors() {
        use prunelens_core::tensor::Tensor;
        let values = Tensor::new([2, 2], vec![0.0, 0.5, 0.75, 1.0]);
        let map = SaliencyMap {
            values,
            degenerate: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        heatmap_png(&map, 4, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (8, 8));
        assert_eq!(*img.get_pixel(0, 0), Rgb([0, 0, 0]));
        assert_eq!(*img.get_pixel(7, 7), Rgb([255, 255, 255]));
    }
}
