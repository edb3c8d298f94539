//! Per-metric CSV and SVG line charts from a telemetry file.
//!
//! CSV values are written with shortest round-trip formatting, so parsing a
//! row gives back the logged `f64` bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use varsynth_core::telemetry::{read_jsonl, TelemetryRecord};

pub type Metric = (&'static str, fn(&TelemetryRecord) -> f64);

pub const METRICS: [Metric; 4] = [
    ("entropy", |r| r.entropy),
    ("group_accuracy", |r| r.group_accuracy),
    ("label_correct", |r| f64::from(u8::from(r.label_correct_vs_oracle))),
    ("objective", |r| r.objective),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOutput {
    pub csv: Vec<PathBuf>,
    pub svg: Vec<PathBuf>,
    pub rows: usize,
    pub truncated_tail: bool,
}

pub fn emit_plots(log_path: &Path, out_dir: &Path) -> Result<PlotOutput> {
    let log = read_jsonl(log_path)?;
    if log.truncated_tail {
        log::warn!("{}: skipped a partial final line", log_path.display());
    }
    if log.records.is_empty() {
        bail!("{} holds no telemetry records", log_path.display());
    }
    std::fs::create_dir_all(out_dir)?;
    let mut out = PlotOutput {
        csv: Vec::new(),
        svg: Vec::new(),
        rows: log.records.len(),
        truncated_tail: log.truncated_tail,
    };
    for (name, get) in METRICS {
        let points: Vec<(usize, f64)> = log.records.iter().map(|r| (r.step, get(r))).collect();
        let csv_path = out_dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["step", "value"])?;
        for (step, value) in &points {
            w.serialize((step, value))?;
        }
        w.flush()?;
        let svg_path = out_dir.join(format!("{name}.svg"));
        std::fs::write(&svg_path, line_chart(name, &points))?;
        out.csv.push(csv_path);
        out.svg.push(svg_path);
    }
    Ok(out)
}

/// Reads a metric CSV back as `(step, value)` rows.
pub fn read_metric_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<(usize, f64)>, _>>()?)
}

/// One polyline through every point, in record order.
pub fn line_chart(title: &str, points: &[(usize, f64)]) -> String {
    let (w, h, pad) = (800.0, 400.0, 50.0);
    let finite = || points.iter().map(|p| p.1).filter(|v| v.is_finite());
    let (mut lo, mut hi) = (finite().fold(f64::INFINITY, f64::min), finite().fold(f64::NEG_INFINITY, f64::max));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let max_step = points.iter().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    let x = |s: usize| pad + (w - 2.0 * pad) * s as f64 / max_step;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="25" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    for (v, anchor_y) in [(hi, pad), (lo, h - pad)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{anchor_y}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.4}</text>"#, pad - 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">step {}</text>"#, w - pad, h - pad + 18.0, max_step);
    let coords: Vec<String> = points
        .iter()
        .filter(|p| p.1.is_finite())
        .map(|&(s, v)| format!("{:.2},{:.2}", x(s), y(v)))
        .collect();
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="1" points="{}"/>"#, coords.join(" "));
    svg.push_str("</svg>\n");
    svg
}
