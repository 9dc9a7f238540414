//! Minimal SVG line charts of metric series.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use depo_core::experiment::{read_metrics, StepMetrics};

const W: f64 = 720.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// Moving average over `window` points so noisy per-step values stay readable.
fn smooth(points: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    let window = window.max(1);
    points
        .iter()
        .enumerate()
        .map(|(i, &(x, _))| {
            let lo = i.saturating_sub(window - 1);
            let ys = &points[lo..=i];
            (x, ys.iter().map(|p| p.1).sum::<f64>() / ys.len() as f64)
        })
        .collect()
}

fn svg_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        out,
        r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for (v, anchor_y) in [(y0, H - PAD), (y1, PAD)] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0, anchor_y + 4.0);
    }
    for (v, anchor_x) in [(x0, PAD), (x1, W - PAD)] {
        let _ = writeln!(out, r#"<text x="{anchor_x}" y="{}" text-anchor="middle">{v}</text>"#, H - PAD + 16.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (j, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(d, "{}{:.1},{:.1} ", if j == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        let ly = PAD + 16.0 * i as f64;
        let _ = writeln!(out, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - 170.0, W - 150.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, W - 145.0, ly + 4.0, s.label);
    }
    out.push_str("</svg>\n");
    out
}

fn series(label: &str, metrics: &[StepMetrics], f: impl Fn(&StepMetrics) -> Option<f64>) -> Series {
    let raw: Vec<(f64, f64)> = metrics.iter().filter_map(|m| f(m).map(|y| (m.step as f64, y))).collect();
    Series { label: label.to_string(), points: smooth(&raw, 20) }
}

/// Metrics files under `input`: the file itself, `input/metrics.jsonl`, or
/// one per subdirectory (comparison and ablation outputs).
fn collect_runs(input: &Path) -> Result<Vec<(String, Vec<StepMetrics>)>> {
    let load = |path: &Path| -> Result<Vec<StepMetrics>> { Ok(read_metrics(path)?.1) };
    if input.is_file() {
        return Ok(vec![("run".into(), load(input)?)]);
    }
    let direct = input.join("metrics.jsonl");
    if direct.is_file() {
        return Ok(vec![("run".into(), load(&direct)?)]);
    }
    let mut runs = Vec::new();
    let entries = std::fs::read_dir(input).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", input.display()))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        let path = dir.join("metrics.jsonl");
        if path.is_file() {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            runs.push((name, load(&path)?));
        }
    }
    if runs.is_empty() {
        bail!("no metrics.jsonl found under {}", input.display());
    }
    Ok(runs)
}

/// Writes `reward.svg`, `filter_ratio.svg` and `tracking.svg` to `out`.
pub fn render(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let runs = collect_runs(input)?;
    std::fs::create_dir_all(out).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", out.display()))?;
    let by_run = |f: &dyn Fn(&StepMetrics) -> Option<f64>| -> Vec<Series> {
        runs.iter().map(|(name, m)| series(name, m, f)).collect()
    };
    let mut tracking = Vec::new();
    for (name, m) in &runs {
        tracking.push(series(&format!("{name} predicted"), m, |x| x.mean_predicted));
        tracking.push(series(&format!("{name} realized"), m, |x| x.mean_realized));
    }
    let charts = [
        ("reward.svg", svg_chart("Mean training reward", "reward", &by_run(&|m| m.mean_reward))),
        ("filter_ratio.svg", svg_chart("Filter ratio", "dropped / candidates", &by_run(&|m| Some(m.filter_ratio)))),
        ("tracking.svg", svg_chart("Estimator tracking", "success rate", &tracking)),
    ];
    let mut written = Vec::new();
    for (name, body) in charts {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
