//! Post-processing of a run directory: suite-wide references, metrics CSV,
//! the markdown summary table and SVG learning curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::{read_curves, Manifest};
use crate::io::write_atomic;
use crate::lifelong::{stored_rows, CurvePoint, Method};
use crate::metrics::{compute_metrics, write_metrics_csv, MetricsRow, PerformanceMatrix};

/// Table values are shown multiplied by this factor.
pub const DISPLAY_SCALE: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct RunData {
    pub order: String,
    pub method: String,
    pub matrix: PerformanceMatrix,
    /// False when the matrix was rebuilt from the checkpoints of an unfinished run.
    pub complete: bool,
    pub curves: Vec<CurvePoint>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub markdown: String,
    pub rows: Vec<MetricsRow>,
    pub warnings: Vec<String>,
    pub charts: Vec<PathBuf>,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let e = e.map_err(|e| Error::io(dir, e))?;
        if e.path().is_dir() {
            out.push((e.file_name().to_string_lossy().into_owned(), e.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn task_labels(root: &Path, order: &str) -> Option<Vec<String>> {
    let text = fs::read_to_string(root.join("manifest.json")).ok()?;
    let manifest: Manifest = serde_json::from_str(&text).ok()?;
    let spec = manifest.config.orders.iter().find(|o| o.name() == order)?;
    let tasks = manifest.config.order_tasks(spec).ok()?;
    Some(tasks.iter().map(|t| t.label()).collect())
}

/// Collects every run under `root/runs`, falling back to checkpoint records
/// for runs without a final matrix.
pub fn collect_runs(root: &Path, warnings: &mut Vec<String>) -> Result<Vec<RunData>> {
    let runs = root.join("runs");
    if !runs.is_dir() {
        return Err(Error::config(format!("{} contains no runs", root.display())));
    }
    let mut out = Vec::new();
    for (order, odir) in sorted_subdirs(&runs)? {
        for (method, mdir) in sorted_subdirs(&odir)? {
            let matrix_path = mdir.join("matrix.csv");
            let (matrix, complete) = if matrix_path.exists() {
                (PerformanceMatrix::load(&matrix_path)?, true)
            } else {
                let rows = stored_rows(&mdir.join("checkpoints"))?;
                if rows.is_empty() {
                    warnings.push(format!("{order}/{method}: no completed task, skipped"));
                    continue;
                }
                let tasks = task_labels(root, &order)
                    .filter(|t| t.len() == rows[0].len())
                    .unwrap_or_else(|| (0..rows[0].len()).map(|j| format!("task{j}")).collect());
                warnings.push(format!(
                    "{order}/{method}: matrix.csv missing, using {} of {} completed tasks",
                    rows.len(),
                    tasks.len()
                ));
                (PerformanceMatrix::new(tasks, rows)?, false)
            };
            let curves_path = mdir.join("curves.csv");
            let curves = if curves_path.exists() { read_curves(&curves_path)? } else { Vec::new() };
            out.push(RunData {
                order: order.clone(),
                method,
                matrix,
                complete,
                curves,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::config(format!("{} contains no usable runs", root.display())));
    }
    Ok(out)
}

/// Best value per task label over every row of every run.
pub fn suite_reference(runs: &[RunData]) -> BTreeMap<String, f64> {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for r in runs {
        for row in &r.matrix.raw {
            for (label, &v) in r.matrix.tasks.iter().zip(row) {
                let e = best.entry(label.clone()).or_insert(f64::INFINITY);
                *e = e.min(v);
            }
        }
    }
    best
}

/// Metrics rows for k = 1..=(completed tasks) of every run.
pub fn metrics_rows(runs: &[RunData], reference: &BTreeMap<String, f64>) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for r in runs {
        let d_star: Vec<f64> = r.matrix.tasks.iter().map(|t| reference[t]).collect();
        let dbar = r.matrix.normalized(&d_star)?;
        for k in 1..=dbar.len() {
            rows.push(MetricsRow::new(&r.method, &r.order, &compute_metrics(&dbar, k)?));
        }
    }
    Ok(rows)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn method_rank(name: &str) -> usize {
    Method::ALL
        .iter()
        .position(|m| m.name() == name)
        .unwrap_or(Method::ALL.len())
}

/// Methods × metrics table of the final row of each run, averaged over orders.
pub fn markdown_table(finals: &[MetricsRow]) -> String {
    let mut by_method: BTreeMap<(usize, String), Vec<&MetricsRow>> = BTreeMap::new();
    for r in finals {
        by_method.entry((method_rank(&r.method), r.method.clone())).or_default().push(r);
    }
    let multi = by_method.values().any(|v| v.len() > 1);
    let mut s = String::new();
    s.push_str("| Method | AP | AF | AMF | APl | AG |\n|---|---|---|---|---|---|\n");
    let getters: [fn(&MetricsRow) -> Option<f64>; 5] =
        [|r| Some(r.ap), |r| r.af, |r| r.amf, |r| Some(r.apl), |r| r.ag];
    for ((_, method), rows) in &by_method {
        let _ = write!(s, "| {method} |");
        for g in getters {
            let vals: Vec<f64> = rows.iter().filter_map(|r| g(r)).map(|v| v * DISPLAY_SCALE).collect();
            if vals.is_empty() {
                s.push_str(" n/a |");
                continue;
            }
            let (m, sd) = mean_std(&vals);
            if multi {
                let _ = write!(s, " {m:.1} ({sd:.1}) |");
            } else {
                let _ = write!(s, " {m:.1} |");
            }
        }
        s.push('\n');
    }
    s
}

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// A minimal polyline chart.
pub fn svg_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
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
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, ml + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{ml} {mt} V{} H{}" fill="none" stroke="black"/>"#,
        mt + ph,
        ml + pw
    );
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, ml - 6.0, y + 4.0);
    }
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v}</text>"#, mt + ph + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ml + pw / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
        let ly = mt + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            ml + pw + 12.0,
            ml + pw + 32.0,
            ml + pw + 38.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Average length on the tasks seen so far, per epoch (or per task when no
/// curves were recorded).
pub fn forgetting_series(run: &RunData) -> Vec<(f64, f64)> {
    if run.curves.is_empty() {
        return run
            .matrix
            .raw
            .iter()
            .enumerate()
            .map(|(i, row)| ((i + 1) as f64, row[..=i].iter().sum::<f64>() / (i + 1) as f64))
            .collect();
    }
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for c in &run.curves {
        groups.entry((c.trained, c.epoch)).or_default().push(c.mean_length);
    }
    groups
        .values()
        .enumerate()
        .map(|(x, v)| ((x + 1) as f64, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

/// Length on the task currently being trained.
pub fn plasticity_series(run: &RunData) -> Vec<(f64, f64)> {
    if run.curves.is_empty() {
        return run
            .matrix
            .raw
            .iter()
            .enumerate()
            .map(|(i, row)| ((i + 1) as f64, row[i]))
            .collect();
    }
    let mut points: Vec<_> = run.curves.iter().filter(|c| c.evaluated == c.trained).collect();
    points.sort_by_key(|c| (c.trained, c.epoch));
    points
        .iter()
        .enumerate()
        .map(|(x, c)| ((x + 1) as f64, c.mean_length))
        .collect()
}

/// Rebuilds metrics.csv, report.md and the charts of a run directory.
pub fn write_report(root: &Path) -> Result<Report> {
    if !root.is_dir() {
        return Err(Error::config(format!("{} is not a directory", root.display())));
    }
    let mut warnings = Vec::new();
    let runs = collect_runs(root, &mut warnings)?;
    let reference = suite_reference(&runs);
    let rows = metrics_rows(&runs, &reference)?;
    write_atomic(&root.join("metrics.csv"), write_metrics_csv(&rows)?.as_bytes())?;

    let finals: Vec<MetricsRow> = runs
        .iter()
        .filter_map(|r| {
            rows.iter()
                .filter(|m| m.order == r.order && m.method == r.method)
                .max_by_key(|m| m.k)
                .cloned()
        })
        .collect();
    let mut md = String::from("# Lifelong learning results\n\n");
    let orders: Vec<&str> = {
        let mut o: Vec<&str> = runs.iter().map(|r| r.order.as_str()).collect();
        o.dedup();
        o
    };
    let _ = writeln!(
        md,
        "Metrics after the last completed task, values x{DISPLAY_SCALE}, over {} order(s): {}.\n",
        orders.len(),
        orders.join(", ")
    );
    md.push_str(&markdown_table(&finals));
    if !warnings.is_empty() {
        md.push_str("\n## Warnings\n\n");
        for w in &warnings {
            let _ = writeln!(md, "- {w}");
        }
    }

    let mut charts = Vec::new();
    let chart_dir = root.join("charts");
    for order in &orders {
        let members: Vec<&RunData> = runs.iter().filter(|r| r.order == *order).collect();
        let label = |r: &RunData| if r.complete { r.method.clone() } else { format!("{} (partial)", r.method) };
        let x_label = if members.iter().all(|r| !r.curves.is_empty()) { "epoch" } else { "task" };
        let forgetting: Vec<_> = members.iter().map(|r| (label(r), forgetting_series(r))).collect();
        let plasticity: Vec<_> = members.iter().map(|r| (label(r), plasticity_series(r))).collect();
        for (kind, series, y) in [
            ("forgetting", forgetting, "average length on seen tasks"),
            ("plasticity", plasticity, "length on current task"),
        ] {
            let path = chart_dir.join(format!("{order}_{kind}.svg"));
            let svg = svg_chart(&format!("{order}: {kind}"), x_label, y, &series);
            write_atomic(&path, svg.as_bytes())?;
            let _ = writeln!(md, "\n![{order} {kind}](charts/{order}_{kind}.svg)");
            charts.push(path);
        }
    }
    write_atomic(&root.join("report.md"), md.as_bytes())?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Report {
        markdown: md,
        rows,
        warnings,
        charts,
    })
}
