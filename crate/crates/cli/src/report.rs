//! Static SVG line charts of per-epoch metrics and a text summary table.
//!
//! Each run gets one colour; splits are told apart by dash pattern
//! (train solid, meta dashed, test dotted).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{io_err, CliError, Result};
use crate::run::{read_metrics, read_summary, MetricsRow, Summary, METRICS_FILE, SUMMARY_FILE};
use crate::sweep::{aggregate, render_grid};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const SPLITS: [(&str, &str); 3] = [("train", ""), ("meta", "6 3"), ("test", "2 3")];

pub const ACCURACY_SVG: &str = "accuracy.svg";
pub const LOSS_SVG: &str = "loss.svg";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone)]
pub struct RunData {
    pub label: String,
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
}

pub fn load_run(dir: &Path) -> Result<RunData> {
    let metrics = dir.join(METRICS_FILE);
    if !metrics.is_file() {
        return Err(CliError::Metrics {
            path: metrics,
            reason: "missing".into(),
        });
    }
    let label = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(RunData {
        label,
        rows: read_metrics(&metrics)?,
        summary: read_summary(&dir.join(SUMMARY_FILE))?,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Axes {
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn x(&self, epoch: f64) -> f64 {
        let span = (self.x_max - 1.0).max(1.0);
        LEFT + (epoch - 1.0) / span * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        HEIGHT - BOTTOM - (v - self.y_min) / span * (HEIGHT - TOP - BOTTOM)
    }
}

/// One chart of `metric` against epoch for every run and split.
pub fn render_svg(
    runs: &[RunData],
    title: &str,
    metric: fn(&MetricsRow) -> f64,
    fixed_range: Option<(f64, f64)>,
) -> String {
    let x_max = runs
        .iter()
        .flat_map(|r| r.rows.iter().map(|m| m.epoch))
        .max()
        .unwrap_or(1) as f64;
    let (y_min, y_max) = fixed_range.unwrap_or_else(|| {
        let top = runs
            .iter()
            .flat_map(|r| r.rows.iter().map(metric))
            .fold(0.0f64, f64::max);
        (0.0, if top > 0.0 { top * 1.05 } else { 1.0 })
    });
    let ax = Axes {
        x_max,
        y_min,
        y_max,
    };

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    )
    .unwrap();

    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    writeln!(
        s,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for k in 0..=5 {
        let v = y_min + (y_max - y_min) * k as f64 / 5.0;
        let y = ax.y(v);
        writeln!(
            s,
            r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            x0 - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    let ticks = (x_max as usize).clamp(1, 10);
    let mut last = 0;
    for k in 0..=ticks {
        let epoch = 1 + ((x_max - 1.0) * k as f64 / ticks as f64).round() as usize;
        if k > 0 && epoch == last {
            continue;
        }
        last = epoch;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{epoch}</text>"#,
            ax.x(epoch as f64),
            y0 + 16.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();

    for (i, run) in runs.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for (split, dash) in SPLITS {
            let pts: Vec<String> = run
                .rows
                .iter()
                .filter(|r| r.split == split)
                .map(|r| format!("{:.2},{:.2}", ax.x(r.epoch as f64), ax.y(metric(r))))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let dash_attr = if dash.is_empty() {
                String::new()
            } else {
                format!(r#" stroke-dasharray="{dash}""#)
            };
            writeln!(
                s,
                r#"<polyline class="series" data-run="{}" data-split="{split}" points="{}" fill="none" stroke="{colour}" stroke-width="1.5"{dash_attr}/>"#,
                escape(&run.label),
                pts.join(" ")
            )
            .unwrap();
        }
    }

    let lx = WIDTH - RIGHT + 16.0;
    for (i, run) in runs.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        writeln!(
            s,
            r#"<g class="legend-entry"><line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 20.0,
            PALETTE[i % PALETTE.len()],
            lx + 26.0,
            y + 4.0,
            escape(&run.label)
        )
        .unwrap();
    }
    let ky = TOP + 10.0 + 18.0 * runs.len() as f64 + 12.0;
    for (k, (split, dash)) in SPLITS.iter().enumerate() {
        let y = ky + 16.0 * k as f64;
        writeln!(
            s,
            r#"<g class="split-key"><line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-dasharray="{dash}"/><text x="{:.2}" y="{:.2}">{split}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            y + 4.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Per-run final accuracies followed by a per-method mean±std.
pub fn summary_text(runs: &[RunData]) -> String {
    let header: Vec<String> = ["run", "method", "epochs", "test_acc"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.summary.method.name().into(),
                r.summary.epochs.to_string(),
                format!("{:.2}", 100.0 * r.summary.final_test_accuracy),
            ]
        })
        .collect();
    let mut out = render_grid(&header, &rows);

    let mut by_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in runs {
        by_method
            .entry(r.summary.method.name())
            .or_default()
            .push(r.summary.final_test_accuracy);
    }
    let header: Vec<String> = ["method", "runs", "test_acc"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = by_method
        .iter()
        .map(|(m, accs)| {
            let s = aggregate(accs).expect("non-empty group");
            let mut cell = format!("{:.2}", 100.0 * s.mean);
            if let Some(std) = s.std {
                write!(cell, "±{:.2}", 100.0 * std).unwrap();
            }
            vec![m.to_string(), s.n.to_string(), cell]
        })
        .collect();
    out.push('\n');
    out.push_str(&render_grid(&header, &rows));
    out
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub files: Vec<PathBuf>,
    pub text: String,
}

/// Writes `accuracy.svg`, `loss.svg` and `report.txt` into `out`.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<ReportOutcome> {
    if dirs.is_empty() {
        return Err(crate::error::invalid(
            "report",
            "needs at least one run directory",
        ));
    }
    let runs = dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let charts = [
        (
            ACCURACY_SVG,
            render_svg(&runs, "accuracy", |r| r.accuracy, Some((0.0, 1.0))),
        ),
        (LOSS_SVG, render_svg(&runs, "loss", |r| r.loss, None)),
    ];
    let mut files = Vec::new();
    for (name, svg) in charts {
        let path = out.join(name);
        fs::write(&path, svg).map_err(io_err(&path))?;
        files.push(path);
    }
    let text = summary_text(&runs);
    let path = out.join(REPORT_TXT);
    fs::write(&path, &text).map_err(io_err(&path))?;
    files.push(path);
    Ok(ReportOutcome { files, text })
}
