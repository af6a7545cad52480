//! Noise-grid sweeps: every (method, p, seed) cell runs in its own directory
//! and the final test accuracies are aggregated into `table.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mfrw_core::metaloop::Method;
use mfrw_core::noise::NoiseKind;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{csv_err, invalid, io_err, Result};
use crate::run::run;

pub const TABLE_FILE: &str = "table.csv";
pub const CELLS_FILE: &str = "cells.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    pub noise: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub p: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Final test accuracy, or the error that stopped the cell.
    pub result: std::result::Result<f64, String>,
}

/// Mean and sample standard deviation of a set of accuracies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// `None` for fewer than two values.
    pub std: Option<f64>,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Option<Stat> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Some(Stat { mean, std, n })
}

/// Methods × noise levels; `stats[i][j]` is method `i` at noise level `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub methods: Vec<Method>,
    pub noise: Vec<f64>,
    pub stats: Vec<Vec<Option<Stat>>>,
}

impl Table {
    pub fn from_cells(methods: &[Method], noise: &[f64], cells: &[Cell]) -> Self {
        let stats = methods
            .iter()
            .map(|&m| {
                noise
                    .iter()
                    .map(|&p| {
                        let accs: Vec<f64> = cells
                            .iter()
                            .filter(|c| c.method == m && c.p == p)
                            .filter_map(|c| c.result.as_ref().ok().copied())
                            .collect();
                        aggregate(&accs)
                    })
                    .collect()
            })
            .collect();
        Self {
            methods: methods.to_vec(),
            noise: noise.to_vec(),
            stats,
        }
    }

    /// Whether method `i` has the best mean in column `j` (ties all win).
    pub fn is_best(&self, i: usize, j: usize) -> bool {
        let best = self
            .stats
            .iter()
            .filter_map(|row| row[j].map(|s| s.mean))
            .fold(f64::NEG_INFINITY, f64::max);
        self.stats[i][j].is_some_and(|s| s.mean == best)
    }

    /// `mean±std` in percent with two decimals, `*` marking the column best.
    pub fn cell_text(&self, i: usize, j: usize) -> String {
        let Some(s) = self.stats[i][j] else {
            return "failed".into();
        };
        let mut t = format!("{:.2}", 100.0 * s.mean);
        if let Some(std) = s.std {
            write!(t, "±{:.2}", 100.0 * std).unwrap();
        }
        if self.is_best(i, j) {
            t.push('*');
        }
        t
    }

    pub fn header(&self) -> Vec<String> {
        std::iter::once("method".to_string())
            .chain(self.noise.iter().map(|p| format!("p={p}")))
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<String>> {
        (0..self.methods.len())
            .map(|i| {
                std::iter::once(self.methods[i].name().to_string())
                    .chain((0..self.noise.len()).map(|j| self.cell_text(i, j)))
                    .collect()
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        w.write_record(self.header()).map_err(csv_err(path))?;
        for row in self.rows() {
            w.write_record(row).map_err(csv_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    /// Column-aligned plain text.
    pub fn render(&self) -> String {
        render_grid(&self.header(), &self.rows())
    }
}

pub(crate) fn render_grid(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (k, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if k > 0 {
                s.push_str("  ");
            }
            write!(s, "{c:<w$}").unwrap();
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<Cell>,
    pub table: Table,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }
}

pub fn cell_dir(root: &Path, method: Method, p: f64, seed: u64) -> PathBuf {
    root.join(format!("{}_p{p}_s{seed}", method.name()))
}

fn cell_config(base: &ExperimentConfig, method: Method, p: f64, seed: u64) -> ExperimentConfig {
    let mut c = base.clone();
    c.method = method;
    c.noise.p = p;
    c.seeds = base.seeds.for_cell(seed);
    c.out_dir = cell_dir(&base.out_dir, method, p, seed);
    c
}

fn validate(config: &ExperimentConfig, spec: &SweepSpec) -> Result<()> {
    if spec.methods.is_empty() {
        return Err(invalid("--methods", "needs at least one method"));
    }
    if spec.noise.is_empty() {
        return Err(invalid("--noise", "needs at least one noise level"));
    }
    if spec.seeds.is_empty() {
        return Err(invalid("--seeds", "needs at least one seed"));
    }
    for &p in &spec.noise {
        if !(0.0..=1.0).contains(&p) {
            return Err(crate::error::CliError::Range {
                field: "--noise".into(),
                value: p,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if p > 0.0 && config.noise.kind == NoiseKind::None {
            return Err(invalid(
                "noise.kind",
                "a sweep with p > 0 needs a noise kind",
            ));
        }
    }
    Ok(())
}

/// Runs every cell (in parallel), writes `cells.csv` and `table.csv` under
/// `config.out_dir`. Failed cells are recorded rather than aborting the
/// sweep; check [`SweepOutcome::failed`].
pub fn sweep(config: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepOutcome> {
    validate(config, spec)?;
    let grid: Vec<(Method, f64, u64)> = spec
        .methods
        .iter()
        .flat_map(|&m| {
            spec.noise
                .iter()
                .flat_map(move |&p| spec.seeds.iter().map(move |&s| (m, p, s)))
        })
        .collect();
    let cells: Vec<Cell> = grid
        .par_iter()
        .map(|&(method, p, seed)| {
            let cfg = cell_config(config, method, p, seed);
            let result = run(&cfg)
                .map(|o| o.summary.final_test_accuracy)
                .map_err(|e| e.to_string());
            Cell {
                method,
                p,
                seed,
                out_dir: cfg.out_dir,
                result,
            }
        })
        .collect();

    let root = &config.out_dir;
    fs::create_dir_all(root).map_err(io_err(root))?;
    let cells_path = root.join(CELLS_FILE);
    let mut w = csv::Writer::from_path(&cells_path).map_err(csv_err(&cells_path))?;
    w.write_record(["method", "p", "seed", "final_test_accuracy", "error"])
        .map_err(csv_err(&cells_path))?;
    for c in &cells {
        let (acc, err) = match &c.result {
            Ok(a) => (format!("{a:.6}"), String::new()),
            Err(e) => (String::new(), e.clone()),
        };
        w.write_record([
            c.method.name().into(),
            c.p.to_string(),
            c.seed.to_string(),
            acc,
            err,
        ])
        .map_err(csv_err(&cells_path))?;
    }
    w.flush().map_err(io_err(&cells_path))?;

    let table = Table::from_cells(&spec.methods, &spec.noise, &cells);
    table.write_csv(&root.join(TABLE_FILE))?;
    Ok(SweepOutcome { cells, table })
}
