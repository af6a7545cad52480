//! Single runs, `metrics.csv` and `summary.txt`.
//!
//! `metrics.csv` has one row per (epoch, split) with columns
//! `epoch,split,loss,accuracy,adv_w_clean,adv_w_noisy`. Epochs count from 1,
//! splits come in the order train, meta, test, and floats carry six
//! decimals. The weight columns hold the mean advisor attention (mfrw) or
//! mean example weight (mwnet) over clean and corrupted train examples; they
//! are blank on every other row.

use std::fs;
use std::path::{Path, PathBuf};

use mfrw_core::metaloop::{train, EpochSplit, Method, MetricsRecord};

use crate::config::ExperimentConfig;
use crate::error::{csv_err, io_err, CliError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const METRICS_HEADER: [&str; 6] = [
    "epoch",
    "split",
    "loss",
    "accuracy",
    "adv_w_clean",
    "adv_w_noisy",
];

/// A parsed `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub weight_clean: Option<f64>,
    pub weight_noisy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: Method,
    pub epochs: usize,
    pub final_test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub summary: Summary,
    pub history: Vec<MetricsRecord>,
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn optional(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_default()
}

pub fn write_metrics(path: &Path, history: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(METRICS_HEADER).map_err(csv_err(path))?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.split.name().to_string(),
            fixed(r.loss),
            fixed(r.accuracy),
            optional(r.weight_clean),
            optional(r.weight_noisy),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let bad = |reason: String| CliError::Metrics {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let num = |s: &str, what: &str| {
        s.parse::<f64>()
            .map_err(|_| bad(format!("{what} {s:?} is not a number")))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let opt = |i: usize, what: &str| match &rec[i] {
            "" => Ok(None),
            s => num(s, what).map(Some),
        };
        rows.push(MetricsRow {
            epoch: rec[0]
                .parse()
                .map_err(|_| bad(format!("epoch {:?} is not an integer", &rec[0])))?,
            split: rec[1].to_string(),
            loss: num(&rec[2], "loss")?,
            accuracy: num(&rec[3], "accuracy")?,
            weight_clean: opt(4, "adv_w_clean")?,
            weight_noisy: opt(5, "adv_w_noisy")?,
        });
    }
    Ok(rows)
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<()> {
    let text = format!(
        "method = {}\nepochs = {}\nfinal_test_accuracy = {}\n",
        s.method.name(),
        s.epochs,
        fixed(s.final_test_accuracy)
    );
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |reason: &str| CliError::Metrics {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    let value = |key: &str| {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
            .ok_or_else(|| bad(&format!("missing {key}")))
    };
    Ok(Summary {
        method: value("method")?
            .parse()
            .map_err(|_| bad("unknown method"))?,
        epochs: value("epochs")?.parse().map_err(|_| bad("bad epochs"))?,
        final_test_accuracy: value("final_test_accuracy")?
            .parse()
            .map_err(|_| bad("bad final_test_accuracy"))?,
    })
}

/// Trains per `config` and writes `metrics.csv` and `summary.txt` into
/// `config.out_dir`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    let data = config.prepare_data()?;
    let outcome = train(&config.train_config(), &data.splits)?;
    if let Some(r) = outcome.history.iter().find(|r| !r.loss.is_finite()) {
        return Err(CliError::NonFiniteLoss {
            epoch: r.epoch,
            split: r.split.name(),
        });
    }
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    write_metrics(&config.out_dir.join(METRICS_FILE), &outcome.history)?;
    let summary = Summary {
        method: config.method,
        epochs: config.optim.epochs,
        final_test_accuracy: outcome.final_test_accuracy,
    };
    write_summary(&config.out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(RunOutcome {
        out_dir: config.out_dir.clone(),
        summary,
        history: outcome.history,
    })
}

/// Final-epoch weight means on the train split, if logged.
pub fn final_weight_means(rows: &[MetricsRow]) -> Option<(f64, f64)> {
    let train = EpochSplit::Train.name();
    rows.iter()
        .rev()
        .find(|r| r.split == train)
        .and_then(|r| Some((r.weight_clean?, r.weight_noisy?)))
}
