//! Materializes a config's datasets as CSV for inspection.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use mfrw_core::data::LabeledDataset;

use crate::config::ExperimentConfig;
use crate::error::{csv_err, io_err, Result};

pub const DATA_FILE: &str = "data.csv";
pub const TRANSITION_FILE: &str = "transition.csv";

#[derive(Debug, Clone)]
pub struct GenDataOutcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Writes `data.csv` (`split,y_true,y_observed,corrupted,x0,…`) and
/// `transition.csv` (row-major `T[i][j]`) into `config.out_dir`.
pub fn gen_data(config: &ExperimentConfig) -> Result<GenDataOutcome> {
    let data = config.prepare_data()?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join(DATA_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    let d = data.splits.train.input_dim();
    let mut header: Vec<String> = ["split", "y_true", "y_observed", "corrupted"]
        .map(String::from)
        .to_vec();
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_err(&path))?;
    let sets: [(&str, &LabeledDataset); 3] = [
        ("train", &data.splits.train),
        ("meta", &data.splits.meta),
        ("test", &data.splits.test),
    ];
    for (name, set) in sets {
        for i in 0..set.len() {
            let mut rec = vec![
                name.to_string(),
                set.y_true()[i].to_string(),
                set.y_observed()[i].to_string(),
                u8::from(set.corrupted()[i]).to_string(),
            ];
            rec.extend(set.x().row(i).iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let t_path = dir.join(TRANSITION_FILE);
    let mut w = csv::Writer::from_path(&t_path).map_err(csv_err(&t_path))?;
    let c = data.transition.num_classes();
    for i in 0..c {
        w.write_record(data.transition.row(i).iter().map(|v| format!("{v:.6}")))
            .map_err(csv_err(&t_path))?;
    }
    w.flush().map_err(io_err(&t_path))?;

    let mut summary = String::new();
    for (name, set) in sets {
        writeln!(
            summary,
            "{name:<5}  n={:<6} corrupted={:.4}  class counts {:?}",
            set.len(),
            set.corruption_rate(),
            set.class_counts()
        )
        .unwrap();
    }
    writeln!(
        summary,
        "noise {} p={} over {c} classes, input dim {d}",
        config.noise.kind.name(),
        config.noise.p
    )
    .unwrap();
    Ok(GenDataOutcome {
        files: vec![path, t_path],
        summary,
    })
}
