//! Experiment configuration: one TOML file with flat sections.
//!
//! ```toml
//! [run]
//! method = "mfrw"          # ce | mwnet | mfrw (required)
//! out_dir = "runs/mfrw"
//!
//! [data]
//! source = "blobs"         # blobs | idx
//! n = 5000
//! classes = 10
//! dim = 32
//! separation = 4.0
//! noise_std = 1.0
//! # source = "idx": images, labels, optional test_images/test_labels, limit
//!
//! [noise]
//! kind = "flip"            # none | flip | flip2 | flip3
//! p = 0.6
//! # pairing = [[1], [2], …]  one target list per class
//!
//! [split]
//! meta_size = 400
//! test_fraction = 0.2
//!
//! [model]
//! hidden = [128]
//! feature_dim = 64
//! embed_dim = 100
//! mwnet_hidden = 100
//!
//! [optim]
//! lr = 0.1
//! momentum = 0.9
//! weight_decay = 5e-4
//! meta_lr = 1e-4
//! batch_size = 128
//! meta_batch_size = 128    # defaults to batch_size
//! epochs = 100
//! milestones = [50, 70]
//! eps_scale = 0.01
//!
//! [seeds]                  # required, every field
//! data = 1
//! split = 2
//! noise = 3
//! init = 4
//! shuffle = 5
//! ```

use std::path::{Path, PathBuf};

use mfrw_core::data::{
    load_idx, make_blobs, split_meta, split_test, BlobsSpec, LabeledDataset, SplitSpec,
    DEFAULT_META_SIZE,
};
use mfrw_core::metaloop::{HypergradMode, HypergradSpec, Method, Splits, TrainConfig};
use mfrw_core::nets::{DEFAULT_EMBED_DIM, DEFAULT_MWNET_HIDDEN};
use mfrw_core::noise::{build_transition_matrix, NoiseKind, NoiseSpec, Pairing, TransitionMatrix};
use mfrw_core::{derive_seed, Error as CoreError};
use serde::Deserialize;

use crate::error::{invalid, io_err, CliError, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    noise: RawNoise,
    #[serde(default)]
    split: SplitSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    optim: RawOptim,
    seeds: Seeds,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawRun {
    method: Option<String>,
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawData {
    source: String,
    n: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    noise_std: f64,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
    limit: Option<usize>,
}

impl Default for RawData {
    fn default() -> Self {
        Self {
            source: "blobs".into(),
            n: 5000,
            classes: 10,
            dim: 32,
            separation: 4.0,
            noise_std: 1.0,
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            limit: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawNoise {
    kind: String,
    p: f64,
    pairing: Option<Pairing>,
}

impl Default for RawNoise {
    fn default() -> Self {
        Self {
            kind: "none".into(),
            p: 0.0,
            pairing: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawOptim {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    meta_lr: f64,
    batch_size: usize,
    meta_batch_size: Option<usize>,
    epochs: usize,
    milestones: Vec<usize>,
    eps_scale: f64,
}

impl Default for RawOptim {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            meta_lr: 1e-4,
            batch_size: 128,
            meta_batch_size: None,
            epochs: 100,
            milestones: vec![50, 70],
            eps_scale: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs {
        n: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        noise_std: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// External test set; without it a fraction of the data is held out.
        test: Option<(PathBuf, PathBuf)>,
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub p: f64,
    pub pairing: Option<Pairing>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub meta_size: usize,
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            meta_size: DEFAULT_META_SIZE,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub mwnet_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            feature_dim: 64,
            embed_dim: DEFAULT_EMBED_DIM,
            mwnet_hidden: DEFAULT_MWNET_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimSection {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub meta_lr: f64,
    pub batch_size: usize,
    pub meta_batch_size: usize,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub eps_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub noise: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl Seeds {
    /// Every stream re-derived from `cell`, so sweep cells with the same
    /// seed share data, split, noise and initialization across methods.
    pub fn for_cell(&self, cell: u64) -> Self {
        Self {
            data: derive_seed(self.data, cell),
            split: derive_seed(self.split, cell),
            noise: derive_seed(self.noise, cell),
            init: derive_seed(self.init, cell),
            shuffle: derive_seed(self.shuffle, cell),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub noise: NoiseSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub seeds: Seeds,
}

fn range(field: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(CliError::Range {
            field: field.into(),
            value,
            lo,
            hi,
        })
    }
}

fn positive(field: &str, value: usize) -> Result<()> {
    if value == 0 {
        return Err(invalid(field, "must be ≥ 1"));
    }
    Ok(())
}

fn convert_data(raw: RawData) -> Result<DataSource> {
    match raw.source.as_str() {
        "blobs" => {
            for (field, set) in [
                ("data.images", raw.images.is_some()),
                ("data.labels", raw.labels.is_some()),
                ("data.test_images", raw.test_images.is_some()),
                ("data.test_labels", raw.test_labels.is_some()),
                ("data.limit", raw.limit.is_some()),
            ] {
                if set {
                    return Err(invalid(field, "only valid with source = \"idx\""));
                }
            }
            if raw.classes < 2 {
                return Err(invalid("data.classes", "must be ≥ 2"));
            }
            if raw.n < raw.classes {
                return Err(invalid("data.n", "must be ≥ data.classes"));
            }
            positive("data.dim", raw.dim)?;
            range("data.separation", raw.separation, 0.0, f64::MAX)?;
            range("data.noise_std", raw.noise_std, 0.0, f64::MAX)?;
            Ok(DataSource::Blobs {
                n: raw.n,
                classes: raw.classes,
                dim: raw.dim,
                separation: raw.separation,
                noise_std: raw.noise_std,
            })
        }
        "idx" => {
            let images = raw
                .images
                .ok_or_else(|| invalid("data.images", "required for source = \"idx\""))?;
            let labels = raw
                .labels
                .ok_or_else(|| invalid("data.labels", "required for source = \"idx\""))?;
            let test = match (raw.test_images, raw.test_labels) {
                (Some(i), Some(l)) => Some((i, l)),
                (None, None) => None,
                _ => {
                    return Err(invalid(
                        "data.test_images",
                        "test_images and test_labels go together",
                    ))
                }
            };
            if let Some(limit) = raw.limit {
                positive("data.limit", limit)?;
            }
            Ok(DataSource::Idx {
                images,
                labels,
                test,
                limit: raw.limit,
            })
        }
        other => Err(invalid(
            "data.source",
            format!("expected \"blobs\" or \"idx\", got {other:?}"),
        )),
    }
}

fn convert_noise(raw: RawNoise) -> Result<NoiseSection> {
    let kind: NoiseKind = raw
        .kind
        .parse()
        .map_err(|_| invalid("noise.kind", format!("unknown kind {:?}", raw.kind)))?;
    range("noise.p", raw.p, 0.0, 1.0)?;
    if kind == NoiseKind::None && raw.p > 0.0 {
        return Err(invalid("noise.p", "must be 0 when kind = \"none\""));
    }
    if kind == NoiseKind::None && raw.pairing.is_some() {
        return Err(invalid("noise.pairing", "meaningless when kind = \"none\""));
    }
    Ok(NoiseSection {
        kind,
        p: raw.p,
        pairing: raw.pairing,
    })
}

fn convert_optim(raw: RawOptim) -> Result<OptimSection> {
    for (field, v) in [
        ("optim.lr", raw.lr),
        ("optim.weight_decay", raw.weight_decay),
        ("optim.meta_lr", raw.meta_lr),
    ] {
        range(field, v, 0.0, f64::MAX)?;
    }
    range("optim.momentum", raw.momentum, 0.0, 1.0)?;
    if !(raw.eps_scale > 0.0 && raw.eps_scale.is_finite()) {
        return Err(invalid("optim.eps_scale", "must be a positive number"));
    }
    positive("optim.batch_size", raw.batch_size)?;
    let meta_batch_size = raw.meta_batch_size.unwrap_or(raw.batch_size);
    positive("optim.meta_batch_size", meta_batch_size)?;
    if raw.milestones.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("optim.milestones", "must be strictly increasing"));
    }
    Ok(OptimSection {
        lr: raw.lr,
        momentum: raw.momentum,
        weight_decay: raw.weight_decay,
        meta_lr: raw.meta_lr,
        batch_size: raw.batch_size,
        meta_batch_size,
        epochs: raw.epochs,
        milestones: raw.milestones,
        eps_scale: raw.eps_scale,
    })
}

/// Parses and validates a config. Unknown keys, missing seeds and bad values
/// are errors naming the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text)?;
    let method = match raw.run.method.as_deref().map(str::trim) {
        None | Some("") => return Err(invalid("run.method", "required")),
        Some(m) => m.parse::<Method>().map_err(|_| {
            invalid(
                "run.method",
                format!("expected ce, mwnet or mfrw, got {m:?}"),
            )
        })?,
    };
    positive("split.meta_size", raw.split.meta_size)?;
    if !(raw.split.test_fraction > 0.0 && raw.split.test_fraction < 1.0) {
        return Err(CliError::Range {
            field: "split.test_fraction".into(),
            value: raw.split.test_fraction,
            lo: 0.0,
            hi: 1.0,
        });
    }
    positive("model.feature_dim", raw.model.feature_dim)?;
    positive("model.embed_dim", raw.model.embed_dim)?;
    positive("model.mwnet_hidden", raw.model.mwnet_hidden)?;
    if raw.model.hidden.contains(&0) {
        return Err(invalid("model.hidden", "widths must be ≥ 1"));
    }
    Ok(ExperimentConfig {
        method,
        out_dir: raw.run.out_dir.unwrap_or_else(|| PathBuf::from("out")),
        data: convert_data(raw.data)?,
        noise: convert_noise(raw.noise)?,
        split: raw.split,
        model: raw.model,
        optim: convert_optim(raw.optim)?,
        seeds: raw.seeds,
    })
}

/// Reads a config file; relative data paths and `out_dir` resolve against
/// the file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut config = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    rebase(&mut config.out_dir);
    if let DataSource::Idx {
        images,
        labels,
        test,
        ..
    } = &mut config.data
    {
        rebase(images);
        rebase(labels);
        if let Some((i, l)) = test {
            rebase(i);
            rebase(l);
        }
    }
    Ok(config)
}

/// The datasets of a run plus the transition matrix applied to the train set.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub splits: Splits,
    pub transition: TransitionMatrix,
}

impl ExperimentConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method,
            hidden_dims: self.model.hidden.clone(),
            feature_dim: self.model.feature_dim,
            embed_dim: self.model.embed_dim,
            mwnet_hidden: self.model.mwnet_hidden,
            lr: self.optim.lr,
            momentum: self.optim.momentum,
            weight_decay: self.optim.weight_decay,
            meta_lr: self.optim.meta_lr,
            batch_size: self.optim.batch_size,
            meta_batch_size: self.optim.meta_batch_size,
            epochs: self.optim.epochs,
            milestones: self.optim.milestones.clone(),
            hyper: HypergradSpec {
                mode: HypergradMode::FiniteDifference,
                eps_scale: self.optim.eps_scale,
            },
            init_seed: self.seeds.init,
            shuffle_seed: self.seeds.shuffle,
        }
    }

    fn load_dataset(&self) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
        match &self.data {
            DataSource::Blobs {
                n,
                classes,
                dim,
                separation,
                noise_std,
            } => Ok((
                make_blobs(&BlobsSpec {
                    n: *n,
                    classes: *classes,
                    dim: *dim,
                    separation: *separation,
                    noise_std: *noise_std,
                    seed: self.seeds.data,
                })?,
                None,
            )),
            DataSource::Idx {
                images,
                labels,
                test,
                limit,
            } => {
                let mut ds = load_idx(images, labels)?;
                if let Some(limit) = limit {
                    ds = ds.truncate(*limit)?;
                }
                let test = match test {
                    Some((i, l)) => {
                        let t = load_idx(i, l)?;
                        if t.input_dim() != ds.input_dim() {
                            return Err(CoreError::Consistency(
                                "test images differ in size from training images".into(),
                            )
                            .into());
                        }
                        let c = ds.num_classes().max(t.num_classes());
                        Some(t.with_num_classes(c)?)
                    }
                    None => None,
                };
                if let Some(t) = &test {
                    ds = ds.with_num_classes(t.num_classes())?;
                }
                Ok((ds, test))
            }
        }
    }

    /// Load, hold out the test set, draw the clean meta set, then corrupt
    /// the remaining train labels.
    pub fn prepare_data(&self) -> Result<PreparedData> {
        let (full, external_test) = self.load_dataset()?;
        let (rest, test) = match external_test {
            Some(t) => (full, t),
            None => split_test(&full, self.split.test_fraction, self.seeds.split)?,
        };
        let (mut train, meta) = split_meta(
            &rest,
            &SplitSpec {
                meta_size: self.split.meta_size,
                seed: derive_seed(self.seeds.split, 1),
            },
        )?;
        let spec = NoiseSpec {
            kind: self.noise.kind,
            p: self.noise.p,
            pairing: self.noise.pairing.clone(),
            seed: self.seeds.noise,
        };
        let transition = build_transition_matrix(&spec, train.num_classes())?;
        train.apply_noise(&transition, spec.seed)?;
        Ok(PreparedData {
            splits: Splits { train, meta, test },
            transition,
        })
    }
}
