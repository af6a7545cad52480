//! Labeled datasets: synthetic blobs, IDX ingestion, clean meta split and
//! seeded batching.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::noise::{corrupt_labels, TransitionMatrix};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Examples with true and observed labels. `corrupted[i]` holds exactly when
/// `y_observed[i] != y_true[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x: Tensor,
    y_true: Vec<usize>,
    y_observed: Vec<usize>,
    corrupted: Vec<bool>,
    num_classes: usize,
}

/// One mini-batch, materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    /// Diagnostic only: which labels were corrupted.
    pub corrupted: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl LabeledDataset {
    /// A clean dataset: observed labels equal the true ones.
    pub fn new(x: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, _) = x
            .dims2()
            .ok_or_else(|| Error::Input("dataset inputs must be a matrix".into()))?;
        if labels.len() != n {
            return Err(Error::Consistency(format!(
                "{n} examples but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            x,
            y_observed: labels.clone(),
            corrupted: vec![false; n],
            y_true: labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.dims2().map_or(0, |(_, d)| d)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn y_true(&self) -> &[usize] {
        &self.y_true
    }

    pub fn y_observed(&self) -> &[usize] {
        &self.y_observed
    }

    pub fn corrupted(&self) -> &[bool] {
        &self.corrupted
    }

    pub fn corruption_rate(&self) -> f64 {
        self.corrupted.iter().filter(|&&m| m).count() as f64 / self.len() as f64
    }

    /// Examples at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            x: self.x.gather_rows(indices)?,
            y_true: indices.iter().map(|&i| self.y_true[i]).collect(),
            y_observed: indices.iter().map(|&i| self.y_observed[i]).collect(),
            corrupted: indices.iter().map(|&i| self.corrupted[i]).collect(),
            num_classes: self.num_classes,
        })
    }

    /// Batch with observed labels.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Ok(Batch {
            x: self.x.gather_rows(indices)?,
            labels: indices.iter().map(|&i| self.y_observed[i]).collect(),
            corrupted: indices.iter().map(|&i| self.corrupted[i]).collect(),
        })
    }

    /// Every example as one batch labeled with the true classes.
    pub fn clean_batch(&self) -> Batch {
        Batch {
            x: self.x.clone(),
            labels: self.y_true.clone(),
            corrupted: vec![false; self.len()],
        }
    }

    /// Resamples observed labels from `t`, replacing any previous corruption.
    pub fn apply_noise(&mut self, t: &TransitionMatrix, seed: u64) -> Result<()> {
        if t.num_classes() != self.num_classes {
            return Err(Error::Consistency(format!(
                "transition matrix is {}×{}, dataset has {} classes",
                t.num_classes(),
                t.num_classes(),
                self.num_classes
            )));
        }
        let (obs, mask) = corrupt_labels(&self.y_true, t, seed)?;
        self.y_observed = obs;
        self.corrupted = mask;
        Ok(())
    }

    /// Keeps the first `limit` examples.
    pub fn truncate(&self, limit: usize) -> Result<Self> {
        if limit >= self.len() {
            return Ok(self.clone());
        }
        self.subset(&(0..limit).collect::<Vec<_>>())
    }

    /// Widens the class count, e.g. when a held-out file has labels this one
    /// lacks.
    pub fn with_num_classes(mut self, c: usize) -> Result<Self> {
        if c < self.num_classes {
            return Err(Error::Consistency(format!(
                "cannot shrink {} classes to {c}",
                self.num_classes
            )));
        }
        self.num_classes = c;
        Ok(self)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.y_true {
            counts[y] += 1;
        }
        counts
    }
}

/// Parameters of [`make_blobs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobsSpec {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// Class centres with every pairwise distance at least `separation`. When
/// `classes ≤ dim` they are scaled basis vectors (all distances exact);
/// otherwise random points on a sphere, rejected until far enough apart.
fn blob_centres(spec: &BlobsSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let (c, d, sep) = (spec.classes, spec.dim, spec.separation);
    if c <= d {
        let r = sep / std::f64::consts::SQRT_2;
        return Ok((0..c)
            .map(|k| (0..d).map(|j| if j == k { r } else { 0.0 }).collect())
            .collect());
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut radius = sep;
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(c);
    let mut attempts = 0usize;
    while centres.len() < c {
        attempts += 1;
        if attempts.is_multiple_of(10_000) {
            radius *= 1.5;
            centres.clear();
        }
        if attempts > 1_000_000 {
            return Err(Error::Input("could not place blob centres".into()));
        }
        let v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let p: Vec<f64> = v.iter().map(|a| a * radius / norm).collect();
        let far = centres.iter().all(|q| {
            q.iter()
                .zip(&p)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                >= sep
        });
        if far {
            centres.push(p);
        }
    }
    Ok(centres)
}

/// `c` isotropic Gaussian clusters; example `i` belongs to class `i mod c`.
pub fn make_blobs(spec: &BlobsSpec) -> Result<LabeledDataset> {
    if spec.classes < 2 || spec.dim == 0 {
        return Err(Error::Input("blobs need ≥ 2 classes and dim ≥ 1".into()));
    }
    if spec.n < spec.classes {
        return Err(Error::Input(format!(
            "blobs need N ≥ c, got N = {} and c = {}",
            spec.n, spec.classes
        )));
    }
    if spec.noise_std.is_nan()
        || spec.noise_std < 0.0
        || spec.separation.is_nan()
        || spec.separation < 0.0
    {
        return Err(Error::Input("separation and noise_std must be ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centres = blob_centres(spec, &mut rng)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(spec.n * spec.dim);
    let labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    for &y in &labels {
        for &m in &centres[y] {
            data.push(m + spec.noise_std * normal.sample(&mut rng));
        }
    }
    LabeledDataset::new(
        Tensor::matrix(spec.n, spec.dim, data)?,
        labels,
        spec.classes,
    )
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Holds out `floor(fraction·N)` random examples as a test set.
pub fn split_test(
    dataset: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Input(format!(
            "test fraction {fraction} outside (0, 1)"
        )));
    }
    let idx = shuffled(dataset.len(), seed);
    let n_test = (dataset.len() as f64 * fraction).floor() as usize;
    if n_test == 0 || n_test == dataset.len() {
        return Err(Error::Input("test split would be empty or total".into()));
    }
    let (test, rest) = idx.split_at(n_test);
    let mut rest = rest.to_vec();
    rest.sort_unstable();
    let mut test = test.to_vec();
    test.sort_unstable();
    Ok((dataset.subset(&rest)?, dataset.subset(&test)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub meta_size: usize,
    pub seed: u64,
}

pub const DEFAULT_META_SIZE: usize = 1000;

/// Draws a class-balanced meta set of `floor(meta_size / c)` examples per
/// class. Meta labels are the true labels; the remainder is the train set.
pub fn split_meta(
    dataset: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = dataset.len();
    let c = dataset.num_classes();
    if spec.meta_size == 0 || spec.meta_size > n / 10 {
        return Err(Error::Input(format!(
            "meta_size {} must be in [1, N/10] = [1, {}]",
            spec.meta_size,
            n / 10
        )));
    }
    let per_class = spec.meta_size / c;
    if per_class == 0 {
        return Err(Error::Input(format!(
            "meta_size {} gives no example for some of the {c} classes",
            spec.meta_size
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in shuffled(n, spec.seed) {
        by_class[dataset.y_true[i]].push(i);
    }
    let mut meta_idx = Vec::with_capacity(per_class * c);
    for (k, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::Input(format!(
                "class {k} has {} examples, meta set needs {per_class}",
                members.len()
            )));
        }
        meta_idx.extend_from_slice(&members[..per_class]);
    }
    meta_idx.sort_unstable();
    let mut in_meta = vec![false; n];
    for &i in &meta_idx {
        in_meta[i] = true;
    }
    let train_idx: Vec<usize> = (0..n).filter(|&i| !in_meta[i]).collect();

    let mut meta = dataset.subset(&meta_idx)?;
    meta.y_observed = meta.y_true.clone();
    meta.corrupted = vec![false; meta.len()];
    Ok((dataset.subset(&train_idx)?, meta))
}

/// Shuffled index batches covering `0..n` once; the last batch may be short.
pub fn batches(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Usage("batch size must be ≥ 1".into()));
    }
    Ok(shuffled(n, epoch_seed)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(what))
}

fn truncated(what: &str) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::UnexpectedEof,
        format!("{what}: file truncated"),
    ))
}

/// Parses an IDX image file (`0x00000803`, N×rows×cols unsigned bytes) into
/// `[N × rows·cols]` values scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Tensor, usize, usize)> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image magic {magic:#010x}, expected 0x00000803"
        )));
    }
    let n = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let len = n * rows * cols;
    let pixels = bytes.get(16..16 + len).ok_or_else(|| truncated("images"))?;
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((Tensor::matrix(n, rows * cols, data)?, rows, cols))
}

/// Parses an IDX label file (`0x00000801`, N unsigned bytes).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label magic {magic:#010x}, expected 0x00000801"
        )));
    }
    let n = read_u32(bytes, 4, "labels")? as usize;
    let labels = bytes.get(8..8 + n).ok_or_else(|| truncated("labels"))?;
    Ok(labels.iter().map(|&b| usize::from(b)).collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Loads an IDX image/label pair. The class count is one more than the
/// largest label (at least 2).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (x, _, _) = parse_idx_images(&read_file(images_path)?)?;
    let labels = parse_idx_labels(&read_file(labels_path)?)?;
    if x.dims2().map(|(n, _)| n) != Some(labels.len()) {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            x.dims2().map_or(0, |(n, _)| n),
            labels.len()
        )));
    }
    let c = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    LabeledDataset::new(x, labels, c)
}

/// Encodes raw image bytes as an IDX image file.
pub fn encode_idx_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if pixels.len() != n * rows * cols {
        return Err(Error::Consistency(format!(
            "{} pixels for {n}×{rows}×{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, c: usize, std: f64) -> LabeledDataset {
        make_blobs(&BlobsSpec {
            n,
            classes: c,
            dim: 8,
            separation: 10.0,
            noise_std: std,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn zero_noise_blobs_sit_on_centres() {
        let d = blobs(30, 3, 0.0);
        for i in 0..30 {
            assert_eq!(d.x().row(i), d.x().row(i % 3));
        }
        let centre_dist: f64 = d
            .x()
            .row(0)
            .iter()
            .zip(d.x().row(1))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((centre_dist - 10.0).abs() < 1e-12);
    }

    #[test]
    fn blob_classes_are_balanced() {
        let d = blobs(103, 10, 1.0);
        let counts = d.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn more_classes_than_dims_still_separated() {
        let d = make_blobs(&BlobsSpec {
            n: 12,
            classes: 6,
            dim: 2,
            separation: 3.0,
            noise_std: 0.0,
            seed: 5,
        })
        .unwrap();
        for a in 0..6 {
            for b in 0..a {
                let dist: f64 = d
                    .x()
                    .row(a)
                    .iter()
                    .zip(d.x().row(b))
                    .map(|(u, v)| (u - v).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(dist >= 3.0 - 1e-12);
            }
        }
    }

    #[test]
    fn batches_keep_remainder() {
        let b = batches(5, 2, 1).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert_eq!(batches(5, 2, 1).unwrap(), b);
        assert!(batches(5, 0, 1).is_err());
    }

    #[test]
    fn minimal_meta_split_has_one_per_class() {
        let d = blobs(100, 10, 1.0);
        let (train, meta) = split_meta(
            &d,
            &SplitSpec {
                meta_size: 10,
                seed: 2,
            },
        )
        .unwrap();
        assert_eq!(meta.class_counts(), vec![1; 10]);
        assert_eq!(train.len(), 90);
    }

    #[test]
    fn meta_split_is_disjoint() {
        // Tag each example by a unique first coordinate to compare membership.
        let n = 200;
        let x = Tensor::matrix(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let d = LabeledDataset::new(x, (0..n).map(|i| i % 4).collect(), 4).unwrap();
        let (train, meta) = split_meta(
            &d,
            &SplitSpec {
                meta_size: 20,
                seed: 9,
            },
        )
        .unwrap();
        let ids = |s: &LabeledDataset| s.x().data().iter().map(|&v| v as usize).collect::<Vec<_>>();
        let (t, m) = (ids(&train), ids(&meta));
        assert!(m.iter().all(|i| !t.contains(i)));
        assert_eq!(t.len() + m.len(), n);
    }

    #[test]
    fn meta_split_size_bounds() {
        let d = blobs(100, 10, 1.0);
        assert!(split_meta(
            &d,
            &SplitSpec {
                meta_size: 11,
                seed: 0
            }
        )
        .is_err());
        assert!(split_meta(
            &d,
            &SplitSpec {
                meta_size: 5,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn idx_fixture_round_trip() {
        // Two 2×3 images and their labels, assembled byte by byte.
        let images: Vec<u8> = vec![
            0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3, //
            0, 255, 51, 102, 153, 204, //
            255, 0, 0, 0, 0, 1,
        ];
        let labels: Vec<u8> = vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 3];
        let (x, rows, cols) = parse_idx_images(&images).unwrap();
        assert_eq!((rows, cols), (2, 3));
        assert_eq!(x.shape(), &[2, 6]);
        assert_eq!(x.row(0), &[0.0, 1.0, 0.2, 0.4, 0.6, 0.8]);
        assert_eq!(x.row(1)[0], 1.0);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![7, 3]);
        let pixels: Vec<u8> = x.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(pixels, images[16..].to_vec());
        assert_eq!(encode_idx_images(&pixels, 2, 2, 3).unwrap(), images);
        assert_eq!(encode_idx_labels(&[7, 3]), labels);
    }

    #[test]
    fn idx_errors() {
        let mut bad = encode_idx_images(&[0; 4], 1, 2, 2).unwrap();
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Format(_))));
        let short = encode_idx_images(&[0; 4], 1, 2, 2).unwrap();
        assert!(matches!(parse_idx_images(&short[..18]), Err(Error::Io(_))));
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::Io(_))));
    }
}
