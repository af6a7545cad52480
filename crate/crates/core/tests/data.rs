use mfrw_core::data::{
    batches, encode_idx_images, encode_idx_labels, load_idx, make_blobs, parse_idx_images,
    split_meta, split_test, BlobsSpec, SplitSpec,
};
use mfrw_core::noise::{build_transition_matrix, NoiseKind, NoiseSpec};
use proptest::prelude::*;

fn blobs(n: usize, classes: usize, seed: u64) -> mfrw_core::data::LabeledDataset {
    make_blobs(&BlobsSpec {
        n,
        classes,
        dim: 6,
        separation: 4.0,
        noise_std: 1.0,
        seed,
    })
    .unwrap()
}

proptest! {
    #[test]
    fn batches_partition_every_epoch(n in 1usize..500, bs in 1usize..64, seed in any::<u64>()) {
        let bs_list = batches(n, bs, seed).unwrap();
        let mut seen: Vec<usize> = bs_list.iter().flatten().copied().collect();
        prop_assert!(bs_list[..bs_list.len() - 1].iter().all(|b| b.len() == bs));
        prop_assert_eq!(bs_list.last().unwrap().len(), n - bs * (bs_list.len() - 1));
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(batches(n, bs, seed).unwrap(), bs_list);
    }

    #[test]
    fn meta_split_is_disjoint_balanced_and_clean(
        classes in 2usize..8,
        per_class in 1usize..5,
        seed in any::<u64>(),
        p in 0.0f64..=1.0,
    ) {
        let n = 400;
        let ds = blobs(n, classes, seed);
        let meta_size = (classes * per_class).min(n / 10);
        let (mut train, meta) = split_meta(&ds, &SplitSpec { meta_size, seed }).unwrap();
        prop_assert_eq!(train.len() + meta.len(), n);
        let per = meta_size / classes;
        prop_assert!(meta.class_counts().iter().all(|&k| k == per));
        let t = build_transition_matrix(
            &NoiseSpec { kind: NoiseKind::Flip, p, pairing: None, seed },
            classes,
        ).unwrap();
        train.apply_noise(&t, seed).unwrap();
        prop_assert!(meta.corrupted().iter().all(|&m| !m));
        prop_assert_eq!(meta.y_observed(), meta.y_true());
        for i in 0..train.len() {
            prop_assert_eq!(train.corrupted()[i], train.y_observed()[i] != train.y_true()[i]);
        }
        // Disjoint by content: every row came from exactly one side.
        let mut rows: Vec<Vec<u64>> = (0..train.len())
            .map(|i| train.x().row(i).iter().map(|v| v.to_bits()).collect())
            .chain((0..meta.len()).map(|i| meta.x().row(i).iter().map(|v| v.to_bits()).collect()))
            .collect();
        rows.sort();
        rows.dedup();
        prop_assert_eq!(rows.len(), n);
    }
}

#[test]
fn blob_classes_balanced_and_deterministic() {
    for (n, c) in [(1000, 10), (1003, 7), (5, 5)] {
        let ds = blobs(n, c, 3);
        let counts = ds.class_counts();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_eq!(ds, blobs(n, c, 3));
    }
    assert_ne!(blobs(100, 4, 1), blobs(100, 4, 2));
}

#[test]
fn noiseless_blobs_sit_on_centres() {
    let ds = make_blobs(&BlobsSpec {
        n: 40,
        classes: 4,
        dim: 3,
        separation: 2.0,
        noise_std: 0.0,
        seed: 0,
    })
    .unwrap();
    for i in 0..ds.len() {
        assert_eq!(ds.x().row(i), ds.x().row(ds.y_true()[i]));
    }
}

#[test]
fn blob_centres_respect_separation_beyond_dim() {
    let ds = make_blobs(&BlobsSpec {
        n: 12,
        classes: 12,
        dim: 3,
        separation: 5.0,
        noise_std: 0.0,
        seed: 9,
    })
    .unwrap();
    for a in 0..12 {
        for b in a + 1..12 {
            let d: f64 = ds
                .x()
                .row(a)
                .iter()
                .zip(ds.x().row(b))
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            assert!(d.sqrt() >= 5.0 - 1e-9);
        }
    }
}

#[test]
fn well_separated_blobs_nearest_centroid_accuracy() {
    let ds = make_blobs(&BlobsSpec {
        n: 2000,
        classes: 10,
        dim: 32,
        separation: 10.0,
        noise_std: 1.0,
        seed: 4,
    })
    .unwrap();
    let (c, d) = (10, 32);
    let mut centroids = vec![0.0; c * d];
    let counts = ds.class_counts();
    for i in 0..ds.len() {
        let y = ds.y_true()[i];
        for (j, v) in ds.x().row(i).iter().enumerate() {
            centroids[y * d + j] += v / counts[y] as f64;
        }
    }
    let correct = (0..ds.len())
        .filter(|&i| {
            let row = ds.x().row(i);
            let nearest = (0..c)
                .min_by(|&a, &b| {
                    let da: f64 = row
                        .iter()
                        .zip(&centroids[a * d..])
                        .map(|(x, m)| (x - m).powi(2))
                        .sum();
                    let db: f64 = row
                        .iter()
                        .zip(&centroids[b * d..])
                        .map(|(x, m)| (x - m).powi(2))
                        .sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            nearest == ds.y_true()[i]
        })
        .count();
    assert!(correct as f64 / ds.len() as f64 > 0.99);
}

#[test]
fn meta_size_limits() {
    let ds = blobs(100, 5, 0);
    let (_, meta) = split_meta(
        &ds,
        &SplitSpec {
            meta_size: 5,
            seed: 1,
        },
    )
    .unwrap();
    assert_eq!(meta.class_counts(), vec![1; 5]);
    assert!(split_meta(
        &ds,
        &SplitSpec {
            meta_size: 11,
            seed: 1
        }
    )
    .is_err());
    assert!(split_meta(
        &ds,
        &SplitSpec {
            meta_size: 4,
            seed: 1
        }
    )
    .is_err());
}

#[test]
fn pipeline_reproducible_from_seeds() {
    let build = || {
        let ds = blobs(500, 5, 11);
        let (rest, test) = split_test(&ds, 0.2, 12).unwrap();
        let (mut train, meta) = split_meta(
            &rest,
            &SplitSpec {
                meta_size: 25,
                seed: 13,
            },
        )
        .unwrap();
        let t = build_transition_matrix(
            &NoiseSpec {
                kind: NoiseKind::Flip2,
                p: 0.5,
                pairing: None,
                seed: 14,
            },
            5,
        )
        .unwrap();
        train.apply_noise(&t, 14).unwrap();
        (train, meta, test)
    };
    assert_eq!(build(), build());
}

#[test]
fn idx_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 28 * 28).map(|i| (i * 37 % 256) as u8).collect();
    let labels = [3u8, 0, 9];
    let img = dir.path().join("img.idx");
    let lab = dir.path().join("lab.idx");
    std::fs::write(&img, encode_idx_images(&pixels, 3, 28, 28).unwrap()).unwrap();
    std::fs::write(&lab, encode_idx_labels(&labels)).unwrap();
    let ds = load_idx(&img, &lab).unwrap();
    assert_eq!(ds.input_dim(), 784);
    assert_eq!(ds.y_true(), &[3, 0, 9]);
    assert_eq!(ds.num_classes(), 10);
    let back: Vec<u8> = ds
        .x()
        .data()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    assert_eq!(back, pixels);

    let bytes = std::fs::read(&img).unwrap();
    assert!(matches!(
        parse_idx_images(&bytes[..bytes.len() - 1]),
        Err(mfrw_core::Error::Io(_))
    ));
    std::fs::write(&lab, encode_idx_labels(&labels[..2])).unwrap();
    assert!(matches!(
        load_idx(&img, &lab),
        Err(mfrw_core::Error::Consistency(_))
    ));
}
