mod common;

use common::projected_covariance;
use proptest::prelude::*;
use swiftnet_core::data::{
    batch_indices, fit_whitening, load_cifar_binary, sample_patches, sample_subset, synthetic, test_paths, train_paths,
    Augmenter, ChannelStats, Dataset, NormalizedSet, Split, PIXELS,
};
use swiftnet_core::train::prepare_batch;

#[test]
fn whitening_decorrelates_its_fitting_sample() {
    let ds = synthetic::generate(200, 30, Split::Train, 5);
    let stats = ChannelStats::fit(&ds);
    let (n, eps, seed) = (20_000, 1e-3, 9);
    let w = fit_whitening(&ds, &stats, n, eps, seed).unwrap();

    // rebuild the exact fitting sample
    let mut images = vec![0.0f64; ds.len() * PIXELS];
    for (i, out) in images.chunks_exact_mut(PIXELS).enumerate() {
        stats.normalize_into(ds.image(i), out);
    }
    let patches = sample_patches(&images, n, seed).unwrap();
    let cov = projected_covariance(&w.filters, &patches);

    let mut worst_off = 0.0f64;
    for i in 0..27 {
        for j in 0..27 {
            if i != j {
                worst_off = worst_off.max(cov[i * 27 + j].abs());
            }
        }
        let lam = w.eigvals[i];
        let want = lam / (lam + eps);
        assert!(
            (cov[i * 27 + i] - want).abs() < 1e-6,
            "diag {i}: {} vs {want}",
            cov[i * 27 + i]
        );
    }
    assert!(worst_off <= 1e-3, "off-diagonal {worst_off}");
    assert!(w.eigvals.windows(2).all(|p| p[0] >= p[1]));
    assert!(w.eigvals.iter().all(|&v| v >= 0.0));
}

#[test]
fn constant_images_keep_filters_finite() {
    let mut ds = synthetic::generate(20, 0, Split::Train, 1);
    ds.images.iter_mut().for_each(|b| *b = 77);
    let stats = ChannelStats::fit(&ds);
    assert_eq!(stats.std, [ChannelStats::STD_FLOOR; 3]);
    let w = fit_whitening(&ds, &stats, 1000, 1e-3, 0).unwrap();
    assert!(w.eigvals.iter().all(|&v| v.abs() < 1e-12));
    assert!(w.filters.iter().all(|v| v.is_finite()));
}

#[test]
fn channel_stats_match_hand_sums() {
    let ds = synthetic::generate(10, 60, Split::Train, 2);
    let stats = ChannelStats::fit(&ds);
    for c in 0..3 {
        let mut vals = Vec::new();
        for i in 0..10 {
            vals.extend(
                ds.images[i * 3072 + c * 1024..i * 3072 + (c + 1) * 1024]
                    .iter()
                    .map(|&b| b as f64 / 255.0),
            );
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sq = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        let std = (sq - mean * mean).sqrt();
        assert!((stats.mean[c] - mean).abs() < 1e-6);
        assert!((stats.std[c] - std).abs() < 1e-6);
    }
}

#[test]
fn one_red_pixel_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = vec![0u8; 3073];
    rec[0] = 7;
    rec[1] = 255;
    let path = dir.path().join("one.bin");
    std::fs::write(&path, &rec).unwrap();
    let ds = load_cifar_binary(&[&path], Split::Train).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.labels, vec![7]);
    assert_eq!((ds.images[0], ds.images[1024], ds.images[2048]), (255, 0, 0));
}

fn full_pipeline(dir: &std::path::Path, seed: u64) -> Vec<(Vec<f32>, Vec<usize>)> {
    let train = load_cifar_binary(&train_paths(dir), Split::Train).unwrap();
    let sub = sample_subset(&train, 8, seed).unwrap();
    let stats = ChannelStats::fit(&sub);
    let set = NormalizedSet::<f32>::new(&sub, &stats);
    let mut out = Vec::new();
    for epoch in 0..2 {
        let mut aug = Augmenter::for_epoch(seed, epoch);
        for idx in batch_indices(set.len(), 16, true, swiftnet_core::data::epoch_seed(seed, epoch)) {
            let (x, y) = prepare_batch(&set, &idx, Some(&mut aug)).unwrap();
            out.push((x.data().to_vec(), y));
        }
    }
    out
}

#[test]
fn pipeline_is_reproducible_batch_for_batch() {
    let dir = tempfile::tempdir().unwrap();
    synthetic::write_cifar_dir(dir.path(), 20, 30, 4).unwrap();
    let a = full_pipeline(dir.path(), 11);
    let b = full_pipeline(dir.path(), 11);
    assert_eq!(a.len(), 10);
    assert_eq!(a, b);
    let c = full_pipeline(dir.path(), 12);
    assert_ne!(a, c);

    let test = load_cifar_binary(&test_paths(dir.path()), Split::Test).unwrap();
    assert_eq!(test.len(), 30);
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..6).prop_flat_map(|m| {
        (
            proptest::collection::vec(any::<u8>(), m * PIXELS),
            proptest::collection::vec(0u8..10, m),
        )
            .prop_map(|(images, labels)| Dataset {
                images,
                labels,
                split: Split::Train,
                source_digest: String::new(),
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn binary_round_trip(ds in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, ds.to_binary()).unwrap();
        let back = load_cifar_binary(&[&p], Split::Train).unwrap();
        prop_assert_eq!(back.images, ds.images);
        prop_assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn subsets_are_exactly_balanced(per_class in 1usize..12, seed in any::<u64>()) {
        let ds = synthetic::generate(120, 0, Split::Train, 0);
        let sub = sample_subset(&ds, per_class, seed).unwrap();
        prop_assert_eq!(sub.class_counts(), [per_class; 10]);
    }

    #[test]
    fn batches_cover_each_index_once(m in 1usize..300, bs in 1usize..64, shuffle in any::<bool>(), seed in any::<u64>()) {
        let batches: Vec<Vec<usize>> = batch_indices(m, bs, shuffle, seed).collect();
        prop_assert_eq!(batches.len(), m.div_ceil(bs));
        let mut all: Vec<usize> = batches.concat();
        if !shuffle {
            prop_assert_eq!(&all, &(0..m).collect::<Vec<_>>());
        }
        all.sort_unstable();
        prop_assert_eq!(all, (0..m).collect::<Vec<_>>());
    }
}
