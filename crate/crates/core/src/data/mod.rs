//! CIFAR-10 binary ingestion, class-balanced subsets, normalization,
//! augmentation, batching and patch-whitening fits.

mod augment;
mod batch;
mod normalize;
pub mod synthetic;
mod whitening;

pub use augment::{augment_batch, hflip, padded_crop, Augmenter, CROP_PAD};
pub use batch::{batch_indices, epoch_seed};
pub use normalize::{ChannelStats, NormalizedSet};
pub use whitening::{fit_whitening, fit_whitening_on, patch_covariance, sample_patches, WhiteningFilters};

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CLASSES: usize = 10;
pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const PIXELS: usize = CHANNELS * SIDE * SIDE;
pub const RECORD_BYTES: usize = PIXELS + 1;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Raw CIFAR images kept as bytes, `[M, 3, 32, 32]` planar RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub split: Split,
    /// SHA-256 of the source file contents, in load order.
    pub source_digest: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut counts = [0; CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// New dataset holding the given records, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
            source_digest: self.source_digest.clone(),
        }
    }

    /// SHA-256 over the labels and pixels of this (possibly subset) dataset.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(&self.labels);
        h.update(&self.images);
        hex::encode(h.finalize())
    }

    /// Serializes to the 3073-byte-record binary layout.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * RECORD_BYTES);
        for i in 0..self.len() {
            out.push(self.labels[i]);
            out.extend_from_slice(self.image(i));
        }
        out
    }
}

/// Parses one buffer of `label byte + 3072 pixel bytes` records.
pub fn parse_records(bytes: &[u8], origin: &str) -> Result<(Vec<u8>, Vec<u8>)> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Data(format!(
            "{origin}: length {} is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let m = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(m);
    let mut images = Vec::with_capacity(m * PIXELS);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::Data(format!(
                "{origin}: record {i} has label byte {} (expected 0..=9)",
                rec[0]
            )));
        }
        labels.push(rec[0]);
        images.extend_from_slice(&rec[1..]);
    }
    Ok((labels, images))
}

pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    let mut h = Sha256::new();
    let mut labels = Vec::new();
    let mut images = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|e| Error::at_path(p, e))?;
        h.update(&bytes);
        let (l, im) = parse_records(&bytes, &p.display().to_string())?;
        labels.extend(l);
        images.extend(im);
    }
    Ok(Dataset {
        images,
        labels,
        split,
        source_digest: hex::encode(h.finalize()),
    })
}

pub fn train_paths(dir: &Path) -> Vec<PathBuf> {
    TRAIN_FILES.iter().map(|f| dir.join(f)).collect()
}

pub fn test_paths(dir: &Path) -> Vec<PathBuf> {
    vec![dir.join(TEST_FILE)]
}

/// Draws exactly `per_class` records of every class without replacement and
/// returns them in shuffled order. Deterministic in `(ds, per_class, seed)`.
pub fn sample_subset(ds: &Dataset, per_class: usize, seed: u64) -> Result<Dataset> {
    Ok(ds.select(&subset_indices(ds, per_class, seed)?))
}

pub fn subset_indices(ds: &Dataset, per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut picked = Vec::with_capacity(per_class * CLASSES);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} has {} samples, {per_class} requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..per_class]);
    }
    picked.shuffle(&mut rng);
    Ok(picked)
}
