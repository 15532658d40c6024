//! Small learnable datasets in the CIFAR-10 binary layout, for tests,
//! benches and offline smoke runs.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Split, CHANNELS, CLASSES, PIXELS, RECORD_BYTES, SIDE, TEST_FILE, TRAIN_FILES};
use crate::error::{Error, Result};

/// Pixel byte for class `class` at `(c, y, x)` before noise. Each class gets
/// its own colour bias and stripe orientation/frequency.
fn prototype(class: usize, c: usize, y: usize, x: usize) -> f64 {
    let freq = 1.0 + (class % 5) as f64;
    let coord = if class < 5 { x } else { y } as f64;
    let stripe = (coord * freq * std::f64::consts::PI / SIDE as f64).sin();
    let tint = ((class * 3 + c * 7) % 10) as f64 / 9.0 - 0.5;
    128.0 + 50.0 * stripe + 60.0 * tint
}

/// `m` images with labels cycling `0..10`, pixel noise of +-`noise` bytes.
pub fn generate(m: usize, noise: u8, split: Split, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(m * PIXELS);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let class = i % CLASSES;
        labels.push(class as u8);
        for c in 0..CHANNELS {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let jitter = if noise == 0 {
                        0
                    } else {
                        rng.random_range(-(noise as i32)..=noise as i32)
                    };
                    let v = prototype(class, c, y, x) + jitter as f64;
                    images.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    Dataset {
        images,
        labels,
        split,
        source_digest: String::new(),
    }
}

/// Writes a directory with the five training files and the test file.
/// Each training file holds `train_per_file` records.
pub fn write_cifar_dir(dir: &Path, train_per_file: usize, test_records: usize, seed: u64) -> Result<()> {
    if train_per_file == 0 || test_records == 0 {
        return Err(Error::Config("synthetic files need at least one record".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::at_path(dir, e))?;
    // one dataset cut into five files, so labels keep cycling across files
    let all = generate(train_per_file * TRAIN_FILES.len(), 40, Split::Train, seed).to_binary();
    for (name, chunk) in TRAIN_FILES.iter().zip(all.chunks(train_per_file * RECORD_BYTES)) {
        let path = dir.join(name);
        fs::write(&path, chunk).map_err(|e| Error::at_path(&path, e))?;
    }
    let ds = generate(test_records, 40, Split::Test, seed ^ 0x7E57);
    let path = dir.join(TEST_FILE);
    fs::write(&path, ds.to_binary()).map_err(|e| Error::at_path(&path, e))
}
