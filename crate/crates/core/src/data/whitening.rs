use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChannelStats, Dataset, CHANNELS, PIXELS, SIDE};
use crate::error::{Error, Result};
use crate::nn::WHITENING_FILTERS;

const PATCH: usize = 3;

/// Fixed PCA-whitening filters for 3x3x3 input patches, stored `[27,3,3,3]`
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningFilters {
    pub filters: Vec<f64>,
    pub eigvals: Vec<f64>,
    pub eps: f64,
    pub fit_digest: String,
}

impl WhiteningFilters {
    pub const DEFAULT_EPS: f64 = 1e-3;
    pub const DEFAULT_SAMPLES: usize = 100_000;

    /// Applies all 27 filters to one flattened patch.
    pub fn project(&self, patch: &[f64]) -> [f64; WHITENING_FILTERS] {
        let mut out = [0.0; WHITENING_FILTERS];
        for (o, row) in out.iter_mut().zip(self.filters.chunks_exact(WHITENING_FILTERS)) {
            *o = row.iter().zip(patch).map(|(a, b)| a * b).sum();
        }
        out
    }
}

/// Draws `count` random 3x3x3 patches from `[M,3,32,32]` images, flattened in
/// `(channel, row, col)` order to match the conv kernel layout.
pub fn sample_patches(images: &[f64], count: usize, seed: u64) -> Result<Vec<f64>> {
    if images.is_empty() || !images.len().is_multiple_of(PIXELS) {
        return Err(Error::Data(format!(
            "whitening input has {} values, not a positive multiple of {PIXELS}",
            images.len()
        )));
    }
    let m = images.len() / PIXELS;
    let plane = SIDE * SIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * WHITENING_FILTERS);
    for _ in 0..count {
        let i = rng.random_range(0..m);
        let y = rng.random_range(0..=SIDE - PATCH);
        let x = rng.random_range(0..=SIDE - PATCH);
        let img = &images[i * PIXELS..(i + 1) * PIXELS];
        for c in 0..CHANNELS {
            for ky in 0..PATCH {
                let row = c * plane + (y + ky) * SIDE + x;
                out.extend_from_slice(&img[row..row + PATCH]);
            }
        }
    }
    Ok(out)
}

/// Mean-centred 27x27 covariance of flattened patches.
pub fn patch_covariance(patches: &[f64]) -> Vec<f64> {
    let d = WHITENING_FILTERS;
    let n = patches.len() / d;
    let mut mean = [0.0; WHITENING_FILTERS];
    for p in patches.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centred = [0.0; WHITENING_FILTERS];
    for p in patches.chunks_exact(d) {
        for k in 0..d {
            centred[k] = p[k] - mean[k];
        }
        for a in 0..d {
            let ca = centred[a];
            for b in a..d {
                cov[a * d + b] += ca * centred[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / n as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    cov
}

/// Fits whitening filters on already-normalized `[M,3,32,32]` images.
pub fn fit_whitening_on(images: &[f64], sample_patches_n: usize, eps: f64, seed: u64) -> Result<WhiteningFilters> {
    let d = WHITENING_FILTERS;
    if sample_patches_n < d {
        return Err(Error::Config(format!(
            "sample_patches must be at least {d}, got {sample_patches_n}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("whitening eps must be positive, got {eps}")));
    }
    let patches = sample_patches(images, sample_patches_n, seed)?;
    let cov = patch_covariance(&patches);
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("patch covariance".into()));
    }

    let eig = DMatrix::from_row_slice(d, d, &cov).symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut filters = Vec::with_capacity(d * d);
    let mut eigvals = Vec::with_capacity(d);
    for &k in &order {
        let lambda = eig.eigenvalues[k].max(0.0);
        let scale = 1.0 / (lambda + eps).sqrt();
        filters.extend(eig.eigenvectors.column(k).iter().map(|v| v * scale));
        eigvals.push(lambda);
    }
    if filters.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("whitening filters".into()));
    }

    let mut h = Sha256::new();
    for v in &patches {
        h.update(v.to_le_bytes());
    }
    Ok(WhiteningFilters {
        filters,
        eigvals,
        eps,
        fit_digest: hex::encode(h.finalize()),
    })
}

/// Normalizes `ds` with `stats` and fits whitening filters on its patches.
pub fn fit_whitening(
    ds: &Dataset,
    stats: &ChannelStats,
    sample_patches_n: usize,
    eps: f64,
    seed: u64,
) -> Result<WhiteningFilters> {
    let mut images = vec![0.0f64; ds.len() * PIXELS];
    for (i, out) in images.chunks_exact_mut(PIXELS).enumerate() {
        stats.normalize_into(ds.image(i), out);
    }
    fit_whitening_on(&images, sample_patches_n, eps, seed)
}
