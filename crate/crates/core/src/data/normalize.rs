use serde::{Deserialize, Serialize};

use super::{Dataset, CHANNELS, PIXELS, SIDE};
use crate::element::Element;
use crate::error::Result;
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation of `pixel / 255`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl ChannelStats {
    pub const STD_FLOOR: f64 = 1e-8;

    pub fn fit(ds: &Dataset) -> Self {
        let plane = SIDE * SIDE;
        let count = (ds.len() * plane) as f64;
        let mut mean = [0.0; CHANNELS];
        let mut std = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            let values = || {
                (0..ds.len()).flat_map(move |i| {
                    ds.image(i)[c * plane..(c + 1) * plane]
                        .iter()
                        .map(|&b| b as f64 / 255.0)
                })
            };
            let m = values().sum::<f64>() / count;
            let var = values().map(|v| (v - m).powi(2)).sum::<f64>() / count;
            mean[c] = m;
            std[c] = var.sqrt().max(Self::STD_FLOOR);
        }
        ChannelStats { mean, std }
    }

    #[inline]
    pub fn apply(&self, channel: usize, byte: u8) -> f64 {
        (byte as f64 / 255.0 - self.mean[channel]) / self.std[channel]
    }

    /// Normalizes one `[3, 32, 32]` byte image into `out`.
    pub fn normalize_into<T: Element>(&self, image: &[u8], out: &mut [T]) {
        let plane = SIDE * SIDE;
        for c in 0..CHANNELS {
            for (o, &b) in out[c * plane..(c + 1) * plane]
                .iter_mut()
                .zip(&image[c * plane..(c + 1) * plane])
            {
                *o = T::of(self.apply(c, b));
            }
        }
    }
}

/// A dataset normalized once up front, ready for batching.
#[derive(Debug, Clone)]
pub struct NormalizedSet<T> {
    pub images: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Element> NormalizedSet<T> {
    pub fn new(ds: &Dataset, stats: &ChannelStats) -> Self {
        let mut images = vec![T::zero(); ds.len() * PIXELS];
        for (i, out) in images.chunks_exact_mut(PIXELS).enumerate() {
            stats.normalize_into(ds.image(i), out);
        }
        NormalizedSet {
            images,
            labels: (0..ds.len()).map(|i| ds.label(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[T] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    /// Gathers `[len(indices), 3, 32, 32]` images and their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let t = Tensor::new(&[indices.len(), CHANNELS, SIDE, SIDE], data)?;
        Ok((t, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn constant_ds(value: u8, m: usize) -> Dataset {
        Dataset {
            images: vec![value; m * PIXELS],
            labels: vec![0; m],
            split: Split::Train,
            source_digest: String::new(),
        }
    }

    #[test]
    fn constant_images_hit_std_floor() {
        let ds = constant_ds(51, 4);
        let s = ChannelStats::fit(&ds);
        assert!((s.mean[0] - 0.2).abs() < 1e-12);
        assert_eq!(s.std, [ChannelStats::STD_FLOOR; 3]);
        let n = NormalizedSet::<f32>::new(&ds, &s);
        assert!(n.images.iter().all(|v| v.is_finite() && v.abs() < 1e-3));
    }

    #[test]
    fn mean_pixel_maps_to_zero() {
        let s = ChannelStats {
            mean: [0.2, 0.4, 0.6],
            std: [0.5, 0.5, 0.5],
        };
        assert!(s.apply(0, 51).abs() < 1e-12);
        assert!(s.apply(1, 102).abs() < 1e-12);
        assert!(s.apply(2, 153).abs() < 1e-12);
    }
}
