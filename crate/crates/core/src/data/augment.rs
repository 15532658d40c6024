use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{epoch_seed, CHANNELS, SIDE};
use crate::element::Element;
use crate::tensor::Tensor;

/// Reflection padding applied before random cropping.
pub const CROP_PAD: usize = 4;

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// Crops a 32x32 window at `(dy, dx)` out of the image reflect-padded by
/// [`CROP_PAD`]; `(CROP_PAD, CROP_PAD)` is the identity.
pub fn padded_crop<T: Element>(image: &[T], dy: usize, dx: usize, out: &mut [T]) {
    let plane = SIDE * SIDE;
    for c in 0..CHANNELS {
        let src = &image[c * plane..(c + 1) * plane];
        let dst = &mut out[c * plane..(c + 1) * plane];
        for y in 0..SIDE {
            let sy = reflect((y + dy) as isize - CROP_PAD as isize, SIDE);
            for x in 0..SIDE {
                let sx = reflect((x + dx) as isize - CROP_PAD as isize, SIDE);
                dst[y * SIDE + x] = src[sy * SIDE + sx];
            }
        }
    }
}

/// Mirrors an image left-right in place.
pub fn hflip<T: Element>(image: &mut [T]) {
    for row in image.chunks_exact_mut(SIDE) {
        row.reverse();
    }
}

/// Per-epoch random stream for crop offsets and flips.
pub struct Augmenter {
    rng: ChaCha8Rng,
    pub flip_probability: f64,
}

impl Augmenter {
    pub fn for_epoch(seed: u64, epoch: u64) -> Self {
        Augmenter {
            rng: ChaCha8Rng::seed_from_u64(epoch_seed(seed ^ 0xA11C_E5ED, epoch)),
            flip_probability: 0.5,
        }
    }

    /// Draws `(dy, dx, flip)` for one image.
    pub fn draw(&mut self) -> (usize, usize, bool) {
        let dy = self.rng.random_range(0..=2 * CROP_PAD);
        let dx = self.rng.random_range(0..=2 * CROP_PAD);
        let flip = self.rng.random::<f64>() < self.flip_probability;
        (dy, dx, flip)
    }
}

/// Reflect-pad, random-crop and randomly flip every image of `[N,3,32,32]`.
pub fn augment_batch<T: Element>(batch: &mut Tensor<T>, aug: &mut Augmenter) {
    let per = CHANNELS * SIDE * SIDE;
    let mut scratch = vec![T::zero(); per];
    for img in batch.data_mut().chunks_exact_mut(per) {
        let (dy, dx, flip) = aug.draw();
        padded_crop(img, dy, dx, &mut scratch);
        if flip {
            hflip(&mut scratch);
        }
        img.copy_from_slice(&scratch);
    }
}
