use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes an epoch number into a run seed (SplitMix64 finalizer).
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    let mut z = seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `ceil(m / batch_size)` index batches covering `0..m` exactly once.
/// Without shuffling the order is `0..m`.
pub fn batch_indices(m: usize, batch_size: usize, shuffle: bool, seed: u64) -> impl Iterator<Item = Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..m).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.into_iter()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_order() {
        let b: Vec<_> = batch_indices(10, 4, false, 0).collect();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b.concat(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn shuffled_epoch_covers_everything() {
        let mut all: Vec<usize> = batch_indices(37, 5, true, 3).flatten().collect();
        assert_ne!(all, (0..37).collect::<Vec<_>>());
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn epoch_seeds_differ() {
        assert_ne!(epoch_seed(1, 0), epoch_seed(1, 1));
        assert_eq!(epoch_seed(1, 5), epoch_seed(1, 5));
    }
}
