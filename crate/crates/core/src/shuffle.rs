//! Seeded, resumable data orders.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for `(seed, domain, counter)`.
pub(crate) fn stream_rng(seed: u64, domain: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(counter);
    rng
}

/// Element `position` of an endless sequence of seeded permutations of
/// `0..n`, one permutation per epoch.
pub(crate) struct EpochOrder {
    seed: u64,
    domain: u64,
    n: usize,
    epoch: Option<usize>,
    perm: Vec<usize>,
}

impl EpochOrder {
    pub(crate) fn new(seed: u64, domain: u64, n: usize) -> Self {
        Self {
            seed,
            domain,
            n,
            epoch: None,
            perm: Vec::new(),
        }
    }

    pub(crate) fn at(&mut self, position: usize) -> usize {
        let epoch = position / self.n;
        if self.epoch != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut stream_rng(self.seed, self.domain, epoch as u64));
            self.perm = perm;
            self.epoch = Some(epoch);
        }
        self.perm[position % self.n]
    }
}

/// `size` distinct indices below `len` (all of them when `len <= size`).
pub(crate) fn draw(rng: &mut ChaCha8Rng, len: usize, size: usize) -> Vec<usize> {
    index::sample(rng, len, size.min(len)).into_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_permutation_per_epoch() {
        let mut o = EpochOrder::new(3, 1, 5);
        for epoch in 0..3 {
            let mut seen: Vec<usize> = (0..5).map(|i| o.at(epoch * 5 + i)).collect();
            seen.sort();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
        let mut fresh = EpochOrder::new(3, 1, 5);
        assert_eq!(fresh.at(7), o.at(7));
        assert_ne!(
            (0..20).map(|i| EpochOrder::new(3, 1, 20).at(i)).collect::<Vec<_>>(),
            (0..20).map(|i| EpochOrder::new(3, 2, 20).at(i)).collect::<Vec<_>>()
        );
    }
}
