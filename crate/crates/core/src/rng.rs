//! Seed derivation.
//!
//! Every randomized stage draws from a [`ChaCha8Rng`] whose seed is a pure
//! function of the root seed and a path of labels and indices, so any
//! repetition, teacher or sample can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a; only needs to be stable, not strong.
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(root: u64) -> Self {
        SeedStream(splitmix64(root))
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    /// Child stream identified by a static label.
    pub fn child(self, label: &str) -> Self {
        SeedStream(splitmix64(self.0 ^ splitmix64(hash_label(label))))
    }

    /// Child stream identified by an index.
    pub fn index(self, i: u64) -> Self {
        SeedStream(splitmix64(
            self.0
                .wrapping_add(splitmix64(i.wrapping_add(0x5851_f42d_4c95_7f2d))),
        ))
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Seed for the `index`-th element of a sweep or batch, independent of how
/// many siblings exist.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    SeedStream::new(root).index(index).seed()
}
