//! Counter-based random streams.
//!
//! Every trajectory owns its own ChaCha stream keyed by `(seed, index,
//! purpose)`. Because ChaCha is a counter-mode generator, a stream's output
//! depends only on its key, so trajectories can be generated in any order or
//! on any number of workers and still produce bit-identical batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. Each purpose gets a disjoint ChaCha stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Brownian = 0,
    Auxiliary = 1,
    Resample = 2,
}

const PURPOSES: u64 = 3;

pub fn stream(seed: u64, index: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(PURPOSES).wrapping_add(purpose as u64));
    rng
}

pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// Derive a child seed from a parent seed and a list of labels (splitmix64).
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    let mut h = mix64(seed ^ 0x9E37_79B9_7F4A_7C15);
    for &l in labels {
        h = mix64(h ^ mix64(l.wrapping_add(0xD134_2543_DE82_EF95)));
    }
    h
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
