//! Seed derivation for reproducible, independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for the stream identified by `tags` under `parent`.
pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(parent), |acc, &t| {
        splitmix64(acc ^ splitmix64(t))
    })
}

pub fn stream(parent: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, tags))
}

/// Seed fixed by the content of an item sequence rather than its position in
/// a dataset.
pub fn content_seed(parent: u64, items: &[usize]) -> u64 {
    let tags: Vec<u64> = std::iter::once(items.len() as u64)
        .chain(items.iter().map(|&i| i as u64))
        .collect();
    derive_seed(parent, &tags)
}
