use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

/// Generator for one element of a keyed family, e.g. (frame, pixel).
pub fn keyed(seed: u64, key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = stream(seed, key);
    rng.set_stream(index);
    rng
}
