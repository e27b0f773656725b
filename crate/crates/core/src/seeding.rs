//! Seed derivation: every random stream comes from the master seed, a
//! stream tag and an item index, so parallel and serial runs draw the same
//! numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut h = splitmix64(master);
    for b in stream.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    splitmix64(h ^ splitmix64(index))
}

pub fn rng_for(master: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}
