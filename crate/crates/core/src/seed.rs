//! Named, hashed seed streams. Every random draw in a run descends from the
//! master seed through [`derive`], so results never depend on evaluation
//! order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `name` at position `indices` under `master`.
pub fn derive(master: u64, name: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for b in name.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i));
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, name: &str, indices: &[u64]) -> ChaCha8Rng {
    rng(derive(master, name, indices))
}
