//! Counter-based seeding: every random draw is keyed by
//! `(seed, sample, token, channel)`, so results do not depend on the order in
//! which samples or tokens are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_key(seed: u64, sample: u64, token: u64, channel: u64) -> u64 {
    [sample, token, channel]
        .iter()
        .fold(splitmix64(seed), |acc, &part| {
            splitmix64(acc ^ splitmix64(part))
        })
}

pub fn keyed_rng(seed: u64, sample: u64, token: u64, channel: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, sample, token, channel))
}
