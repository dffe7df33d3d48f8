//! Counter-based random streams.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(seed, purpose, index)`. Streams never share state, so a parallel map over
//! sample indices draws exactly the same numbers as a sequential loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags. Distinct tags give independent streams for the same seed.
pub mod purpose {
    pub const PERTURB: u64 = 0x7065_7274;
    pub const SCORER_INIT: u64 = 0x7363_6f72;
    pub const FINE_INIT: u64 = 0x6669_6e65;
    pub const COARSE_INIT: u64 = 0x636f_6172;
    pub const QUERY_INIT: u64 = 0x7175_6572;
    pub const KEY_INIT: u64 = 0x6b65_7973;
    pub const OUT_PROJ_INIT: u64 = 0x6f75_7470;
    pub const TEXT_PROJ: u64 = 0x7465_7874;
    pub const SYNTH: u64 = 0x7379_6e74;
    pub const SAMPLE_VIDEOS: u64 = 0x7669_6473;
    pub const FIXTURE: u64 = 0x6669_7874;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(purpose ^ splitmix64(index)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(purpose);
    rng
}
