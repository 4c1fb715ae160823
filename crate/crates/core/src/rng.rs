//! Counter-style RNG keying: every random draw in a run comes from a
//! ChaCha sub-stream derived from a tuple of integers, so results do not
//! depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream domains. Distinct domains never share sub-streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    NoiseZeta = 1,
    NoiseTheta = 2,
    Data = 3,
    Init = 4,
    Topology = 5,
    ProblemSetup = 6,
    MonteCarlo = 7,
    Repetition = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a seed and a key path into a single 64-bit sub-stream seed.
pub fn derive_seed(seed: u64, domain: Domain, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(domain as u64));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn keyed_rng(seed: u64, domain: Domain, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, domain, path))
}
