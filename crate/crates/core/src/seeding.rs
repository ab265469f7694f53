//! Deterministic seed derivation for independent random streams.
//!
//! Every drop, cell and user stream is seeded from the master seed through
//! [`derive`], so results never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// Stream identifiers keep the sub-streams of one index disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Drop = 1,
    Channel = 2,
    Family = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(master, stream, index)` into a child seed.
pub fn derive(master: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(master ^ (stream as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    splitmix64(a ^ splitmix64(index.wrapping_add(0xE703_7ED1_A0B4_28DB)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> SimRng {
    rng_from_seed(derive(master, stream, index))
}
