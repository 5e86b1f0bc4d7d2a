//! Keyed counter-based random streams.
//!
//! Every draw in the crate comes from a ChaCha8 block cipher whose 256-bit key
//! is the tuple `(seed, purpose, id_a, id_b)`; the block counter starts at zero.
//! A stream therefore depends only on its key, never on how many draws other
//! streams consumed or on which thread asked for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Sequence = 1,
    Field = 2,
    Jitter = 3,
    Readout = 4,
    Bootstrap = 5,
    Compile = 6,
    Calibration = 7,
    Synthetic = 8,
}

pub fn stream(seed: u64, purpose: Purpose, id_a: u64, id_b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&id_a.to_le_bytes());
    key[24..32].copy_from_slice(&id_b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
