//! Seeded random streams.
//!
//! Every Monte Carlo loop splits its work into fixed-size blocks; block `b`
//! draws from ChaCha stream `b` under the caller's seed, so results depend
//! only on `(seed, samples, block size)` and not on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type StreamRng = ChaCha8Rng;

/// Samples per parallel block.
pub const BLOCK_SIZE: usize = 4096;

pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f(rng, block_len)` over `ceil(total / BLOCK_SIZE)` blocks in
/// parallel and returns the per-block results in block order.
pub fn par_blocks<T, F>(seed: u64, total: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng, usize) -> T + Sync,
{
    let blocks = total.div_ceil(BLOCK_SIZE);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = BLOCK_SIZE.min(total - b * BLOCK_SIZE);
            let mut rng = stream(seed, b as u64);
            f(&mut rng, len)
        })
        .collect()
}
