//! Deterministic per-pixel random streams.
//!
//! Simulation draws come from ChaCha8, a counter-based generator: the frame
//! seed keys the cipher and the pixel's row-major index selects the stream.
//! Each pixel owns an independent stream and consumes draws bin by bin, so
//! a frame is a pure function of (inputs, seed) no matter how pixels are
//! scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The stream for one pixel of one frame.
pub fn pixel_stream(seed: u64, pixel_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel_index);
    rng
}
