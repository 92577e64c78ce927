//! Shared fixtures for the pipeline benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppc_core::cloud::{ProbabilisticPoint, ProbabilisticPointCloud};
use ppc_core::scene::{self, CameraIntrinsics};
use ppc_core::spad::{self, HistogramFrame, PulseModel, SbrTarget, SensorConfig};

/// A uniform synthetic cloud of `n` points in a cube of the given side.
pub fn synthetic_cloud(n: usize, side: f64, seed: u64) -> ProbabilisticPointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| ProbabilisticPoint {
            position: [
                rng.gen_range(0.0..side),
                rng.gen_range(0.0..side),
                rng.gen_range(0.0..side),
            ],
            probability: rng.gen_range(0.001..1.0),
            pixel: None,
        })
        .collect();
    ProbabilisticPointCloud { points, metadata: Default::default() }
}

/// A simulated frame of the standard room at the given SBR pair.
pub fn simulated_frame(width: u32, height: u32, sbr: (f64, f64), seed: u64) -> HistogramFrame {
    let intr = CameraIntrinsics::with_defaults(width, height);
    let (depth, albedo) = scene::render_scene(&scene::standard_room(), &intr).unwrap();
    let pulse = PulseModel::default_protocol();
    let sensor = SensorConfig::default();
    let target = SbrTarget::new(sbr.0, sbr.1).unwrap();
    spad::simulate_frame(&depth, &albedo, &pulse, &sensor, &target, seed).unwrap()
}
