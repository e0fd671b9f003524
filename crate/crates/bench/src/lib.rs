//! Fixtures shared by the criterion benches.

use eegdiff_core::signal::Recording;
use eegdiff_core::{SeededRng, Tensor};

/// Standard-normal channels at 250 Hz.
pub fn noise_recording(channels: usize, samples: usize, seed: u64) -> Recording {
    let mut rng = SeededRng::new(seed);
    let data = (0..channels).map(|_| (0..samples).map(|_| rng.normal()).collect()).collect();
    Recording::new(data, 250.0, "noise").expect("finite samples")
}

/// A batch of images in `[-1, 1]`.
pub fn image_batch(n: usize, planes: usize, size: usize, seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    let data = (0..n * planes * size * size).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    Tensor::new(vec![n, planes, size, size], data).expect("shape matches data")
}
