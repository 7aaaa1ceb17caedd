//! Deterministic inputs shared by the benchmarks.

use arm_core::evalkit::Scored;
use arm_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform noise in `[0, 1)`.
pub fn random_fov(side: usize, channels: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(side, side, channels, |_, _, _| rng.random::<f32>())
}

/// Two overlapping score distributions, half positives.
pub fn scored_dataset(n: usize, seed: u64) -> Vec<Scored> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let shift = if positive { 0.25 } else { 0.0 };
            Scored {
                score: (rng.random::<f64>() * 0.75 + shift).min(1.0),
                positive,
            }
        })
        .collect()
}

/// FOV with a few filled disks of `rgb` on white.
pub fn blob_fov(side: usize, rgb: [f32; 3]) -> Tensor {
    let disks = [(0.3, 0.3, 0.12), (0.65, 0.6, 0.2), (0.25, 0.75, 0.08)];
    Tensor::from_fn(side, side, 3, |y, x, c| {
        let (fy, fx) = (y as f32 / side as f32, x as f32 / side as f32);
        let hit = disks.iter().any(|&(cy, cx, r)| (fy - cy).powi(2) + (fx - cx).powi(2) <= r * r);
        if hit {
            rgb[c]
        } else {
            1.0
        }
    })
}
