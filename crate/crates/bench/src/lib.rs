//! Shared fixtures for the criterion benches in `benches/`.

use moco_core::nn::Tensor4;
use moco_core::simulate::{generate_phantom, inject_motion, sample_motion};
use moco_core::volume::normalize_boundaries;
use moco_core::{MotionConfig, NormalizedBoundaries, PhantomConfig, Volume, ZDisplacementMap};

/// Deterministic pseudo-random values in `[-1, 1)` from a 64-bit LCG.
pub fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

pub fn tensor(shape: [usize; 4], seed: u64) -> Tensor4 {
    Tensor4::new(shape, values(shape.iter().product(), seed)).expect("finite values")
}

/// A motion-corrupted desk-scale phantom (64 x 128 x 24) with its normalized boundaries.
pub fn desk_volume(seed: u64) -> (Volume, NormalizedBoundaries) {
    let p = generate_phantom(&PhantomConfig { seed, ..Default::default() }).expect("valid config");
    let (_, w, n) = p.volume.dims();
    let m = sample_motion(seed, w, n, &MotionConfig { sigma_y: 2.0, ..Default::default() }).expect("valid motion");
    let inj = inject_motion(&p.volume, &p.boundaries, &m, 10.0, w as f64 / 512.0).expect("matching dims");
    let b = normalize_boundaries(&inj.boundaries, 10.0).expect("positive norm");
    (inj.volume, b)
}

pub fn displacement(width: usize, slices: usize, seed: u64) -> ZDisplacementMap {
    ZDisplacementMap::new(width, slices, values(width * slices, seed)).expect("finite values")
}
