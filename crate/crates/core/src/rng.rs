//! Seed derivation and scalar sampling helpers.
//!
//! Every random quantity in the crate is drawn from a `ChaCha20` stream
//! seeded through [`subseed`], so a dataset, a training run, or a property
//! suite is a pure function of its integer seed.

use crate::geom::Vec3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// SplitMix64 finalizer; decorrelates consecutive integers.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent seed for component `tag`, item `idx` of a run
/// seeded with `seed`.
pub fn subseed(seed: u64, tag: u64, idx: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)).wrapping_add(idx))
}

pub fn rng_for(seed: u64, tag: u64, idx: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(subseed(seed, tag, idx))
}

/// Standard normal draw via Box-Muller.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn gaussian_vec3<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(gaussian(rng), gaussian(rng), gaussian(rng))
}

/// Uniform direction on the unit sphere.
pub fn unit_vec3<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = gaussian_vec3(rng);
        if let Some(u) = v.normalized() {
            if v.norm() > 1e-6 {
                return u;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subseed_streams_are_distinct() {
        let a = subseed(7, 1, 0);
        let b = subseed(7, 1, 1);
        let c = subseed(7, 2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, subseed(7, 1, 0));
    }

    #[test]
    fn gaussian_moments_are_sane() {
        let mut rng = rng_for(0, 99, 0);
        let n = 20_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = gaussian(&mut rng);
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn unit_vec3_has_unit_norm() {
        let mut rng = rng_for(3, 4, 5);
        for _ in 0..100 {
            assert!((unit_vec3(&mut rng).norm() - 1.0).abs() < 1e-12);
        }
    }
}
