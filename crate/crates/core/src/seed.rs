//! Seed derivation and the exact Gaussian sampler used by the generator and attacks.
//!
//! Every random stream in the toolkit is a `ChaCha8Rng` seeded from a 64-bit value
//! derived with [`mix`]. Deriving child seeds by hashing (instead of drawing them from a
//! shared generator) keeps results independent of evaluation order and thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a stream index.
#[inline]
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// `mix` applied twice, for streams keyed by two indices (e.g. class and sample).
#[inline]
pub fn mix2(seed: u64, a: u64, b: u64) -> u64 {
    mix(mix(seed, a), b)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal deviates by the Box–Muller transform.
///
/// Each pair of uniforms `u1 = 1 - U`, `u2 = U'` (with `U, U'` uniform on `[0, 1)`, so
/// `u1` lies in `(0, 1]`) yields `r = sqrt(-2 ln u1)` and the two deviates
/// `r cos(2π u2)` then `r sin(2π u2)`, in that order.
pub struct BoxMuller<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> BoxMuller<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn into_inner(self) -> R {
        self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_deterministic_and_spreads() {
        assert_eq!(mix(7, 3), mix(7, 3));
        assert_ne!(mix(7, 3), mix(7, 4));
        assert_ne!(mix(7, 3), mix(8, 3));
        assert_ne!(mix2(1, 2, 3), mix2(1, 3, 2));
    }

    #[test]
    fn box_muller_moments() {
        let mut g = BoxMuller::new(rng(11));
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn box_muller_pairs_share_radius() {
        let mut g = BoxMuller::new(rng(5));
        let a = g.next_normal();
        let b = g.next_normal();
        let mut r = rng(5);
        let u1 = 1.0 - r.gen::<f64>();
        let u2 = r.gen::<f64>();
        let rad = (-2.0 * u1.ln()).sqrt();
        assert_eq!(a, rad * (2.0 * std::f64::consts::PI * u2).cos());
        assert_eq!(b, rad * (2.0 * std::f64::consts::PI * u2).sin());
    }
}
