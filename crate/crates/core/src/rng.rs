//! Deterministic, platform-independent random numbers.
//!
//! The generator is SplitMix64 used as a counter-based generator: draw `i`
//! (zero-based) of a stream seeded with `s` is
//!
//! ```text
//! mix64(s + (i + 1) * 0x9E3779B97F4A7C15)      (wrapping arithmetic)
//! mix64(z) = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!            z ^= z >> 27; z *= 0x94D049BB133111EB;
//!            z ^ (z >> 31)
//! ```
//!
//! Only integer arithmetic is involved, so streams are bit-identical on every
//! platform. Floats are derived from the top 53 bits. Transcendental functions
//! used by the distributions come from `libm`, which is a pure-Rust port and
//! therefore also platform-independent.

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Serializable position of an [`Rng`]: restoring it continues the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Independent stream number `index` derived from `seed`. A pure function
    /// of `(seed, index)`, so parallel workers can each take their own stream.
    pub fn substream(seed: u64, index: u64) -> Self {
        Rng::new(substream_seed(seed, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            counter: self.counter,
        }
    }

    pub fn from_state(state: RngState) -> Self {
        Rng {
            seed: state.seed,
            counter: state.counter,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidRange { lo, hi });
        }
        let x = lo + (hi - lo) * self.next_f64();
        // Rounding can land exactly on `hi` when the interval is tiny.
        Ok(if x >= hi { hi.next_down() } else { x })
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift with rejection; exact for every n.
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Standard normal via Box-Muller (cosine branch only, one draw per pair).
    pub fn gaussian(&mut self) -> f64 {
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Seed of [`Rng::substream`].
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(STREAM_SALT)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_splitmix_values() {
        // Reference SplitMix64 outputs for seed 0.
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn uniform_tiny_interval() {
        let mut rng = Rng::new(9);
        let tiny = 1e-300;
        for _ in 0..1000 {
            let x = rng.uniform(0.0, tiny).unwrap();
            assert!((0.0..tiny).contains(&x));
        }
        let x = rng.uniform(1.0, 1.0 + f64::EPSILON).unwrap();
        assert!((1.0..1.0 + f64::EPSILON).contains(&x));
    }

    #[test]
    fn uniform_rejects_empty_range() {
        let mut rng = Rng::new(1);
        assert!(matches!(rng.uniform(1.0, 1.0), Err(Error::InvalidRange { .. })));
        assert!(matches!(rng.uniform(2.0, 1.0), Err(Error::InvalidRange { .. })));
        assert!(rng.uniform(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn uniform_mean_million_draws() {
        let mut rng = Rng::new(20240601);
        let n = 1_000_000;
        let mean = (0..n).map(|_| rng.uniform(0.0, 1.0).unwrap()).sum::<f64>() / n as f64;
        // 3 sigma of the mean of U(0,1) over 1e6 draws is 3 * 0.2887 / 1000.
        assert!((mean - 0.5).abs() < 0.003, "mean {mean}");
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(77);
        let mut b = Rng::new(77);
        for _ in 0..100 {
            assert_eq!(a.uniform(-3.0, 5.0).unwrap().to_bits(), b.uniform(-3.0, 5.0).unwrap().to_bits());
        }
    }

    #[test]
    fn state_restore_continues_stream() {
        let mut rng = Rng::new(5);
        for _ in 0..37 {
            rng.next_u64();
        }
        let saved = rng.state();
        let tail: Vec<u64> = (0..50).map(|_| rng.next_u64()).collect();
        let mut restored = Rng::from_state(saved);
        let again: Vec<u64> = (0..50).map(|_| restored.next_u64()).collect();
        assert_eq!(tail, again);
    }

    #[test]
    fn substreams_are_pure_and_distinct() {
        let a = Rng::substream(3, 10).next_u64();
        assert_eq!(a, Rng::substream(3, 10).next_u64());
        assert_ne!(a, Rng::substream(3, 11).next_u64());
        assert_ne!(a, Rng::substream(4, 10).next_u64());
    }

    #[test]
    fn below_is_in_range_and_covers() {
        let mut rng = Rng::new(2);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[rng.below(7) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800));
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }
}
