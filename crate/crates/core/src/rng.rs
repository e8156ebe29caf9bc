//! Deterministic random number generation.
//!
//! All stochastic behaviour in the crate (dropout masks, noise quantization,
//! annealed rounding, parameter init, corpus synthesis) draws from
//! splitmix64-style counter hashing so that runs are bit-reproducible across
//! platforms and independent of evaluation order. Stream splitting is by
//! `(seed, op index, element index)`.

/// splitmix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a `(seed, stream, counter)` triple into 64 uniform bits.
#[inline]
pub fn counter_hash(seed: u64, stream: u64, counter: u64) -> u64 {
    mix(mix(mix(seed) ^ stream) ^ counter)
}

/// Map 64 bits to a uniform double in `[0, 1)`.
#[inline]
pub fn bits_to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform in `[0, 1)` for `(seed, stream, counter)`.
#[inline]
pub fn uniform(seed: u64, stream: u64, counter: u64) -> f64 {
    bits_to_unit(counter_hash(seed, stream, counter))
}

/// Sequential generator for init and corpus synthesis.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: mix(seed) }
    }

    /// Derive an independent generator for a named substream.
    pub fn fork(&self, stream: u64) -> Self {
        Rng { state: mix(self.state ^ mix(stream)) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        bits_to_unit(self.next_u64())
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 + 1.0; // (0, 2^53]
        let u1 = u1 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Normal truncated to two standard deviations, then scaled.
    pub fn trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let v = self.normal();
            if v.abs() <= 2.0 {
                return v * std;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_hash_is_deterministic_and_sensitive() {
        assert_eq!(counter_hash(1, 2, 3), counter_hash(1, 2, 3));
        assert_ne!(counter_hash(1, 2, 3), counter_hash(1, 2, 4));
        assert_ne!(counter_hash(1, 2, 3), counter_hash(1, 3, 3));
        assert_ne!(counter_hash(1, 2, 3), counter_hash(2, 2, 3));
    }

    #[test]
    fn unit_in_range() {
        let mut r = Rng::new(7);
        for _ in 0..10_000 {
            let u = r.unit();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut r = Rng::new(11);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = r.normal();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn forked_streams_do_not_collide() {
        let base = Rng::new(3);
        let mut a = base.fork(1);
        let mut b = base.fork(2);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }
}
