//! Seeded random source used by workload generation and the engine.
//!
//! The stream is ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`), whose
//! output is specified independently of platform. All sampling is done here
//! on raw `u64` words so results do not depend on the sampling code of any
//! particular `rand` release:
//!
//! * `unit()`: top 53 bits scaled by 2^-53, in `[0, 1)`.
//! * `below(n)`: Lemire's multiply-shift with rejection, exact uniform.
//! * `exp_us(rate)`: inverse CDF `-ln(1 - u) / rate`, rounded to microseconds.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream for a named purpose.
    pub fn derive(seed: u64, stream: &str) -> Self {
        Self::new(seed ^ crate::digest::digest64(stream.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.unit() < p
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Inclusive range.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    /// Exponential inter-arrival gap in microseconds for `rate` events per second.
    pub fn exp_us(&mut self, rate: f64) -> u64 {
        let u = self.unit();
        let secs = -(1.0 - u).ln() / rate;
        (secs * 1e6).round() as u64
    }

    /// Index drawn proportionally to `weights`. At least one weight must be positive.
    pub fn weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut x = self.unit() * total;
        let mut last = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if x < w {
                return i;
            }
            x -= w;
            last = i;
        }
        last
    }
}
