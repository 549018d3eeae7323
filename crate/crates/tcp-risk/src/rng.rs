//! Counter-based deterministic PRNG.
//!
//! The generator is SplitMix64 run in counter mode: the i-th output is
//! `mix(key + (i+1) * GOLDEN)`, so any draw is a pure function of
//! (seed, stream, counter) and streams can be split without sharing
//! state. Normal variates come from the inverse-CDF transform.

use crate::stats::normal_quantile;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix(seed ^ GOLDEN),
            counter: 0,
        }
    }

    /// Independent stream derived from the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self {
            key: mix(mix(seed ^ GOLDEN) ^ stream.wrapping_mul(0xD605_0B91_3E9F_5A37)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the inverse CDF.
    pub fn next_normal(&mut self) -> f64 {
        normal_quantile(self.next_uniform())
    }

    /// Uniform usize in [0, n).
    pub fn next_below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}
