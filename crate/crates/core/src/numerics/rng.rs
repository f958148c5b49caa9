//! Splittable deterministic random streams.
//!
//! A stream is the triple `(base_seed, stream_id, counter)`. Output is drawn
//! from ChaCha20 keyed by `base_seed`, using `stream_id` as the ChaCha stream
//! (nonce) and `counter` as the 32-bit word position, so any stream can be
//! resumed from its value alone and two streams never share state.
//!
//! Normal deviates use Box–Muller on pairs of 64-bit words, so every call to
//! [`RngStream::standard_normal`] advances the counter by exactly
//! `4 * ceil(n / 2)` words.

use std::f64::consts::TAU;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::Vector;

/// Purpose tags for the high 32 bits of a stream id. The low bits carry the
/// sample index.
pub mod purpose {
    pub const REFERENCE: u64 = 1;
    pub const OBSERVATION_NOISE: u64 = 2;
    pub const TRAJECTORY: u64 = 3;
    pub const COEFF_INIT: u64 = 4;
    pub const OPERATOR: u64 = 5;
    pub const TRUTH: u64 = 6;
    pub const PRIOR: u64 = 7;
}

/// Builds a stream id from a purpose tag and a sample index.
pub fn stream_id(purpose: u64, index: u64) -> u64 {
    (purpose << 32) | (index & 0xffff_ffff)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub base_seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        Self {
            base_seed,
            stream_id,
            counter: 0,
        }
    }

    /// Stream for `(purpose, index)` under `base_seed`.
    pub fn for_sample(base_seed: u64, purpose: u64, index: usize) -> Self {
        Self::new(base_seed, stream_id(purpose, index as u64))
    }

    fn generator(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.base_seed);
        rng.set_stream(self.stream_id);
        rng.set_word_pos(self.counter as u128);
        rng
    }

    fn draw<T>(&mut self, f: impl FnOnce(&mut ChaCha20Rng) -> T) -> T {
        let mut rng = self.generator();
        let out = f(&mut rng);
        self.counter = rng.get_word_pos() as u64;
        out
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draw(|rng| rng.next_u64())
    }

    /// `n` uniform deviates in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self, n: usize) -> Vec<f64> {
        self.draw(|rng| (0..n).map(|_| unit_open_right(rng.next_u64())).collect())
    }

    /// `n` i.i.d. standard normal deviates.
    pub fn standard_normal(&mut self, n: usize) -> Vector {
        self.draw(|rng| {
            let mut out = Vec::with_capacity(n + 1);
            while out.len() < n {
                // (0, 1] keeps the logarithm finite.
                let u1 = unit_open_left(rng.next_u64());
                let u2 = unit_open_right(rng.next_u64());
                let radius = (-2.0 * u1.ln()).sqrt();
                let angle = TAU * u2;
                out.push(radius * angle.cos());
                out.push(radius * angle.sin());
            }
            out.truncate(n);
            Vector::from_vec(out)
        })
    }

    /// Uniformly random permutation of `0..n` (Fisher–Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.draw(|rng| {
            for i in (1..n).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                idx.swap(i, j);
            }
        });
        idx
    }
}

/// Free-function form of [`RngStream::standard_normal`].
pub fn sample_standard_normal(stream: &mut RngStream, n: usize) -> Vector {
    stream.standard_normal(n)
}

fn unit_open_right(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn unit_open_left(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}
