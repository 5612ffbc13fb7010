use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DenseMatrix;

/// Reproducible stream of standard normal deviates.
///
/// Deviate number `c` is a pure function of `(seed, stream, c)`: uniforms come
/// from a seekable ChaCha8 keystream and are turned into normals pairwise with
/// the Box–Muller transform (deviates `2j` and `2j+1` share uniform pair `j`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

// Each Box–Muller pair consumes two u64 = four 32-bit ChaCha words.
const WORDS_PER_PAIR: u128 = 4;

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            stream: 0,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn set_counter(&mut self, counter: u64) {
        self.counter = counter;
    }

    /// Independent stream for shard `k` (distinct ChaCha stream id).
    pub fn substream(&self, k: u64) -> Self {
        Self {
            seed: self.seed,
            stream: self.stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k + 1),
            counter: 0,
        }
    }

    fn engine_at(&self, pair: u64) -> ChaCha8Rng {
        let mut e = ChaCha8Rng::seed_from_u64(self.seed);
        e.set_stream(self.stream);
        e.set_word_pos(pair as u128 * WORDS_PER_PAIR);
        e
    }

    /// Fills `out` with the next `out.len()` deviates.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        let mut e = self.engine_at(self.counter / 2);
        let mut i = 0;
        if self.counter % 2 == 1 {
            out[0] = box_muller(&mut e).1;
            i = 1;
        }
        while i + 1 < out.len() {
            let (z0, z1) = box_muller(&mut e);
            out[i] = z0;
            out[i + 1] = z1;
            i += 2;
        }
        if i < out.len() {
            out[i] = box_muller(&mut e).0;
        }
        self.counter += out.len() as u64;
    }

    pub fn next_normal(&mut self) -> f64 {
        let mut z = [0.0];
        self.fill_normal(&mut z);
        z[0]
    }

    /// Uniform deviate in (0, 1], advancing the counter by one slot.
    pub fn next_uniform(&mut self) -> f64 {
        let mut e = self.engine_at(self.counter / 2);
        let (u0, u1) = (unit(e.next_u64()), unit(e.next_u64()));
        let u = if self.counter.is_multiple_of(2) { u0 } else { u1 };
        self.counter += 1;
        u
    }
}

#[inline]
fn unit(x: u64) -> f64 {
    // (0, 1]: never zero so the logarithm below is finite.
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn box_muller(e: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = unit(e.next_u64());
    let u2 = unit(e.next_u64());
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
    (r * c, r * s)
}

/// `m x n` matrix of iid N(0,1) deviates, filled in column-major order.
pub fn randn(rng: &mut RngStream, m: usize, n: usize) -> DenseMatrix {
    let mut data = vec![0.0; m * n];
    rng.fill_normal(&mut data);
    DenseMatrix::from_col_major(m, n, data)
}
