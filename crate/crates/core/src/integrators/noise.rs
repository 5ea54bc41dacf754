//! Reproducible Gaussian increments addressed by `(seed, path, step)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Source of Brownian increments for two independent channels.
pub trait IncrementSource {
    /// `(ΔW1, ΔW2)` with each component `Normal(0, dt)`.
    fn next_pair(&mut self, dt: f64) -> [f64; 2];
}

/// Per-path ChaCha8 stream: the master seed keys the generator, the path
/// index selects the stream (nonce), and each step consumes exactly four
/// 32-bit words. Increment `k` of a path is therefore a pure function of
/// `(master_seed, path_index, k)` regardless of which thread draws it.
#[derive(Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    master_seed: u64,
    path_index: u64,
    counter: u64,
}

const WORDS_PER_STEP: u128 = 4;

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(path_index);
        Self {
            rng,
            master_seed,
            path_index,
            counter: 0,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Jump to step `counter` without drawing the intermediate increments.
    pub fn seek(&mut self, counter: u64) {
        self.rng.set_word_pos(WORDS_PER_STEP * counter as u128);
        self.counter = counter;
    }

    /// Two independent standard normals for the current step (Box–Muller).
    pub fn standard_pair(&mut self) -> [f64; 2] {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        self.counter += 1;
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = ((a >> 11) + 1) as f64 * SCALE;
        let u2 = (b >> 11) as f64 * SCALE;
        let rad = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        [rad * c, rad * s]
    }
}

impl IncrementSource for NoiseStream {
    fn next_pair(&mut self, dt: f64) -> [f64; 2] {
        let sd = dt.sqrt();
        let [z1, z2] = self.standard_pair();
        [sd * z1, sd * z2]
    }
}

/// Deterministic zero increments, for μ = 0 comparisons.
pub struct NoNoise;

impl IncrementSource for NoNoise {
    fn next_pair(&mut self, _dt: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
}
