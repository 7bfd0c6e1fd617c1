//! Seeded random streams.
//!
//! Every random quantity in the pipeline is drawn from a [`SimRng`]: the
//! ChaCha8 block cipher from `rand_chacha`, keyed by
//! `SeedableRng::seed_from_u64(seed)` and positioned on a 64-bit stream id.
//! ChaCha is counter based, so distinct stream ids give independent,
//! non-overlapping sequences under one key. Ensembles use the trajectory index
//! as stream id, which makes generation order irrelevant.
//!
//! Sub-seeds for the different consumers (training inputs, ensemble noise,
//! weight initialization, shuffling, ...) are derived from one root seed with
//! [`derive_seed`], a SplitMix64 finalizer over `root ^ tag`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GENERATOR_NAME: &str = "chacha8-splitmix64";

/// Sub-stream tags consumed by [`derive_seed`].
pub mod tag {
    pub const TRAIN_INPUT: u64 = 0x01;
    pub const TRAIN_NOISE: u64 = 0x02;
    pub const VAL_INPUT: u64 = 0x03;
    pub const VAL_NOISE: u64 = 0x04;
    pub const ENSEMBLE_INPUT: u64 = 0x05;
    pub const ENSEMBLE_NOISE: u64 = 0x06;
    pub const INIT: u64 = 0x07;
    pub const SHUFFLE: u64 = 0x08;
}

/// SplitMix64 finalizer of `root ^ (tag * golden)`.
pub fn derive_seed(root: u64, tag: u64) -> u64 {
    let mut z = root ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct SimRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SimRng {
            inner,
            spare_normal: None,
        }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller; the second variate of each pair is
    /// cached for the next call.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    #[inline]
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
