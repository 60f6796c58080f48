//! Reproducible random streams.
//!
//! Each [`RngStream`] is a ChaCha8 keystream keyed by a 64-bit seed and
//! positioned on a 64-bit stream id. Different stream ids under one seed are
//! disjoint keystreams, so the weight-init, weight-noise, shuffling and
//! certificate-sampling streams of a run never share state.
//!
//! Standard normals use the Box–Muller transform on pairs of open-interval
//! uniforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Fixed stream ids used by training and certification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    WeightNoise = 2,
    Shuffle = 3,
    Certificate = 4,
    Evaluation = 5,
    Data = 6,
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        Self::new(seed, stream as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1): `(k + 1/2) / 2^53` for a 53-bit `k`.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `0..n`, rejection-sampled so every value is equally likely.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn std_normal(&mut self) -> f64 {
        self.box_muller().0
    }

    fn box_muller(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// `n` i.i.d. standard normal draws (Box–Muller, both outputs of each pair used).
pub fn sample_std_normal(rng: &mut RngStream, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let (a, b) = rng.box_muller();
        out.push(a);
        out.push(b);
    }
    out.truncate(n);
    out
}

/// `n` i.i.d. draws from Uniform(−1/2, 1/2), both endpoints excluded.
///
/// Values are multiples of 2⁻⁵⁴ offset by 2⁻⁵⁴, so exact zero never occurs.
pub fn sample_uniform_sym(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_open() - 0.5).collect()
}

/// SplitMix64 finalizer; used to derive per-run seeds from a master seed.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
