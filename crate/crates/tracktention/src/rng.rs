//! Counter-based deterministic random numbers.
//!
//! Each draw is a pure function of `(seed, counter)`, so a generator can be
//! forked into independent sub-streams by mixing a tag into the seed — no
//! shared state, and the same seed reproduces the same values on every
//! platform. The core draw is the 64-bit finalizer from splitmix64.
//!
//! All sampling happens in `f64` and is converted to the target scalar
//! afterwards, so an `f32` tensor is the rounded image of the `f64` tensor
//! drawn from the same stream.

use crate::tensor::{Scalar, Tensor};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { seed: mix(seed.wrapping_add(GOLDEN)), counter: 0 }
    }

    /// Independent generator derived from this one's seed and a tag.
    /// Does not advance or depend on the parent's counter.
    pub fn substream(&self, tag: u64) -> Rng {
        Rng { seed: mix(self.seed ^ mix(tag.wrapping_add(GOLDEN))), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller (cosine branch; one value per pair
    /// of uniforms, nothing cached).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps the log finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Tensor of uniforms in `[lo, hi)`.
    pub fn uniform<S: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::of(lo + (hi - lo) * self.next_f64()))
    }

    /// Tensor of zero-mean normals with the given standard deviation.
    pub fn normal<S: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::of(std * self.next_normal()))
    }
}
