//! Purpose-separated deterministic random streams.
//!
//! Each stream is a ChaCha8 generator keyed by the run seed with the purpose
//! selecting the ChaCha stream id, so draws for one purpose never shift the
//! sequence seen by another.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init,
    DropMessage,
    DataGen,
    Shuffle,
}

impl Purpose {
    fn stream_id(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::DropMessage => 2,
            Purpose::DataGen => 3,
            Purpose::Shuffle => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    purpose: Purpose,
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(purpose: Purpose, seed: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(purpose.stream_id());
        Self {
            purpose,
            seed,
            inner,
        }
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// True with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

impl RngCore for RngStream {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(Purpose::Init, 7);
        let mut b = RngStream::new(Purpose::Init, 7);
        let xs: Vec<f64> = (0..32).map(|_| a.normal()).collect();
        let ys: Vec<f64> = (0..32).map(|_| b.normal()).collect();
        assert_eq!(xs, ys);
        assert_eq!(a.counter(), b.counter());
    }

    #[test]
    fn purposes_are_independent() {
        let mut init = RngStream::new(Purpose::Init, 7);
        let mut drop = RngStream::new(Purpose::DropMessage, 7);
        let a: Vec<u64> = (0..4).map(|_| init.next_u64()).collect();
        let b: Vec<u64> = (0..4).map(|_| drop.next_u64()).collect();
        assert_ne!(a, b);

        // consuming one stream leaves the other's sequence untouched
        let mut init2 = RngStream::new(Purpose::Init, 7);
        let mut drop2 = RngStream::new(Purpose::DropMessage, 7);
        for _ in 0..100 {
            drop2.next_u64();
        }
        let c: Vec<u64> = (0..4).map(|_| init2.next_u64()).collect();
        assert_eq!(a, c);
    }

    #[test]
    fn frozen_first_draw() {
        // Guards the cross-run determinism contract against dependency drift.
        let mut s = RngStream::new(Purpose::Shuffle, 0);
        assert_eq!(s.next_u64(), 15789455820715750791);
    }
}
