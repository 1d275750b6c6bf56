//! Seeded, splittable random streams.
//!
//! A [`RngStream`] is a ChaCha8 generator keyed by `(seed, stream_id)`.
//! Sub-streams are derived by hashing a label and an index into a new
//! `stream_id`, so path `l` of batch `b` always sees the same draws no matter
//! which worker thread runs it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Labels for the fixed sub-stream families.
pub mod labels {
    pub const INIT: u64 = 1;
    pub const PATHS: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const BRIDGE: u64 = 4;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream for `(label, index)`, independent of how far `self` has advanced.
    pub fn substream(&self, label: u64, index: u64) -> RngStream {
        let id = splitmix(splitmix(self.stream_id ^ splitmix(label)).wrapping_add(index));
        RngStream::new(self.seed, id)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_draws() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_streams_differ() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 4);
        let va: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(va, vb);
    }

    #[test]
    fn substreams_ignore_parent_position() {
        let a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 0);
        b.next_u64();
        let mut sa = a.substream(labels::PATHS, 5);
        let mut sb = b.substream(labels::PATHS, 5);
        assert_eq!(sa.next_u64(), sb.next_u64());
        let mut sc = a.substream(labels::PATHS, 6);
        let mut sd = a.substream(labels::BATCH, 5);
        let x = a.substream(labels::PATHS, 5).next_u64();
        assert_ne!(x, sc.next_u64());
        assert_ne!(x, sd.next_u64());
    }

    #[test]
    fn substream_uniforms_are_uncorrelated() {
        let root = RngStream::new(42, 0);
        let n = 20000;
        let mut s = 0.0;
        let mut a = root.substream(labels::PATHS, 0);
        let mut b = root.substream(labels::PATHS, 1);
        for _ in 0..n {
            let u: f64 = a.random::<f64>() - 0.5;
            let v: f64 = b.random::<f64>() - 0.5;
            s += u * v;
        }
        // each product has sd 1/12; the mean is within 4 standard errors of 0
        assert!((s / n as f64).abs() < 4.0 / 12.0 / (n as f64).sqrt());
    }
}
