//! Splittable, replayable random streams.
//!
//! A stream is named by `(master_seed, stream_id)`. Children get their id by
//! mixing the parent id with a label, so any worker can rebuild the exact
//! sequence it needs without coordinating with the others.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Deterministic random stream backed by ChaCha20.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent child stream; does not advance `self`.
    pub fn child(&self, label: &str) -> Self {
        Self::new(self.master_seed, mix(self.stream_id, fnv1a(label.as_bytes())))
    }

    /// Indexed child stream, e.g. one per Monte-Carlo trial.
    pub fn child_indexed(&self, label: &str, index: u64) -> Self {
        let base = mix(self.stream_id, fnv1a(label.as_bytes()));
        Self::new(self.master_seed, mix(base, index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.random::<bool>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer over the pair.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(29) ^ 0xd6e8_feb8_6659_fd93;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic ±1 pattern keyed by `(key, index)`, used to break exact
/// zero-gradient ties without consuming a stream.
pub(crate) fn keyed_sign(key: u64, index: u64) -> f64 {
    if mix(key, index) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_replays() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn children_are_deterministic_and_distinct() {
        let root = RngStream::new(1, 0);
        assert_eq!(root.child("x").stream_id(), root.child("x").stream_id());
        assert_ne!(root.child("x").stream_id(), root.child("y").stream_id());
        assert_ne!(
            root.child_indexed("mc", 0).stream_id(),
            root.child_indexed("mc", 1).stream_id()
        );
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        // |r| of two independent N(0,1) sequences of length n is below 4/sqrt(n)
        // with overwhelming probability.
        let n = 20_000;
        let root = RngStream::new(99, 0);
        for k in 0..5u64 {
            let mut a = root.child_indexed("s", k);
            let mut b = root.child_indexed("s", k + 1);
            let xs: Vec<f64> = (0..n).map(|_| a.standard_normal()).collect();
            let ys: Vec<f64> = (0..n).map(|_| b.standard_normal()).collect();
            let mx = xs.iter().sum::<f64>() / n as f64;
            let my = ys.iter().sum::<f64>() / n as f64;
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
            let r = cov / (vx * vy).sqrt();
            assert!(r.abs() < 4.0 / (n as f64).sqrt(), "r = {r}");
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = RngStream::new(5, 5);
        let mut p = r.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
