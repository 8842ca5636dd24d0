//! Counter-addressed random streams.
//!
//! A stream is named by a root seed and a path of substream indices. The
//! generator behind a name is keyed only by that name, so a child stream
//! draws the same sequence no matter how much its parent has been used or
//! in which order siblings are consumed. Per-point and per-transform
//! streams are derived this way, which keeps parallel scoring reproducible.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_key(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut state = splitmix64(seed);
    for &index in path {
        // Non-commutative fold: [a, b] and [b, a] land on different keys.
        state = splitmix64(state.rotate_left(17) ^ splitmix64(index ^ 0xA5A5_A5A5_A5A5_A5A5));
    }
    let mut key = [0u8; 32];
    for (lane, chunk) in key.chunks_exact_mut(8).enumerate() {
        let word = splitmix64(state ^ (lane as u64).wrapping_mul(GOLDEN));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    key
}

/// A named, reproducible random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream::with_path(seed, Vec::new())
    }

    pub fn with_path(seed: u64, path: Vec<u64>) -> Self {
        let rng = ChaCha20Rng::from_seed(stream_key(seed, &path));
        RngStream { seed, path, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Child stream at `self.path ++ [index]`, starting from its first draw.
    pub fn derive(&self, index: u64) -> RngStream {
        let mut path = self.path.clone();
        path.push(index);
        RngStream::with_path(self.seed, path)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)`; `bound` must be positive.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "next_below bound must be positive");
        // Lemire's multiply-shift with rejection of the biased zone.
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let product = u128::from(self.next_u64()) * u128::from(bound);
            if (product as u64) >= threshold {
                return (product >> 64) as u64;
            }
        }
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + self.next_below(span) as i64
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal variate (Box-Muller, one output per call).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Child of `root` at `index`.
pub fn derive_stream(root: &RngStream, index: u64) -> RngStream {
    root.derive(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(mut s: RngStream, count: usize) -> Vec<u64> {
        (0..count).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn same_child_is_reproducible() {
        let root = RngStream::new(42);
        assert_eq!(
            draws(derive_stream(&root, 0), 64),
            draws(derive_stream(&root, 0), 64)
        );
    }

    #[test]
    fn siblings_differ() {
        let root = RngStream::new(42);
        let a = draws(derive_stream(&root, 0), 64);
        let b = draws(derive_stream(&root, 1), 64);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn nested_order_matters() {
        let root = RngStream::new(7);
        let a = draws(root.derive(0).derive(1), 64);
        let b = draws(root.derive(1).derive(0), 64);
        assert_ne!(a, b);
        assert_eq!(root.derive(0).derive(1).path(), &[0, 1]);
    }

    #[test]
    fn child_ignores_parent_consumption() {
        let mut root = RngStream::new(3);
        let before = draws(root.derive(5), 8);
        for _ in 0..100 {
            root.next_u64();
        }
        assert_eq!(before, draws(root.derive(5), 8));
    }

    #[test]
    fn pinned_first_draws() {
        // Frozen values; any change to key derivation breaks reproducibility
        // of stored artifacts.
        let mut s = RngStream::new(0);
        assert_eq!(s.next_u64(), 12364884452953341175);
        assert_eq!(s.next_u64(), 3861574864529478446);
        let mut c = RngStream::new(42).derive(3).derive(1);
        assert_eq!(c.next_u64(), 14003774491137588772);
    }

    #[test]
    fn next_below_stays_in_range_and_covers() {
        let mut s = RngStream::new(11);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            let v = s.next_below(7) as usize;
            seen[v] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800 && c < 1200), "{seen:?}");
        for _ in 0..1000 {
            let v = s.int_inclusive(-10, 10);
            assert!((-10..=10).contains(&v));
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = RngStream::new(5);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
