//! Portable pseudo-random streams.
//!
//! Every random draw in the harness goes through the three algorithms here so
//! that another implementation can reproduce the same bits:
//!
//! * [`SplitMix64`] turns a 64-bit seed (plus string labels) into sub-seeds.
//! * [`Pcg32`] (XSH-RR, 64-bit state) produces the uniform stream.
//! * Box–Muller maps pairs of uniforms to standard normals.

use std::f64::consts::PI;

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Derive a sub-seed from a root seed and an ordered list of labels.
///
/// Each label is folded in as `SplitMix64(prev.next() ^ fnv1a64(label))`, so
/// the result depends on the labels and their order.
pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut sm = SplitMix64::new(seed);
    for label in labels {
        let mixed = sm.next_u64() ^ fnv1a64(label.as_bytes());
        sm = SplitMix64::new(mixed);
    }
    sm.next_u64()
}

/// PCG-XSH-RR 64/32 generator with a normal-deviate cache for Box–Muller.
#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
    spare_normal: Option<f64>,
}

const PCG_MULT: u64 = 6_364_136_223_846_793_005;

impl Pcg32 {
    /// Standard `pcg32_srandom_r` seeding.
    pub fn new(init_state: u64, init_seq: u64) -> Self {
        let mut rng = Self {
            state: 0,
            inc: (init_seq << 1) | 1,
            spare_normal: None,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(init_state);
        rng.next_u32();
        rng
    }

    /// Seed from a single 64-bit value; the stream selector is drawn from
    /// SplitMix64 so nearby seeds land on unrelated streams.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let state = sm.next_u64();
        let seq = sm.next_u64();
        Self::new(state, seq)
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(PCG_MULT).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    /// Uniform in `[0, 1)` with 53 random bits (two 32-bit draws).
    pub fn next_f64(&mut self) -> f64 {
        let hi = (self.next_u32() >> 5) as u64;
        let lo = (self.next_u32() >> 6) as u64;
        ((hi << 26) | lo) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased integer in `[0, bound)` by rejection (`pcg32_boundedrand_r`).
    pub fn below(&mut self, bound: u32) -> u32 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u32();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    /// Standard normal via Box–Muller. Each pair of uniforms yields two
    /// deviates; the sine branch is cached and returned by the next call.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Select `k` distinct items with a partial Fisher–Yates shuffle.
///
/// The input order is significant; callers sort first.
pub fn sample_without_replacement<T: Clone>(items: &[T], k: usize, rng: &mut Pcg32) -> Vec<T> {
    assert!(k <= items.len());
    let mut pool: Vec<T> = items.to_vec();
    let n = pool.len();
    for i in 0..k {
        let j = i + rng.below((n - i) as u32) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Full Fisher–Yates shuffle (from the back, as in Durstenfeld's variant).
pub fn shuffle<T>(items: &mut [T], rng: &mut Pcg32) {
    for i in (1..items.len()).rev() {
        let j = rng.below((i + 1) as u32) as usize;
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn splitmix_reference_sequence() {
        // First outputs for seed 1234567, from the reference C implementation.
        let mut sm = SplitMix64::new(1234567);
        assert_eq!(sm.next_u64(), 6457827717110365317);
        assert_eq!(sm.next_u64(), 3203168211198807973);
        assert_eq!(sm.next_u64(), 9817491932198370423);
    }

    #[test]
    fn pcg32_reference_sequence() {
        // pcg32-demo: srandom(42, 54).
        let mut rng = Pcg32::new(42, 54);
        let expected = [
            0xa15c02b7u32,
            0x7b47f409,
            0xba1d3330,
            0x83d2f293,
            0xbfa4784b,
            0xcbed606e,
        ];
        for e in expected {
            assert_eq!(rng.next_u32(), e);
        }
    }

    #[test]
    fn uniform_range_and_bounded() {
        let mut rng = Pcg32::from_seed(7);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
            assert!(rng.below(13) < 13);
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = Pcg32::from_seed(99);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn derive_seed_depends_on_labels_and_order() {
        let a = derive_seed(1, &["x", "y"]);
        assert_eq!(a, derive_seed(1, &["x", "y"]));
        assert_ne!(a, derive_seed(1, &["y", "x"]));
        assert_ne!(a, derive_seed(2, &["x", "y"]));
    }

    #[test]
    fn sampling_is_distinct() {
        let items: Vec<usize> = (0..50).collect();
        let mut rng = Pcg32::from_seed(3);
        let mut s = sample_without_replacement(&items, 20, &mut rng);
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 20);
    }
}
