//! Counted random bit stream.
//!
//! Every random decision in the crate draws from a [`BitStream`], so the number
//! of consumed bits is an observable quantity of a run.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rejections tolerated by [`BitStream::below`] before falling back to `mod`.
pub const MAX_REJECTIONS: u32 = 8;

/// Deterministic bit source that counts every bit handed out.
#[derive(Clone, Debug)]
pub struct BitStream {
    rng: ChaCha8Rng,
    buf: u64,
    avail: u32,
    used: u64,
}

impl BitStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), buf: 0, avail: 0, used: 0 }
    }

    /// Total bits consumed so far.
    pub fn used(&self) -> u64 {
        self.used
    }

    /// Draws `b <= 64` fresh bits.
    pub fn bits(&mut self, b: u32) -> u64 {
        assert!(b <= 64);
        let mut out = 0u64;
        let mut need = b;
        while need > 0 {
            if self.avail == 0 {
                self.buf = self.rng.next_u64();
                self.avail = 64;
            }
            let take = need.min(self.avail);
            let chunk = if take == 64 { self.buf } else { self.buf & ((1u64 << take) - 1) };
            out = if take == 64 { chunk } else { (out << take) | chunk };
            self.buf = if take == 64 { 0 } else { self.buf >> take };
            self.avail -= take;
            need -= take;
        }
        self.used += b as u64;
        out
    }

    /// Uniform index in `0..n` using `ceil(log2 n)` bits per attempt.
    ///
    /// After [`MAX_REJECTIONS`] rejected attempts the last draw is reduced
    /// modulo `n`, so a call never uses more than `9 * ceil(log2 n)` bits.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let b = bits_for(n);
        if b == 0 {
            return 0;
        }
        let mut draw = self.bits(b);
        for _ in 0..MAX_REJECTIONS {
            if draw < n {
                return draw;
            }
            draw = self.bits(b);
        }
        draw % n
    }

    /// A fair fraction `j / 2^b`.
    pub fn unit(&mut self, b: u32) -> (u64, u64) {
        (self.bits(b), 1u64 << b)
    }
}

/// `ceil(log2 n)`, with `bits_for(1) == 0`.
pub fn bits_for(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_for_values() {
        assert_eq!(bits_for(1), 0);
        assert_eq!(bits_for(2), 1);
        assert_eq!(bits_for(4), 2);
        assert_eq!(bits_for(6), 3);
        assert_eq!(bits_for(8), 3);
        assert_eq!(bits_for(9), 4);
    }

    #[test]
    fn counting_and_determinism() {
        let mut a = BitStream::new(7);
        let mut b = BitStream::new(7);
        let xs: Vec<u64> = (0..20).map(|i| a.bits(i % 13 + 1)).collect();
        let ys: Vec<u64> = (0..20).map(|i| b.bits(i % 13 + 1)).collect();
        assert_eq!(xs, ys);
        assert_eq!(a.used(), (0..20).map(|i| (i % 13 + 1) as u64).sum::<u64>());
        assert_eq!(a.bits(64) >> 63 <= 1, true);
    }

    #[test]
    fn below_is_in_range_and_bounded() {
        let mut s = BitStream::new(1);
        for n in 1..40u64 {
            let before = s.used();
            let v = s.below(n);
            assert!(v < n);
            assert!(s.used() - before <= 9 * bits_for(n) as u64);
        }
    }
}
