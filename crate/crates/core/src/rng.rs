//! Counter-based random numbers.
//!
//! Every random value in the crate is a pure function of a 64-bit key and a
//! counter, so any stream can be regenerated in any order without carrying
//! generator state around.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
#[inline]
pub fn fmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `value` into a running key.
#[inline]
pub fn combine(key: u64, value: u64) -> u64 {
    fmix64(key.wrapping_add(fmix64(value.wrapping_add(GOLDEN))))
}

/// Key of block `block` of the stream identified by `key`.
#[inline]
pub fn block_key(key: u64, block: u32) -> u64 {
    combine(key, block as u64)
}

/// Word `index` within a block, splitmix-style: one mix per word.
#[inline]
pub fn block_word(block_key: u64, index: u32) -> u64 {
    fmix64(block_key.wrapping_add(GOLDEN.wrapping_mul(index as u64 + 1)))
}

/// Random word number `(block, index)` of the stream identified by `key`.
#[inline]
pub fn counter_word(key: u64, block: u32, index: u32) -> u64 {
    block_word(block_key(key, block), index)
}

/// Maps the top 53 bits of a word to `[0, 1)`.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Sequential generator over a keyed counter. Cheap to construct, so callers
/// derive a fresh one per purpose instead of sharing state.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Generator for substream `stream` of `key`.
    pub fn derive(key: u64, stream: u64) -> Self {
        Self::new(combine(key, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        let w = combine(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        w
    }

    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    /// Uniform integer in `0..n` (`n > 0`), by rejection to avoid modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let w = self.next_u64();
            if w < zone {
                return w % n;
            }
        }
    }

    /// Exponential variate with the given rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -libm::log(1.0 - self.next_f64()) / rate
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Seed of replica `index` in a campaign keyed by `master_seed`.
pub fn replica_seed(master_seed: u64, index: u64) -> u64 {
    combine(master_seed ^ 0x5e_ed0f_7e91_1ca5, index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_words_are_pure() {
        assert_eq!(counter_word(7, 3, 4), counter_word(7, 3, 4));
        assert_ne!(counter_word(7, 3, 4), counter_word(7, 4, 3));
        assert_ne!(counter_word(7, 3, 4), counter_word(8, 3, 4));
    }

    #[test]
    fn unit_range() {
        assert_eq!(unit_f64(0), 0.0);
        assert!(unit_f64(u64::MAX) < 1.0);
    }

    #[test]
    fn uniform_moments() {
        let mut rng = CounterRng::new(42);
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let u = rng.next_f64();
            s += u;
            s2 += u * u;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        // sd of the mean is 0.0009
        assert!((mean - 0.5).abs() < 0.004);
        assert!((var - 1.0 / 12.0).abs() < 0.002);
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: alloc::vec::Vec<u32> = (0..50).collect();
        CounterRng::new(1).shuffle(&mut v);
        let mut w = v.clone();
        w.sort();
        assert_eq!(w, (0..50).collect::<alloc::vec::Vec<_>>());
        assert_ne!(v, w);
    }
}
