//! Grouping of flat positions by memory location for the sparse backward pass.

use alloc::vec;
use alloc::vec::Vec;

const MAX_DIGIT_BITS: u32 = 11;

/// Stable LSD radix sort by a 32-bit key; items with equal keys keep their
/// input order. Every key must be below `bound`, and `bound <= 2^32`.
pub(crate) fn sort_by_key<T: Copy>(mut items: Vec<T>, bound: usize, key: impl Fn(&T) -> u32) -> Vec<T> {
    debug_assert!(bound as u64 <= 1 << 32);
    if items.len() < 256 {
        items.sort_by_key(&key);
        return items;
    }
    let bits = usize::BITS - bound.saturating_sub(1).leading_zeros();
    if bits == 0 {
        return items;
    }
    let passes = bits.div_ceil(MAX_DIGIT_BITS) as usize;
    let digit_bits = bits.div_ceil(passes as u32);
    let buckets = 1usize << digit_bits;
    let mask = buckets - 1;
    // All histograms in one read of the input.
    let mut counts = vec![0usize; buckets * passes];
    for item in &items {
        let k = key(item) as usize;
        for pass in 0..passes {
            counts[pass * buckets + ((k >> (pass as u32 * digit_bits)) & mask)] += 1;
        }
    }
    let mut scratch = items.clone();
    for pass in 0..passes {
        let offsets = &mut counts[pass * buckets..(pass + 1) * buckets];
        let mut total = 0;
        for c in offsets.iter_mut() {
            let here = *c;
            *c = total;
            total += here;
        }
        let shift = pass as u32 * digit_bits;
        for &item in &items {
            let digit = (key(&item) as usize >> shift) & mask;
            scratch[offsets[digit]] = item;
            offsets[digit] += 1;
        }
        core::mem::swap(&mut items, &mut scratch);
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn matches_stable_comparison_sort() {
        let mut rng = SplitMix64::new(9);
        let cases = [
            (10usize, 4usize),
            (600, 1),
            (600, 3),
            (5000, 4096),
            (5000, 4097),
            (20_000, 3_000_000),
            (1000, 1 << 32),
        ];
        for &(len, bound) in &cases {
            let pairs: Vec<(u32, f64)> =
                (0..len).map(|q| (rng.below(bound as u64) as u32, q as f64)).collect();
            let mut want = pairs.clone();
            want.sort_by_key(|p| p.0);
            let got = sort_by_key(pairs, bound, |p| p.0);
            assert!(got.iter().zip(&want).all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits()));
        }
    }
}
