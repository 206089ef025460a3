//! Multiply-mod-prime universal hashing over the Mersenne prime `2^61 - 1`.
//!
//! `h(x) = ((a * x + b) mod p) mod m`. The recovery maps of every hashed
//! variant are built from this family, so a whole mapping is described by a
//! handful of `(a, b)` pairs.

use core::hint::select_unpredictable;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// The Mersenne prime `2^61 - 1`.
pub const PRIME: u64 = (1 << 61) - 1;

/// Bits reserved for the chunk index when packing `(token, chunk)` keys.
pub const CHUNK_BITS: u32 = 20;
/// Exclusive upper bound on tokens accepted by [`encode_key`].
pub const MAX_TOKEN: u64 = 1 << 43;
/// Exclusive upper bound on chunk indices accepted by [`encode_key`].
pub const MAX_CHUNK: u64 = 1 << CHUNK_BITS;

/// Serialized width of one parameter set (`a` and `b`; `p` is fixed and `m`
/// follows from the config).
pub const PARAM_BYTES: usize = 2 * core::mem::size_of::<u64>();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashParams {
    a: u64,
    b: u64,
    m: u64,
    /// `x mod m` for `x < 2^61` is `x - m * (mulhi(8x, magic) >> shift)`.
    magic: u64,
    shift: u32,
}

/// Bits in a value reduced modulo [`PRIME`].
const REDUCED_BITS: u32 = 61;

/// Reciprocal `ceil(2^(61 + l) / m)` with `l = ceil(log2 m)`. Its rounding
/// error times any 61-bit numerator stays below `2^(61 + l)`, so the
/// quotient `(x * magic) >> (61 + l)` is exact. Pre-shifting `x` by 3 turns
/// that into the high product word shifted by `l`. Capping `l` at 63 is
/// harmless: beyond it every 61-bit quotient is 0 either way.
fn reciprocal(m: u64) -> (u64, u32) {
    let l = if m <= 1 { 0 } else { u64::BITS - (m - 1).leading_zeros() };
    ((1u128 << (REDUCED_BITS + l)).div_ceil(u128::from(m)) as u64, l.min(63))
}

/// `x mod m` for `x < 2^61` with one wide multiply instead of a division.
#[inline]
fn fast_mod(x: u64, m: u64, magic: u64, shift: u32) -> u64 {
    debug_assert!(x < 1 << REDUCED_BITS);
    let high = ((u128::from(x << (64 - REDUCED_BITS)) * u128::from(magic)) >> 64) as u64;
    x - (high >> shift) * m
}

impl HashParams {
    pub fn new(a: u64, b: u64, m: u64) -> Result<Self> {
        if a == 0 || a >= PRIME {
            return Err(Error::invalid("hash multiplier must lie in [1, p)"));
        }
        if b >= PRIME {
            return Err(Error::invalid("hash offset must lie in [0, p)"));
        }
        if m == 0 {
            return Err(Error::invalid("hash range must be at least 1"));
        }
        let (magic, shift) = reciprocal(m);
        Ok(Self { a, b, m, magic, shift })
    }

    pub fn a(&self) -> u64 {
        self.a
    }

    pub fn b(&self) -> u64 {
        self.b
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn p(&self) -> u64 {
        PRIME
    }

    /// Same `(a, b)` with a different range.
    pub fn with_range(&self, m: u64) -> Result<Self> {
        Self::new(self.a, self.b, m)
    }

    #[inline]
    pub fn hash(&self, key: u64) -> u64 {
        universal_hash(key, self)
    }

    #[inline]
    pub fn sign(&self, key: u64) -> i8 {
        sign_hash(key, self)
    }
}

/// Deterministically derives hash parameters for one stream of a seed.
pub fn derive_hash_params(seed: u64, stream_id: u64, m: u64) -> Result<HashParams> {
    if m == 0 {
        return Err(Error::invalid("hash range must be at least 1"));
    }
    let mut rng = SplitMix64::stream(seed, stream_id);
    let a = loop {
        let x = rng.next_u64() >> 3;
        if x != 0 && x < PRIME {
            break x;
        }
    };
    let b = loop {
        let x = rng.next_u64() >> 3;
        if x < PRIME {
            break x;
        }
    };
    let (magic, shift) = reciprocal(m);
    Ok(HashParams { a, b, m, magic, shift })
}

#[inline]
fn mod_mersenne(x: u128) -> u64 {
    let p = PRIME as u128;
    let y = (x & p) + (x >> 61);
    let mut z = ((y & p) + (y >> 61)) as u64;
    if z >= PRIME {
        z -= PRIME;
    }
    z
}

/// `((a * key + b) mod p) mod m` with a 128-bit intermediate.
#[inline]
pub fn universal_hash(key: u64, params: &HashParams) -> u64 {
    let x = params.a as u128 * key as u128 + params.b as u128;
    fast_mod(mod_mersenne(x), params.m, params.magic, params.shift)
}

/// `+1` when the key hashes to 0 under range 2, `-1` otherwise.
#[inline]
pub fn sign_hash(key: u64, params: &HashParams) -> i8 {
    let x = params.a as u128 * key as u128 + params.b as u128;
    if mod_mersenne(x) & 1 == 0 {
        1
    } else {
        -1
    }
}

/// Hashes of the consecutive keys `key, key + 1, ...` without a multiply per
/// step: `(a * (k + 1) + b) mod p` is the previous residue plus `a`, less
/// `p` on wrap, and the residue mod `m` follows the same adds. Every value
/// equals [`universal_hash`] (and the parity [`sign_hash`]) of its key.
#[derive(Debug, Clone, Copy)]
pub struct HashSteps {
    /// `(a * key + b) mod p` for the current key.
    y: u64,
    /// `y mod m`.
    r: u64,
    a: u64,
    /// `m - (a mod m)` and `m - (p mod m)`, so stepping never overflows.
    a_gap: u64,
    p_gap: u64,
    m: u64,
}

impl HashSteps {
    #[inline]
    pub fn new(key: u64, params: &HashParams) -> Self {
        let y = mod_mersenne(params.a as u128 * key as u128 + params.b as u128);
        let m = params.m;
        HashSteps {
            y,
            r: fast_mod(y, m, params.magic, params.shift),
            a: params.a,
            a_gap: m - fast_mod(params.a, m, params.magic, params.shift),
            p_gap: m - fast_mod(PRIME, m, params.magic, params.shift),
            m,
        }
    }

    /// [`universal_hash`] of the current key.
    #[inline]
    pub fn hash(&self) -> u64 {
        self.r
    }

    /// [`sign_hash`] of the current key.
    #[inline]
    pub fn sign(&self) -> i8 {
        1 - 2 * (self.y & 1) as i8
    }

    /// Moves to the next key. The comparisons are coin flips, so they are
    /// selects rather than branches.
    #[inline]
    pub fn advance(&mut self) {
        let y = self.y + self.a;
        let wrapped = y >= PRIME;
        self.y = select_unpredictable(wrapped, y.wrapping_sub(PRIME), y);
        // r + (a mod m), reduced mod m
        let r = self.r.wrapping_sub(self.a_gap);
        let r = select_unpredictable(self.r < self.a_gap, r.wrapping_add(self.m), r);
        // minus (p mod m) on wrap
        let p_mod = select_unpredictable(wrapped, self.m - self.p_gap, 0);
        let t = r.wrapping_sub(p_mod);
        self.r = select_unpredictable(r < p_mod, t.wrapping_add(self.m), t);
    }
}

/// Packs `(token, chunk_index)` into one key: `token * 2^20 + chunk_index`.
pub fn encode_key(token: u64, chunk_index: u64) -> Result<u64> {
    if token >= MAX_TOKEN {
        return Err(Error::invalid("token must be below 2^43"));
    }
    if chunk_index >= MAX_CHUNK {
        return Err(Error::invalid("chunk index must be below 2^20"));
    }
    Ok((token << CHUNK_BITS) | chunk_index)
}
