//! The trainable parameter-shared store.
//!
//! Lookups record, for every output element, the memory slot it was read
//! from and the sign applied ([`IndexMap`]). The backward passes replay that
//! record: the dense pass scatters into a full-length buffer, the sparse pass
//! groups positions by slot first and returns only the touched slots. Both
//! accumulate each slot's contributions in ascending flat position, so they
//! agree bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::{PssConfig, Variant};
use crate::error::{Error, Result};
use crate::grad::{GradientBuffer, IndexMap};
use crate::hashing::{derive_hash_params, HashParams, HashSteps, CHUNK_BITS, MAX_CHUNK, MAX_TOKEN};
use crate::radix;
use crate::rng::SplitMix64;

/// Hash stream carrying chunk locations.
pub const LOCATION_STREAM: u64 = 0;
/// Hash stream carrying chunk signs.
pub const SIGN_STREAM: u64 = 1;
/// First hash stream of the QR pieces; piece `j` uses `QR_STREAM_BASE + j`.
pub const QR_STREAM_BASE: u64 = 2;
const MEMORY_STREAM: u64 = 0xFFFF_FFFF;

/// Where one chunk of an embedding is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPlacement {
    pub start: usize,
    pub length: usize,
    pub sign: i8,
    /// The read runs past the end of memory and continues at offset 0.
    pub wraparound: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PssStore {
    config: PssConfig,
    memory: Vec<f64>,
    location_hashes: Vec<HashParams>,
    sign_hash: Option<HashParams>,
}

impl PssStore {
    /// Fresh store: memory uniform on `[-1/sqrt(d), 1/sqrt(d)]`, hash
    /// parameters derived from the config seed.
    pub fn new(config: PssConfig) -> Result<Self> {
        config.validate()?;
        let (location_hashes, sign_hash) = derive_mapping(&config)?;
        let bound = 1.0 / libm::sqrt(config.d as f64);
        let mut rng = SplitMix64::stream(config.seed, MEMORY_STREAM);
        let memory = (0..config.memory_size).map(|_| rng.uniform(-bound, bound)).collect();
        Self::from_parts(config, memory, location_hashes, sign_hash)
    }

    /// Store with explicit memory and hash parameters.
    pub fn from_parts(
        config: PssConfig,
        memory: Vec<f64>,
        location_hashes: Vec<HashParams>,
        sign_hash: Option<HashParams>,
    ) -> Result<Self> {
        config.validate()?;
        check_mapping_domain(&config)?;
        if memory.len() != config.memory_size {
            return Err(Error::invalid("memory length must equal memory_size"));
        }
        let expected = expected_ranges(&config);
        if location_hashes.len() != expected.len()
            || location_hashes.iter().zip(&expected).any(|(h, &m)| h.m() != m)
        {
            return Err(Error::invalid("location hash ranges do not match the variant"));
        }
        match (config.signed(), &sign_hash) {
            (true, Some(h)) if h.m() == 2 => {}
            (false, None) => {}
            _ => return Err(Error::invalid("sign hash must be present exactly when signs are enabled")),
        }
        Ok(Self { config, memory, location_hashes, sign_hash })
    }

    pub fn config(&self) -> &PssConfig {
        &self.config
    }

    pub fn memory(&self) -> &[f64] {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut [f64] {
        &mut self.memory
    }

    pub fn location_hashes(&self) -> &[HashParams] {
        &self.location_hashes
    }

    pub fn sign_hash(&self) -> Option<&HashParams> {
        self.sign_hash.as_ref()
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    #[inline]
    fn placement(&self, token: u64, chunk: usize) -> (usize, i8) {
        let c = &self.config;
        match c.variant {
            Variant::FullTable => (token as usize * c.d, 1),
            Variant::HashingTrick => (self.location_hashes[0].hash(token) as usize * c.d, 1),
            Variant::QRTrick => {
                let region = c.memory_size / c.pieces;
                let width = c.d / c.pieces;
                let row = self.location_hashes[chunk].hash(token) as usize;
                (chunk * region + row * width, 1)
            }
            Variant::HashedNet | Variant::RobeZ => {
                let key = (token << CHUNK_BITS) | chunk as u64;
                let start = self.location_hashes[0].hash(key) as usize;
                let sign = self.sign_hash.as_ref().map_or(1, |h| h.sign(key));
                (start, sign)
            }
        }
    }

    fn check_token(&self, position: usize, token: u64) -> Result<()> {
        if token as u128 >= self.config.n as u128 {
            return Err(Error::TokenOutOfRange { position, token, n: self.config.n });
        }
        Ok(())
    }

    /// Chunk placements making up the embedding of `token`, in output order.
    pub fn chunk_locations(&self, token: u64) -> Result<Vec<ChunkPlacement>> {
        self.check_token(0, token)?;
        let length = self.config.chunk_len();
        Ok((0..self.config.chunks_per_row())
            .map(|j| {
                let (start, sign) = self.placement(token, j);
                ChunkPlacement { start, length, sign, wraparound: start + length > self.config.memory_size }
            })
            .collect())
    }

    /// Embeddings for `tokens` (row-major `B x d`) and the index map that
    /// produced them.
    pub fn lookup_batch(&self, tokens: &[u64]) -> Result<(Vec<f64>, IndexMap)> {
        let d = self.config.d;
        let mut out = vec![0.0; tokens.len() * d];
        let mut imap = IndexMap::with_capacity(tokens.len(), d);
        self.lookup_into(tokens, &mut out, &mut imap.locations, &mut imap.signs)?;
        Ok((out, imap))
    }

    /// [`lookup_batch`](Self::lookup_batch) into caller-provided buffers of
    /// length `tokens.len() * d`. Lets callers split a batch across threads.
    pub fn lookup_into(
        &self,
        tokens: &[u64],
        out: &mut [f64],
        locations: &mut [usize],
        signs: &mut [i8],
    ) -> Result<()> {
        let d = self.config.d;
        let len = tokens.len() * d;
        if out.len() != len || locations.len() != len || signs.len() != len {
            return Err(Error::invalid("lookup buffers must have length B * d"));
        }
        for (position, &token) in tokens.iter().enumerate() {
            self.check_token(position, token)?;
        }
        let c = &self.config;
        let rows = Rows { z: c.chunk_len(), chunks: c.chunks_per_row(), memory: &self.memory };
        match (c.variant, self.sign_hash) {
            (Variant::HashedNet | Variant::RobeZ, sign) => {
                // A row's chunk keys are consecutive, so each row needs one
                // full hash and cheap steps after it.
                let h = self.location_hashes[0];
                match sign {
                    None => rows.fill(tokens, out, locations, signs, |token, row| {
                        let mut at = HashSteps::new(token << CHUNK_BITS, &h);
                        for p in row {
                            *p = (at.hash() as usize, 1);
                            at.advance();
                        }
                    }),
                    Some(s) => rows.fill(tokens, out, locations, signs, |token, row| {
                        let mut at = HashSteps::new(token << CHUNK_BITS, &h);
                        let mut parity = HashSteps::new(token << CHUNK_BITS, &s);
                        for p in row {
                            *p = (at.hash() as usize, parity.sign());
                            at.advance();
                            parity.advance();
                        }
                    }),
                }
            }
            _ => rows.fill(tokens, out, locations, signs, |token, row| {
                for (j, p) in row.iter_mut().enumerate() {
                    *p = self.placement(token, j);
                }
            }),
        }
        Ok(())
    }

    /// Overwrites memory so that `token` recovers exactly `row` (later writes
    /// win where chunks overlap).
    pub fn assign_embedding(&mut self, token: u64, row: &[f64]) -> Result<()> {
        if row.len() != self.config.d {
            return Err(Error::invalid("row length must equal d"));
        }
        let placements = self.chunk_locations(token)?;
        let size = self.config.memory_size;
        for (j, p) in placements.iter().enumerate() {
            for t in 0..p.length {
                self.memory[(p.start + t) % size] = f64::from(p.sign) * row[j * p.length + t];
            }
        }
        Ok(())
    }

    /// Plain SGD step `M -= lr * grad`; sparse gradients touch only their
    /// listed slots.
    pub fn apply_sgd(&mut self, grad: &GradientBuffer, lr: f64) -> Result<()> {
        sgd_apply(self, grad, lr)
    }
}

/// Shared copy loop of [`PssStore::lookup_into`], monomorphized per
/// placement rule so the variant dispatch stays out of the inner loop.
struct Rows<'a> {
    z: usize,
    chunks: usize,
    memory: &'a [f64],
}

impl Rows<'_> {
    /// `place(token, row)` writes the placements of one token's chunks.
    #[inline]
    fn fill(
        &self,
        tokens: &[u64],
        out: &mut [f64],
        locations: &mut [usize],
        signs: &mut [i8],
        mut place: impl FnMut(u64, &mut [(usize, i8)]),
    ) {
        let (z, size, memory) = (self.z, self.memory.len(), self.memory);
        let width = z * self.chunks;
        let mut row = vec![(0usize, 1i8); self.chunks];
        let rows = out
            .chunks_exact_mut(width)
            .zip(locations.chunks_exact_mut(width))
            .zip(signs.chunks_exact_mut(width));
        for (((out, locations), signs), &token) in rows.zip(tokens) {
            place(token, &mut row);
            // All of the row's reads are requested before any is used.
            for &(start, _) in &row {
                prefetch(memory, start, z);
            }
            let pieces =
                out.chunks_exact_mut(z).zip(locations.chunks_exact_mut(z)).zip(signs.chunks_exact_mut(z));
            for (((dst, loc), sgn), &(start, sign)) in pieces.zip(&row) {
                fill_signs(sgn, sign);
                // Multiplying by +-1.0 is exact, and avoids a branch on the
                // pseudo-random sign.
                let s = f64::from(sign);
                if start + z <= size {
                    copy_run(dst, loc, &memory[start..start + z], start, s);
                } else {
                    for t in 0..z {
                        let mut at = start + t;
                        if at >= size {
                            at -= size;
                        }
                        loc[t] = at;
                        dst[t] = s * memory[at];
                    }
                }
            }
        }
    }
}

/// Hints the cache lines holding `memory[start]` and `memory[start + z - 1]`.
#[inline]
fn prefetch(memory: &[f64], start: usize, z: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        use core::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        let first = memory.as_ptr().wrapping_add(start);
        let last = memory.as_ptr().wrapping_add((start + z - 1).min(memory.len() - 1));
        // SAFETY: SSE is part of the x86_64 baseline, and a prefetch never
        // faults or changes memory.
        unsafe {
            _mm_prefetch::<_MM_HINT_T0>(first.cast());
            _mm_prefetch::<_MM_HINT_T0>(last.cast());
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = (memory, start, z);
}

/// `dst[t] = s * src[t]` and `loc[t] = start + t`, in fixed blocks of 4 so
/// the short per-chunk loop needs no runtime vectorization checks.
#[inline]
fn copy_run(dst: &mut [f64], loc: &mut [usize], src: &[f64], start: usize, s: f64) {
    const W: usize = 4;
    let mut blocks = dst.chunks_exact_mut(W).zip(loc.chunks_exact_mut(W)).zip(src.chunks_exact(W));
    let mut at = start;
    for ((o, l), m) in &mut blocks {
        for t in 0..W {
            o[t] = s * m[t];
            l[t] = at + t;
        }
        at += W;
    }
    let done = at - start;
    for t in done..src.len() {
        dst[t] = s * src[t];
        loc[t] = start + t;
    }
}

/// `dst.fill(sign)` with word-sized stores; a `memset` call per chunk costs
/// more than the chunk copy itself.
#[inline]
fn fill_signs(dst: &mut [i8], sign: i8) {
    let word = [sign; 8];
    let mut words = dst.chunks_exact_mut(8);
    for w in &mut words {
        w.copy_from_slice(&word);
    }
    for g in words.into_remainder() {
        *g = sign;
    }
}

fn expected_ranges(config: &PssConfig) -> Vec<u64> {
    match config.variant {
        Variant::FullTable => vec![],
        Variant::HashingTrick => vec![(config.memory_size / config.d) as u64],
        Variant::QRTrick => {
            let rows = (config.memory_size / config.pieces) / (config.d / config.pieces);
            vec![rows as u64; config.pieces]
        }
        Variant::HashedNet | Variant::RobeZ => vec![config.memory_size as u64],
    }
}

fn check_mapping_domain(config: &PssConfig) -> Result<()> {
    if matches!(config.variant, Variant::HashedNet | Variant::RobeZ) {
        if config.n as u128 > MAX_TOKEN as u128 {
            return Err(Error::invalid("hashed variants support n up to 2^43"));
        }
        if config.chunks_per_row() as u64 > MAX_CHUNK {
            return Err(Error::invalid("hashed variants support up to 2^20 chunks per row"));
        }
    }
    Ok(())
}

fn derive_mapping(config: &PssConfig) -> Result<(Vec<HashParams>, Option<HashParams>)> {
    let ranges = expected_ranges(config);
    let locations = match config.variant {
        Variant::QRTrick => ranges
            .iter()
            .enumerate()
            .map(|(j, &m)| derive_hash_params(config.seed, QR_STREAM_BASE + j as u64, m))
            .collect::<Result<Vec<_>>>()?,
        _ => ranges
            .iter()
            .map(|&m| derive_hash_params(config.seed, LOCATION_STREAM, m))
            .collect::<Result<Vec<_>>>()?,
    };
    let sign = if config.signed() { Some(derive_hash_params(config.seed, SIGN_STREAM, 2)?) } else { None };
    Ok((locations, sign))
}

/// Builds a store for `config`.
pub fn init_store(config: PssConfig) -> Result<PssStore> {
    PssStore::new(config)
}

fn check_grad_shape(g_out: &[f64], imap: &IndexMap) -> Result<()> {
    if g_out.len() != imap.len() {
        return Err(Error::invalid("output gradient shape does not match the index map"));
    }
    Ok(())
}

/// Dense branch: scatter-add `sign * g_out` into a zeroed `|M|` buffer in
/// ascending flat position.
pub fn backward_dense(g_out: &[f64], imap: &IndexMap, memory_size: usize) -> Result<GradientBuffer> {
    check_grad_shape(g_out, imap)?;
    let mut buffer = vec![0.0; memory_size];
    for (q, ((&loc, &sign), &g)) in imap.locations.iter().zip(&imap.signs).zip(g_out).enumerate() {
        let Some(slot) = buffer.get_mut(loc) else {
            return Err(Error::CorruptIndexMap { position: q, location: loc, memory_size });
        };
        *slot += f64::from(sign) * g;
    }
    Ok(GradientBuffer::Dense(buffer))
}

/// Maximal stretches of flat positions whose locations increase by one,
/// which is how chunked lookups lay out their index maps.
#[derive(Debug, Clone, Copy)]
struct Run {
    start: usize,
    end: usize,
    q: usize,
}

fn location_runs(locations: &[usize]) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    if locations.is_empty() {
        return runs;
    }
    let mut from = 0;
    for (q, pair) in locations.windows(2).enumerate() {
        if pair[1] != pair[0] + 1 {
            runs.push(Run { start: locations[from], end: pair[0] + 1, q: from });
            from = q + 1;
        }
    }
    let last = locations[locations.len() - 1];
    runs.push(Run { start: locations[from], end: last + 1, q: from });
    runs
}

/// Visits every covered location in ascending order, summing the covering
/// runs' contributions in ascending flat position. Runs never share a
/// position, so ordering the active runs by first position orders the
/// summands exactly as the element-wise scatter does. The active set only
/// changes where a run starts or ends, so locations between those events
/// are emitted in a tight loop.
fn sweep_runs(
    runs: Vec<Run>,
    memory_size: usize,
    (signs, g_out): (&[i8], &[f64]),
    locations: &mut Vec<usize>,
    values: &mut Vec<f64>,
) {
    let contribution = |q: usize| f64::from(signs[q]) * g_out[q];
    // Stable, and runs are built in ascending position, so equal starts stay
    // in position order.
    let runs = radix::sort_by_key(runs, memory_size, |r| r.start as u32);
    let mut active: Vec<Run> = Vec::new();
    let mut next = 0;
    let mut loc = 0;
    while next < runs.len() || !active.is_empty() {
        if active.is_empty() {
            let r = runs[next];
            if runs.get(next + 1).is_none_or(|after| after.start >= r.end) {
                // Nothing else covers this run's locations.
                let span = r.q..r.q + (r.end - r.start);
                locations.extend(r.start..r.end);
                values.extend(
                    signs[span.clone()].iter().zip(&g_out[span]).map(|(&s, &g)| 0.0 + f64::from(s) * g),
                );
                next += 1;
                continue;
            }
            loc = r.start;
        }
        while next < runs.len() && runs[next].start == loc {
            let r = runs[next];
            let at = active.partition_point(|a| a.q < r.q);
            active.insert(at, r);
            next += 1;
        }
        let mut stop = active.iter().map(|r| r.end).min().unwrap_or(loc + 1);
        if let Some(r) = runs.get(next) {
            stop = stop.min(r.start);
        }
        locations.extend(loc..stop);
        values.extend((loc..stop).map(|l| {
            let mut sum = 0.0;
            for r in &active {
                sum += contribution(r.q + (l - r.start));
            }
            sum
        }));
        loc = stop;
        active.retain(|r| r.end > loc);
    }
}

/// Sparse branch: sorted unique locations with their summed contributions.
///
/// Positions are grouped by location with a stable sort, which plays the
/// role of the inverse index; each group is then summed in ascending flat
/// position.
pub fn backward_sparse(g_out: &[f64], imap: &IndexMap, memory_size: usize) -> Result<GradientBuffer> {
    check_grad_shape(g_out, imap)?;
    imap.check_bounds(memory_size)?;
    let unique_bound = imap.len().min(memory_size);
    let mut locations: Vec<usize> = Vec::with_capacity(unique_bound);
    let mut values: Vec<f64> = Vec::with_capacity(unique_bound);
    let contribution = |q: usize| f64::from(imap.signs[q]) * g_out[q];
    let runs = location_runs(&imap.locations);
    let fits = memory_size as u64 <= 1 << 32;
    if fits && runs.len() * 4 <= imap.len() {
        sweep_runs(runs, memory_size, (&imap.signs, g_out), &mut locations, &mut values);
    } else {
        let mut push = |loc: usize, c: f64| {
            if locations.last() != Some(&loc) {
                locations.push(loc);
                values.push(0.0);
            }
            // Non-empty: just pushed or matched above.
            *values.last_mut().unwrap() += c;
        };
        if fits {
            let pairs: Vec<(u32, f64)> =
                imap.locations.iter().enumerate().map(|(q, &l)| (l as u32, contribution(q))).collect();
            for (loc, c) in radix::sort_by_key(pairs, memory_size, |p| p.0) {
                push(loc as usize, c);
            }
        } else {
            let mut pairs: Vec<(usize, f64)> =
                imap.locations.iter().enumerate().map(|(q, &l)| (l, contribution(q))).collect();
            pairs.sort_by_key(|p| p.0);
            for (loc, c) in pairs {
                push(loc, c);
            }
        }
    }
    Ok(GradientBuffer::Sparse { memory_size, locations, values })
}

/// Dispatches to [`backward_dense`] or [`backward_sparse`].
pub fn backward(
    mode: crate::grad::GradientMode,
    g_out: &[f64],
    imap: &IndexMap,
    memory_size: usize,
) -> Result<GradientBuffer> {
    match mode {
        crate::grad::GradientMode::Dense => backward_dense(g_out, imap, memory_size),
        crate::grad::GradientMode::Sparse => backward_sparse(g_out, imap, memory_size),
    }
}

pub fn sgd_apply(store: &mut PssStore, grad: &GradientBuffer, lr: f64) -> Result<()> {
    if grad.memory_size() != store.memory.len() {
        return Err(Error::invalid("gradient size does not match the store memory"));
    }
    if !lr.is_finite() {
        return Err(Error::Numeric(alloc::format!("learning rate {lr} is not finite")));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("gradient contains non-finite values".into()));
    }
    match grad {
        GradientBuffer::Dense(values) => {
            for (m, &g) in store.memory.iter_mut().zip(values) {
                *m -= lr * g;
            }
        }
        GradientBuffer::Sparse { locations, values, .. } => {
            for (&l, &g) in locations.iter().zip(values) {
                store.memory[l] -= lr * g;
            }
        }
    }
    Ok(())
}

/// Whether any two chunk reads of `tokens` share a memory slot.
pub fn placements_overlap(store: &PssStore, tokens: &[u64]) -> Result<bool> {
    let size = store.config.memory_size;
    let mut used = vec![false; size];
    for &t in tokens {
        for p in store.chunk_locations(t)? {
            for k in 0..p.length {
                let at = (p.start + k) % size;
                if used[at] {
                    return Ok(true);
                }
                used[at] = true;
            }
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::GradientMode;
    use proptest::prelude::*;

    fn unit_params(m: u64) -> HashParams {
        HashParams::new(1, 0, m).unwrap()
    }

    #[test]
    fn full_table_placement_is_identity() {
        let s = PssStore::new(PssConfig::full_table(10, 4, 0)).unwrap();
        assert_eq!(
            s.chunk_locations(3).unwrap(),
            vec![ChunkPlacement { start: 12, length: 4, sign: 1, wraparound: false }]
        );
        assert!(s.chunk_locations(10).is_err());
    }

    #[test]
    fn robe_z_hand_placements() {
        let config = PssConfig::robe_z(4, 4, 8, 2, 0);
        let s =
            PssStore::from_parts(config, vec![0.0; 8], vec![unit_params(8)], Some(unit_params(2))).unwrap();
        let p = s.chunk_locations(1).unwrap();
        assert_eq!((p[0].start, p[0].sign), (0, 1));
        assert_eq!((p[1].start, p[1].sign), (1, -1));
        assert!(!p[0].wraparound);
    }

    #[test]
    fn wraparound_reads_are_circular() {
        // a = 0 is not allowed, so pick (a, b) making token 0 chunk 0 land at 6.
        let config = PssConfig::robe_z(1, 4, 8, 4, 0).with_sign(false);
        let memory: Vec<f64> = (0..8).map(f64::from).collect();
        let s = PssStore::from_parts(config, memory, vec![HashParams::new(1, 6, 8).unwrap()], None).unwrap();
        let p = s.chunk_locations(0).unwrap();
        assert_eq!(p[0].start, 6);
        assert!(p[0].wraparound);
        let (emb, imap) = s.lookup_batch(&[0]).unwrap();
        assert_eq!(imap.locations(), &[6, 7, 0, 1]);
        assert_eq!(emb, vec![6.0, 7.0, 0.0, 1.0]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = PssConfig::robe_z(1000, 16, 4096, 4, 77);
        let a = PssStore::new(c).unwrap();
        assert_eq!(a, PssStore::new(c).unwrap());
        assert!(a.memory().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn init_mean_is_centered() {
        let c = PssConfig::hashed_net(1_000_000, 16, 1_000_000, 5);
        let s = PssStore::new(c).unwrap();
        let n = s.memory().len() as f64;
        let mean = s.memory().iter().sum::<f64>() / n;
        // Uniform on [-1/4, 1/4]: variance 1/48.
        let sigma = (1.0 / 48.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "{mean} vs {sigma}");
    }

    #[test]
    fn lookup_of_all_ones_memory() {
        let mut s = PssStore::new(PssConfig::robe_z(50, 8, 64, 4, 1).with_sign(false)).unwrap();
        s.memory_mut().fill(1.0);
        let (emb, _) = s.lookup_batch(&[0, 7, 49]).unwrap();
        assert!(emb.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn repeated_tokens_give_identical_rows() {
        let s = PssStore::new(PssConfig::robe_z(50, 8, 64, 2, 1)).unwrap();
        let (emb, _) = s.lookup_batch(&[5, 5]).unwrap();
        assert_eq!(emb[..8], emb[8..]);
    }

    #[test]
    fn lookup_agrees_with_index_map() {
        for variant in Variant::ALL {
            let config = PssConfig::with_compression(variant, 500, 16, 8.0, 4, 4, 3).unwrap();
            let s = PssStore::new(config).unwrap();
            let mut rng = SplitMix64::new(4);
            let tokens: Vec<u64> = (0..64).map(|_| rng.below(500)).collect();
            let (emb, imap) = s.lookup_batch(&tokens).unwrap();
            for (q, e) in emb.iter().enumerate() {
                let expect = f64::from(imap.signs()[q]) * s.memory()[imap.locations()[q]];
                assert_eq!(e.to_bits(), expect.to_bits(), "{variant} q={q}");
            }
        }
    }

    #[test]
    fn lookup_reports_offending_position() {
        let s = PssStore::new(PssConfig::full_table(10, 2, 0)).unwrap();
        assert_eq!(
            s.lookup_batch(&[1, 2, 10]).unwrap_err(),
            Error::TokenOutOfRange { position: 2, token: 10, n: 10 }
        );
    }

    #[test]
    fn variant_placement_shapes() {
        let qr = PssStore::new(PssConfig::qr_trick(1000, 8, 64, 2, 1)).unwrap();
        let p = qr.chunk_locations(17).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p[0].start < 32 && p[1].start >= 32);
        assert!(p.iter().all(|c| c.length == 4 && c.start % 4 == 0 && !c.wraparound));
        let ht = PssStore::new(PssConfig::hashing_trick(1000, 8, 64, 1)).unwrap();
        let p = ht.chunk_locations(17).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].start % 8, 0);
        assert!(p[0].start + 8 <= 64);
    }

    #[test]
    fn hashed_net_is_robe_z_with_unit_chunks() {
        let h = PssStore::new(PssConfig::hashed_net(300, 8, 100, 9)).unwrap();
        let r = PssStore::new(PssConfig::robe_z(300, 8, 100, 1, 9)).unwrap();
        for t in 0..300 {
            assert_eq!(h.chunk_locations(t).unwrap(), r.chunk_locations(t).unwrap());
        }
        assert_eq!(h.memory(), r.memory());
    }

    #[test]
    fn full_table_lookup_reads_rows_and_sparse_touches_them() {
        let s = PssStore::new(PssConfig::full_table(20, 3, 2)).unwrap();
        let tokens = [4u64, 17, 4];
        let (emb, imap) = s.lookup_batch(&tokens).unwrap();
        for (b, &t) in tokens.iter().enumerate() {
            assert_eq!(&emb[b * 3..b * 3 + 3], &s.memory()[t as usize * 3..t as usize * 3 + 3]);
        }
        let g = backward_sparse(&[1.0; 9], &imap, 60).unwrap();
        let GradientBuffer::Sparse { locations, .. } = g else { unreachable!() };
        assert_eq!(locations, vec![12, 13, 14, 51, 52, 53]);
    }

    #[test]
    fn dense_backward_examples() {
        let imap = IndexMap::new(1, 2, vec![0, 3], vec![1, 1]).unwrap();
        let g = backward_dense(&[1.5, 2.5], &imap, 4).unwrap();
        assert_eq!(g, GradientBuffer::Dense(vec![1.5, 0.0, 0.0, 2.5]));
        let imap = IndexMap::new(1, 2, vec![1, 1], vec![1, 1]).unwrap();
        assert_eq!(backward_dense(&[1.0, 2.0], &imap, 4).unwrap().values()[1], 3.0);
        let imap = IndexMap::new(1, 1, vec![2], vec![-1]).unwrap();
        assert_eq!(backward_dense(&[4.0], &imap, 4).unwrap().values()[2], -4.0);
        let imap = IndexMap::new(1, 1, vec![4], vec![1]).unwrap();
        assert!(matches!(backward_dense(&[4.0], &imap, 4), Err(Error::CorruptIndexMap { .. })));
        assert!(backward_dense(&[4.0, 1.0], &imap, 8).is_err());
    }

    #[test]
    fn sparse_backward_examples() {
        let imap = IndexMap::new(1, 2, vec![0, 3], vec![1, 1]).unwrap();
        let g = backward_sparse(&[1.5, 2.5], &imap, 4).unwrap();
        assert_eq!(g, GradientBuffer::sparse(4, vec![0, 3], vec![1.5, 2.5]).unwrap());
        let imap = IndexMap::new(1, 3, vec![3, 0, 3], vec![1, 1, 1]).unwrap();
        let g = backward_sparse(&[1.0, 2.0, 4.0], &imap, 4).unwrap();
        assert_eq!(g, GradientBuffer::sparse(4, vec![0, 3], vec![2.0, 5.0]).unwrap());
        let imap = IndexMap::new(1, 1, vec![4], vec![1]).unwrap();
        assert!(matches!(backward_sparse(&[4.0], &imap, 4), Err(Error::CorruptIndexMap { .. })));
    }

    #[test]
    fn sgd_examples() {
        let config = PssConfig::full_table(1, 2, 0);
        let mut s = PssStore::from_parts(config, vec![1.0, 1.0], vec![], None).unwrap();
        s.apply_sgd(&GradientBuffer::Dense(vec![0.5, -1.0]), 0.1).unwrap();
        assert_eq!(s.memory(), &[0.95, 1.1]);
        let before = s.clone();
        s.apply_sgd(&GradientBuffer::Dense(vec![3.0, 4.0]), 0.0).unwrap();
        assert_eq!(s, before);
        assert!(matches!(
            s.apply_sgd(&GradientBuffer::Dense(vec![f64::NAN, 0.0]), 0.1),
            Err(Error::Numeric(_))
        ));
        assert_eq!(s, before);
        assert!(s.apply_sgd(&GradientBuffer::Dense(vec![0.0; 3]), 0.1).is_err());
    }

    #[test]
    fn sum_loss_decreases_like_first_order_prediction() {
        // L = sum of all retrieved elements; one SGD step with lr changes it
        // by -lr * sum(grad^2) up to O(lr^2).
        let mut s = PssStore::new(PssConfig::robe_z(200, 16, 96, 4, 8)).unwrap();
        let tokens: Vec<u64> = (0..40).map(|i| (i * 7) % 200).collect();
        let loss = |s: &PssStore| s.lookup_batch(&tokens).unwrap().0.iter().sum::<f64>();
        let before = loss(&s);
        let (emb, imap) = s.lookup_batch(&tokens).unwrap();
        let grad = backward_dense(&vec![1.0; emb.len()], &imap, 96).unwrap();
        let sq: f64 = grad.values().iter().map(|g| g * g).sum();
        let lr = 1e-6;
        s.apply_sgd(&grad, lr).unwrap();
        let observed = loss(&s) - before;
        let predicted = -lr * sq;
        assert!(((observed - predicted) / predicted).abs() < 1e-4, "{observed} vs {predicted}");
    }

    #[test]
    fn collision_free_robe_z_tracks_full_table() {
        // Memory far larger than n * d, seed chosen so no chunks overlap.
        let (n, d) = (6usize, 4usize);
        let full = PssStore::new(PssConfig::full_table(n, d, 1)).unwrap();
        let tokens: Vec<u64> = (0..n as u64).collect();
        let mut robe = (0..200)
            .map(|seed| PssStore::new(PssConfig::robe_z(n, d, 4096, 2, seed)).unwrap())
            .find(|s| !placements_overlap(s, &tokens).unwrap())
            .expect("some seed is collision free");
        for t in 0..n {
            robe.assign_embedding(t as u64, &full.memory()[t * d..(t + 1) * d]).unwrap();
        }
        let mut full = full;
        let batch = [0u64, 3, 5, 3, 1];
        for _ in 0..100 {
            let (ef, mf) = full.lookup_batch(&batch).unwrap();
            let (er, mr) = robe.lookup_batch(&batch).unwrap();
            assert_eq!(ef, er);
            // Pull every embedding towards 1.
            let gf: Vec<f64> = ef.iter().map(|v| v - 1.0).collect();
            let gr: Vec<f64> = er.iter().map(|v| v - 1.0).collect();
            full.apply_sgd(&backward_sparse(&gf, &mf, full.memory().len()).unwrap(), 0.05).unwrap();
            robe.apply_sgd(&backward_sparse(&gr, &mr, 4096).unwrap(), 0.05).unwrap();
        }
    }

    fn random_instance(seed: u64) -> (Vec<f64>, IndexMap, usize) {
        let mut rng = SplitMix64::new(seed);
        let b = 1 + rng.below(64) as usize;
        let d = 1 + rng.below(32) as usize;
        let m = 1 + rng.below(512) as usize;
        let len = b * d;
        let locs = (0..len).map(|_| rng.below(m as u64) as usize).collect();
        let signs = (0..len).map(|_| if rng.below(2) == 0 { 1 } else { -1 }).collect();
        let g = (0..len).map(|_| rng.normal() * 10.0).collect();
        (g, IndexMap::new(b, d, locs, signs).unwrap(), m)
    }

    #[test]
    fn sparse_densified_equals_dense_bitwise() {
        for seed in 0..300 {
            let (g, imap, m) = random_instance(seed);
            let dense = backward_dense(&g, &imap, m).unwrap();
            let sparse = backward_sparse(&g, &imap, m).unwrap();
            let a: Vec<u64> = dense.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = sparse.densify().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "seed {seed}");
        }
    }

    #[test]
    fn overlapping_and_wrapping_runs_match_dense() {
        let mut rng = SplitMix64::new(31);
        for (memory, chunk, batch) in [(40, 8, 50), (17, 16, 9), (1000, 16, 300), (64, 8, 2000)] {
            let store = PssStore::new(PssConfig::robe_z(500, 16, memory, chunk, 7)).unwrap();
            let tokens: Vec<u64> = (0..batch).map(|_| rng.below(500)).collect();
            let (_, imap) = store.lookup_batch(&tokens).unwrap();
            assert!(location_runs(imap.locations()).len() * 4 <= imap.len());
            let g: Vec<f64> = (0..imap.len()).map(|_| rng.normal()).collect();
            let dense = backward_dense(&g, &imap, memory).unwrap();
            let sparse = backward_sparse(&g, &imap, memory).unwrap();
            let a: Vec<u64> = dense.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = sparse.densify().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "memory {memory}, chunk {chunk}");
        }
    }

    #[test]
    fn sparse_and_dense_updates_agree() {
        let (g, imap, m) = random_instance(42);
        let config = PssConfig::hashed_net(10, 4, m.max(4), 0);
        let mut a = PssStore::new(config).unwrap();
        let mut b = a.clone();
        let m = a.memory().len();
        a.apply_sgd(&backward(GradientMode::Dense, &g, &imap, m).unwrap(), 0.01).unwrap();
        b.apply_sgd(&backward(GradientMode::Sparse, &g, &imap, m).unwrap(), 0.01).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn lookup_is_pure(seed in any::<u64>(), tokens in prop::collection::vec(0u64..300, 1..40)) {
            let s = PssStore::new(PssConfig::robe_z(300, 8, 128, 2, seed)).unwrap();
            prop_assert_eq!(s.lookup_batch(&tokens).unwrap(), s.lookup_batch(&tokens).unwrap());
        }

        #[test]
        fn locations_stay_in_memory(seed in any::<u64>(), v in prop::sample::select(&Variant::ALL[..]), compression in 1.0f64..50.0) {
            let config = PssConfig::with_compression(v, 400, 8, compression, 2, 2, seed).unwrap();
            let s = PssStore::new(config).unwrap();
            let tokens: Vec<u64> = (0..400).collect();
            let (_, imap) = s.lookup_batch(&tokens).unwrap();
            prop_assert!(imap.check_bounds(config.memory_size).is_ok());
        }
    }
}
