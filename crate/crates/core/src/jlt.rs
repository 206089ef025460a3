//! Johnson-Lindenstrauss sketches of an embedding table and checks of the
//! `(1 +- eps)` recovery guarantee.
//!
//! A sketch `S` (`k x n`) compresses a table `E` into `M = S E`; the
//! embedding of token `i` is recovered as `(S e_i)^T M`, i.e. column `i` of
//! `S` applied to `M`. `e_i` is never built.
//!
//! Entry `(r, i)` of a random sketch is a pure function of `(seed, r * n + i)`
//! over the splitmix64 stream, so a sketch can be stored densely, stored by
//! sparse columns, or regenerated on the fly with identical values.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{splitmix_at, SplitMix64};
use crate::table::DenseTable;

/// Largest `k * n` materialized by [`gaussian_jlt`].
pub const DEFAULT_DENSE_CAP: usize = 100_000_000;

/// Constant in front of `sigma(E)^2 / eps^2 * (ln(1/delta) + max(d, ln n))`
/// used by [`calibrated_k`]. Fixed by the calibration sweep documented in
/// the README.
pub const K_CONSTANT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchKind {
    /// i.i.d. `N(0, 1/k)` entries.
    Gaussian,
    /// `0` w.p. 2/3, `+-sqrt(3/k)` w.p. 1/6 each.
    Achlioptas,
    /// Caller-supplied matrix.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// Row-major `k x n`.
    Dense(Vec<f64>),
    /// Column `i` holds `entries[offsets[i]..offsets[i + 1]]`, each packed as
    /// `row << 1 | negative`.
    Columns { offsets: Vec<usize>, entries: Vec<u32> },
    /// Entries regenerated from the seed on every access.
    Implicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchMatrix {
    kind: SketchKind,
    k: usize,
    n: usize,
    seed: u64,
    storage: Storage,
}

#[inline]
fn gaussian_entry(seed: u64, index: u64, scale: f64) -> f64 {
    let pair = index >> 1;
    let x = splitmix_at(seed, 2 * pair);
    let y = splitmix_at(seed, 2 * pair + 1);
    let u1 = ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let r = libm::sqrt(-2.0 * libm::log(u1)) * scale;
    let theta = 2.0 * PI * crate::rng::unit_f64(y);
    if index & 1 == 0 {
        r * libm::cos(theta)
    } else {
        r * libm::sin(theta)
    }
}

/// `0` for zero, `1` for plus, `-1` for minus.
#[inline]
fn achlioptas_symbol(seed: u64, index: u64) -> i8 {
    match ((splitmix_at(seed, index) as u128 * 6) >> 64) as u8 {
        0..=3 => 0,
        4 => 1,
        _ => -1,
    }
}

fn check_dims(k: usize, n: usize) -> Result<()> {
    if k == 0 || n == 0 {
        return Err(Error::invalid("sketch dimensions must be at least 1"));
    }
    if k.checked_mul(n).is_none() {
        return Err(Error::invalid("sketch dimensions overflow"));
    }
    Ok(())
}

/// Dense Gaussian sketch, materialized. Fails above [`DEFAULT_DENSE_CAP`].
pub fn gaussian_jlt(k: usize, n: usize, seed: u64) -> Result<SketchMatrix> {
    gaussian_jlt_with_cap(k, n, seed, DEFAULT_DENSE_CAP)
}

pub fn gaussian_jlt_with_cap(k: usize, n: usize, seed: u64, cap: usize) -> Result<SketchMatrix> {
    check_dims(k, n)?;
    if k * n > cap {
        return Err(Error::ResourceLimit(alloc::format!(
            "dense {k} x {n} sketch exceeds the cap of {cap} entries"
        )));
    }
    let implicit = SketchMatrix::implicit(SketchKind::Gaussian, k, n, seed)?;
    let mut values = Vec::with_capacity(k * n);
    for r in 0..k {
        implicit.for_each_in_row(r, |_, v| values.push(v));
    }
    Ok(SketchMatrix { storage: Storage::Dense(values), ..implicit })
}

/// Sparse sign sketch stored by columns.
pub fn achlioptas_jlt(k: usize, n: usize, seed: u64) -> Result<SketchMatrix> {
    check_dims(k, n)?;
    if k >= 1 << 31 {
        return Err(Error::invalid("achlioptas sketch supports k below 2^31"));
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut entries = Vec::with_capacity(k * n / 3 + 16);
    offsets.push(0);
    for i in 0..n {
        for r in 0..k {
            match achlioptas_symbol(seed, (r * n + i) as u64) {
                0 => {}
                s => entries.push(((r as u32) << 1) | u32::from(s < 0)),
            }
        }
        offsets.push(entries.len());
    }
    Ok(SketchMatrix {
        kind: SketchKind::Achlioptas,
        k,
        n,
        seed,
        storage: Storage::Columns { offsets, entries },
    })
}

impl SketchMatrix {
    /// Random sketch whose entries are regenerated on each access; no
    /// storage beyond the seed.
    pub fn implicit(kind: SketchKind, k: usize, n: usize, seed: u64) -> Result<Self> {
        check_dims(k, n)?;
        if kind == SketchKind::Explicit {
            return Err(Error::invalid("explicit sketches need their values"));
        }
        Ok(Self { kind, k, n, seed, storage: Storage::Implicit })
    }

    /// Caller-supplied row-major `k x n` matrix.
    pub fn from_dense(k: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(k, n)?;
        if values.len() != k * n {
            return Err(Error::invalid("sketch values must have length k * n"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sketch entries must be finite"));
        }
        Ok(Self { kind: SketchKind::Explicit, k, n, seed: 0, storage: Storage::Dense(values) })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self::from_dense(n, n, values)
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_materialized(&self) -> bool {
        !matches!(self.storage, Storage::Implicit)
    }

    /// Magnitude of every non-zero Achlioptas entry.
    pub fn achlioptas_scale(&self) -> f64 {
        libm::sqrt(3.0 / self.k as f64)
    }

    fn gaussian_scale(&self) -> f64 {
        1.0 / libm::sqrt(self.k as f64)
    }

    pub fn entry(&self, r: usize, i: usize) -> f64 {
        assert!(r < self.k && i < self.n, "sketch index out of range");
        match &self.storage {
            Storage::Dense(v) => v[r * self.n + i],
            Storage::Columns { offsets, entries } => entries[offsets[i]..offsets[i + 1]]
                .iter()
                .find(|&&e| (e >> 1) as usize == r)
                .map_or(0.0, |&e| self.signed_scale(e)),
            Storage::Implicit => self.implicit_entry((r * self.n + i) as u64),
        }
    }

    #[inline]
    fn signed_scale(&self, packed: u32) -> f64 {
        if packed & 1 == 1 {
            -self.achlioptas_scale()
        } else {
            self.achlioptas_scale()
        }
    }

    #[inline]
    fn implicit_entry(&self, index: u64) -> f64 {
        match self.kind {
            SketchKind::Gaussian => gaussian_entry(self.seed, index, self.gaussian_scale()),
            _ => f64::from(achlioptas_symbol(self.seed, index)) * self.achlioptas_scale(),
        }
    }

    /// Calls `f(r, value)` for the non-zero entries of column `i`.
    pub fn for_each_in_column(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Storage::Dense(v) => {
                for r in 0..self.k {
                    let x = v[r * self.n + i];
                    if x != 0.0 {
                        f(r, x);
                    }
                }
            }
            Storage::Columns { offsets, entries } => {
                for &e in &entries[offsets[i]..offsets[i + 1]] {
                    f((e >> 1) as usize, self.signed_scale(e));
                }
            }
            Storage::Implicit => {
                for r in 0..self.k {
                    let x = self.implicit_entry((r * self.n + i) as u64);
                    if x != 0.0 {
                        f(r, x);
                    }
                }
            }
        }
    }

    /// Calls `f(i, value)` for the non-zero entries of row `r`.
    pub fn for_each_in_row(&self, r: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Storage::Dense(v) => {
                for (i, &x) in v[r * self.n..(r + 1) * self.n].iter().enumerate() {
                    if x != 0.0 {
                        f(i, x);
                    }
                }
            }
            Storage::Columns { .. } => {
                for i in 0..self.n {
                    let x = self.entry(r, i);
                    if x != 0.0 {
                        f(i, x);
                    }
                }
            }
            Storage::Implicit => match self.kind {
                SketchKind::Gaussian => {
                    // Entries come in Box-Muller pairs; reuse both halves.
                    let scale = self.gaussian_scale();
                    let base = (r * self.n) as u64;
                    let mut i = 0;
                    while i < self.n {
                        let index = base + i as u64;
                        let pair = index >> 1;
                        let x = splitmix_at(self.seed, 2 * pair);
                        let y = splitmix_at(self.seed, 2 * pair + 1);
                        let u1 = ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
                        let radius = libm::sqrt(-2.0 * libm::log(u1)) * scale;
                        let (s, c) = libm::sincos(2.0 * PI * crate::rng::unit_f64(y));
                        if index & 1 == 0 {
                            f(i, radius * c);
                            if i + 1 < self.n {
                                f(i + 1, radius * s);
                            }
                            i += 2;
                        } else {
                            f(i, radius * s);
                            i += 1;
                        }
                    }
                }
                _ => {
                    let scale = self.achlioptas_scale();
                    for i in 0..self.n {
                        match achlioptas_symbol(self.seed, (r * self.n + i) as u64) {
                            0 => {}
                            s => f(i, f64::from(s) * scale),
                        }
                    }
                }
            },
        }
    }

    /// `S v` for an `n`-vector `v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::invalid("vector length must equal n"));
        }
        let mut out = vec![0.0; self.k];
        match self.storage {
            Storage::Columns { .. } => {
                for (i, &x) in v.iter().enumerate() {
                    self.for_each_in_column(i, |r, s| out[r] += s * x);
                }
            }
            _ => {
                for (r, o) in out.iter_mut().enumerate() {
                    self.for_each_in_row(r, |i, s| *o += s * v[i]);
                }
            }
        }
        Ok(out)
    }
}

/// The sketched memory `M = S E` (`k x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct SketchResult {
    pub k: usize,
    pub d: usize,
    pub memory: Vec<f64>,
}

impl SketchResult {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.memory[r * self.d..(r + 1) * self.d]
    }

    pub fn into_table(self) -> Result<DenseTable> {
        DenseTable::new(self.k, self.d, self.memory)
    }
}

pub fn sketch_table(s: &SketchMatrix, e: &DenseTable) -> Result<SketchResult> {
    if s.n != e.n() {
        return Err(Error::invalid("sketch columns must equal table rows"));
    }
    let d = e.d();
    let mut memory = vec![0.0; s.k * d];
    match s.storage {
        Storage::Columns { .. } => {
            for i in 0..s.n {
                let row = e.row(i);
                s.for_each_in_column(i, |r, v| {
                    for (m, &x) in memory[r * d..(r + 1) * d].iter_mut().zip(row) {
                        *m += v * x;
                    }
                });
            }
        }
        _ => {
            for (r, out) in memory.chunks_exact_mut(d).enumerate() {
                s.for_each_in_row(r, |i, v| {
                    for (m, &x) in out.iter_mut().zip(e.row(i)) {
                        *m += v * x;
                    }
                });
            }
        }
    }
    Ok(SketchResult { k: s.k, d, memory })
}

/// `(S e_i)^T M`: column `i` of `S` applied to the sketched memory.
pub fn recover_embedding(s: &SketchMatrix, m: &SketchResult, i: usize) -> Result<Vec<f64>> {
    if i >= s.n {
        return Err(Error::invalid("token out of range for the sketch"));
    }
    if m.k != s.k {
        return Err(Error::invalid("sketched memory rows must equal k"));
    }
    let mut out = vec![0.0; m.d];
    s.for_each_in_column(i, |r, v| {
        for (o, &x) in out.iter_mut().zip(m.row(r)) {
            *o += v * x;
        }
    });
    Ok(out)
}

/// Top singular value from power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularValue {
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on `E^T E` from a fixed seeded start vector.
pub fn max_singular_value(e: &DenseTable, tol: f64, max_iters: usize) -> Result<SingularValue> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    if e.values().iter().all(|&v| v == 0.0) {
        return Ok(SingularValue { sigma: 0.0, iterations: 0, converged: true });
    }
    let d = e.d();
    let mut gram = vec![0.0; d * d];
    for row in e.rows() {
        for a in 0..d {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in 0..d {
                gram[a * d + b] += ra * row[b];
            }
        }
    }
    let mut rng = SplitMix64::new(0x5EED_0F5E_ED00);
    let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    normalize(&mut v);
    let mut w = vec![0.0; d];
    let mut sigma = 0.0;
    for iteration in 1..=max_iters {
        for (a, out) in w.iter_mut().enumerate() {
            *out = gram[a * d..(a + 1) * d].iter().zip(&v).map(|(g, x)| g * x).sum();
        }
        let rayleigh: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let next = libm::sqrt(rayleigh.max(0.0));
        let norm = normalize(&mut w);
        if norm == 0.0 {
            // Start vector fell in the null space; the spectrum is still nonzero.
            return Err(Error::Numeric("power iteration collapsed".into()));
        }
        core::mem::swap(&mut v, &mut w);
        if iteration > 1 && libm::fabs(next - sigma) <= tol * next {
            return Ok(SingularValue { sigma: next, iterations: iteration, converged: true });
        }
        sigma = next;
    }
    Ok(SingularValue { sigma, iterations: max_iters, converged: false })
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Sketch size `ceil(K_CONSTANT * sigma^2 / eps^2 * (ln(1/delta) + max(d, ln n)))`.
pub fn calibrated_k(sigma: f64, epsilon: f64, delta: f64, n: usize, d: usize) -> usize {
    calibrated_k_with(K_CONSTANT, sigma, epsilon, delta, n, d)
}

pub fn calibrated_k_with(c: f64, sigma: f64, epsilon: f64, delta: f64, n: usize, d: usize) -> usize {
    let log_term = libm::log(1.0 / delta) + (d as f64).max(libm::log(n as f64));
    let k = c * sigma * sigma / (epsilon * epsilon) * log_term;
    (libm::ceil(k) as usize).max(1)
}

/// `9^d + n`, the size of the point set the guarantee is stated over.
pub fn f_bound(n: usize, d: usize) -> f64 {
    libm::pow(9.0, d as f64) + n as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationSpec {
    pub epsilon: f64,
    pub delta: f64,
    pub x_samples: usize,
    pub pair_samples: usize,
}

impl VerificationSpec {
    pub fn new(epsilon: f64, delta: f64, x_samples: usize, pair_samples: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::invalid("epsilon must lie in (0, 1)"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        if x_samples == 0 || pair_samples == 0 {
            return Err(Error::invalid("sample counts must be at least 1"));
        }
        Ok(Self { epsilon, delta, x_samples, pair_samples })
    }
}

/// Measured recovery quality of a sketch.
///
/// [`verify_inner_products`] fills the direction fields, [`verify_pairwise_distances`]
/// the pair fields; [`verify`] fills both. Fields of a check that did not
/// run stay zero, with its sample count zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerificationReport {
    pub sigma_e: f64,
    pub f_bound: f64,
    pub x_samples: usize,
    /// Max of `|<rec_i, x> - <E_i, x>| / |x|` over sampled `(i, x)`.
    pub max_violation: f64,
    /// Fraction of sampled `(i, x)` whose violation is at most `eps`.
    pub fraction_within: f64,
    pub pair_samples: usize,
    /// Max of `| |rec_i - rec_j| - |E_i - E_j| |` over sampled pairs.
    pub max_distance_deviation: f64,
    /// Max of `| |rec_i| - |E_i| |` over tokens of sampled pairs.
    pub max_norm_deviation: f64,
    /// Max of `|rec_i - E_i|`, the violation along the worst direction.
    pub max_worst_case_violation: f64,
    /// Pairs whose tokens both satisfy the eps-condition in every direction.
    pub qualifying_pairs: usize,
    /// Qualifying pairs whose distance deviation exceeds `2 eps + 1e-9`.
    pub implication_failures: usize,
}

/// Slack added to `2 eps` when checking the distance implication.
pub const DISTANCE_SLACK: f64 = 1e-9;

const DIRECTION_STREAM: u64 = 0xD1;
const PAIR_STREAM: u64 = 0xA1;

fn check_shapes(e: &DenseTable, s: &SketchMatrix, m: &SketchResult) -> Result<()> {
    if s.n != e.n() || m.k != s.k || m.d != e.d() {
        return Err(Error::invalid("table, sketch and sketched memory shapes disagree"));
    }
    Ok(())
}

/// Violation of one sampled `(token, direction)`; sample `index` draws from
/// its own stream, so samples can be evaluated in any order or in parallel.
pub fn inner_product_sample(
    e: &DenseTable,
    s: &SketchMatrix,
    m: &SketchResult,
    seed: u64,
    index: u64,
) -> Result<f64> {
    let mut rng = SplitMix64::stream(seed ^ DIRECTION_STREAM, index);
    let i = rng.below(e.n() as u64) as usize;
    let mut x: Vec<f64> = (0..e.d()).map(|_| rng.normal()).collect();
    normalize(&mut x);
    let rec = recover_embedding(s, m, i)?;
    Ok(libm::fabs(dot(&rec, &x) - dot(e.row(i), &x)))
}

/// Outcome of one sampled token pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    pub distance_deviation: f64,
    pub norm_deviation: f64,
    pub worst_case_violation: [f64; 2],
}

pub fn pair_sample(
    e: &DenseTable,
    s: &SketchMatrix,
    m: &SketchResult,
    seed: u64,
    index: u64,
) -> Result<PairSample> {
    let mut rng = SplitMix64::stream(seed ^ PAIR_STREAM, index);
    let n = e.n() as u64;
    let i = rng.below(n) as usize;
    let mut j = rng.below(n) as usize;
    if n > 1 {
        while j == i {
            j = rng.below(n) as usize;
        }
    }
    let ri = recover_embedding(s, m, i)?;
    let rj = recover_embedding(s, m, j)?;
    let zero = vec![0.0; e.d()];
    let (ei, ej) = (e.row(i), e.row(j));
    let norm_dev = |r: &[f64], t: &[f64]| libm::fabs(distance(r, &zero) - distance(t, &zero));
    Ok(PairSample {
        distance_deviation: libm::fabs(distance(&ri, &rj) - distance(ei, ej)),
        norm_deviation: norm_dev(&ri, ei).max(norm_dev(&rj, ej)),
        worst_case_violation: [distance(&ri, ei), distance(&rj, ej)],
    })
}

impl VerificationReport {
    /// Folds direction-sample violations (in any order) into the report.
    pub fn add_inner_products(&mut self, violations: &[f64], epsilon: f64) {
        let within = violations.iter().filter(|&&v| v <= epsilon).count();
        let total = self.x_samples + violations.len();
        let previous = self.fraction_within * self.x_samples as f64;
        self.fraction_within = if total == 0 { 0.0 } else { (previous + within as f64) / total as f64 };
        self.x_samples = total;
        self.max_violation = violations.iter().fold(self.max_violation, |a, &b| a.max(b));
    }

    pub fn add_pairs(&mut self, pairs: &[PairSample], epsilon: f64) {
        for p in pairs {
            self.pair_samples += 1;
            self.max_distance_deviation = self.max_distance_deviation.max(p.distance_deviation);
            self.max_norm_deviation = self.max_norm_deviation.max(p.norm_deviation);
            let [a, b] = p.worst_case_violation;
            self.max_worst_case_violation = self.max_worst_case_violation.max(a).max(b);
            if a <= epsilon && b <= epsilon {
                self.qualifying_pairs += 1;
                if p.distance_deviation > 2.0 * epsilon + DISTANCE_SLACK {
                    self.implication_failures += 1;
                }
            }
        }
    }
}

fn base_report(e: &DenseTable) -> Result<VerificationReport> {
    Ok(VerificationReport {
        sigma_e: max_singular_value(e, 1e-6, 1000)?.sigma,
        f_bound: f_bound(e.n(), e.d()),
        ..Default::default()
    })
}

/// Samples `spec.x_samples` unit directions and tokens and measures how far
/// recovered inner products drift from the table's.
pub fn verify_inner_products(
    e: &DenseTable,
    s: &SketchMatrix,
    m: &SketchResult,
    spec: &VerificationSpec,
    seed: u64,
) -> Result<VerificationReport> {
    check_shapes(e, s, m)?;
    let mut report = base_report(e)?;
    let violations = (0..spec.x_samples as u64)
        .map(|idx| inner_product_sample(e, s, m, seed, idx))
        .collect::<Result<Vec<_>>>()?;
    report.add_inner_products(&violations, spec.epsilon);
    Ok(report)
}

/// Samples token pairs and compares recovered distances and norms with the
/// table's; also checks that pairs meeting the eps-condition in every
/// direction keep their distance within `2 eps`.
pub fn verify_pairwise_distances(
    e: &DenseTable,
    s: &SketchMatrix,
    m: &SketchResult,
    spec: &VerificationSpec,
    seed: u64,
) -> Result<VerificationReport> {
    check_shapes(e, s, m)?;
    let mut report = base_report(e)?;
    let pairs = (0..spec.pair_samples as u64)
        .map(|idx| pair_sample(e, s, m, seed, idx))
        .collect::<Result<Vec<_>>>()?;
    report.add_pairs(&pairs, spec.epsilon);
    Ok(report)
}

/// Both checks in one report.
pub fn verify(
    e: &DenseTable,
    s: &SketchMatrix,
    m: &SketchResult,
    spec: &VerificationSpec,
    seed: u64,
) -> Result<VerificationReport> {
    let mut report = verify_inner_products(e, s, m, spec, seed)?;
    let pairs = (0..spec.pair_samples as u64)
        .map(|idx| pair_sample(e, s, m, seed, idx))
        .collect::<Result<Vec<_>>>()?;
    report.add_pairs(&pairs, spec.epsilon);
    Ok(report)
}
