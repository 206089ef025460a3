//! Forward/backward latency of a store over grids of shapes.
//!
//! The timed loss is the sum of every retrieved element, so backward runs
//! with an all-ones output gradient.

use std::collections::HashSet;
use std::fmt;
use std::fs::OpenOptions;
use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use pss_core::rng::SplitMix64;
use pss_core::store::backward;
use pss_core::{GradientBuffer, GradientMode, IndexMap, PssConfig, PssStore, Variant};
use rayon::prelude::*;

use crate::error::{Error, IoContext, Result};

/// Largest estimated working set `time_pass` will allocate.
pub const DEFAULT_MEMORY_CAP: usize = 2 << 30;
pub const DEFAULT_BATCH: usize = 10_240;

pub const CSV_HEADER: [&str; 14] = [
    "host",
    "n",
    "d",
    "compression",
    "chunk",
    "mode",
    "pass",
    "batch",
    "trials",
    "median_ms",
    "p10_ms",
    "p90_ms",
    "checksum",
    "threads",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pass {
    Forward,
    Backward,
}

impl Pass {
    pub fn name(self) -> &'static str {
        match self {
            Pass::Forward => "forward",
            Pass::Backward => "backward",
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "forward" | "fwd" => Ok(Pass::Forward),
            "backward" | "bwd" => Ok(Pass::Backward),
            _ => Err(Error::InvalidArgument(format!("unknown pass `{s}`"))),
        }
    }
}

/// Millisecond time source; swapped for a stub in tests.
pub trait Clock {
    fn now_ms(&mut self) -> f64;
}

pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_ms(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub config: PssConfig,
    pub pass: Pass,
    pub mode: GradientMode,
    pub batch: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Lookup threads; 1 keeps everything on the calling thread.
    pub threads: usize,
    pub memory_cap: usize,
}

impl BenchSpec {
    pub fn new(config: PssConfig, pass: Pass, mode: GradientMode) -> Self {
        Self {
            config,
            pass,
            mode,
            batch: DEFAULT_BATCH,
            trials: 7,
            warmup: 2,
            seed: 0,
            threads: 1,
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }

    /// Bytes held during a trial: memory, outputs, index map and, for dense
    /// backward, the full-size gradient buffer.
    pub fn working_set(&self) -> usize {
        let m = self.config.memory_size;
        let elements = self.batch.saturating_mul(self.config.d);
        let per_element = 8 + 8 + 1 + 8 + 16;
        let gradient = match (self.pass, self.mode) {
            (Pass::Backward, GradientMode::Dense) => m.saturating_mul(8),
            _ => 0,
        };
        m.saturating_mul(8).saturating_add(elements.saturating_mul(per_element)).saturating_add(gradient)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPoint {
    pub n: usize,
    pub d: usize,
    pub compression: f64,
    pub chunk: usize,
    pub mode: GradientMode,
    pub pass: Pass,
    pub batch: usize,
    pub trials: usize,
    pub warmup: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub checksum: f64,
    pub threads: usize,
}

/// Median (mean of the middle two for even counts) and nearest-rank 10th
/// and 90th percentiles.
pub fn summarize(times: &[f64]) -> (f64, f64, f64) {
    let mut t = times.to_vec();
    t.sort_by(f64::total_cmp);
    let n = t.len();
    let median = if n % 2 == 1 { t[n / 2] } else { 0.5 * (t[n / 2 - 1] + t[n / 2]) };
    let rank = |p: f64| t[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
    (median, rank(0.1), rank(0.9))
}

/// Lookup split into one contiguous slice of tokens per pool thread.
fn lookup(
    store: &PssStore,
    tokens: &[u64],
    out: &mut [f64],
    imap: &mut (Vec<usize>, Vec<i8>),
    pool: Option<&rayon::ThreadPool>,
) -> Result<()> {
    let (locations, signs) = imap;
    let Some(pool) = pool else {
        return Ok(store.lookup_into(tokens, out, locations, signs)?);
    };
    let d = store.d();
    let per = tokens.len().div_ceil(pool.current_num_threads()).max(1);
    pool.install(|| {
        tokens
            .par_chunks(per)
            .zip(out.par_chunks_mut(per * d))
            .zip(locations.par_chunks_mut(per * d))
            .zip(signs.par_chunks_mut(per * d))
            .try_for_each(|(((t, o), l), s)| store.lookup_into(t, o, l, s))
    })?;
    Ok(())
}

pub fn time_pass(spec: &BenchSpec) -> Result<BenchPoint> {
    time_pass_with_clock(spec, &mut WallClock::default())
}

/// [`time_pass`] with an explicit clock; every trial reads it twice.
pub fn time_pass_with_clock(spec: &BenchSpec, clock: &mut impl Clock) -> Result<BenchPoint> {
    if spec.trials < 3 || spec.warmup < 1 || spec.batch == 0 {
        return Err(Error::InvalidArgument("need trials >= 3, warmup >= 1 and batch >= 1".into()));
    }
    let need = spec.working_set();
    if need > spec.memory_cap {
        return Err(pss_core::Error::ResourceLimit(format!(
            "benchmark needs about {need} bytes, cap is {}",
            spec.memory_cap
        ))
        .into());
    }
    let pool = if spec.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Some(pool)
    } else {
        None
    };
    let pool = pool.as_ref();
    let c = spec.config;
    let store = PssStore::new(c)?;
    let mut rng = SplitMix64::new(spec.seed);
    let tokens: Vec<u64> = (0..spec.batch).map(|_| rng.below(c.n as u64)).collect();
    let len = spec.batch * c.d;
    let mut out = vec![0.0; len];
    let mut imap = (vec![0usize; len], vec![0i8; len]);
    lookup(&store, &tokens, &mut out, &mut imap, pool)?;
    let index_map = IndexMap::new(spec.batch, c.d, imap.0.clone(), imap.1.clone())?;
    let ones = vec![1.0; len];

    // Returns the backward gradient so it is summed and freed off the clock.
    let run = |out: &mut Vec<f64>, imap: &mut (Vec<usize>, Vec<i8>)| -> Result<Option<GradientBuffer>> {
        Ok(match spec.pass {
            Pass::Forward => {
                lookup(&store, black_box(&tokens), out, imap, pool)?;
                None
            }
            Pass::Backward => Some(backward(spec.mode, black_box(&ones), &index_map, c.memory_size)?),
        })
    };
    let fold = |out: &[f64], g: Option<GradientBuffer>| match g {
        None => out.iter().sum::<f64>(),
        Some(GradientBuffer::Dense(v)) => v.iter().sum(),
        Some(GradientBuffer::Sparse { values, .. }) => values.iter().sum(),
    };
    for _ in 0..spec.warmup {
        let g = run(&mut out, &mut imap)?;
        black_box(fold(&out, g));
    }
    let mut checksum = 0.0;
    let mut times = Vec::with_capacity(spec.trials);
    for _ in 0..spec.trials {
        let start = clock.now_ms();
        let g = black_box(run(&mut out, &mut imap)?);
        times.push(clock.now_ms() - start);
        checksum += fold(&out, g);
    }
    let (median_ms, p10_ms, p90_ms) = summarize(&times);
    Ok(BenchPoint {
        n: c.n,
        d: c.d,
        compression: c.compression(),
        chunk: c.chunk_len(),
        mode: spec.mode,
        pass: spec.pass,
        batch: spec.batch,
        trials: spec.trials,
        warmup: spec.warmup,
        median_ms,
        p10_ms,
        p90_ms,
        checksum: checksum / spec.trials as f64,
        threads: spec.threads,
    })
}

/// `(epochs * ms_per_kiter) / (base_epochs * base_ms_per_kiter)`.
pub fn relative_time(
    epochs: f64,
    ms_per_kiter: f64,
    base_epochs: f64,
    base_ms_per_kiter: f64,
) -> Result<f64> {
    let inputs = [epochs, ms_per_kiter, base_epochs, base_ms_per_kiter];
    if inputs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(pss_core::Error::InvalidArgument("relative_time inputs must be positive".into()).into());
    }
    Ok((epochs * ms_per_kiter) / (base_epochs * base_ms_per_kiter))
}

/// Axes of a sweep; every combination becomes one RobeZ benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub ns: Vec<usize>,
    pub d: usize,
    pub compressions: Vec<f64>,
    pub chunks: Vec<usize>,
    pub modes: Vec<GradientMode>,
    pub passes: Vec<Pass>,
    pub batch: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Grid {
    fn points(&self) -> Result<Vec<BenchSpec>> {
        if [self.ns.len(), self.compressions.len(), self.chunks.len(), self.modes.len(), self.passes.len()]
            .contains(&0)
        {
            return Err(Error::InvalidArgument("every grid axis needs at least one value".into()));
        }
        let mut specs = Vec::new();
        for &n in &self.ns {
            for &compression in &self.compressions {
                for &chunk in &self.chunks {
                    let config = PssConfig::with_compression(
                        Variant::RobeZ,
                        n,
                        self.d,
                        compression,
                        chunk,
                        1,
                        self.seed,
                    )?;
                    for &pass in &self.passes {
                        for &mode in &self.modes {
                            specs.push(BenchSpec {
                                batch: self.batch,
                                trials: self.trials,
                                warmup: self.warmup,
                                seed: self.seed,
                                threads: self.threads,
                                ..BenchSpec::new(config, pass, mode)
                            });
                        }
                    }
                }
            }
        }
        Ok(specs)
    }
}

pub fn host_name() -> String {
    std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
        .map(|h| h.trim().to_owned())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Columns that identify a row when resuming.
type Key = (String, String, String, String, String, String, String, String);

fn key_of(host: &str, p: &BenchSpec) -> Key {
    (
        host.to_owned(),
        p.config.n.to_string(),
        p.config.d.to_string(),
        format!("{}", p.config.compression()),
        p.config.chunk_len().to_string(),
        p.mode.to_string(),
        p.pass.to_string(),
        p.batch.to_string(),
    )
}

/// Runs every grid point not already in `out_path`, appending one CSV row
/// per point. Returns the number of rows written.
pub fn sweep_grid(grid: &Grid, out_path: &Path, host: &str) -> Result<usize> {
    let specs = grid.points()?;
    let mut done: HashSet<Key> = HashSet::new();
    let fresh = !out_path.exists() || std::fs::metadata(out_path).at(out_path)?.len() == 0;
    if !fresh {
        let mut r = csv::Reader::from_path(out_path)?;
        if r.headers()?.iter().ne(CSV_HEADER) {
            return Err(Error::InvalidArgument(format!(
                "{} exists with a different header",
                out_path.display()
            )));
        }
        for rec in r.records() {
            let rec = rec?;
            done.insert((
                rec[0].to_owned(),
                rec[1].to_owned(),
                rec[2].to_owned(),
                rec[3].to_owned(),
                rec[4].to_owned(),
                rec[5].to_owned(),
                rec[6].to_owned(),
                rec[7].to_owned(),
            ));
        }
    }
    let file = OpenOptions::new().create(true).append(true).open(out_path).at(out_path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER)?;
        w.flush().at(out_path)?;
    }
    let mut written = 0;
    for spec in specs {
        if done.contains(&key_of(host, &spec)) {
            continue;
        }
        let p = time_pass(&spec)?;
        w.write_record(point_record(host, &p))?;
        // Flush per row so an interrupted sweep can resume.
        w.flush().at(out_path)?;
        written += 1;
    }
    Ok(written)
}

pub fn point_record(host: &str, p: &BenchPoint) -> Vec<String> {
    vec![
        host.to_owned(),
        p.n.to_string(),
        p.d.to_string(),
        format!("{}", p.compression),
        p.chunk.to_string(),
        p.mode.to_string(),
        p.pass.to_string(),
        p.batch.to_string(),
        p.trials.to_string(),
        format!("{:.6}", p.median_ms),
        format!("{:.6}", p.p10_ms),
        format!("{:.6}", p.p90_ms),
        format!("{:?}", p.checksum),
        p.threads.to_string(),
    ]
}

/// Writes points as a complete CSV (header included).
pub fn write_points(mut out: impl Write, host: &str, points: &[BenchPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(CSV_HEADER)?;
    for p in points {
        w.write_record(point_record(host, p))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
