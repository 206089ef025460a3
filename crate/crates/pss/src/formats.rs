//! On-disk formats. Every binary number is little-endian; text headers are
//! ASCII lines ending in `\n`.
//!
//! * store checkpoint: `PSSv1 <variant> <n> <d> <memory_size> <Z> <l> <seed>`,
//!   then `hashes <count>` and one `<a> <b> <m>` line per hash (location
//!   hashes first, then the sign hash if signs are enabled, which is how a
//!   reader learns `sign_enabled`), then
//!   `memory <len>` followed by `len` raw f64 values.
//! * model checkpoint: `DLRMv1 <fields>`, the bottom and top MLPs as
//!   `mlp <layers>` blocks of `layer <inputs> <outputs>` plus raw f64
//!   weights (row-major) and biases, then one store checkpoint per field.
//! * dataset cache: `DSv1\n`, u64 `N`, `dense_dim`, `F`, `F` u64 vocab
//!   sizes, `N * dense_dim` f64 features, `N * F` u64 tokens, `N` label
//!   bytes (0 or 1).
//! * table: `TBLv1 <n> <d>\n` then `n * d` raw f64, or CSV with one row per
//!   line and no header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use pss_core::hashing::HashParams;
use pss_core::jlt::VerificationReport;
use pss_core::model::{DlrmModel, Linear, Mlp};
use pss_core::synth::Dataset;
use pss_core::{DenseTable, PssConfig, PssStore};

use crate::error::{format_error, Error, IoContext, Result};

const STORE_MAGIC: &str = "PSSv1";
const MODEL_MAGIC: &str = "DLRMv1";
const DATASET_MAGIC: &[u8; 5] = b"DSv1\n";
const TABLE_MAGIC: &str = "TBLv1";

type Parse<T> = std::result::Result<T, ParseError>;

/// Parse failures before a path is attached.
#[derive(Debug)]
enum ParseError {
    Io(std::io::Error),
    Malformed(String),
    Core(pss_core::Error),
}

impl From<std::io::Error> for ParseError {
    fn from(e: std::io::Error) -> Self {
        ParseError::Io(e)
    }
}

impl From<pss_core::Error> for ParseError {
    fn from(e: pss_core::Error) -> Self {
        ParseError::Core(e)
    }
}

fn malformed<T>(msg: impl Into<String>) -> Parse<T> {
    Err(ParseError::Malformed(msg.into()))
}

fn attach(path: &Path, e: ParseError) -> Error {
    match e {
        ParseError::Io(source) if source.kind() == std::io::ErrorKind::UnexpectedEof => {
            format_error(path, "file ends early")
        }
        ParseError::Io(source) => Error::Io { path: path.to_path_buf(), source },
        ParseError::Malformed(m) => format_error(path, m),
        ParseError::Core(c) => format_error(path, c.to_string()),
    }
}

fn read_line(r: &mut impl BufRead) -> Parse<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 || !line.ends_with('\n') {
        return malformed("unexpected end of header");
    }
    line.pop();
    Ok(line)
}

/// Reads a line `<tag> <fields...>` and returns the fields.
fn tagged(r: &mut impl BufRead, tag: &str, count: usize) -> Parse<Vec<String>> {
    let line = read_line(r)?;
    let mut parts = line.split(' ');
    if parts.next() != Some(tag) {
        return malformed(format!("expected `{tag}` line, found {line:?}"));
    }
    let fields: Vec<String> = parts.map(str::to_owned).collect();
    if fields.len() != count {
        return malformed(format!("`{tag}` line needs {count} fields"));
    }
    Ok(fields)
}

fn number<T: std::str::FromStr>(s: &str) -> Parse<T> {
    s.parse().or_else(|_| malformed(format!("bad number {s:?}")))
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Parse<Vec<f64>> {
    let mut bytes =
        vec![0u8; count.checked_mul(8).ok_or_else(|| ParseError::Malformed("length overflow".into()))?];
    r.read_exact(&mut bytes)?;
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return malformed("non-finite value");
    }
    Ok(values)
}

fn read_u64(r: &mut impl Read) -> Parse<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_count(r: &mut impl Read) -> Parse<usize> {
    usize::try_from(read_u64(r)?).or_else(|_| malformed("count does not fit in memory"))
}

fn expect_eof(r: &mut impl Read) -> Parse<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return malformed("trailing bytes after the payload");
    }
    Ok(())
}

pub fn write_store(w: &mut impl Write, store: &PssStore) -> std::io::Result<()> {
    let c = store.config();
    writeln!(
        w,
        "{STORE_MAGIC} {} {} {} {} {} {} {}",
        c.variant, c.n, c.d, c.memory_size, c.chunk, c.pieces, c.seed
    )?;
    let hashes: Vec<&HashParams> = store.location_hashes().iter().chain(store.sign_hash()).collect();
    writeln!(w, "hashes {}", hashes.len())?;
    for h in hashes {
        writeln!(w, "{} {} {}", h.a(), h.b(), h.m())?;
    }
    writeln!(w, "memory {}", store.memory().len())?;
    write_f64s(w, store.memory())
}

fn parse_store(r: &mut impl BufRead) -> Parse<PssStore> {
    let f = tagged(r, STORE_MAGIC, 7)?;
    let mut config = PssConfig {
        variant: f[0].parse()?,
        n: number(&f[1])?,
        d: number(&f[2])?,
        memory_size: number(&f[3])?,
        chunk: number(&f[4])?,
        pieces: number(&f[5])?,
        seed: number(&f[6])?,
        sign_enabled: false,
    };
    config.validate()?;
    let unsigned = config.hash_param_sets();
    let count: usize = number(&tagged(r, "hashes", 1)?[0])?;
    config.sign_enabled = count > unsigned;
    if count != config.hash_param_sets() {
        return malformed("hash parameter count does not fit the variant");
    }
    let mut hashes = Vec::with_capacity(count);
    for _ in 0..count {
        let line = read_line(r)?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 3 {
            return malformed("hash lines hold `<a> <b> <m>`");
        }
        hashes.push(HashParams::new(number(parts[0])?, number(parts[1])?, number(parts[2])?)?);
    }
    let len: usize = number(&tagged(r, "memory", 1)?[0])?;
    if len != config.memory_size {
        return malformed("memory length disagrees with the header");
    }
    let memory = read_f64s(r, len)?;
    let sign = if config.signed() { hashes.pop() } else { None };
    Ok(PssStore::from_parts(config, memory, hashes, sign)?)
}

pub fn save_store(path: &Path, store: &PssStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).at(path)?);
    write_store(&mut w, store).and_then(|_| w.flush()).at(path)
}

pub fn load_store(path: &Path) -> Result<PssStore> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    parse_store(&mut r).and_then(|s| expect_eof(&mut r).map(|_| s)).map_err(|e| attach(path, e))
}

fn write_mlp(w: &mut impl Write, mlp: &Mlp) -> std::io::Result<()> {
    writeln!(w, "mlp {}", mlp.layers().len())?;
    for l in mlp.layers() {
        writeln!(w, "layer {} {}", l.inputs, l.outputs)?;
        write_f64s(w, &l.weights)?;
        write_f64s(w, &l.bias)?;
    }
    Ok(())
}

fn parse_mlp(r: &mut impl BufRead) -> Parse<Mlp> {
    let count: usize = number(&tagged(r, "mlp", 1)?[0])?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let f = tagged(r, "layer", 2)?;
        let (inputs, outputs): (usize, usize) = (number(&f[0])?, number(&f[1])?);
        let weights = read_f64s(r, inputs.saturating_mul(outputs))?;
        let bias = read_f64s(r, outputs)?;
        layers.push(Linear { inputs, outputs, weights, bias });
    }
    Ok(Mlp::from_layers(layers)?)
}

pub fn write_model(w: &mut impl Write, model: &DlrmModel) -> std::io::Result<()> {
    writeln!(w, "{MODEL_MAGIC} {}", model.num_fields())?;
    write_mlp(w, model.bottom())?;
    write_mlp(w, model.top())?;
    for store in model.fields() {
        write_store(w, store)?;
    }
    Ok(())
}

fn parse_model(r: &mut impl BufRead) -> Parse<DlrmModel> {
    let fields: usize = number(&tagged(r, MODEL_MAGIC, 1)?[0])?;
    let bottom = parse_mlp(r)?;
    let top = parse_mlp(r)?;
    let stores = (0..fields).map(|_| parse_store(r)).collect::<Parse<Vec<_>>>()?;
    Ok(DlrmModel::from_parts(bottom, stores, top)?)
}

pub fn save_model(path: &Path, model: &DlrmModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).at(path)?);
    write_model(&mut w, model).and_then(|_| w.flush()).at(path)
}

pub fn load_model(path: &Path) -> Result<DlrmModel> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    parse_model(&mut r).and_then(|m| expect_eof(&mut r).map(|_| m)).map_err(|e| attach(path, e))
}

pub fn write_dataset(w: &mut impl Write, data: &Dataset) -> std::io::Result<()> {
    w.write_all(DATASET_MAGIC)?;
    for v in
        [data.len(), data.dense_dim, data.num_fields()].into_iter().chain(data.vocab_sizes.iter().copied())
    {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    write_f64s(w, &data.dense)?;
    for t in &data.tokens {
        w.write_all(&t.to_le_bytes())?;
    }
    let labels: Vec<u8> = data.labels.iter().map(|&l| u8::from(l)).collect();
    w.write_all(&labels)
}

fn parse_dataset(r: &mut impl Read) -> Parse<Dataset> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return malformed("not a DSv1 dataset");
    }
    let (n, dense_dim, fields) = (read_count(r)?, read_count(r)?, read_count(r)?);
    let vocab_sizes = (0..fields).map(|_| read_count(r)).collect::<Parse<Vec<_>>>()?;
    let too_big = || ParseError::Malformed("dataset dimensions overflow".into());
    let dense = read_f64s(r, n.checked_mul(dense_dim).ok_or_else(too_big)?)?;
    let mut tokens = Vec::with_capacity(n.checked_mul(fields).ok_or_else(too_big)?.min(1 << 24));
    let mut bytes = vec![0u8; n * fields * 8];
    r.read_exact(&mut bytes)?;
    tokens.extend(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())));
    let mut label_bytes = vec![0u8; n];
    r.read_exact(&mut label_bytes)?;
    if label_bytes.iter().any(|&b| b > 1) {
        return malformed("labels must be 0 or 1");
    }
    let data = Dataset {
        dense_dim,
        vocab_sizes,
        dense,
        tokens,
        labels: label_bytes.into_iter().map(|b| b == 1).collect(),
    };
    data.validate()?;
    Ok(data)
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).at(path)?);
    write_dataset(&mut w, data).and_then(|_| w.flush()).at(path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    parse_dataset(&mut r).and_then(|d| expect_eof(&mut r).map(|_| d)).map_err(|e| attach(path, e))
}

pub fn save_table(path: &Path, table: &DenseTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).at(path)?);
    writeln!(w, "{TABLE_MAGIC} {} {}", table.n(), table.d())
        .and_then(|_| write_f64s(&mut w, table.values()))
        .and_then(|_| w.flush())
        .at(path)
}

/// Writes one CSV line per row, each value in shortest round-trip form.
pub fn save_table_csv(path: &Path, table: &DenseTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in table.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush().at(path)
}

/// Reads either table form, telling them apart by the `TBLv1` magic.
pub fn load_table(path: &Path) -> Result<DenseTable> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    let binary = r.fill_buf().at(path)?.starts_with(TABLE_MAGIC.as_bytes());
    if binary {
        let parse = |r: &mut BufReader<File>| -> Parse<DenseTable> {
            let f = tagged(r, TABLE_MAGIC, 2)?;
            let (n, d): (usize, usize) = (number(&f[0])?, number(&f[1])?);
            let values = read_f64s(r, n.saturating_mul(d))?;
            expect_eof(r)?;
            Ok(DenseTable::new(n, d, values)?)
        };
        return parse(&mut r).map_err(|e| attach(path, e));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let (mut values, mut n, mut d) = (Vec::new(), 0, 0);
    for rec in reader.records() {
        let rec = rec?;
        if n == 0 {
            d = rec.len();
        } else if rec.len() != d {
            return Err(format_error(path, format!("row {} has {} values, expected {d}", n + 1, rec.len())));
        }
        for v in rec.iter() {
            values
                .push(v.trim().parse::<f64>().map_err(|_| format_error(path, format!("bad number {v:?}")))?);
        }
        n += 1;
    }
    DenseTable::new(n, d, values).map_err(|e| format_error(path, e.to_string()))
}

/// Context of a verification run, written alongside the report.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRun {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub jlt: String,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

pub const REPORT_HEADER: [&str; 18] = [
    "n",
    "d",
    "k",
    "jlt",
    "epsilon",
    "delta",
    "seed",
    "sigma_e",
    "f_bound",
    "x_samples",
    "max_violation",
    "fraction_within",
    "pair_samples",
    "max_distance_deviation",
    "max_norm_deviation",
    "max_worst_case_violation",
    "qualifying_pairs",
    "implication_failures",
];

pub fn write_report(w: impl Write, run: &VerifyRun, report: &VerificationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(REPORT_HEADER)?;
    let g = |v: f64| format!("{v:?}");
    w.write_record([
        run.n.to_string(),
        run.d.to_string(),
        run.k.to_string(),
        run.jlt.clone(),
        g(run.epsilon),
        g(run.delta),
        run.seed.to_string(),
        g(report.sigma_e),
        g(report.f_bound),
        report.x_samples.to_string(),
        g(report.max_violation),
        g(report.fraction_within),
        report.pair_samples.to_string(),
        g(report.max_distance_deviation),
        g(report.max_norm_deviation),
        g(report.max_worst_case_violation),
        report.qualifying_pairs.to_string(),
        report.implication_failures.to_string(),
    ])?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
