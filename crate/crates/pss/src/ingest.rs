//! Streaming reader for criteo-style click logs: a 0/1 label, 13 integer
//! features and 26 categorical strings per tab-separated line.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use pss_core::hashing::{derive_hash_params, HashParams};
use pss_core::synth::Dataset;

use crate::error::{Error, IoContext, Result};

pub const DENSE_FIELDS: usize = 13;
pub const CATEGORICAL_FIELDS: usize = 26;
pub const LINE_FIELDS: usize = 1 + DENSE_FIELDS + CATEGORICAL_FIELDS;

/// Stream id of the first field's bucket hash; field `f` uses `BASE + f`.
const BUCKET_STREAM_BASE: u64 = 0xC0_0000;

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    /// Lines skipped for a wrong field count or an unparsable value.
    pub malformed: usize,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// `ln(1 + max(x, 0))`; an empty field counts as 0.
pub fn transform_integer(field: &str) -> Option<f64> {
    if field.is_empty() {
        return Some(0.0);
    }
    let x: i64 = field.parse().ok()?;
    Some((x.max(0) as f64).ln_1p())
}

/// Per-field bucket hashes used by [`ingest_tsv`].
pub fn bucket_hashes(buckets: &[usize], seed: u64) -> Result<Vec<HashParams>> {
    buckets
        .iter()
        .enumerate()
        .map(|(f, &m)| {
            if m == 0 {
                return Err(Error::InvalidArgument("bucket counts must be at least 1".into()));
            }
            Ok(derive_hash_params(seed, BUCKET_STREAM_BASE + f as u64, m as u64)?)
        })
        .collect()
}

/// Reads `path`, hashing field `f`'s strings into `buckets[f]` buckets.
/// `buckets` holds one count per categorical field, or a single count used
/// for all of them.
pub fn ingest_tsv(path: &Path, buckets: &[usize], seed: u64) -> Result<Ingested> {
    let buckets: Vec<usize> = match buckets {
        [b] => vec![*b; CATEGORICAL_FIELDS],
        b if b.len() == CATEGORICAL_FIELDS => b.to_vec(),
        _ => return Err(Error::InvalidArgument(format!("need 1 or {CATEGORICAL_FIELDS} bucket counts"))),
    };
    let hashes = bucket_hashes(&buckets, seed)?;
    let reader = BufReader::new(File::open(path).at(path)?);
    let mut data = Dataset {
        dense_dim: DENSE_FIELDS,
        vocab_sizes: buckets,
        dense: Vec::new(),
        tokens: Vec::new(),
        labels: Vec::new(),
    };
    let mut malformed = 0;
    let mut dense = [0.0; DENSE_FIELDS];
    let mut tokens = [0u64; CATEGORICAL_FIELDS];
    for line in reader.split(b'\n') {
        let mut line = line.at(path)?;
        if line.last() == Some(&b'\r') {
            line.pop();
        }
        if line.is_empty() {
            continue;
        }
        match parse_line(&line, &hashes, &mut dense, &mut tokens) {
            Some(label) => {
                data.labels.push(label);
                data.dense.extend_from_slice(&dense);
                data.tokens.extend_from_slice(&tokens);
            }
            None => malformed += 1,
        }
    }
    Ok(Ingested { dataset: data, malformed })
}

fn parse_line(
    line: &[u8],
    hashes: &[HashParams],
    dense: &mut [f64; DENSE_FIELDS],
    tokens: &mut [u64; CATEGORICAL_FIELDS],
) -> Option<bool> {
    let fields: Vec<&[u8]> = line.split(|&b| b == b'\t').collect();
    if fields.len() != LINE_FIELDS {
        return None;
    }
    let label = match fields[0] {
        b"0" => false,
        b"1" => true,
        _ => return None,
    };
    for (slot, raw) in dense.iter_mut().zip(&fields[1..=DENSE_FIELDS]) {
        *slot = transform_integer(std::str::from_utf8(raw).ok()?)?;
    }
    for ((slot, raw), h) in tokens.iter_mut().zip(&fields[1 + DENSE_FIELDS..]).zip(hashes) {
        *slot = h.hash(fnv1a64(raw));
    }
    Some(label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn integer_transform() {
        assert_eq!(transform_integer("-3"), Some(0.0));
        assert_eq!(transform_integer(""), Some(0.0));
        assert_eq!(transform_integer("0"), Some(0.0));
        assert!((transform_integer("5").unwrap() - 6f64.ln()).abs() < 1e-15);
        assert_eq!(transform_integer("x1"), None);
    }
}
