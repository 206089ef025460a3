use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::hashing::PARAM_BYTES;

/// Width of one stored scalar.
pub const SCALAR_BYTES: usize = core::mem::size_of::<f64>();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Uncompressed table: row `i` lives at `i * d`.
    FullTable,
    /// Whole rows of a smaller `k x d` table, chosen by hashing the token.
    HashingTrick,
    /// `l` pieces per embedding, each hashed into its own memory region.
    QRTrick,
    /// Every element hashed independently (ROBE-Z with `Z = 1`).
    HashedNet,
    /// Chunks of `Z` consecutive elements hashed into one circular array.
    RobeZ,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::FullTable, Variant::HashingTrick, Variant::QRTrick, Variant::HashedNet, Variant::RobeZ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FullTable => "FullTable",
            Variant::HashingTrick => "HashingTrick",
            Variant::QRTrick => "QRTrick",
            Variant::HashedNet => "HashedNet",
            Variant::RobeZ => "RobeZ",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let folded: alloc::string::String =
            s.chars().filter(|c| *c != '-' && *c != '_').map(|c| c.to_ascii_lowercase()).collect();
        match folded.as_str() {
            "fulltable" | "full" => Ok(Variant::FullTable),
            "hashingtrick" | "hashing" => Ok(Variant::HashingTrick),
            "qrtrick" | "qr" => Ok(Variant::QRTrick),
            "hashednet" => Ok(Variant::HashedNet),
            "robez" | "robe" => Ok(Variant::RobeZ),
            _ => Err(Error::invalid(alloc::format!("unknown variant `{s}`"))),
        }
    }
}

/// Shape and mapping choice of one parameter-shared table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PssConfig {
    pub variant: Variant,
    pub n: usize,
    pub d: usize,
    /// Number of learnable scalars `|M|`.
    pub memory_size: usize,
    /// Chunk length `Z` (RobeZ).
    pub chunk: usize,
    /// Number of pieces `l` (QRTrick).
    pub pieces: usize,
    /// Random +-1 per chunk (RobeZ, HashedNet).
    pub sign_enabled: bool,
    pub seed: u64,
}

impl PssConfig {
    pub fn full_table(n: usize, d: usize, seed: u64) -> Self {
        Self {
            variant: Variant::FullTable,
            n,
            d,
            memory_size: n * d,
            chunk: 1,
            pieces: 1,
            sign_enabled: false,
            seed,
        }
    }

    pub fn robe_z(n: usize, d: usize, memory_size: usize, chunk: usize, seed: u64) -> Self {
        Self { variant: Variant::RobeZ, n, d, memory_size, chunk, pieces: 1, sign_enabled: true, seed }
    }

    pub fn hashed_net(n: usize, d: usize, memory_size: usize, seed: u64) -> Self {
        Self { variant: Variant::HashedNet, ..Self::robe_z(n, d, memory_size, 1, seed) }
    }

    pub fn hashing_trick(n: usize, d: usize, memory_size: usize, seed: u64) -> Self {
        Self {
            variant: Variant::HashingTrick,
            n,
            d,
            memory_size,
            chunk: 1,
            pieces: 1,
            sign_enabled: false,
            seed,
        }
    }

    pub fn qr_trick(n: usize, d: usize, memory_size: usize, pieces: usize, seed: u64) -> Self {
        Self { variant: Variant::QRTrick, pieces, ..Self::hashing_trick(n, d, memory_size, seed) }
    }

    /// Config for `variant` whose memory is `n * d / compression`, rounded
    /// to a size the variant can use in full.
    pub fn with_compression(
        variant: Variant,
        n: usize,
        d: usize,
        compression: f64,
        chunk: usize,
        pieces: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(compression.is_finite() && compression > 0.0) {
            return Err(Error::invalid("compression must be positive"));
        }
        let total = (n as f64) * (d as f64);
        let raw = libm::round(total / compression).max(1.0) as usize;
        let mut config = match variant {
            Variant::FullTable => Self::full_table(n, d, seed),
            Variant::RobeZ => Self::robe_z(n, d, raw.max(chunk).max(d), chunk, seed),
            Variant::HashedNet => Self::hashed_net(n, d, raw.max(d), seed),
            Variant::HashingTrick => Self::hashing_trick(n, d, (raw / d).max(1) * d, seed),
            Variant::QRTrick => Self::qr_trick(n, d, (raw / d).max(1) * d, pieces, seed),
        };
        config.sign_enabled = matches!(variant, Variant::RobeZ | Variant::HashedNet);
        config.validate()?;
        Ok(config)
    }

    pub fn with_sign(mut self, enabled: bool) -> Self {
        self.sign_enabled = enabled;
        self
    }

    /// Chunk length actually used when reading an embedding.
    pub fn chunk_len(&self) -> usize {
        match self.variant {
            Variant::FullTable | Variant::HashingTrick => self.d,
            Variant::QRTrick => self.d / self.pieces,
            Variant::HashedNet => 1,
            Variant::RobeZ => self.chunk,
        }
    }

    /// Chunks per embedding.
    pub fn chunks_per_row(&self) -> usize {
        self.d / self.chunk_len()
    }

    /// Whether chunks carry a hashed sign.
    pub fn signed(&self) -> bool {
        self.sign_enabled && matches!(self.variant, Variant::RobeZ | Variant::HashedNet)
    }

    /// Number of hash parameter sets describing the mapping.
    pub fn hash_param_sets(&self) -> usize {
        match self.variant {
            Variant::FullTable => 0,
            Variant::HashingTrick => 1,
            Variant::QRTrick => self.pieces,
            Variant::HashedNet | Variant::RobeZ => 1 + usize::from(self.sign_enabled),
        }
    }

    pub fn compression(&self) -> f64 {
        (self.n as f64) * (self.d as f64) / self.memory_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        let Self { variant, n, d, memory_size, chunk, pieces, .. } = *self;
        if n == 0 || d == 0 {
            return Err(Error::invalid("n and d must be at least 1"));
        }
        match variant {
            Variant::FullTable => {
                if n.checked_mul(d) != Some(memory_size) {
                    return Err(Error::invalid("FullTable memory_size must equal n * d"));
                }
            }
            _ if memory_size < d => {
                return Err(Error::invalid("memory_size must be at least d"));
            }
            Variant::HashingTrick => {}
            Variant::QRTrick => {
                if pieces == 0 || d % pieces != 0 {
                    return Err(Error::invalid("QRTrick pieces must divide d"));
                }
                if memory_size % pieces != 0 {
                    return Err(Error::invalid("QRTrick pieces must divide memory_size"));
                }
            }
            Variant::HashedNet => {
                if chunk != 1 {
                    return Err(Error::invalid("HashedNet uses chunk = 1"));
                }
            }
            Variant::RobeZ => {
                if chunk == 0 || chunk > d || d % chunk != 0 {
                    return Err(Error::invalid("RobeZ chunk must divide d"));
                }
                if memory_size < chunk {
                    return Err(Error::invalid("RobeZ memory_size must be at least the chunk"));
                }
            }
        }
        Ok(())
    }
}

/// Keys of the key=value text form, in the order they are written.
pub const CONFIG_KEYS: [&str; 8] =
    ["variant", "n", "d", "memory_size", "chunk", "pieces", "sign_enabled", "seed"];

impl PssConfig {
    /// One `key=value` line per field, in [`CONFIG_KEYS`] order.
    pub fn to_key_values(&self) -> alloc::string::String {
        alloc::format!(
            "variant={}\nn={}\nd={}\nmemory_size={}\nchunk={}\npieces={}\nsign_enabled={}\nseed={}\n",
            self.variant,
            self.n,
            self.d,
            self.memory_size,
            self.chunk,
            self.pieces,
            self.sign_enabled,
            self.seed
        )
    }

    /// Parses text holding every key exactly once; the result is validated.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut config = Self::full_table(1, 1, 0);
        let seen = config.apply_key_values(text)?;
        if let Some(missing) = CONFIG_KEYS.iter().zip(seen).find(|(_, s)| !s) {
            return Err(Error::invalid(alloc::format!("missing key `{}`", missing.0)));
        }
        config.validate()?;
        Ok(config)
    }

    /// Overwrites the fields named in `text` and reports which keys were
    /// present. Blank lines and lines starting with `#` are skipped; the
    /// result is not validated.
    pub fn apply_key_values(&mut self, text: &str) -> Result<[bool; 8]> {
        let mut seen = [false; 8];
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::invalid(alloc::format!("line {}: {what}", line_no + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            let slot = CONFIG_KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| bad(&alloc::format!("unknown key `{key}`")))?;
            if core::mem::replace(&mut seen[slot], true) {
                return Err(bad(&alloc::format!("duplicate key `{key}`")));
            }
            let count = || value.parse::<usize>().map_err(|_| bad(&alloc::format!("`{key}` needs a count")));
            match key {
                "variant" => self.variant = value.parse()?,
                "n" => self.n = count()?,
                "d" => self.d = count()?,
                "memory_size" => self.memory_size = count()?,
                "chunk" => self.chunk = count()?,
                "pieces" => self.pieces = count()?,
                "sign_enabled" => {
                    self.sign_enabled =
                        value.parse().map_err(|_| bad("sign_enabled must be true or false"))?
                }
                _ => self.seed = value.parse().map_err(|_| bad("seed must be a 64-bit unsigned integer"))?,
            }
        }
        Ok(seen)
    }
}

/// `n * d / memory_size`.
pub fn compression_ratio(n: usize, d: usize, memory_size: usize) -> Result<f64> {
    if memory_size == 0 {
        return Err(Error::invalid("memory_size must be non-zero"));
    }
    if n == 0 || d == 0 {
        return Err(Error::invalid("n and d must be at least 1"));
    }
    Ok((n as u128 * d as u128) as f64 / memory_size as f64)
}

/// Bytes held by the learnable memory and by the mapping description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub memory_bytes: usize,
    pub mapping_bytes: usize,
}

impl Footprint {
    pub fn total(&self) -> usize {
        self.memory_bytes + self.mapping_bytes
    }
}

pub fn memory_footprint(config: &PssConfig) -> Footprint {
    Footprint {
        memory_bytes: config.memory_size * SCALAR_BYTES,
        mapping_bytes: config.hash_param_sets() * PARAM_BYTES,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn key_values_roundtrip() {
        for config in [
            PssConfig::robe_z(1000, 16, 640, 4, 99).with_sign(false),
            PssConfig::qr_trick(50, 8, 64, 2, u64::MAX),
            PssConfig::full_table(10, 4, 1),
        ] {
            let text = config.to_key_values();
            assert_eq!(text.lines().count(), 8);
            assert_eq!(PssConfig::from_key_values(&text).unwrap(), config);
        }
    }

    #[test]
    fn key_value_errors() {
        let text = PssConfig::robe_z(100, 8, 64, 2, 1).to_key_values();
        let without_seed: alloc::string::String =
            text.lines().filter(|l| !l.starts_with("seed")).map(|l| alloc::format!("{l}\n")).collect();
        assert!(PssConfig::from_key_values(&without_seed).is_err());
        assert!(PssConfig::from_key_values(&alloc::format!("{text}seed=2\n")).is_err());
        assert!(PssConfig::from_key_values(&alloc::format!("{text}colour=red\n")).is_err());
        assert!(PssConfig::from_key_values(&text.replace("chunk=2", "chunk=3")).is_err());
        let mut partial = PssConfig::robe_z(100, 8, 64, 2, 1);
        let seen = partial.apply_key_values("# comment\n\nchunk = 4\n").unwrap();
        assert_eq!(partial.chunk, 4);
        assert_eq!(seen.iter().filter(|s| **s).count(), 1);
    }
    #[test]
    fn ratio_examples() {
        assert_eq!(compression_ratio(4_000_000, 128, 51_200).unwrap(), 10_000.0);
        assert_eq!(compression_ratio(10, 4, 40).unwrap(), 1.0);
        assert!(compression_ratio(10, 4, 0).is_err());
    }

    #[test]
    fn hundred_gigabyte_table_is_uncompressed() {
        // 204M x 128 rows stored as f32 fill ~100 GB.
        let scalars = 204_000_000usize * 128;
        let bytes_f32 = scalars * 4;
        assert!((bytes_f32 as f64 / 1e9 - 104.4).abs() < 0.1);
        let memory_size = 26_112_000_000;
        let r = compression_ratio(204_000_000, 128, memory_size).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        // A flat 100 GB budget (25e9 f32 scalars) is within 5% of 1x.
        let r = compression_ratio(204_000_000, 128, 25_000_000_000).unwrap();
        assert!((r - 1.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn footprint_examples() {
        let c = PssConfig::robe_z(1000, 16, 1024, 4, 1);
        assert_eq!(memory_footprint(&c), Footprint { memory_bytes: 8192, mapping_bytes: 32 });
        let f = PssConfig::full_table(10, 4, 1);
        assert_eq!(memory_footprint(&f).total(), 320);
        assert_eq!(memory_footprint(&f).mapping_bytes, 0);
        let q = PssConfig::qr_trick(100, 8, 64, 2, 1);
        assert_eq!(memory_footprint(&q).mapping_bytes, 2 * PARAM_BYTES);
    }

    #[test]
    fn validation() {
        assert!(PssConfig::robe_z(10, 8, 16, 3, 0).validate().is_err());
        assert!(PssConfig::robe_z(10, 8, 16, 4, 0).validate().is_ok());
        assert!(PssConfig::robe_z(10, 8, 4, 4, 0).validate().is_err());
        assert!(PssConfig::qr_trick(10, 8, 15, 2, 0).validate().is_err());
        assert!(PssConfig::qr_trick(10, 8, 16, 3, 0).validate().is_err());
        assert!(PssConfig::hashing_trick(10, 8, 7, 0).validate().is_err());
        let mut f = PssConfig::full_table(10, 8, 0);
        assert!(f.validate().is_ok());
        f.memory_size = 79;
        assert!(f.validate().is_err());
        let mut h = PssConfig::hashed_net(10, 8, 16, 0);
        h.chunk = 2;
        assert!(h.validate().is_err());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("robe-z".parse::<Variant>().unwrap(), Variant::RobeZ);
        assert!("nope".parse::<Variant>().is_err());
    }

    #[test]
    fn with_compression_rounds_to_usable_sizes() {
        let c = PssConfig::with_compression(Variant::RobeZ, 100_000, 16, 100.0, 4, 1, 0).unwrap();
        assert_eq!(c.memory_size, 16_000);
        let h = PssConfig::with_compression(Variant::HashingTrick, 1000, 16, 7.0, 1, 1, 0).unwrap();
        assert_eq!(h.memory_size % 16, 0);
    }

    proptest! {
        #[test]
        fn ratio_times_memory_is_table_size(rows in 1usize..100_000, d in 1usize..256, factor in 1usize..64) {
            // n * d is a multiple of m by construction.
            let n = rows * factor;
            let total = n * d;
            let m = rows * d;
            let r = compression_ratio(n, d, m).unwrap();
            prop_assert_eq!(r, factor as f64);
            prop_assert_eq!(r * m as f64, total as f64);
        }

        #[test]
        fn compressed_footprint_beats_full_table(
            n in 100usize..100_000,
            d in prop::sample::select(&[8usize, 16, 32, 64][..]),
            compression in 1.1f64..10_000.0,
            v in prop::sample::select(&Variant::ALL[1..]),
        ) {
            let config = PssConfig::with_compression(v, n, d, compression, 4.min(d), 2, 3).unwrap();
            prop_assume!(config.compression() > 1.0);
            prop_assert!(memory_footprint(&config).total() < n * d * SCALAR_BYTES);
        }
    }
}
