//! Criteo-style conversion logs.
//!
//! One click per line, TAB separated: click timestamp, conversion timestamp
//! (empty when the click never converted), the numeric columns, then the
//! categorical columns. Files ending in `.gz` are decompressed on the fly.
//!
//! Features are hashed: categorical values directly, numeric values after a
//! signed `log1p` and a 64-bucket quantile bucketization whose boundaries are
//! fitted on the pretraining split only.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::synthgen::ContextSpec;
use crate::types::{ClickEvent, Features, Seconds, WindowConfig};

pub const NUMERIC_BUCKETS: usize = 64;

const MISSING: &[u8] = b"\x00missing";
const COLUMN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSchema {
    pub n_numeric: usize,
    pub n_categorical: usize,
    pub hash_dim: usize,
    #[serde(default = "default_delimiter")]
    pub delimiter: u8,
}

fn default_delimiter() -> u8 {
    b'\t'
}

impl Default for LogSchema {
    fn default() -> Self {
        LogSchema { n_numeric: 8, n_categorical: 9, hash_dim: 1 << 18, delimiter: b'\t' }
    }
}

impl LogSchema {
    pub fn validate(&self) -> Result<()> {
        if self.hash_dim < 2 || !self.hash_dim.is_power_of_two() {
            return Err(Error::Config(format!("hash_dim {} is not a power of two >= 2", self.hash_dim)));
        }
        Ok(())
    }

    pub fn n_fields(&self) -> usize {
        2 + self.n_numeric + self.n_categorical
    }

    /// Layout used when synthetic streams are written to disk.
    pub fn for_context(spec: &ContextSpec, hash_dim: usize) -> Self {
        match *spec {
            ContextSpec::OneHot { .. } => {
                LogSchema { n_numeric: 0, n_categorical: 1, hash_dim, delimiter: b'\t' }
            }
            ContextSpec::Dense { n } => {
                LogSchema { n_numeric: n, n_categorical: 0, hash_dim, delimiter: b'\t' }
            }
        }
    }
}

/// Stable across runs and platforms: xxh3-64 of the raw bytes, seeded by the
/// column, masked to `hash_dim` (a power of two).
pub fn hash_feature(column: usize, raw: &[u8], hash_dim: usize) -> u32 {
    debug_assert!(hash_dim.is_power_of_two());
    let seed = (column as u64 + 1).wrapping_mul(COLUMN_SALT);
    (xxh3_64_with_seed(raw, seed) & (hash_dim as u64 - 1)) as u32
}

/// One unparsed-but-split log line. Field text is kept verbatim so that
/// writing a record back reproduces the original line.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub click_ts: Seconds,
    pub conv_ts: Option<Seconds>,
    pub numeric: Vec<String>,
    pub categorical: Vec<String>,
}

impl LogRecord {
    pub fn parse(line: &[u8], schema: &LogSchema) -> std::result::Result<Self, String> {
        let line = line.strip_suffix(b"\n").unwrap_or(line);
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        let text = std::str::from_utf8(line).map_err(|_| "line is not valid UTF-8".to_string())?;
        let fields: Vec<&str> = text.split(schema.delimiter as char).collect();
        if fields.len() != schema.n_fields() {
            return Err(format!("expected {} fields, found {}", schema.n_fields(), fields.len()));
        }
        let click_ts: Seconds = fields[0]
            .trim()
            .parse()
            .map_err(|_| format!("malformed click timestamp {:?}", fields[0]))?;
        let conv_ts = match fields[1].trim() {
            "" => None,
            s => {
                let t: Seconds = s.parse().map_err(|_| format!("malformed conversion timestamp {s:?}"))?;
                if t < click_ts {
                    return Err(format!("conversion at {t} precedes click at {click_ts}"));
                }
                Some(t)
            }
        };
        let numeric_end = 2 + schema.n_numeric;
        Ok(LogRecord {
            click_ts,
            conv_ts,
            numeric: fields[2..numeric_end].iter().map(|s| s.to_string()).collect(),
            categorical: fields[numeric_end..].iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn to_line(&self, schema: &LogSchema) -> String {
        let delim = (schema.delimiter as char).to_string();
        let mut fields = Vec::with_capacity(schema.n_fields());
        fields.push(self.click_ts.to_string());
        fields.push(self.conv_ts.map(|t| t.to_string()).unwrap_or_default());
        fields.extend(self.numeric.iter().cloned());
        fields.extend(self.categorical.iter().cloned());
        fields.join(&delim)
    }

    pub fn delay(&self) -> Option<Seconds> {
        self.conv_ts.map(|t| t - self.click_ts)
    }

    fn numeric_value(&self, i: usize) -> Option<f64> {
        let raw = self.numeric[i].trim();
        if raw.is_empty() {
            return None;
        }
        raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(signed_log1p)
    }
}

fn signed_log1p(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

/// Per-column quantile boundaries for numeric features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucketizer {
    pub boundaries: Vec<Vec<f64>>,
}

impl Bucketizer {
    /// Fits `NUMERIC_BUCKETS` quantile buckets per column on `records`.
    pub fn fit(records: &[LogRecord], n_numeric: usize) -> Self {
        let boundaries = (0..n_numeric)
            .map(|col| {
                let mut values: Vec<f64> = records.iter().filter_map(|r| r.numeric_value(col)).collect();
                values.sort_by(f64::total_cmp);
                if values.is_empty() {
                    return Vec::new();
                }
                let mut cuts: Vec<f64> = (1..NUMERIC_BUCKETS)
                    .map(|q| values[(q * values.len() / NUMERIC_BUCKETS).min(values.len() - 1)])
                    .collect();
                cuts.dedup();
                cuts
            })
            .collect();
        Bucketizer { boundaries }
    }

    pub fn bucket(&self, column: usize, value: f64) -> usize {
        self.boundaries[column].partition_point(|&b| b < value)
    }
}

/// Turns one record into hashed features.
pub fn featurize(record: &LogRecord, schema: &LogSchema, buckets: &Bucketizer) -> Features {
    let mut out = Vec::with_capacity(schema.n_numeric + schema.n_categorical);
    for col in 0..schema.n_numeric {
        let index = match record.numeric_value(col) {
            Some(v) => {
                let b = buckets.bucket(col, v) as u16;
                hash_feature(col, &b.to_le_bytes(), schema.hash_dim)
            }
            None => hash_feature(col, MISSING, schema.hash_dim),
        };
        out.push((index, 1.0));
    }
    for (j, raw) in record.categorical.iter().enumerate() {
        let col = schema.n_numeric + j;
        let bytes = if raw.is_empty() { MISSING } else { raw.as_bytes() };
        out.push((hash_feature(col, bytes, schema.hash_dim), 1.0));
    }
    Features(out)
}

/// Parses and featurizes a single line.
pub fn parse_line(
    line: &[u8],
    schema: &LogSchema,
    buckets: &Bucketizer,
    click_id: u64,
    w: &WindowConfig,
) -> std::result::Result<ClickEvent, String> {
    let record = LogRecord::parse(line, schema)?;
    Ok(ClickEvent::new(click_id, featurize(&record, schema, buckets), record.click_ts, record.delay(), w))
}

#[derive(Debug, Clone)]
pub struct LoadedLog {
    pub clicks: Vec<ClickEvent>,
    pub rejected: usize,
    pub buckets: Bucketizer,
}

fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(reader)))
}

/// Reads every record, skipping (and counting) malformed lines.
pub fn read_records(path: &Path, schema: &LogSchema) -> Result<(Vec<LogRecord>, usize)> {
    schema.validate()?;
    let mut reader = open(path)?;
    let mut records = Vec::new();
    let mut rejected = 0;
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        if buf.iter().all(|b| b.is_ascii_whitespace()) {
            continue;
        }
        match LogRecord::parse(&buf, schema) {
            Ok(r) => records.push(r),
            Err(reason) => {
                rejected += 1;
                log::warn!("{}:{line_no}: {reason}", path.display());
            }
        }
    }
    Ok((records, rejected))
}

/// Loads a log, orders it by click time, fits bucket boundaries on the first
/// `pretrain_fraction` of clicks and featurizes everything with them.
pub fn load_log(
    path: &Path,
    schema: &LogSchema,
    pretrain_fraction: f64,
    w: &WindowConfig,
) -> Result<LoadedLog> {
    let (mut records, rejected) = read_records(path, schema)?;
    if rejected > 0 {
        log::warn!("{}: rejected {rejected} malformed lines", path.display());
    }
    records.sort_by_key(|r| r.click_ts);
    let n_fit = ((records.len() as f64) * pretrain_fraction).round() as usize;
    let buckets = Bucketizer::fit(&records[..n_fit.min(records.len())], schema.n_numeric);
    let clicks = records
        .iter()
        .enumerate()
        .map(|(i, r)| ClickEvent::new(i as u64, featurize(r, schema, &buckets), r.click_ts, r.delay(), w))
        .collect();
    Ok(LoadedLog { clicks, rejected, buckets })
}

/// Log records for a synthetic stream: one-hot contexts become a single
/// categorical column holding the context index, dense features become
/// numeric columns.
pub fn records_from_clicks(clicks: &[ClickEvent], spec: &ContextSpec) -> Vec<LogRecord> {
    clicks
        .iter()
        .map(|c| {
            let (numeric, categorical) = match spec {
                ContextSpec::OneHot { .. } => {
                    (Vec::new(), c.features.0.iter().map(|&(i, _)| i.to_string()).collect())
                }
                ContextSpec::Dense { .. } => {
                    (c.features.0.iter().map(|&(_, v)| v.to_string()).collect(), Vec::new())
                }
            };
            LogRecord { click_ts: c.click_time, conv_ts: c.conversion_time(), numeric, categorical }
        })
        .collect()
}

pub fn write_log(path: &Path, records: &[LogRecord], schema: &LogSchema) -> Result<()> {
    let file = File::create(path)?;
    let mut out: Box<dyn Write> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzEncoder::new(file, Compression::default()))
    } else {
        Box::new(file)
    };
    {
        let mut w = BufWriter::new(&mut out);
        for r in records {
            writeln!(w, "{}", r.to_line(schema))?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}
