//! Seeded synthetic tables.
//!
//! Rows are generated in fixed-size chunks, each with its own ChaCha
//! stream, so output depends only on the spec and never on thread count.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rowstore::{ColumnType, Field, Schema, Value};
use crate::table::PlainTable;

const CHUNK_ROWS: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeyDist {
    /// Integers drawn uniformly from `lo..=hi`.
    Uniform { lo: i64, hi: i64 },
    /// Ranks `0..n`, rank `r` drawn with weight `1 / (r + 1)^s`.
    Zipf { s: f64, n: u64 },
    /// `start, start + 1, ...`
    Sequential { start: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadCol {
    pub name: String,
    pub ty: ColumnType,
    #[serde(default)]
    pub null_rate: f64,
    /// Length of generated strings.
    #[serde(default = "default_str_len")]
    pub str_len: usize,
}

fn default_str_len() -> usize {
    8
}

impl PayloadCol {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        PayloadCol { name: name.into(), ty, null_rate: 0.0, str_len: default_str_len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub rows: u64,
    pub key_name: String,
    pub key_type: ColumnType,
    pub dist: KeyDist,
    pub payload: Vec<PayloadCol>,
    pub seed: u64,
}

impl GenSpec {
    /// An `Int64` key `k` and one `Int64` payload column `v`.
    pub fn key_value(rows: u64, dist: KeyDist, seed: u64) -> Self {
        GenSpec {
            rows,
            key_name: "k".into(),
            key_type: ColumnType::Int64,
            dist,
            payload: vec![PayloadCol::new("v", ColumnType::Int64)],
            seed,
        }
    }

    pub fn schema(&self) -> Result<Arc<Schema>> {
        let mut fields = vec![Field::new(self.key_name.clone(), self.key_type)];
        for c in &self.payload {
            fields.push(if c.null_rate > 0.0 {
                Field::nullable(c.name.clone(), c.ty)
            } else {
                Field::new(c.name.clone(), c.ty)
            });
        }
        Schema::new(fields).map(Arc::new).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        match self.dist {
            KeyDist::Uniform { lo, hi } if lo > hi => {
                return Err(Error::InvalidSpec(format!("empty range {lo}..={hi}")))
            }
            KeyDist::Zipf { s, n } if !(s > 0.0 && s.is_finite()) || n == 0 => {
                return Err(Error::InvalidSpec(format!("bad zipf parameters s={s} n={n}")))
            }
            KeyDist::Sequential { start } if start.checked_add(self.rows as i64).is_none() => {
                return Err(Error::InvalidSpec("sequential keys overflow".into()))
            }
            _ => {}
        }
        for c in &self.payload {
            if !(0.0..=1.0).contains(&c.null_rate) {
                return Err(Error::InvalidSpec(format!("null rate of `{}` outside [0, 1]", c.name)));
            }
            if c.ty == ColumnType::Utf8 && c.str_len > 1024 {
                return Err(Error::InvalidSpec(format!("strings of `{}` too long", c.name)));
            }
        }
        Ok(())
    }
}

/// Cumulative Zipf weights for inverse-CDF sampling.
pub struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(s: f64, n: u64) -> Self {
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for r in 1..=n {
            acc += (r as f64).powf(-s);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        ZipfTable { cdf }
    }

    /// Rank in `0..n` for a uniform draw in `[0, 1)`.
    pub fn sample(&self, u: f64) -> u64 {
        (self.cdf.partition_point(|&c| c <= u) as u64).min(self.cdf.len() as u64 - 1)
    }
}

/// Renders integer key `k` in the key column's type. Strings use base 36.
pub fn key_value(ty: ColumnType, k: i64) -> Value {
    match ty {
        ColumnType::Int32 => Value::Int32(k as i32),
        ColumnType::Int64 => Value::Int64(k),
        ColumnType::Float64 => Value::Float64(k as f64),
        ColumnType::Utf8 => Value::Utf8(base36(k)),
    }
}

pub fn base36(k: i64) -> String {
    const DIGITS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";
    let mut n = k.unsigned_abs();
    let mut s = Vec::new();
    loop {
        s.push(DIGITS[(n % 36) as usize]);
        n /= 36;
        if n == 0 {
            break;
        }
    }
    if k < 0 {
        s.push(b'-');
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

pub fn generate(spec: &GenSpec) -> Result<PlainTable> {
    spec.validate()?;
    let schema = spec.schema()?;
    let zipf = match spec.dist {
        KeyDist::Zipf { s, n } => Some(ZipfTable::new(s, n)),
        _ => None,
    };
    let chunks = spec.rows.div_ceil(CHUNK_ROWS);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(c);
            let start = c * CHUNK_ROWS;
            let end = (start + CHUNK_ROWS).min(spec.rows);
            let mut t = PlainTable::new(schema.clone());
            let mut row = Vec::with_capacity(schema.len());
            for i in start..end {
                row.clear();
                let k = match spec.dist {
                    KeyDist::Uniform { lo, hi } => rng.random_range(lo..=hi),
                    KeyDist::Zipf { .. } => zipf.as_ref().unwrap().sample(rng.random()) as i64,
                    KeyDist::Sequential { start } => start + i as i64,
                };
                row.push(key_value(spec.key_type, k));
                for c in &spec.payload {
                    row.push(payload_value(&mut rng, c));
                }
                t.push(&row)?;
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = parts.iter().map(PlainTable::byte_size).sum();
    let mut out = PlainTable::with_capacity(schema, spec.rows as usize, bytes);
    for p in &parts {
        out.extend(p)?;
    }
    Ok(out)
}

fn payload_value(rng: &mut ChaCha8Rng, c: &PayloadCol) -> Value {
    if c.null_rate > 0.0 && rng.random_bool(c.null_rate) {
        return Value::Null;
    }
    match c.ty {
        ColumnType::Int32 => Value::Int32(rng.random()),
        ColumnType::Int64 => Value::Int64(rng.random()),
        ColumnType::Float64 => Value::Float64(rng.random_range(-1e6..1e6)),
        ColumnType::Utf8 => Value::Utf8((0..c.str_len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()),
    }
}
