#![allow(dead_code)]

pub mod linearize;

use std::sync::Arc;

use ixframe::rowstore::{ColumnType, Field, Schema, Value};
use ixframe::table::PlainTable;
use rand::Rng;

/// Inner equi-join by comparing every pair of decoded rows.
pub fn nested_loop_join(left: &[Vec<Value>], lc: usize, right: &[Vec<Value>], rc: usize) -> Vec<Vec<Value>> {
    let mut out = Vec::new();
    for l in left {
        if l[lc].is_null() {
            continue;
        }
        for r in right {
            if l[lc] == r[rc] {
                out.push(l.iter().chain(r.iter()).cloned().collect());
            }
        }
    }
    out.sort();
    out
}

pub fn sorted(t: &PlainTable) -> Vec<Vec<Value>> {
    let mut v = t.decode_all().unwrap();
    v.sort();
    v
}

pub fn key_value(ty: ColumnType, k: i64) -> Value {
    match ty {
        ColumnType::Int32 => Value::Int32(k as i32),
        ColumnType::Int64 => Value::Int64(k),
        ColumnType::Float64 => Value::Float64(k as f64 * 0.5),
        ColumnType::Utf8 => Value::Utf8(base36(k as u64)),
    }
}

pub fn base36(mut n: u64) -> String {
    const DIGITS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";
    let mut s = Vec::new();
    loop {
        s.push(DIGITS[(n % 36) as usize]);
        n /= 36;
        if n == 0 {
            break;
        }
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}

pub fn random_value(rng: &mut impl Rng, f: &Field) -> Value {
    if f.nullable && rng.random_bool(0.1) {
        return Value::Null;
    }
    match f.ty {
        ColumnType::Int32 => Value::Int32(rng.random_range(-1000..1000)),
        ColumnType::Int64 => Value::Int64(rng.random()),
        ColumnType::Float64 => Value::Float64(rng.random_range(-1e6..1e6)),
        ColumnType::Utf8 => {
            let n = rng.random_range(0..12);
            Value::Utf8((0..n).map(|_| rng.random_range(b'a'..=b'z') as char).collect())
        }
    }
}

pub fn random_type(rng: &mut impl Rng) -> ColumnType {
    [ColumnType::Int32, ColumnType::Int64, ColumnType::Float64, ColumnType::Utf8][rng.random_range(0..4)]
}

/// A schema whose first column is a non-null key of type `key`, followed by
/// a few random payload columns named with `prefix`.
pub fn random_schema(rng: &mut impl Rng, prefix: &str, key: ColumnType) -> Arc<Schema> {
    let mut fields = vec![Field::new(format!("{prefix}key"), key)];
    for i in 0..rng.random_range(0..4) {
        let ty = random_type(rng);
        fields.push(if rng.random_bool(0.3) {
            Field::nullable(format!("{prefix}c{i}"), ty)
        } else {
            Field::new(format!("{prefix}c{i}"), ty)
        });
    }
    Arc::new(Schema::new(fields).unwrap())
}

/// Draws keys in `[0, key_space)`; with `skew`, squaring a uniform draw
/// concentrates mass on small keys.
pub fn draw_key(rng: &mut impl Rng, key_space: i64, skew: bool) -> i64 {
    if skew {
        let u: f64 = rng.random();
        ((u * u * u) * key_space as f64) as i64
    } else {
        rng.random_range(0..key_space)
    }
}

pub fn random_table(rng: &mut impl Rng, schema: &Arc<Schema>, rows: usize, key_space: i64, skew: bool) -> PlainTable {
    let key_ty = schema.field(0).ty;
    let mut t = PlainTable::new(schema.clone());
    for _ in 0..rows {
        let mut row = vec![key_value(key_ty, draw_key(rng, key_space, skew))];
        for f in &schema.fields()[1..] {
            row.push(random_value(rng, f));
        }
        t.push(&row).unwrap();
    }
    t
}
