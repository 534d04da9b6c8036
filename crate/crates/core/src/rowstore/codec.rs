//! Row payload encoding.
//!
//! ```text
//! [null bitmap][fixed-width region][var-length region]
//! ```
//!
//! The bitmap has one bit per *nullable* column and is absent when no column
//! is nullable. Fixed-width columns (Int32, Int64, Float64) are stored
//! little-endian in schema order; a null fixed cell is zero-filled. Each Utf8
//! column contributes a `u16` little-endian length followed by its bytes,
//! again in schema order; a null string has length 0.

use super::schema::{ColumnType, Layout, Schema, Value};
use super::RowError;

pub const DEFAULT_MAX_ROW_BYTES: usize = 1024;

/// An encoded row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowPayload(Vec<u8>);

impl RowPayload {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        RowPayload(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[u8]> for RowPayload {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn encode_row(schema: &Schema, values: &[Value], max_row_bytes: usize) -> Result<RowPayload, RowError> {
    let mut out = Vec::new();
    encode_into(schema, values, max_row_bytes, &mut out)?;
    Ok(RowPayload(out))
}

/// Appends the encoding of `values` to `out`. On error `out` is left as it was.
pub fn encode_into(
    schema: &Schema,
    values: &[Value],
    max_row_bytes: usize,
    out: &mut Vec<u8>,
) -> Result<usize, RowError> {
    if values.len() != schema.len() {
        return Err(RowError::ArityMismatch { expected: schema.len(), actual: values.len() });
    }
    let layout = schema.layout();
    let mut var_len = 0usize;
    for (col, (field, value)) in schema.fields().iter().zip(values).enumerate() {
        match (field.ty, value) {
            (_, Value::Null) if field.nullable => {}
            (ColumnType::Int32, Value::Int32(_))
            | (ColumnType::Int64, Value::Int64(_))
            | (ColumnType::Float64, Value::Float64(_)) => {}
            (ColumnType::Utf8, Value::Utf8(s)) => {
                if s.len() > u16::MAX as usize {
                    return Err(RowError::RowTooLarge { size: s.len(), limit: u16::MAX as usize });
                }
                var_len += s.len();
            }
            _ => return Err(RowError::TypeMismatch { column: col, expected: field.ty, found: value.column_type() }),
        }
    }
    let total = layout.var_start() + 2 * layout.var_cols.len() + var_len;
    if total > max_row_bytes {
        return Err(RowError::RowTooLarge { size: total, limit: max_row_bytes });
    }

    let start = out.len();
    out.resize(start + layout.var_start(), 0);
    {
        let row = &mut out[start..];
        for (col, value) in values.iter().enumerate() {
            if value.is_null() {
                let bit = layout.null_bit[col].expect("checked nullable above");
                row[bit / 8] |= 1 << (bit % 8);
                continue;
            }
            if let Some(off) = layout.fixed_offset[col] {
                let at = layout.bitmap_len + off;
                match value {
                    Value::Int32(v) => row[at..at + 4].copy_from_slice(&v.to_le_bytes()),
                    Value::Int64(v) => row[at..at + 8].copy_from_slice(&v.to_le_bytes()),
                    Value::Float64(v) => row[at..at + 8].copy_from_slice(&v.to_le_bytes()),
                    _ => unreachable!("fixed column holds fixed value"),
                }
            }
        }
    }
    for &col in &layout.var_cols {
        let s = match &values[col] {
            Value::Utf8(s) => s.as_bytes(),
            _ => &[][..],
        };
        out.extend_from_slice(&(s.len() as u16).to_le_bytes());
        out.extend_from_slice(s);
    }
    debug_assert_eq!(out.len() - start, total);
    Ok(total)
}

pub fn decode_row(schema: &Schema, payload: &[u8]) -> Result<Vec<Value>, RowError> {
    let layout = schema.layout();
    let var = var_spans(layout, payload)?;
    if var.end != payload.len() {
        return Err(RowError::CorruptPayload("trailing bytes after row"));
    }
    let mut values = Vec::with_capacity(schema.len());
    let mut var_iter = var.spans.into_iter();
    for (col, field) in schema.fields().iter().enumerate() {
        let span = if field.ty == ColumnType::Utf8 { var_iter.next() } else { None };
        if is_null(layout, payload, col) {
            values.push(Value::Null);
            continue;
        }
        values.push(match layout.fixed_offset[col] {
            Some(off) => fixed_value(field.ty, &payload[layout.bitmap_len + off..]),
            None => {
                let (s, e) = span.expect("one span per Utf8 column");
                let text =
                    std::str::from_utf8(&payload[s..e]).map_err(|_| RowError::CorruptPayload("invalid utf-8"))?;
                Value::Utf8(text.to_owned())
            }
        });
    }
    Ok(values)
}

/// Length of the row starting at `bytes[0]`; the slice may extend past it.
pub fn payload_len(schema: &Schema, bytes: &[u8]) -> Result<usize, RowError> {
    let layout = schema.layout();
    let mut at = layout.var_start();
    if bytes.len() < at {
        return Err(RowError::CorruptPayload("row shorter than fixed region"));
    }
    for _ in &layout.var_cols {
        let len = read_u16(bytes, at)? as usize;
        at += 2 + len;
        if at > bytes.len() {
            return Err(RowError::CorruptPayload("string runs past end of row"));
        }
    }
    Ok(at)
}

/// Decodes a single column without materializing the rest of the row.
pub fn read_column(schema: &Schema, payload: &[u8], col: usize) -> Result<Value, RowError> {
    let field = schema.field(col);
    match column_bytes(schema, payload, col)? {
        None => Ok(Value::Null),
        Some(bytes) => match field.ty {
            ColumnType::Utf8 => std::str::from_utf8(bytes)
                .map(|s| Value::Utf8(s.to_owned()))
                .map_err(|_| RowError::CorruptPayload("invalid utf-8")),
            ty => Ok(fixed_value(ty, bytes)),
        },
    }
}

/// Raw bytes of one cell (`None` if null). Two non-null cells of the same
/// column type are equal as [`Value`]s iff their bytes are equal.
pub fn column_bytes<'a>(schema: &Schema, payload: &'a [u8], col: usize) -> Result<Option<&'a [u8]>, RowError> {
    let layout = schema.layout();
    if payload.len() < layout.var_start() {
        return Err(RowError::CorruptPayload("row shorter than fixed region"));
    }
    if is_null(layout, payload, col) {
        return Ok(None);
    }
    if let Some(off) = layout.fixed_offset[col] {
        let w = schema.field(col).ty.fixed_width().unwrap_or(0);
        let at = layout.bitmap_len + off;
        return Ok(Some(&payload[at..at + w]));
    }
    let mut at = layout.var_start();
    for &vc in &layout.var_cols {
        let len = read_u16(payload, at)? as usize;
        let end = at + 2 + len;
        if end > payload.len() {
            return Err(RowError::CorruptPayload("string runs past end of row"));
        }
        if vc == col {
            return Ok(Some(&payload[at + 2..end]));
        }
        at = end;
    }
    unreachable!("column {col} is neither fixed nor variable")
}

/// Builds the encoding of `left ++ right` under [`Schema::joined`] by
/// splicing the two encoded rows, without decoding either.
pub fn splice_rows(left_schema: &Schema, left: &[u8], right_schema: &Schema, right: &[u8], out: &mut Vec<u8>) {
    let ll = left_schema.layout();
    let rl = right_schema.layout();
    let ln = ll.nullable_count();
    let rn = rl.nullable_count();
    let bitmap_len = (ln + rn).div_ceil(8);
    let start = out.len();
    out.resize(start + bitmap_len, 0);
    if rn > 0 || ln > 0 {
        let bm = &mut out[start..];
        for i in 0..ln {
            if left[i / 8] & (1 << (i % 8)) != 0 {
                bm[i / 8] |= 1 << (i % 8);
            }
        }
        for i in 0..rn {
            if right[i / 8] & (1 << (i % 8)) != 0 {
                let j = ln + i;
                bm[j / 8] |= 1 << (j % 8);
            }
        }
    }
    out.extend_from_slice(&left[ll.bitmap_len..ll.var_start()]);
    out.extend_from_slice(&right[rl.bitmap_len..rl.var_start()]);
    out.extend_from_slice(&left[ll.var_start()..]);
    out.extend_from_slice(&right[rl.var_start()..]);
}

fn is_null(layout: &Layout, payload: &[u8], col: usize) -> bool {
    match layout.null_bit[col] {
        Some(bit) => payload[bit / 8] & (1 << (bit % 8)) != 0,
        None => false,
    }
}

fn fixed_value(ty: ColumnType, bytes: &[u8]) -> Value {
    match ty {
        ColumnType::Int32 => Value::Int32(i32::from_le_bytes(bytes[..4].try_into().unwrap())),
        ColumnType::Int64 => Value::Int64(i64::from_le_bytes(bytes[..8].try_into().unwrap())),
        ColumnType::Float64 => Value::Float64(f64::from_le_bytes(bytes[..8].try_into().unwrap())),
        ColumnType::Utf8 => unreachable!("utf8 is not fixed width"),
    }
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16, RowError> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or(RowError::CorruptPayload("truncated string length"))
}

struct VarSpans {
    spans: Vec<(usize, usize)>,
    end: usize,
}

fn var_spans(layout: &Layout, payload: &[u8]) -> Result<VarSpans, RowError> {
    let mut at = layout.var_start();
    if payload.len() < at {
        return Err(RowError::CorruptPayload("row shorter than fixed region"));
    }
    let mut spans = Vec::with_capacity(layout.var_cols.len());
    for _ in &layout.var_cols {
        let len = read_u16(payload, at)? as usize;
        let s = at + 2;
        let e = s + len;
        if e > payload.len() {
            return Err(RowError::CorruptPayload("string runs past end of row"));
        }
        spans.push((s, e));
        at = e;
    }
    Ok(VarSpans { spans, end: at })
}
