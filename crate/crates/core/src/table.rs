//! Plain, non-indexed tables of encoded rows.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rowstore::{decode_row, encode_into, payload_len, Schema, Value, DEFAULT_MAX_ROW_BYTES};

/// Rows stored back to back in one buffer.
#[derive(Clone)]
pub struct PlainTable {
    schema: Arc<Schema>,
    data: Vec<u8>,
    ends: Vec<usize>,
}

impl PlainTable {
    pub fn new(schema: Arc<Schema>) -> Self {
        PlainTable { schema, data: Vec::new(), ends: Vec::new() }
    }

    pub fn with_capacity(schema: Arc<Schema>, rows: usize, bytes: usize) -> Self {
        PlainTable { schema, data: Vec::with_capacity(bytes), ends: Vec::with_capacity(rows) }
    }

    pub fn from_rows<I, R>(schema: Arc<Schema>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[Value]>,
    {
        let mut t = PlainTable::new(schema);
        for r in rows {
            t.push(r.as_ref())?;
        }
        Ok(t)
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    /// Total encoded bytes.
    pub fn byte_size(&self) -> usize {
        self.data.len()
    }

    pub fn push(&mut self, values: &[Value]) -> Result<()> {
        encode_into(&self.schema, values, DEFAULT_MAX_ROW_BYTES, &mut self.data)?;
        self.ends.push(self.data.len());
        Ok(())
    }

    /// Appends an already encoded row after checking it is self-consistent.
    pub fn push_encoded(&mut self, payload: &[u8]) -> Result<()> {
        if payload_len(&self.schema, payload)? != payload.len() {
            return Err(crate::rowstore::RowError::CorruptPayload("trailing bytes after row").into());
        }
        self.push_encoded_unchecked(payload);
        Ok(())
    }

    /// Appends a row known to be encoded under this table's schema.
    pub fn push_encoded_unchecked(&mut self, payload: &[u8]) {
        self.data.extend_from_slice(payload);
        self.ends.push(self.data.len());
    }

    /// Appends raw bytes produced by a writer into the data buffer, then
    /// closes the row. Used by operators that splice rows in place.
    pub fn with_row_buffer(&mut self, f: impl FnOnce(&mut Vec<u8>)) {
        f(&mut self.data);
        self.ends.push(self.data.len());
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let start = if i == 0 { 0 } else { self.ends[i - 1] };
        &self.data[start..self.ends[i]]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn values(&self, i: usize) -> Result<Vec<Value>> {
        Ok(decode_row(&self.schema, self.row(i))?)
    }

    pub fn decode_all(&self) -> Result<Vec<Vec<Value>>> {
        self.rows().map(|r| decode_row(&self.schema, r).map_err(Error::from)).collect()
    }

    /// Encoded rows sorted bytewise; equal for two tables iff their row
    /// multisets are equal.
    pub fn sorted_rows(&self) -> Vec<&[u8]> {
        let mut v: Vec<&[u8]> = self.rows().collect();
        v.sort_unstable();
        v
    }

    pub fn same_multiset(&self, other: &PlainTable) -> bool {
        self.schema.same_columns(&other.schema) && self.sorted_rows() == other.sorted_rows()
    }

    pub fn extend(&mut self, other: &PlainTable) -> Result<()> {
        if !self.schema.same_columns(&other.schema) {
            return Err(Error::SchemaMismatch("cannot concatenate tables with different columns".into()));
        }
        let base = self.data.len();
        self.data.extend_from_slice(&other.data);
        self.ends.extend(other.ends.iter().map(|e| e + base));
        Ok(())
    }

    /// Rows `[start, end)` as a new table.
    pub fn slice(&self, start: usize, end: usize) -> PlainTable {
        let mut t = PlainTable::new(self.schema.clone());
        for i in start..end.min(self.len()) {
            t.push_encoded_unchecked(self.row(i));
        }
        t
    }
}

impl std::fmt::Debug for PlainTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlainTable").field("rows", &self.len()).field("bytes", &self.data.len()).finish()
    }
}

impl PartialEq for PlainTable {
    /// Row-for-row, order-sensitive equality.
    fn eq(&self, other: &Self) -> bool {
        self.schema.same_columns(&other.schema) && self.ends == other.ends && self.data == other.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rowstore::{ColumnType, Field};

    #[test]
    fn push_and_read_back() {
        let s =
            Arc::new(Schema::new(vec![Field::new("a", ColumnType::Int32), Field::new("b", ColumnType::Utf8)]).unwrap());
        let mut t = PlainTable::new(s.clone());
        assert!(t.is_empty());
        t.push(&[Value::Int32(1), Value::from("x")]).unwrap();
        t.push(&[Value::Int32(2), Value::from("")]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.values(1).unwrap(), vec![Value::Int32(2), Value::from("")]);
        assert!(t.push(&[Value::Int32(1)]).is_err());
        assert_eq!(t.len(), 2);

        let mut u = PlainTable::new(s);
        u.push_encoded(t.row(1)).unwrap();
        u.push_encoded(t.row(0)).unwrap();
        assert!(t.same_multiset(&u));
        assert_ne!(t, u);
        assert!(u.push_encoded(&[0, 0, 0]).is_err());
    }
}
