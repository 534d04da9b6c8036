//! Row encoding, batch arenas and packed row pointers.

mod batch;
mod codec;
mod ptr;
mod schema;

use thiserror::Error;

pub use batch::{Records, RowBatch, BACKPTR_BYTES, DEFAULT_BATCH_BYTES, MAX_BATCH_BYTES};
pub use codec::{
    column_bytes, decode_row, encode_into, encode_row, payload_len, read_column, splice_rows, RowPayload,
    DEFAULT_MAX_ROW_BYTES,
};
pub use ptr::{PackedRowPtr, BATCH_ID_BITS, MAX_BATCH_ID, MAX_OFFSET, MAX_ROW_SIZE, OFFSET_BITS, SIZE_BITS};
pub use schema::{ColumnType, Field, Schema, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RowError {
    #[error("row of {size} bytes exceeds the {limit}-byte limit")]
    RowTooLarge { size: usize, limit: usize },
    #[error("column {column}: expected {expected}, found {}", .found.map(|t| t.name()).unwrap_or("null"))]
    TypeMismatch { column: usize, expected: ColumnType, found: Option<ColumnType> },
    #[error("expected {expected} values, got {actual}")]
    ArityMismatch { expected: usize, actual: usize },
    #[error("corrupt row payload: {0}")]
    CorruptPayload(&'static str),
    #[error("{field} value {value} does not fit in {bits} bits")]
    FieldOverflow { field: &'static str, value: u64, bits: u32 },
    #[error("batch {batch_id} full: need {needed} bytes, {remaining} left")]
    BatchFull { batch_id: u32, needed: usize, remaining: usize },
    #[error("batch {0} is sealed")]
    BatchSealed(u32),
    #[error("batch {0} already has an active writer")]
    ConcurrentWriter(u32),
    #[error("offset {offset} out of bounds in batch {batch_id}")]
    OutOfBounds { batch_id: u32, offset: usize },
    #[error("batch capacity {0} must be between 8 bytes and 4 MiB")]
    InvalidBatchCapacity(usize),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}
