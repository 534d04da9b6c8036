//! One hash partition: a key trie pointing at the newest row per key, a
//! directory of row batches, and backward-pointer chains through the rows.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::rowstore::{
    column_bytes, payload_len, ColumnType, PackedRowPtr, RowBatch, RowError, RowPayload, Schema, Value, BACKPTR_BYTES,
    MAX_BATCH_BYTES, MAX_ROW_SIZE,
};
use crate::trie::{KeyTrie, TrieSnapshot};

/// 32-bit FNV-1a.
pub fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// The 64-bit trie key for an index value.
///
/// Integers are sign-extended, floats map through the total-order bit trick
/// and strings to their zero-extended 32-bit FNV-1a hash, so distinct strings
/// can share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey(pub u64);

impl CanonicalKey {
    pub fn from_value(v: &Value) -> Result<Self> {
        Ok(CanonicalKey(match v {
            Value::Null => return Err(Error::NullIndexKey),
            Value::Int32(x) => *x as i64 as u64,
            Value::Int64(x) => *x as u64,
            Value::Float64(x) => float_key(*x),
            Value::Utf8(s) => fnv1a32(s.as_bytes()) as u64,
        }))
    }

    /// Key of a raw cell as returned by [`column_bytes`].
    pub fn from_cell(ty: ColumnType, bytes: &[u8]) -> Self {
        CanonicalKey(match ty {
            ColumnType::Int32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as i64 as u64,
            ColumnType::Int64 => u64::from_le_bytes(bytes[..8].try_into().unwrap()),
            ColumnType::Float64 => float_key(f64::from_le_bytes(bytes[..8].try_into().unwrap())),
            ColumnType::Utf8 => fnv1a32(bytes) as u64,
        })
    }

    /// Key of column `col` of an encoded row.
    pub fn of_row(schema: &Schema, payload: &[u8], col: usize) -> Result<Self> {
        match column_bytes(schema, payload, col)? {
            None => Err(Error::NullIndexKey),
            Some(b) => Ok(Self::from_cell(schema.field(col).ty, b)),
        }
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Partition owning this key among `partitions`.
    #[inline]
    pub fn route(self, partitions: usize) -> usize {
        (((self.0.wrapping_mul(0x9E37_79B9_7F4A_7C15)) >> 32) % partitions as u64) as usize
    }
}

fn float_key(x: f64) -> u64 {
    let b = x.to_bits() as i64;
    (b ^ ((((b >> 63) as u64) >> 1) as i64)) as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryStats {
    pub data_bytes: u64,
    pub index_bytes: u64,
    pub backptr_bytes: u64,
}

impl std::ops::AddAssign for MemoryStats {
    fn add_assign(&mut self, o: Self) {
        self.data_bytes += o.data_bytes;
        self.index_bytes += o.index_bytes;
        self.backptr_bytes += o.backptr_bytes;
    }
}

struct Writer {
    open: Option<Arc<RowBatch>>,
    /// Sealed tail inherited from a parent snapshot, copied on first write.
    inherited: Option<Arc<RowBatch>>,
    next_batch_id: u32,
}

/// A mutable partition with a single owner.
pub struct IndexedPartition {
    id: u32,
    schema: Arc<Schema>,
    key_col: usize,
    batch_bytes: usize,
    keys: KeyTrie<PackedRowPtr>,
    batches: KeyTrie<Arc<RowBatch>>,
    writer: Mutex<Writer>,
    frozen: AtomicBool,
    rows: AtomicU64,
    data_bytes: AtomicU64,
}

impl IndexedPartition {
    pub fn new(id: u32, schema: Arc<Schema>, key_col: usize, batch_bytes: usize) -> Result<Self> {
        if key_col >= schema.len() {
            return Err(Error::NoSuchColumn(key_col));
        }
        if !(BACKPTR_BYTES..=MAX_BATCH_BYTES).contains(&batch_bytes) {
            return Err(RowError::InvalidBatchCapacity(batch_bytes).into());
        }
        Ok(IndexedPartition {
            id,
            schema,
            key_col,
            batch_bytes,
            keys: KeyTrie::new(),
            batches: KeyTrie::new(),
            writer: Mutex::new(Writer { open: None, inherited: None, next_batch_id: 0 }),
            frozen: AtomicBool::new(false),
            rows: AtomicU64::new(0),
            data_bytes: AtomicU64::new(0),
        })
    }

    /// A live partition continuing from `snap`. Shares every batch with the
    /// snapshot; the tail batch is copied lazily on the first insert.
    pub fn successor(snap: &PartitionSnapshot) -> Self {
        let s = &snap.0;
        let inherited = s.next_batch_id.checked_sub(1).and_then(|id| s.batches.get(id as u64).cloned());
        IndexedPartition {
            id: s.id,
            schema: s.schema.clone(),
            key_col: s.key_col,
            batch_bytes: s.batch_bytes,
            keys: KeyTrie::from_snapshot(&s.keys),
            batches: KeyTrie::from_snapshot(&s.batches),
            writer: Mutex::new(Writer { open: None, inherited, next_batch_id: s.next_batch_id }),
            frozen: AtomicBool::new(false),
            rows: AtomicU64::new(s.rows),
            data_bytes: AtomicU64::new(s.data_bytes),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn row_count(&self) -> u64 {
        self.rows.load(Ordering::Acquire)
    }

    /// Number of batches currently registered.
    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    /// Inserts encoded rows with their keys. Either every row is inserted or,
    /// if any row is unfit, none is.
    pub fn insert(&self, rows: &[(CanonicalKey, &[u8])]) -> Result<usize> {
        let limit = (MAX_ROW_SIZE as usize).min(self.batch_bytes - BACKPTR_BYTES);
        for (_, p) in rows {
            if p.len() > limit {
                return Err(RowError::RowTooLarge { size: p.len(), limit }.into());
            }
        }
        let mut w = self.writer.lock();
        if self.frozen.load(Ordering::Acquire) {
            return Err(Error::PartitionSealed(self.id));
        }
        if rows.is_empty() {
            return Ok(0);
        }
        let mut keys = self.keys.begin();
        let mut dir = self.batches.begin();
        let mut bytes = 0u64;
        for &(key, payload) in rows {
            let back = keys.get(key.0).copied().unwrap_or(PackedRowPtr::NONE);
            let (batch, offset) = loop {
                let batch = self.open_batch(&mut w, &mut dir)?;
                match batch.append(back, payload) {
                    Ok(off) => break (batch, off),
                    Err(RowError::BatchFull { .. }) => {
                        batch.seal();
                        w.open = None;
                    }
                    Err(e) => return Err(e.into()),
                }
            };
            let ptr = PackedRowPtr::pack(batch.id(), offset, payload.len() as u32)?;
            keys.insert(key.0, ptr);
            bytes += payload.len() as u64;
        }
        // Batches first, so every pointer a reader can find resolves.
        if self.batches.commit(dir).is_err() || self.keys.commit(keys).is_err() {
            return Err(Error::ExecFailure(format!("partition {} written by more than one owner", self.id)));
        }
        self.data_bytes.fetch_add(bytes, Ordering::AcqRel);
        self.rows.fetch_add(rows.len() as u64, Ordering::AcqRel);
        Ok(rows.len())
    }

    fn open_batch(&self, w: &mut Writer, dir: &mut crate::trie::Transient<Arc<RowBatch>>) -> Result<Arc<RowBatch>> {
        if let Some(b) = &w.open {
            return Ok(b.clone());
        }
        let batch = match w.inherited.take() {
            Some(tail) if tail.len() < tail.remaining() => Arc::new(tail.copy_prefix()),
            _ => {
                let id = w.next_batch_id;
                w.next_batch_id = id.checked_add(1).ok_or(RowError::FieldOverflow {
                    field: "batch_id",
                    value: id as u64 + 1,
                    bits: crate::rowstore::BATCH_ID_BITS,
                })?;
                Arc::new(RowBatch::new(id, self.batch_bytes)?)
            }
        };
        dir.insert(batch.id() as u64, batch.clone());
        w.open = Some(batch.clone());
        Ok(batch)
    }

    /// Rows for `key`, newest first. With `verify`, rows whose key column
    /// differs from it (string hash collisions) are dropped.
    pub fn lookup(&self, key: CanonicalKey, verify: Option<&Value>) -> Result<Vec<RowPayload>> {
        let keys = self.keys.snapshot();
        let batches = self.batches.snapshot();
        let mut out = Vec::new();
        let expected = verify.map(verify_bytes);
        walk(&self.schema, self.key_col, &keys, &batches, key, expected.as_deref(), |p| {
            out.push(RowPayload::from_bytes(p.to_vec()))
        })?;
        Ok(out)
    }

    /// Seals the open batch and snapshots the key trie, then the batch
    /// directory. The partition rejects inserts afterwards.
    pub fn freeze(&self) -> PartitionSnapshot {
        let mut w = self.writer.lock();
        self.frozen.store(true, Ordering::Release);
        if let Some(open) = w.open.take() {
            open.seal();
        }
        let keys = self.keys.snapshot();
        let batches = self.batches.snapshot();
        PartitionSnapshot(Arc::new(SnapInner {
            id: self.id,
            schema: self.schema.clone(),
            key_col: self.key_col,
            batch_bytes: self.batch_bytes,
            keys,
            batches,
            rows: self.rows.load(Ordering::Acquire),
            data_bytes: self.data_bytes.load(Ordering::Acquire),
            next_batch_id: w.next_batch_id,
            lookups: AtomicU64::new(0),
        }))
    }
}

impl std::fmt::Debug for IndexedPartition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IndexedPartition").field("id", &self.id).field("rows", &self.row_count()).finish()
    }
}

fn walk(
    schema: &Schema,
    key_col: usize,
    keys: &TrieSnapshot<PackedRowPtr>,
    batches: &TrieSnapshot<Arc<RowBatch>>,
    key: CanonicalKey,
    expected: Option<&[u8]>,
    mut f: impl FnMut(&[u8]),
) -> Result<()> {
    let Some(mut ptr) = keys.get(key.0).copied() else { return Ok(()) };
    let mut cached: Option<&Arc<RowBatch>> = None;
    while !ptr.is_none() {
        let batch = match cached {
            Some(b) if b.id() == ptr.batch_id() => b,
            _ => batches
                .get(ptr.batch_id() as u64)
                .ok_or(RowError::OutOfBounds { batch_id: ptr.batch_id(), offset: ptr.offset() as usize })?,
        };
        cached = Some(batch);
        let (back, payload) = batch.read(ptr)?;
        let keep = match expected {
            None => true,
            Some(want) => column_bytes(schema, payload, key_col)? == Some(want),
        };
        if keep {
            f(payload);
        }
        ptr = back;
    }
    Ok(())
}

fn verify_bytes(v: &Value) -> Vec<u8> {
    match v {
        Value::Null => Vec::new(),
        Value::Int32(x) => x.to_le_bytes().to_vec(),
        Value::Int64(x) => x.to_le_bytes().to_vec(),
        Value::Float64(x) => x.to_le_bytes().to_vec(),
        Value::Utf8(s) => s.as_bytes().to_vec(),
    }
}

struct SnapInner {
    id: u32,
    schema: Arc<Schema>,
    key_col: usize,
    batch_bytes: usize,
    keys: TrieSnapshot<PackedRowPtr>,
    batches: TrieSnapshot<Arc<RowBatch>>,
    rows: u64,
    data_bytes: u64,
    next_batch_id: u32,
    lookups: AtomicU64,
}

/// Immutable, cheaply clonable view of a partition.
#[derive(Clone)]
pub struct PartitionSnapshot(Arc<SnapInner>);

impl PartitionSnapshot {
    pub fn id(&self) -> u32 {
        self.0.id
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.0.schema
    }

    pub fn key_col(&self) -> usize {
        self.0.key_col
    }

    pub fn batch_bytes(&self) -> usize {
        self.0.batch_bytes
    }

    pub fn row_count(&self) -> u64 {
        self.0.rows
    }

    pub fn key_count(&self) -> usize {
        self.0.keys.len()
    }

    /// Lookups served by this snapshot so far.
    pub fn lookup_count(&self) -> u64 {
        self.0.lookups.load(Ordering::Relaxed)
    }

    pub fn lookup(&self, key: CanonicalKey, verify: Option<&Value>) -> Result<Vec<RowPayload>> {
        let mut out = Vec::new();
        self.for_each_match(key, verify, |p| out.push(RowPayload::from_bytes(p.to_vec())))?;
        Ok(out)
    }

    /// Calls `f` on each matching row, newest first, without copying.
    pub fn for_each_match(&self, key: CanonicalKey, verify: Option<&Value>, f: impl FnMut(&[u8])) -> Result<()> {
        let expected = verify.map(verify_bytes);
        self.for_each_match_cell(key, expected.as_deref(), f)
    }

    /// Like [`for_each_match`](Self::for_each_match), verifying against the
    /// raw key cell instead of a decoded value.
    pub fn for_each_match_cell(&self, key: CanonicalKey, cell: Option<&[u8]>, f: impl FnMut(&[u8])) -> Result<()> {
        self.0.lookups.fetch_add(1, Ordering::Relaxed);
        let s = &self.0;
        walk(&s.schema, s.key_col, &s.keys, &s.batches, key, cell, f)
    }

    /// Every row exactly once, in batch then record order.
    pub fn scan(&self) -> impl Iterator<Item = Result<&[u8]>> + '_ {
        let schema = &self.0.schema;
        self.batch_handles().into_iter().flat_map(move |b| {
            b.records(move |bytes| payload_len(schema, bytes)).map(|r| r.map(|(_, _, p)| p).map_err(Error::from))
        })
    }

    /// Distinct canonical keys, ascending.
    pub fn keys(&self) -> Vec<CanonicalKey> {
        self.0.keys.entries().into_iter().map(|(k, _)| CanonicalKey(k)).collect()
    }

    /// Batch handles in id order.
    pub fn batch_handles(&self) -> Vec<&Arc<RowBatch>> {
        self.0.batches.entries().into_iter().map(|(_, b)| b).collect()
    }

    pub fn memory_stats(&self) -> MemoryStats {
        MemoryStats {
            data_bytes: self.0.data_bytes,
            index_bytes: self.0.keys.footprint_bytes() as u64,
            backptr_bytes: BACKPTR_BYTES as u64 * self.0.rows,
        }
    }
}

impl std::fmt::Debug for PartitionSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PartitionSnapshot").field("id", &self.0.id).field("rows", &self.0.rows).finish()
    }
}
