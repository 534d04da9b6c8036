use std::ptr::NonNull;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use super::ptr::{PackedRowPtr, MAX_OFFSET, MAX_ROW_SIZE};
use super::RowError;

pub const DEFAULT_BATCH_BYTES: usize = 4 << 20;
/// Largest batch whose every record offset fits the packed pointer.
pub const MAX_BATCH_BYTES: usize = MAX_OFFSET as usize + 1;
pub const BACKPTR_BYTES: usize = 8;

/// Fixed-capacity byte arena holding `[backward pointer][payload]` records
/// back to back.
///
/// One writer at a time appends past the committed cursor while any number
/// of readers access records below it. The cursor is published with release
/// ordering after the record bytes are written, so a reader that learned of a
/// record through an acquire load always sees it complete.
pub struct RowBatch {
    id: u32,
    data: NonNull<u8>,
    capacity: usize,
    cursor: AtomicUsize,
    writing: AtomicBool,
    sealed: AtomicBool,
}

// SAFETY: writes only touch bytes at or beyond `cursor` and are serialized by
// `writing`; reads only touch bytes below an acquire-loaded `cursor`.
unsafe impl Send for RowBatch {}
unsafe impl Sync for RowBatch {}

impl RowBatch {
    pub fn new(id: u32, capacity: usize) -> Result<Self, RowError> {
        if !(BACKPTR_BYTES..=MAX_BATCH_BYTES).contains(&capacity) {
            return Err(RowError::InvalidBatchCapacity(capacity));
        }
        if id > super::ptr::MAX_BATCH_ID {
            return Err(RowError::FieldOverflow {
                field: "batch_id",
                value: id as u64,
                bits: super::ptr::BATCH_ID_BITS,
            });
        }
        let buf: Box<[u8]> = vec![0u8; capacity].into_boxed_slice();
        let data = NonNull::new(Box::into_raw(buf) as *mut u8).expect("box pointer is non-null");
        Ok(RowBatch {
            id,
            data,
            capacity,
            cursor: AtomicUsize::new(0),
            writing: AtomicBool::new(false),
            sealed: AtomicBool::new(false),
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Committed write cursor.
    pub fn len(&self) -> usize {
        self.cursor.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn remaining(&self) -> usize {
        self.capacity - self.len()
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed.load(Ordering::Acquire)
    }

    pub fn seal(&self) {
        self.sealed.store(true, Ordering::Release);
    }

    /// Appends one record and returns its offset.
    pub fn append(&self, backward: PackedRowPtr, payload: &[u8]) -> Result<u32, RowError> {
        if payload.len() > MAX_ROW_SIZE as usize {
            return Err(RowError::RowTooLarge { size: payload.len(), limit: MAX_ROW_SIZE as usize });
        }
        if self.writing.compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed).is_err() {
            return Err(RowError::ConcurrentWriter(self.id));
        }
        let result = self.append_locked(backward, payload);
        self.writing.store(false, Ordering::Release);
        result
    }

    fn append_locked(&self, backward: PackedRowPtr, payload: &[u8]) -> Result<u32, RowError> {
        if self.is_sealed() {
            return Err(RowError::BatchSealed(self.id));
        }
        let at = self.cursor.load(Ordering::Relaxed);
        let need = BACKPTR_BYTES + payload.len();
        if at + need > self.capacity {
            return Err(RowError::BatchFull { batch_id: self.id, needed: need, remaining: self.capacity - at });
        }
        // SAFETY: [at, at + need) is inside the allocation and beyond the
        // committed cursor, so no reader can observe it yet; `writing` excludes
        // other writers.
        unsafe {
            let dst = self.data.as_ptr().add(at);
            std::ptr::copy_nonoverlapping(backward.raw().to_le_bytes().as_ptr(), dst, BACKPTR_BYTES);
            std::ptr::copy_nonoverlapping(payload.as_ptr(), dst.add(BACKPTR_BYTES), payload.len());
        }
        self.cursor.store(at + need, Ordering::Release);
        Ok(at as u32)
    }

    /// Reads the record `ptr` refers to.
    pub fn read(&self, ptr: PackedRowPtr) -> Result<(PackedRowPtr, &[u8]), RowError> {
        if ptr.is_none() || ptr.batch_id() != self.id {
            return Err(RowError::OutOfBounds { batch_id: self.id, offset: ptr.offset() as usize });
        }
        self.read_at(ptr.offset() as usize, ptr.row_size() as usize)
    }

    /// Reads the record at `offset` whose payload is `size` bytes long.
    pub fn read_at(&self, offset: usize, size: usize) -> Result<(PackedRowPtr, &[u8]), RowError> {
        let committed = self.committed();
        let end = offset + BACKPTR_BYTES + size;
        if end > committed.len() {
            return Err(RowError::OutOfBounds { batch_id: self.id, offset });
        }
        let back = u64::from_le_bytes(committed[offset..offset + BACKPTR_BYTES].try_into().unwrap());
        Ok((PackedRowPtr::from_raw(back), &committed[offset + BACKPTR_BYTES..end]))
    }

    /// All committed bytes.
    pub fn committed(&self) -> &[u8] {
        let len = self.len();
        // SAFETY: bytes below the acquire-loaded cursor are fully written and
        // never modified again.
        unsafe { std::slice::from_raw_parts(self.data.as_ptr(), len) }
    }

    /// Walks records in order; `measure` returns the payload length of the
    /// row starting at the given slice.
    pub fn records<'a, F>(&'a self, measure: F) -> Records<'a, F>
    where
        F: Fn(&[u8]) -> Result<usize, RowError>,
    {
        Records { bytes: self.committed(), at: 0, measure }
    }

    /// Unsealed copy (same id) of the committed prefix, for copy-on-write.
    pub fn copy_prefix(&self) -> RowBatch {
        let copy = RowBatch::new(self.id, self.capacity).expect("capacity already validated");
        let src = self.committed();
        // SAFETY: fresh allocation of equal capacity, nobody else can see it.
        unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), copy.data.as_ptr(), src.len()) };
        copy.cursor.store(src.len(), Ordering::Release);
        copy
    }
}

impl Drop for RowBatch {
    fn drop(&mut self) {
        // SAFETY: reconstructs the box leaked in `new`.
        unsafe {
            drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(self.data.as_ptr(), self.capacity)));
        }
    }
}

impl std::fmt::Debug for RowBatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RowBatch")
            .field("id", &self.id)
            .field("len", &self.len())
            .field("capacity", &self.capacity)
            .field("sealed", &self.is_sealed())
            .finish()
    }
}

pub struct Records<'a, F> {
    bytes: &'a [u8],
    at: usize,
    measure: F,
}

impl<'a, F> Iterator for Records<'a, F>
where
    F: Fn(&[u8]) -> Result<usize, RowError>,
{
    type Item = Result<(u32, PackedRowPtr, &'a [u8]), RowError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.at >= self.bytes.len() {
            return None;
        }
        let at = self.at;
        let start = at + BACKPTR_BYTES;
        if start > self.bytes.len() {
            self.at = self.bytes.len();
            return Some(Err(RowError::CorruptPayload("truncated record header")));
        }
        let back = PackedRowPtr::from_raw(u64::from_le_bytes(self.bytes[at..start].try_into().unwrap()));
        match (self.measure)(&self.bytes[start..]) {
            Ok(len) => {
                self.at = start + len;
                Some(Ok((at as u32, back, &self.bytes[start..start + len])))
            }
            Err(e) => {
                self.at = self.bytes.len();
                Some(Err(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_append_at_zero() {
        let b = RowBatch::new(0, 4096).unwrap();
        assert_eq!(b.append(PackedRowPtr::NONE, b"abc").unwrap(), 0);
    }

    #[test]
    fn cursor_arithmetic() {
        let b = RowBatch::new(3, 4096).unwrap();
        let p = [7u8; 56];
        assert_eq!(b.append(PackedRowPtr::NONE, &p).unwrap(), 0);
        assert_eq!(b.append(PackedRowPtr::NONE, &p).unwrap(), 64);
        assert_eq!(b.len(), 128);
    }

    #[test]
    fn full_and_sealed() {
        let b = RowBatch::new(0, 32).unwrap();
        b.append(PackedRowPtr::NONE, &[1; 16]).unwrap();
        assert!(matches!(b.append(PackedRowPtr::NONE, &[1; 1]), Err(RowError::BatchFull { .. })));
        let c = RowBatch::new(1, 64).unwrap();
        c.seal();
        assert!(matches!(c.append(PackedRowPtr::NONE, b"x"), Err(RowError::BatchSealed(1))));
    }

    #[test]
    fn capacity_limits() {
        assert!(RowBatch::new(0, MAX_BATCH_BYTES).is_ok());
        assert!(matches!(RowBatch::new(0, MAX_BATCH_BYTES + 1), Err(RowError::InvalidBatchCapacity(_))));
    }

    #[test]
    fn read_back_and_bounds() {
        let b = RowBatch::new(9, 1024).unwrap();
        let back = PackedRowPtr::pack(2, 40, 5).unwrap();
        let off = b.append(back, b"hello").unwrap();
        let ptr = PackedRowPtr::pack(9, off, 5).unwrap();
        let (got_back, payload) = b.read(ptr).unwrap();
        assert_eq!(got_back, back);
        assert_eq!(payload, b"hello");
        let beyond = PackedRowPtr::pack(9, b.len() as u32, 1).unwrap();
        assert!(matches!(b.read(beyond), Err(RowError::OutOfBounds { .. })));
        let wrong_batch = PackedRowPtr::pack(8, off, 5).unwrap();
        assert!(b.read(wrong_batch).is_err());
    }

    #[test]
    fn random_interleaving_matches_shadow() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = RowBatch::new(1, 1 << 20).unwrap();
        let mut shadow: HashMap<u32, (PackedRowPtr, Vec<u8>)> = HashMap::new();
        let mut expected_cursor = 0;
        for i in 0..5000u64 {
            if rng.random_bool(0.6) || shadow.is_empty() {
                let len = rng.random_range(0..200);
                let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                let back = PackedRowPtr::from_raw(i);
                match b.append(back, &payload) {
                    Ok(off) => {
                        expected_cursor += 8 + len;
                        shadow.insert(off, (back, payload));
                    }
                    Err(RowError::BatchFull { .. }) => break,
                    Err(e) => panic!("{e}"),
                }
            } else {
                let keys: Vec<_> = shadow.keys().copied().collect();
                let off = keys[rng.random_range(0..keys.len())];
                let (back, payload) = &shadow[&off];
                let got = b.read(PackedRowPtr::pack(1, off, payload.len() as u32).unwrap()).unwrap();
                assert_eq!(got, (*back, payload.as_slice()));
            }
        }
        assert_eq!(b.len(), expected_cursor);
        for (off, (back, payload)) in &shadow {
            assert_eq!(b.read_at(*off as usize, payload.len()).unwrap(), (*back, payload.as_slice()));
        }
    }

    #[test]
    fn copy_prefix_is_independent() {
        let b = RowBatch::new(4, 256).unwrap();
        b.append(PackedRowPtr::NONE, b"one").unwrap();
        b.seal();
        let c = b.copy_prefix();
        assert_eq!(c.id(), 4);
        assert_eq!(c.committed(), b.committed());
        c.append(PackedRowPtr::NONE, b"two").unwrap();
        assert_eq!(b.len(), 11);
        assert_eq!(c.len(), 22);
    }
}
