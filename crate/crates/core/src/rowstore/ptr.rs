use std::fmt;

use super::RowError;

pub const BATCH_ID_BITS: u32 = 31;
pub const OFFSET_BITS: u32 = 22;
pub const SIZE_BITS: u32 = 11;

pub const MAX_BATCH_ID: u32 = (1 << BATCH_ID_BITS) - 1;
pub const MAX_OFFSET: u32 = (1 << OFFSET_BITS) - 1;
pub const MAX_ROW_SIZE: u32 = (1 << SIZE_BITS) - 1;

const OFFSET_SHIFT: u32 = SIZE_BITS;
const BATCH_SHIFT: u32 = SIZE_BITS + OFFSET_BITS;

/// A row location packed into 64 bits:
/// `[63:33]` batch id, `[32:11]` byte offset of the record, `[10:0]` payload
/// length of the referenced row.
///
/// The all-ones value is reserved for "no predecessor". It can never name a
/// real record, since a record at offset `2^22 - 1` would overrun a 4 MiB batch.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackedRowPtr(u64);

impl PackedRowPtr {
    pub const NONE: PackedRowPtr = PackedRowPtr(u64::MAX);

    pub fn pack(batch_id: u32, offset: u32, row_size: u32) -> Result<Self, RowError> {
        if batch_id > MAX_BATCH_ID {
            return Err(RowError::FieldOverflow { field: "batch_id", value: batch_id as u64, bits: BATCH_ID_BITS });
        }
        if offset > MAX_OFFSET {
            return Err(RowError::FieldOverflow { field: "offset", value: offset as u64, bits: OFFSET_BITS });
        }
        if row_size > MAX_ROW_SIZE {
            return Err(RowError::FieldOverflow { field: "row_size", value: row_size as u64, bits: SIZE_BITS });
        }
        Ok(PackedRowPtr(((batch_id as u64) << BATCH_SHIFT) | ((offset as u64) << OFFSET_SHIFT) | row_size as u64))
    }

    pub fn from_raw(raw: u64) -> Self {
        PackedRowPtr(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn is_none(self) -> bool {
        self == Self::NONE
    }

    pub fn batch_id(self) -> u32 {
        (self.0 >> BATCH_SHIFT) as u32
    }

    pub fn offset(self) -> u32 {
        ((self.0 >> OFFSET_SHIFT) & MAX_OFFSET as u64) as u32
    }

    pub fn row_size(self) -> u32 {
        (self.0 & MAX_ROW_SIZE as u64) as u32
    }

    pub fn unpack(self) -> (u32, u32, u32) {
        (self.batch_id(), self.offset(), self.row_size())
    }
}

impl fmt::Debug for PackedRowPtr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_none() {
            return f.write_str("PackedRowPtr(NONE)");
        }
        write!(f, "PackedRowPtr(batch={}, off={}, size={})", self.batch_id(), self.offset(), self.row_size())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_packs_to_zero() {
        assert_eq!(PackedRowPtr::pack(0, 0, 0).unwrap().raw(), 0);
    }

    #[test]
    fn known_triple() {
        let p = PackedRowPtr::pack(5, 1024, 64).unwrap();
        // 5 << 33 | 1024 << 11 | 64
        assert_eq!(p.raw(), 42_949_672_960 + 2_097_152 + 64);
        assert_eq!(p.unpack(), (5, 1024, 64));
    }

    #[test]
    fn overflow_per_field() {
        assert!(matches!(PackedRowPtr::pack(1 << 31, 0, 0), Err(RowError::FieldOverflow { field: "batch_id", .. })));
        assert!(matches!(PackedRowPtr::pack(0, 1 << 22, 0), Err(RowError::FieldOverflow { field: "offset", .. })));
        assert!(matches!(PackedRowPtr::pack(0, 0, 1 << 11), Err(RowError::FieldOverflow { field: "row_size", .. })));
    }

    proptest! {
        #[test]
        fn pack_unpack(b in 0..=MAX_BATCH_ID, o in 0..=MAX_OFFSET, s in 0..=MAX_ROW_SIZE) {
            prop_assert_eq!(PackedRowPtr::pack(b, o, s).unwrap().unpack(), (b, o, s));
        }
    }
}
