//! Indexed dataframes: hash-partitioned, indexed, immutable versions.
//!
//! ```
//! use std::sync::Arc;
//! use ixframe::dataframe::{DataFrameOptions, IndexedDataFrame};
//! use ixframe::rowstore::{ColumnType, Field, Schema, Value};
//! use ixframe::table::PlainTable;
//!
//! let schema = Arc::new(Schema::new(vec![
//!     Field::new("id", ColumnType::Int64),
//!     Field::new("name", ColumnType::Utf8),
//! ]).unwrap());
//! let rows = PlainTable::from_rows(schema.clone(), [
//!     vec![Value::Int64(1), Value::from("a")],
//!     vec![Value::Int64(2), Value::from("b")],
//! ]).unwrap();
//!
//! let df = IndexedDataFrame::create_index(&rows, 0, &DataFrameOptions::with_partitions(4)).unwrap();
//! let more = PlainTable::from_rows(schema, [vec![Value::Int64(1), Value::from("c")]]).unwrap();
//! let child = df.append_rows(&more).unwrap();
//!
//! assert_eq!(df.get_rows(&Value::Int64(1)).unwrap().len(), 1);
//! assert_eq!(child.get_rows(&Value::Int64(1)).unwrap().len(), 2);
//! assert!(child.version() > df.version());
//! ```

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::partition::{CanonicalKey, IndexedPartition, MemoryStats, PartitionSnapshot};
use crate::rowstore::{Schema, Value, DEFAULT_BATCH_BYTES};
use crate::table::PlainTable;

/// Rows handed to a partition per insert call.
const INSERT_CHUNK: usize = 1 << 16;

/// Two partitions per available core.
pub fn default_partitions() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).max(1) * 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataFrameOptions {
    pub partitions: usize,
    pub batch_bytes: usize,
}

impl Default for DataFrameOptions {
    fn default() -> Self {
        DataFrameOptions { partitions: default_partitions(), batch_bytes: DEFAULT_BATCH_BYTES }
    }
}

impl DataFrameOptions {
    pub fn with_partitions(partitions: usize) -> Self {
        DataFrameOptions { partitions, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfStats {
    pub row_count: u64,
    pub data_bytes: u64,
    pub index_bytes: u64,
    pub backptr_bytes: u64,
    /// `index_bytes / data_bytes`, or 0 for an empty dataframe.
    pub index_overhead_ratio: f64,
}

/// Hands out version numbers to every dataframe derived from one
/// `create_index` call.
#[derive(Debug)]
struct Lineage {
    next: AtomicU64,
}

struct Inner {
    version: u64,
    parent: Option<u64>,
    lineage: Arc<Lineage>,
    schema: Arc<Schema>,
    index_col: usize,
    batch_bytes: usize,
    partitions: Vec<PartitionSnapshot>,
    rows: u64,
}

/// One immutable version of an indexed dataframe. Cloning is cheap.
#[derive(Clone)]
pub struct IndexedDataFrame(Arc<Inner>);

/// Spec-facing name for a dataframe version.
pub type DataFrameVersion = IndexedDataFrame;

impl IndexedDataFrame {
    /// Hash-partitions `table` on column `col` and indexes every partition.
    pub fn create_index(table: &PlainTable, col: usize, opts: &DataFrameOptions) -> Result<Self> {
        let schema = table.schema().clone();
        if schema.is_empty() {
            return Err(Error::EmptySchema);
        }
        if col >= schema.len() {
            return Err(Error::NoSuchColumn(col));
        }
        if opts.partitions == 0 {
            return Err(Error::InvalidPartitionCount);
        }
        let schema = Arc::new(schema.as_ref().clone().with_index_col(Some(col))?);
        let buckets = route(table, &schema, col, opts.partitions)?;
        let partitions = buckets
            .par_iter()
            .enumerate()
            .map(|(pid, rows)| {
                let p = IndexedPartition::new(pid as u32, schema.clone(), col, opts.batch_bytes)?;
                insert_rows(&p, table, &schema, col, rows)?;
                Ok(p.freeze())
            })
            .collect::<Result<Vec<_>>>()?;
        let lineage = Arc::new(Lineage { next: AtomicU64::new(2) });
        Ok(IndexedDataFrame(Arc::new(Inner {
            version: 1,
            parent: None,
            lineage,
            schema,
            index_col: col,
            batch_bytes: opts.batch_bytes,
            rows: table.len() as u64,
            partitions,
        })))
    }

    /// Everything is already in memory; kept for API parity.
    pub fn cache(&self) -> &Self {
        self
    }

    pub fn version(&self) -> u64 {
        self.0.version
    }

    pub fn parent_version(&self) -> Option<u64> {
        self.0.parent
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.0.schema
    }

    pub fn index_col(&self) -> usize {
        self.0.index_col
    }

    pub fn num_partitions(&self) -> usize {
        self.0.partitions.len()
    }

    pub fn batch_bytes(&self) -> usize {
        self.0.batch_bytes
    }

    pub fn row_count(&self) -> u64 {
        self.0.rows
    }

    pub fn partitions(&self) -> &[PartitionSnapshot] {
        &self.0.partitions
    }

    pub fn partition(&self, pid: usize) -> &PartitionSnapshot {
        &self.0.partitions[pid]
    }

    /// Checks `key` against the index column type and returns its canonical
    /// form and owning partition.
    pub fn route_key(&self, key: &Value) -> Result<(CanonicalKey, usize)> {
        let expected = self.0.schema.field(self.0.index_col).ty;
        match key.column_type() {
            Some(t) if t == expected => {}
            None => return Err(Error::NullIndexKey),
            found => return Err(Error::KeyTypeMismatch { expected, found }),
        }
        let ck = CanonicalKey::from_value(key)?;
        Ok((ck, ck.route(self.num_partitions())))
    }

    /// Rows whose index column equals `key`, newest first.
    pub fn get_rows(&self, key: &Value) -> Result<PlainTable> {
        let (ck, pid) = self.route_key(key)?;
        let mut out = PlainTable::new(self.0.schema.clone());
        let verify = matches!(key, Value::Utf8(_)).then_some(key);
        self.0.partitions[pid].for_each_match(ck, verify, |p| out.push_encoded_unchecked(p))?;
        Ok(out)
    }

    /// A child version holding this version's rows plus `table`'s. This
    /// version is left untouched, so several children may share it.
    pub fn append_rows(&self, table: &PlainTable) -> Result<Self> {
        self.append_inner(table, None)
    }

    /// Like [`append_rows`](Self::append_rows) but with a caller-chosen
    /// version number, as when replaying a log. `version` must be newer than
    /// this version; later appends are numbered after it.
    pub fn append_rows_as(&self, table: &PlainTable, version: u64) -> Result<Self> {
        if version <= self.0.version {
            return Err(Error::InvalidSpec(format!("version {version} is not newer than {}", self.0.version)));
        }
        self.append_inner(table, Some(version))
    }

    fn append_inner(&self, table: &PlainTable, version: Option<u64>) -> Result<Self> {
        let s = &self.0;
        if !table.schema().same_columns(&s.schema) {
            return Err(Error::SchemaMismatch("appended rows do not match the dataframe columns".into()));
        }
        let buckets = route(table, &s.schema, s.index_col, s.partitions.len())?;
        let partitions = buckets
            .par_iter()
            .zip(s.partitions.par_iter())
            .map(|(rows, snap)| {
                if rows.is_empty() {
                    return Ok(snap.clone());
                }
                let p = IndexedPartition::successor(snap);
                insert_rows(&p, table, &s.schema, s.index_col, rows)?;
                Ok(p.freeze())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(IndexedDataFrame(Arc::new(Inner {
            version: match version {
                Some(v) => {
                    s.lineage.next.fetch_max(v + 1, Ordering::AcqRel);
                    v
                }
                None => s.lineage.next.fetch_add(1, Ordering::AcqRel),
            },
            parent: Some(s.version),
            lineage: s.lineage.clone(),
            schema: s.schema.clone(),
            index_col: s.index_col,
            batch_bytes: s.batch_bytes,
            rows: s.rows + table.len() as u64,
            partitions,
        })))
    }

    /// All rows, partition by partition.
    pub fn scan(&self) -> Result<PlainTable> {
        let mut out = PlainTable::new(self.0.schema.clone());
        for p in &self.0.partitions {
            for r in p.scan() {
                out.push_encoded_unchecked(r?);
            }
        }
        Ok(out)
    }

    pub fn stats(&self) -> DfStats {
        let mut m = MemoryStats::default();
        for p in &self.0.partitions {
            m += p.memory_stats();
        }
        DfStats {
            row_count: self.0.rows,
            data_bytes: m.data_bytes,
            index_bytes: m.index_bytes,
            backptr_bytes: m.backptr_bytes,
            index_overhead_ratio: if m.data_bytes == 0 { 0.0 } else { m.index_bytes as f64 / m.data_bytes as f64 },
        }
    }

    /// Total lookups served by each partition of this version.
    pub fn lookup_counts(&self) -> Vec<u64> {
        self.0.partitions.iter().map(|p| p.lookup_count()).collect()
    }
}

impl std::fmt::Debug for IndexedDataFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IndexedDataFrame")
            .field("version", &self.0.version)
            .field("parent", &self.0.parent)
            .field("rows", &self.0.rows)
            .field("partitions", &self.0.partitions.len())
            .finish()
    }
}

/// Row indices of `table` per owning partition.
pub fn route(table: &PlainTable, schema: &Schema, col: usize, partitions: usize) -> Result<Vec<Vec<u32>>> {
    let mut buckets = vec![Vec::new(); partitions];
    for (i, r) in table.rows().enumerate() {
        let k = CanonicalKey::of_row(schema, r, col)?;
        buckets[k.route(partitions)].push(i as u32);
    }
    Ok(buckets)
}

fn insert_rows(p: &IndexedPartition, table: &PlainTable, schema: &Schema, col: usize, rows: &[u32]) -> Result<()> {
    let mut chunk = Vec::with_capacity(INSERT_CHUNK.min(rows.len()));
    for part in rows.chunks(INSERT_CHUNK) {
        chunk.clear();
        for &i in part {
            let r = table.row(i as usize);
            chunk.push((CanonicalKey::of_row(schema, r, col)?, r));
        }
        p.insert(&chunk)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rowstore::{ColumnType, Field};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema() -> Arc<Schema> {
        Arc::new(Schema::new(vec![Field::new("k", ColumnType::Int64), Field::new("v", ColumnType::Int32)]).unwrap())
    }

    fn table(rows: impl IntoIterator<Item = (i64, i32)>) -> PlainTable {
        PlainTable::from_rows(schema(), rows.into_iter().map(|(k, v)| vec![Value::Int64(k), Value::Int32(v)])).unwrap()
    }

    fn random_table(rng: &mut ChaCha8Rng, n: usize, keys: i64) -> PlainTable {
        table((0..n).map(|_| (rng.random_range(0..keys), rng.random())))
    }

    #[test]
    fn single_partition_holds_everything() {
        let t = table((0..100).map(|i| (i, i as i32)));
        let df = IndexedDataFrame::create_index(&t, 0, &DataFrameOptions::with_partitions(1)).unwrap();
        assert_eq!(df.partition(0).row_count(), 100);
        assert_eq!(df.version(), 1);
        assert_eq!(df.stats().row_count, 100);
    }

    #[test]
    fn scan_preserves_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_table(&mut rng, 10_000, 500);
        let df = IndexedDataFrame::create_index(&t, 0, &DataFrameOptions::with_partitions(8)).unwrap();
        assert!(df.scan().unwrap().same_multiset(&t));
        for p in df.partitions() {
            for r in p.scan() {
                let k = CanonicalKey::of_row(df.schema(), r.unwrap(), 0).unwrap();
                assert_eq!(k.route(8), p.id() as usize);
            }
        }
    }

    #[test]
    fn empty_table() {
        let df = IndexedDataFrame::create_index(&table([]), 0, &DataFrameOptions::with_partitions(4)).unwrap();
        assert!(df.get_rows(&Value::Int64(3)).unwrap().is_empty());
        assert_eq!(df.stats().index_overhead_ratio, 0.0);
    }

    #[test]
    fn invalid_arguments() {
        let t = table([(1, 1)]);
        assert_eq!(
            IndexedDataFrame::create_index(&t, 0, &DataFrameOptions::with_partitions(0)).unwrap_err(),
            Error::InvalidPartitionCount
        );
        assert_eq!(
            IndexedDataFrame::create_index(&t, 5, &DataFrameOptions::default()).unwrap_err(),
            Error::NoSuchColumn(5)
        );
        let df = IndexedDataFrame::create_index(&t, 0, &DataFrameOptions::default()).unwrap();
        assert!(matches!(df.get_rows(&Value::Int32(1)), Err(Error::KeyTypeMismatch { .. })));
        let other = PlainTable::new(Arc::new(Schema::new(vec![Field::new("x", ColumnType::Int64)]).unwrap()));
        assert!(matches!(df.append_rows(&other), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn get_rows_matches_scan_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_table(&mut rng, 5_000, 1_000);
        let df = IndexedDataFrame::create_index(&t, 0, &DataFrameOptions::with_partitions(6)).unwrap();
        let all = t.decode_all().unwrap();
        for _ in 0..500 {
            let k = rng.random_range(-10..1_010);
            let mut want: Vec<_> = all.iter().filter(|r| r[0] == Value::Int64(k)).cloned().collect();
            let mut got = df.get_rows(&Value::Int64(k)).unwrap().decode_all().unwrap();
            want.sort();
            got.sort();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn get_rows_touches_one_partition() {
        let t = table((0..1000).map(|i| (i, 0)));
        let df = IndexedDataFrame::create_index(&t, 0, &DataFrameOptions::with_partitions(8)).unwrap();
        let before = df.lookup_counts();
        df.get_rows(&Value::Int64(17)).unwrap();
        let after = df.lookup_counts();
        let touched = before.iter().zip(&after).filter(|(a, b)| a != b).count();
        assert_eq!(touched, 1);
    }

    #[test]
    fn divergent_children() {
        let base = table((0..1000).map(|i| (i % 50, i as i32)));
        let parent = IndexedDataFrame::create_index(&base, 0, &DataFrameOptions::with_partitions(4)).unwrap();
        let before = parent.get_rows(&Value::Int64(7)).unwrap();
        let d1 = table((0..100).map(|i| (i % 60, -1)));
        let d2 = table((0..80).map(|i| (i % 10, -2)));
        let a = parent.append_rows(&d1).unwrap();
        let b = parent.append_rows(&d2).unwrap();
        let mut want_a = base.clone();
        want_a.extend(&d1).unwrap();
        let mut want_b = base.clone();
        want_b.extend(&d2).unwrap();
        assert!(a.scan().unwrap().same_multiset(&want_a));
        assert!(b.scan().unwrap().same_multiset(&want_b));
        assert!(parent.scan().unwrap().same_multiset(&base));
        assert_eq!(parent.get_rows(&Value::Int64(7)).unwrap(), before);
        assert!(a.version() > parent.version() && b.version() > parent.version());
        assert_ne!(a.version(), b.version());
        assert_eq!(a.parent_version(), Some(1));
        // Newest rows come first for the child.
        assert_eq!(a.get_rows(&Value::Int64(7)).unwrap().values(0).unwrap()[1], Value::Int32(-1));
    }

    #[test]
    fn append_empty_and_many() {
        let df = IndexedDataFrame::create_index(&table([(1, 1)]), 0, &DataFrameOptions::with_partitions(3)).unwrap();
        let same = df.append_rows(&table([])).unwrap();
        assert!(same.version() > df.version());
        assert!(same.scan().unwrap().same_multiset(&df.scan().unwrap()));
        let mut v = same;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            v = v.append_rows(&random_table(&mut rng, 1_000, 10_000)).unwrap();
        }
        assert_eq!(v.row_count(), 1 + 200_000);
        assert_eq!(v.scan().unwrap().len(), 200_001);
    }

    #[test]
    fn overhead_ratio_drops_with_duplication() {
        let unique = table((0..20_000).map(|i| (i, 0)));
        let dup = table((0..20_000).map(|i| (i / 20, 0)));
        let opts = DataFrameOptions::with_partitions(4);
        let u = IndexedDataFrame::create_index(&unique, 0, &opts).unwrap().stats();
        let d = IndexedDataFrame::create_index(&dup, 0, &opts).unwrap().stats();
        assert_eq!(u.data_bytes, d.data_bytes);
        assert!(d.index_overhead_ratio < u.index_overhead_ratio);
    }
}
