//! Append-only log of index creation and appends, enough to rebuild any
//! version of any partition.
//!
//! File framing, repeated per record:
//!
//! ```text
//! [u32 LE record length][u32 LE CRC-32 of the record][record bytes]
//! ```
//!
//! Record bytes start with a tag:
//!
//! ```text
//! 1 CreateIndex: [u32 col][u32 partitions][u32 batch_bytes][u32 n][n bytes schema JSON]
//! 2 AppendBatch: [u64 version][u64 parent, 0 = none][u32 rows]([u16 len][len bytes encoded row])*
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::dataframe::{DataFrameOptions, IndexedDataFrame};
use crate::error::{Error, Result};
use crate::partition::{CanonicalKey, IndexedPartition, PartitionSnapshot};
use crate::rowstore::Schema;
use crate::table::PlainTable;

const TAG_CREATE: u8 = 1;
const TAG_APPEND: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    CreateIndex {
        schema: Schema,
        col: u32,
        partitions: u32,
        batch_bytes: u32,
    },
    /// The first append (version 1, no parent) holds the indexed table.
    AppendBatch {
        version: u64,
        parent: Option<u64>,
        rows: Vec<Vec<u8>>,
    },
}

impl LogRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            LogRecord::CreateIndex { schema, col, partitions, batch_bytes } => {
                let json = serde_json::to_vec(schema).expect("schemas serialize");
                out.push(TAG_CREATE);
                out.extend_from_slice(&col.to_le_bytes());
                out.extend_from_slice(&partitions.to_le_bytes());
                out.extend_from_slice(&batch_bytes.to_le_bytes());
                out.extend_from_slice(&(json.len() as u32).to_le_bytes());
                out.extend_from_slice(&json);
            }
            LogRecord::AppendBatch { version, parent, rows } => {
                out.push(TAG_APPEND);
                out.extend_from_slice(&version.to_le_bytes());
                out.extend_from_slice(&parent.unwrap_or(0).to_le_bytes());
                out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
                for r in rows {
                    out.extend_from_slice(&(r.len() as u16).to_le_bytes());
                    out.extend_from_slice(r);
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, at: 0 };
        let rec = match r.u8()? {
            TAG_CREATE => {
                let col = r.u32()?;
                let partitions = r.u32()?;
                let batch_bytes = r.u32()?;
                let n = r.u32()? as usize;
                let schema =
                    serde_json::from_slice(r.take(n)?).map_err(|e| Error::ReplayLog(format!("schema: {e}")))?;
                LogRecord::CreateIndex { schema, col, partitions, batch_bytes }
            }
            TAG_APPEND => {
                let version = r.u64()?;
                let parent = Some(r.u64()?).filter(|&p| p != 0);
                let n = r.u32()? as usize;
                let mut rows = Vec::with_capacity(n.min(1 << 20));
                for _ in 0..n {
                    let len = r.u16()? as usize;
                    rows.push(r.take(len)?.to_vec());
                }
                LogRecord::AppendBatch { version, parent, rows }
            }
            t => return Err(Error::ReplayLog(format!("unknown record tag {t}"))),
        };
        if r.at != bytes.len() {
            return Err(Error::ReplayLog("trailing bytes in record".into()));
        }
        Ok(rec)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::ReplayLog("record truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Encoded records in append order. Cloning shares the record bytes.
#[derive(Debug, Clone, Default)]
pub struct ReplayLog {
    records: Vec<Arc<[u8]>>,
}

impl ReplayLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, rec: &LogRecord) {
        self.records.push(rec.encode().into());
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = Result<LogRecord>> + '_ {
        self.records.iter().map(|r| LogRecord::decode(r))
    }

    /// Framed file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            out.extend_from_slice(&(r.len() as u32).to_le_bytes());
            out.extend_from_slice(&crc32fast::hash(r).to_le_bytes());
            out.extend_from_slice(r);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, at: 0 };
        let mut records = Vec::new();
        while c.at < bytes.len() {
            let i = records.len();
            let len = c.u32().map_err(|_| Error::ReplayLog(format!("record {i}: truncated header")))? as usize;
            let crc = c.u32().map_err(|_| Error::ReplayLog(format!("record {i}: truncated header")))?;
            let body = c.take(len).map_err(|_| Error::ReplayLog(format!("record {i}: truncated body")))?;
            if crc32fast::hash(body) != crc {
                return Err(Error::ReplayLog(format!("record {i}: checksum mismatch")));
            }
            LogRecord::decode(body)?;
            records.push(Arc::from(body));
        }
        Ok(ReplayLog { records })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Decoded view for rebuilding.
    pub fn index(&self) -> Result<LogIndex> {
        let mut create = None;
        let mut appends = BTreeMap::new();
        for rec in self.records() {
            match rec? {
                LogRecord::CreateIndex { schema, col, partitions, batch_bytes } => {
                    if create.is_some() {
                        return Err(Error::ReplayLog("more than one CreateIndex record".into()));
                    }
                    create = Some((Arc::new(schema), col as usize, partitions as usize, batch_bytes as usize));
                }
                LogRecord::AppendBatch { version, parent, rows } => {
                    if create.is_none() {
                        return Err(Error::ReplayLog("AppendBatch before CreateIndex".into()));
                    }
                    if parent.is_some_and(|p| !appends.contains_key(&p)) {
                        return Err(Error::ReplayLog(format!("version {version} has unknown parent {parent:?}")));
                    }
                    if appends.insert(version, (parent, rows)).is_some() {
                        return Err(Error::ReplayLog(format!("version {version} logged twice")));
                    }
                }
            }
        }
        let (schema, col, partitions, batch_bytes) = create.ok_or_else(|| Error::ReplayLog("empty log".into()))?;
        Ok(LogIndex { schema, col, partitions, batch_bytes, appends })
    }
}

/// A decoded log: table layout plus every version's delta.
#[derive(Debug)]
pub struct LogIndex {
    pub schema: Arc<Schema>,
    pub col: usize,
    pub partitions: usize,
    pub batch_bytes: usize,
    appends: BTreeMap<u64, (Option<u64>, Vec<Vec<u8>>)>,
}

impl LogIndex {
    pub fn versions(&self) -> impl Iterator<Item = (u64, Option<u64>)> + '_ {
        self.appends.iter().map(|(v, (p, _))| (*v, *p))
    }

    pub fn latest(&self) -> Option<u64> {
        self.appends.keys().next_back().copied()
    }

    /// Versions from the root down to `version`.
    pub fn chain(&self, version: u64) -> Result<Vec<u64>> {
        let mut chain = Vec::new();
        let mut at = Some(version);
        while let Some(v) = at {
            let (parent, _) = self.appends.get(&v).ok_or(Error::UnknownVersion(v))?;
            chain.push(v);
            at = *parent;
        }
        chain.reverse();
        Ok(chain)
    }

    fn delta(&self, v: u64) -> &[Vec<u8>] {
        &self.appends[&v].1
    }

    fn table(&self, v: u64) -> Result<PlainTable> {
        let mut t = PlainTable::new(self.schema.clone());
        for r in self.delta(v) {
            t.push_encoded(r)?;
        }
        Ok(t)
    }

    /// Rebuilds one partition for every version along the chain to
    /// `version`.
    pub fn rebuild_partition(&self, pid: usize, version: u64) -> Result<Vec<(u64, PartitionSnapshot)>> {
        let mut out: Vec<(u64, PartitionSnapshot)> = Vec::new();
        for v in self.chain(version)? {
            let live = match out.last() {
                None => IndexedPartition::new(pid as u32, self.schema.clone(), self.col, self.batch_bytes)?,
                Some((_, snap)) => IndexedPartition::successor(snap),
            };
            let mut rows = Vec::new();
            for r in self.delta(v) {
                let k = CanonicalKey::of_row(&self.schema, r, self.col)?;
                if k.route(self.partitions) == pid {
                    rows.push((k, &r[..]));
                }
            }
            live.insert(&rows)?;
            out.push((v, live.freeze()));
        }
        Ok(out)
    }

    /// Rebuilds a whole dataframe version, keeping logged version numbers.
    pub fn rebuild(&self, version: u64) -> Result<IndexedDataFrame> {
        let chain = self.chain(version)?;
        let opts = DataFrameOptions { partitions: self.partitions, batch_bytes: self.batch_bytes };
        let mut df = IndexedDataFrame::create_index(&self.table(chain[0])?, self.col, &opts)?;
        for &v in &chain[1..] {
            df = df.append_rows_as(&self.table(v)?, v)?;
        }
        Ok(df)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rowstore::{encode_row, ColumnType, Field, Value};

    fn schema() -> Schema {
        Schema::new(vec![Field::new("k", ColumnType::Int32)]).unwrap()
    }

    #[test]
    fn golden_framing() {
        let mut log = ReplayLog::new();
        log.append(&LogRecord::AppendBatch { version: 2, parent: Some(1), rows: vec![vec![7, 0, 0, 0]] });
        let bytes = log.to_bytes();
        let body: Vec<u8> =
            [vec![2], 2u64.to_le_bytes().to_vec(), 1u64.to_le_bytes().to_vec(), vec![1, 0, 0, 0, 4, 0, 7, 0, 0, 0]]
                .concat();
        assert_eq!(body.len(), 27);
        assert_eq!(&bytes[..4], &[27, 0, 0, 0]);
        assert_eq!(&bytes[4..8], &crc32fast::hash(&body).to_le_bytes());
        assert_eq!(&bytes[8..], &body[..]);
        // CRC-32 (IEEE) check value.
        assert_eq!(crc32fast::hash(b"123456789"), 0xcbf4_3926);
    }

    #[test]
    fn round_trip_and_corruption() {
        let mut log = ReplayLog::new();
        log.append(&LogRecord::CreateIndex { schema: schema(), col: 0, partitions: 3, batch_bytes: 4096 });
        log.append(&LogRecord::AppendBatch { version: 1, parent: None, rows: vec![vec![1, 0, 0, 0]] });
        let bytes = log.to_bytes();
        let back = ReplayLog::from_bytes(&bytes).unwrap();
        assert_eq!(
            back.records().map(Result::unwrap).collect::<Vec<_>>(),
            log.records().map(Result::unwrap).collect::<Vec<_>>()
        );

        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        assert!(matches!(ReplayLog::from_bytes(&bad), Err(Error::ReplayLog(m)) if m.contains("checksum")));
        assert!(ReplayLog::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn rebuild_matches_direct_build() {
        let s = Arc::new(schema());
        let rows = |r: std::ops::Range<i32>| -> Vec<Vec<u8>> {
            r.map(|i| encode_row(&s, &[Value::Int32(i % 7)], 1024).unwrap().into_bytes()).collect()
        };
        let mut log = ReplayLog::new();
        log.append(&LogRecord::CreateIndex { schema: (*s).clone(), col: 0, partitions: 3, batch_bytes: 4096 });
        log.append(&LogRecord::AppendBatch { version: 1, parent: None, rows: rows(0..50) });
        log.append(&LogRecord::AppendBatch { version: 2, parent: Some(1), rows: rows(50..60) });
        log.append(&LogRecord::AppendBatch { version: 3, parent: Some(1), rows: rows(60..65) });
        let idx = log.index().unwrap();
        assert_eq!(idx.chain(3).unwrap(), vec![1, 3]);
        let df = idx.rebuild(3).unwrap();
        assert_eq!(df.version(), 3);
        assert_eq!(df.row_count(), 55);
        let parts: u64 = (0..3).map(|p| idx.rebuild_partition(p, 2).unwrap().last().unwrap().1.row_count()).sum();
        assert_eq!(parts, 60);
        assert_eq!(idx.chain(9), Err(Error::UnknownVersion(9)));
    }
}
