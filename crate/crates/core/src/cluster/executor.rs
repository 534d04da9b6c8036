//! One executor: a worker thread owning its partitions, driven by messages.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{Receiver, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::cluster::replay_log::LogIndex;
use crate::error::{Error, Result};
use crate::partition::{CanonicalKey, IndexedPartition, PartitionSnapshot};
use crate::rowstore::{column_bytes, splice_rows, ColumnType, Schema, Value};
use crate::table::PlainTable;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    /// Rows whose index key equals `key`.
    Lookup { key: Value },
    /// Every row of the partition.
    Scan,
    /// Joins the rows staged by `shuffle` against the partition. Output rows
    /// are the probe row followed by the indexed row.
    Probe { shuffle: u64, probe_schema: Arc<Schema>, probe_col: usize },
    /// Builds `expected_version` from `parent` plus the rows staged by
    /// `shuffle`. Without a parent the partition starts empty.
    Insert { shuffle: u64, parent: Option<u64>, layout: Option<Layout> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub kind: TaskKind,
    pub partition: usize,
    pub expected_version: u64,
}

impl Task {
    pub fn lookup(partition: usize, version: u64, key: Value) -> Self {
        Task { kind: TaskKind::Lookup { key }, partition, expected_version: version }
    }

    pub fn scan(partition: usize, version: u64) -> Self {
        Task { kind: TaskKind::Scan, partition, expected_version: version }
    }

    /// The version that must already be hosted for this task to run.
    pub fn required_version(&self) -> Option<u64> {
        match self.kind {
            TaskKind::Insert { parent, .. } => parent,
            _ => Some(self.expected_version),
        }
    }

    pub(crate) fn shuffle(&self) -> Option<u64> {
        match self.kind {
            TaskKind::Probe { shuffle, .. } | TaskKind::Insert { shuffle, .. } => Some(shuffle),
            _ => None,
        }
    }
}

/// What a partition needs to be created from nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub schema: Arc<Schema>,
    pub col: usize,
    pub batch_bytes: usize,
}

pub(crate) enum Request {
    Deliver { shuffle: u64, partition: usize, seq: u32, rows: Arc<PlainTable> },
    Run { index: usize, task: Task },
    Rebuild { index: usize, partition: usize, version: u64, log: Arc<LogIndex> },
    Export { partition: usize },
    Install { partition: usize, snapshots: Vec<(u64, PartitionSnapshot)> },
    Drop { partition: usize },
    Release { shuffle: u64 },
    Shutdown,
}

pub(crate) struct Reply {
    pub executor: usize,
    pub body: ReplyBody,
}

pub(crate) enum ReplyBody {
    /// `rows` newly staged; zero for a duplicate envelope.
    Ack {
        partition: usize,
        rows: u64,
        duplicate: bool,
    },
    Output {
        index: usize,
        result: Result<PlainTable>,
    },
    Rebuilt {
        index: usize,
        result: Result<Duration>,
    },
    Snapshots(Vec<(u64, PartitionSnapshot)>),
}

#[derive(Default)]
struct Inbox {
    seen: HashSet<u32>,
    chunks: Vec<Arc<PlainTable>>,
}

pub(crate) struct Executor {
    id: usize,
    /// Hosted snapshots by partition, then version.
    store: HashMap<usize, BTreeMap<u64, PartitionSnapshot>>,
    inbox: HashMap<(u64, usize), Inbox>,
}

impl Executor {
    pub(crate) fn new(id: usize) -> Self {
        Executor { id, store: HashMap::new(), inbox: HashMap::new() }
    }

    pub(crate) fn run(mut self, rx: Receiver<Request>, tx: Sender<Reply>) {
        while let Ok(req) = rx.recv() {
            let body = match req {
                Request::Shutdown => break,
                Request::Deliver { shuffle, partition, seq, rows } => {
                    let inbox = self.inbox.entry((shuffle, partition)).or_default();
                    if inbox.seen.insert(seq) {
                        let n = rows.len() as u64;
                        inbox.chunks.push(rows);
                        Some(ReplyBody::Ack { partition, rows: n, duplicate: false })
                    } else {
                        Some(ReplyBody::Ack { partition, rows: 0, duplicate: true })
                    }
                }
                Request::Run { index, task } => {
                    let result = catch_unwind(AssertUnwindSafe(|| self.execute(&task)))
                        .unwrap_or_else(|p| Err(Error::ExecFailure(panic_message(p))));
                    Some(ReplyBody::Output { index, result })
                }
                Request::Rebuild { index, partition, version, log } => {
                    let start = Instant::now();
                    let result = catch_unwind(AssertUnwindSafe(|| log.rebuild_partition(partition, version)))
                        .unwrap_or_else(|p| Err(Error::ExecFailure(panic_message(p))))
                        .map(|snaps| {
                            self.store.entry(partition).or_default().extend(snaps);
                            start.elapsed()
                        });
                    Some(ReplyBody::Rebuilt { index, result })
                }
                Request::Export { partition } => {
                    let snaps = self.store.get(&partition).map(|m| m.iter().map(|(v, s)| (*v, s.clone())).collect());
                    Some(ReplyBody::Snapshots(snaps.unwrap_or_default()))
                }
                Request::Install { partition, snapshots } => {
                    self.store.entry(partition).or_default().extend(snapshots);
                    None
                }
                Request::Drop { partition } => {
                    self.store.remove(&partition);
                    None
                }
                Request::Release { shuffle } => {
                    self.inbox.retain(|(s, _), _| *s != shuffle);
                    None
                }
            };
            if let Some(body) = body {
                if tx.send(Reply { executor: self.id, body }).is_err() {
                    break;
                }
            }
        }
    }

    /// Accepts a task only if the exact version it expects is hosted here.
    fn stale_check(&self, partition: usize, version: u64) -> Result<&PartitionSnapshot> {
        let hosted = self.store.get(&partition);
        hosted.and_then(|m| m.get(&version)).ok_or_else(|| Error::StaleTask {
            partition,
            expected: version,
            found: hosted.and_then(|m| m.keys().next_back().copied()),
        })
    }

    fn staged(&self, shuffle: u64, partition: usize) -> &[Arc<PlainTable>] {
        self.inbox.get(&(shuffle, partition)).map(|i| &i.chunks[..]).unwrap_or(&[])
    }

    fn execute(&mut self, task: &Task) -> Result<PlainTable> {
        let p = task.partition;
        match &task.kind {
            TaskKind::Lookup { key } => {
                let snap = self.stale_check(p, task.expected_version)?;
                let ty = snap.schema().field(snap.key_col()).ty;
                if key.column_type() != Some(ty) {
                    return Err(Error::KeyTypeMismatch { expected: ty, found: key.column_type() });
                }
                let mut out = PlainTable::new(snap.schema().clone());
                let verify = matches!(key, Value::Utf8(_)).then_some(key);
                snap.for_each_match(CanonicalKey::from_value(key)?, verify, |r| out.push_encoded_unchecked(r))?;
                Ok(out)
            }
            TaskKind::Scan => {
                let snap = self.stale_check(p, task.expected_version)?;
                let mut out = PlainTable::new(snap.schema().clone());
                for r in snap.scan() {
                    out.push_encoded_unchecked(r?);
                }
                Ok(out)
            }
            TaskKind::Probe { shuffle, probe_schema, probe_col } => {
                let snap = self.stale_check(p, task.expected_version)?;
                probe(snap, probe_schema, self.staged(*shuffle, p), *probe_col)
            }
            TaskKind::Insert { shuffle, parent, layout } => {
                let (live, col) = match (parent, layout) {
                    (Some(v), _) => {
                        let snap = self.stale_check(p, *v)?;
                        (IndexedPartition::successor(snap), snap.key_col())
                    }
                    (None, Some(l)) => {
                        (IndexedPartition::new(p as u32, l.schema.clone(), l.col, l.batch_bytes)?, l.col)
                    }
                    (None, None) => return Err(Error::ExecFailure("insert needs a parent or a layout".into())),
                };
                let schema = live.schema().clone();
                for chunk in self.staged(*shuffle, p) {
                    let rows = chunk
                        .rows()
                        .map(|r| Ok((CanonicalKey::of_row(&schema, r, col)?, r)))
                        .collect::<Result<Vec<_>>>()?;
                    live.insert(&rows)?;
                }
                let snap = live.freeze();
                self.store.entry(p).or_default().insert(task.expected_version, snap);
                Ok(PlainTable::new(schema))
            }
        }
    }
}

fn probe(snap: &PartitionSnapshot, ps: &Schema, chunks: &[Arc<PlainTable>], probe_col: usize) -> Result<PlainTable> {
    let bs = snap.schema();
    let ty = bs.field(snap.key_col()).ty;
    if ps.field(probe_col).ty != ty {
        return Err(Error::KeyTypeMismatch { expected: ty, found: Some(ps.field(probe_col).ty) });
    }
    let mut out = PlainTable::new(Arc::new(Schema::joined(ps, bs)));
    for chunk in chunks {
        for row in chunk.rows() {
            let Some(cell) = column_bytes(ps, row, probe_col)? else { continue };
            let key = CanonicalKey::from_cell(ty, cell);
            let verify = (ty == ColumnType::Utf8).then_some(cell);
            snap.for_each_match_cell(key, verify, |b| out.with_row_buffer(|buf| splice_rows(ps, row, bs, b, buf)))?;
        }
    }
    Ok(out)
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "task panicked".into())
}
