//! A simulated cluster: executor threads hosting indexed partitions, a
//! single-threaded scheduler, an in-memory message fabric and replay-based
//! recovery.
//!
//! The scheduler prefers executors that host a task's partition. If the
//! host is stalled for longer than the locality wait, the task moves to
//! another executor, which first rebuilds the partition from the replay log
//! and takes over ownership. Every task carries the version it expects and
//! executors refuse tasks for versions they do not host.
//!
//! ```
//! use std::sync::Arc;
//! use ixframe::cluster::{Cluster, ClusterConfig};
//! use ixframe::rowstore::{ColumnType, Field, Schema, Value};
//! use ixframe::table::PlainTable;
//!
//! let schema = Arc::new(Schema::new(vec![Field::new("k", ColumnType::Int64)]).unwrap());
//! let t = PlainTable::from_rows(schema, (0..100).map(|i| vec![Value::Int64(i % 10)])).unwrap();
//! let mut c = Cluster::start(ClusterConfig { executors: 2, partitions: 4, ..Default::default() }).unwrap();
//! let v1 = c.create_index(&t, 0).unwrap();
//! assert_eq!(c.lookup(v1, &Value::Int64(3)).unwrap().len(), 10);
//! c.kill_executor(0).unwrap();
//! assert_eq!(c.lookup(v1, &Value::Int64(3)).unwrap().len(), 10);
//! ```

mod executor;
pub mod replay_log;

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use executor::{Layout, Task, TaskKind};
pub use replay_log::{LogIndex, LogRecord, ReplayLog};

use crate::dataframe::default_partitions;
use crate::error::{Error, Result};
use crate::partition::CanonicalKey;
use crate::rowstore::{column_bytes, Schema, Value};
use crate::table::PlainTable;
use executor::{Executor, Reply, ReplyBody, Request};

/// Simulated transport cost. Only reported, never slept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkModel {
    pub per_message: Duration,
    pub bytes_per_sec: f64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel { per_message: Duration::from_micros(500), bytes_per_sec: 1e9 }
    }
}

impl NetworkModel {
    pub fn cost(&self, bytes: u64) -> Duration {
        self.per_message + Duration::from_secs_f64(bytes as f64 / self.bytes_per_sec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub executors: usize,
    pub partitions: usize,
    pub batch_bytes: usize,
    /// Scheduling ticks a task waits for a busy host before going remote.
    pub locality_wait: u32,
    pub seed: u64,
    pub network: NetworkModel,
    /// Rows per shuffle envelope.
    pub envelope_rows: usize,
    /// Probability that an envelope is sent twice, to exercise dedup.
    pub duplicate_rate: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            executors: 4,
            partitions: default_partitions(),
            batch_bytes: crate::rowstore::DEFAULT_BATCH_BYTES,
            locality_wait: 3,
            seed: 0,
            network: NetworkModel::default(),
            envelope_rows: 4096,
            duplicate_rate: 0.0,
        }
    }
}

/// One replay-based rebuild.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub partition: usize,
    pub version: u64,
    pub executor: usize,
    pub latency: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterStats {
    pub tasks: u64,
    pub local_tasks: u64,
    pub remote_tasks: u64,
    pub locality_wait_ticks: u64,
    pub stale_rejections: u64,
    pub dropped_replicas: u64,
    pub lost_partitions: u64,
    pub recoveries: Vec<Recovery>,
    pub messages: u64,
    pub bytes_sent: u64,
    pub network_time: Duration,
    pub envelopes: u64,
    pub duplicate_envelopes: u64,
    pub delivered_rows: u64,
    /// Hash of every placement decision, for reproducibility checks.
    pub schedule_digest: u64,
}

impl ClusterStats {
    pub fn locality(&self) -> f64 {
        if self.tasks == 0 {
            1.0
        } else {
            self.local_tasks as f64 / self.tasks as f64
        }
    }
}

/// Rows staged by a shuffle, per target partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShuffleReceipt {
    pub id: u64,
    pub counts: Vec<u64>,
}

struct ExecutorSlot {
    tx: Sender<Request>,
    thread: Option<JoinHandle<()>>,
    alive: bool,
    stalled_until: u64,
}

#[derive(Debug, Clone, Default)]
struct Placement {
    owner: Option<usize>,
    replicas: BTreeSet<usize>,
}

struct Table {
    layout: Layout,
    /// version -> parent
    versions: BTreeMap<u64, Option<u64>>,
    next_version: u64,
}

pub struct Cluster {
    cfg: ClusterConfig,
    slots: Vec<ExecutorSlot>,
    reply_tx: Sender<Reply>,
    reply_rx: Receiver<Reply>,
    placement: Vec<Placement>,
    table: Option<Table>,
    log: ReplayLog,
    log_index: Option<Arc<LogIndex>>,
    shuffles: BTreeMap<u64, Vec<Vec<Arc<PlainTable>>>>,
    next_shuffle: u64,
    rng: ChaCha8Rng,
    tick: u64,
    stats: ClusterStats,
    /// Owners that refused a task for a version they lack.
    needs_rebuild: BTreeSet<(usize, usize)>,
}

const REPLY_TIMEOUT: Duration = Duration::from_secs(600);

impl Cluster {
    pub fn start(cfg: ClusterConfig) -> Result<Self> {
        if cfg.executors == 0 {
            return Err(Error::InvalidSpec("a cluster needs at least one executor".into()));
        }
        if cfg.partitions == 0 {
            return Err(Error::InvalidPartitionCount);
        }
        if cfg.envelope_rows == 0 || !(0.0..=1.0).contains(&cfg.duplicate_rate) {
            return Err(Error::InvalidSpec("bad envelope size or duplicate rate".into()));
        }
        let (reply_tx, reply_rx) = mpsc::channel();
        let mut c = Cluster {
            slots: Vec::new(),
            reply_tx,
            reply_rx,
            placement: (0..cfg.partitions)
                .map(|p| Placement { owner: Some(p % cfg.executors), replicas: BTreeSet::new() })
                .collect(),
            table: None,
            log: ReplayLog::new(),
            log_index: None,
            shuffles: BTreeMap::new(),
            next_shuffle: 1,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            tick: 0,
            stats: ClusterStats::default(),
            needs_rebuild: BTreeSet::new(),
            cfg,
        };
        for id in 0..c.cfg.executors {
            let slot = c.spawn(id)?;
            c.slots.push(slot);
        }
        Ok(c)
    }

    fn spawn(&self, id: usize) -> Result<ExecutorSlot> {
        let (tx, rx) = mpsc::channel();
        let reply = self.reply_tx.clone();
        let thread = std::thread::Builder::new()
            .name(format!("executor-{id}"))
            .spawn(move || Executor::new(id).run(rx, reply))?;
        Ok(ExecutorSlot { tx, thread: Some(thread), alive: true, stalled_until: 0 })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &ClusterStats {
        &self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = ClusterStats::default();
    }

    pub fn log(&self) -> &ReplayLog {
        &self.log
    }

    pub fn executors(&self) -> usize {
        self.slots.len()
    }

    pub fn is_alive(&self, id: usize) -> bool {
        self.slots.get(id).is_some_and(|s| s.alive)
    }

    /// Owner and replicas of a partition. The owner is `None` while the
    /// partition is lost.
    pub fn placement(&self, partition: usize) -> (Option<usize>, Vec<usize>) {
        let p = &self.placement[partition];
        (p.owner, p.replicas.iter().copied().collect())
    }

    /// Partitions owned by `executor`.
    pub fn hosted(&self, executor: usize) -> Vec<usize> {
        (0..self.placement.len()).filter(|&p| self.placement[p].owner == Some(executor)).collect()
    }

    /// Known versions and their parents.
    pub fn versions(&self) -> Vec<(u64, Option<u64>)> {
        self.table.iter().flat_map(|t| t.versions.iter().map(|(v, p)| (*v, *p))).collect()
    }

    pub fn schema(&self) -> Option<&Arc<Schema>> {
        self.table.as_ref().map(|t| &t.layout.schema)
    }

    fn table(&self) -> Result<&Table> {
        self.table.as_ref().ok_or_else(|| Error::UnknownTable("cluster has no index yet".into()))
    }

    fn check_version(&self, version: u64) -> Result<()> {
        match self.table()?.versions.contains_key(&version) {
            true => Ok(()),
            false => Err(Error::UnknownVersion(version)),
        }
    }

    /// Hash-partitions `table` on `col` across the executors. Returns
    /// version 1.
    pub fn create_index(&mut self, table: &PlainTable, col: usize) -> Result<u64> {
        if self.table.is_some() {
            return Err(Error::InvalidSpec("cluster already holds an index".into()));
        }
        let schema = table.schema();
        if schema.is_empty() {
            return Err(Error::EmptySchema);
        }
        if col >= schema.len() {
            return Err(Error::NoSuchColumn(col));
        }
        let schema = Arc::new(schema.as_ref().clone().with_index_col(Some(col))?);
        crate::partition::IndexedPartition::new(0, schema.clone(), col, self.cfg.batch_bytes)?;
        let layout = Layout { schema: schema.clone(), col, batch_bytes: self.cfg.batch_bytes };
        let (receipt, rows) = self.stage(table, &schema, col, true)?;
        let tasks: Vec<Task> = (0..self.cfg.partitions)
            .map(|p| Task {
                kind: TaskKind::Insert { shuffle: receipt.id, parent: None, layout: Some(layout.clone()) },
                partition: p,
                expected_version: 1,
            })
            .collect();
        let results = self.run_stage(&tasks);
        self.release(receipt.id);
        first_error(results)?;
        self.log.append(&LogRecord::CreateIndex {
            schema: (*schema).clone(),
            col: col as u32,
            partitions: self.cfg.partitions as u32,
            batch_bytes: self.cfg.batch_bytes as u32,
        });
        self.log.append(&LogRecord::AppendBatch { version: 1, parent: None, rows });
        self.log_index = Some(Arc::new(self.log.index()?));
        self.table = Some(Table { layout, versions: BTreeMap::from([(1, None)]), next_version: 2 });
        Ok(1)
    }

    /// A new version holding `parent`'s rows plus `table`'s.
    pub fn append(&mut self, parent: u64, table: &PlainTable) -> Result<u64> {
        self.check_version(parent)?;
        let t = self.table()?;
        let (schema, col) = (t.layout.schema.clone(), t.layout.col);
        if !table.schema().same_columns(&schema) {
            return Err(Error::SchemaMismatch("appended rows do not match the indexed columns".into()));
        }
        let version = t.next_version;
        self.table.as_mut().unwrap().next_version += 1;
        let (receipt, rows) = self.stage(table, &schema, col, true)?;
        let tasks: Vec<Task> = (0..self.cfg.partitions)
            .map(|p| Task {
                kind: TaskKind::Insert { shuffle: receipt.id, parent: Some(parent), layout: None },
                partition: p,
                expected_version: version,
            })
            .collect();
        let results = self.run_stage(&tasks);
        self.release(receipt.id);
        first_error(results)?;
        self.log.append(&LogRecord::AppendBatch { version, parent: Some(parent), rows });
        self.log_index = Some(Arc::new(self.log.index()?));
        self.table.as_mut().unwrap().versions.insert(version, Some(parent));
        Ok(version)
    }

    /// Rows of `version` whose index key equals `key`.
    pub fn lookup(&mut self, version: u64, key: &Value) -> Result<PlainTable> {
        self.check_version(version)?;
        let t = self.table()?;
        let expected = t.layout.schema.field(t.layout.col).ty;
        match key.column_type() {
            None => return Err(Error::NullIndexKey),
            Some(ty) if ty != expected => return Err(Error::KeyTypeMismatch { expected, found: Some(ty) }),
            _ => {}
        }
        let p = CanonicalKey::from_value(key)?.route(self.cfg.partitions);
        let mut r = self.run_stage(&[Task::lookup(p, version, key.clone())]);
        r.pop().expect("one task")
    }

    /// Every row of `version`, partition by partition.
    pub fn scan(&mut self, version: u64) -> Result<PlainTable> {
        self.check_version(version)?;
        let schema = self.table()?.layout.schema.clone();
        let tasks: Vec<Task> = (0..self.cfg.partitions).map(|p| Task::scan(p, version)).collect();
        concat(&schema, self.run_stage(&tasks))
    }

    /// Joins `probe` on `probe_col` against `version`. Output rows are the
    /// probe row followed by the indexed row.
    pub fn join(&mut self, version: u64, probe: &PlainTable, probe_col: usize) -> Result<PlainTable> {
        self.check_version(version)?;
        let t = self.table()?;
        let build = t.layout.schema.clone();
        let ps = probe.schema().clone();
        if probe_col >= ps.len() {
            return Err(Error::NoSuchColumn(probe_col));
        }
        let (want, got) = (build.field(t.layout.col).ty, ps.field(probe_col).ty);
        if want != got {
            return Err(Error::KeyTypeMismatch { expected: want, found: Some(got) });
        }
        let (receipt, _) = self.stage(probe, &ps, probe_col, false)?;
        let tasks: Vec<Task> = (0..self.cfg.partitions)
            .filter(|&p| receipt.counts[p] > 0)
            .map(|p| Task {
                kind: TaskKind::Probe { shuffle: receipt.id, probe_schema: ps.clone(), probe_col },
                partition: p,
                expected_version: version,
            })
            .collect();
        let results = self.run_stage(&tasks);
        self.release(receipt.id);
        concat(&Arc::new(Schema::joined(&ps, &build)), results)
    }

    /// Routes `table` on `col` and delivers every row to the current owner of
    /// its partition. The staged rows stay available to probe and insert
    /// tasks that name the returned shuffle id.
    pub fn shuffle(&mut self, table: &PlainTable, col: usize) -> Result<ShuffleReceipt> {
        let schema = table.schema().clone();
        if col >= schema.len() {
            return Err(Error::NoSuchColumn(col));
        }
        let (mut receipt, _) = self.stage(table, &schema, col, false)?;
        let mut acks = 0;
        for p in 0..self.cfg.partitions {
            if receipt.counts[p] == 0 {
                continue;
            }
            let owner = match self.placement[p].owner.filter(|&e| self.slots[e].alive) {
                Some(e) => e,
                None => self.reassign(p, &BTreeSet::new())?,
            };
            acks += self.deliver(receipt.id, p, owner);
        }
        let delivered = self.collect_acks(acks)?;
        receipt.counts = delivered;
        Ok(receipt)
    }

    /// Drops the rows staged by a shuffle.
    pub fn release(&mut self, shuffle: u64) {
        self.shuffles.remove(&shuffle);
        for s in self.slots.iter().filter(|s| s.alive) {
            let _ = s.tx.send(Request::Release { shuffle });
        }
    }

    /// Runs tasks through the scheduler; results are in task order.
    pub fn submit(&mut self, tasks: &[Task]) -> Vec<Result<PlainTable>> {
        self.run_stage(tasks)
    }

    /// Runs one task on `executor`, bypassing placement. A stale or missing
    /// partition comes back as [`Error::StaleTask`].
    pub fn submit_to(&mut self, executor: usize, task: Task) -> Result<PlainTable> {
        if !self.is_alive(executor) {
            return Err(Error::UnknownExecutor(executor));
        }
        let mut acks = 0;
        if let Some(s) = task.shuffle() {
            acks = self.deliver(s, task.partition, executor);
        }
        self.send(executor, Request::Run { index: 0, task }, 64)?;
        let mut out = None;
        self.collect(acks + 1, |_, body| {
            if let ReplyBody::Output { result, .. } = body {
                out = Some(result);
            }
        })?;
        out.expect("one output")
    }

    /// Stops an executor thread; partitions it owned are lost until a task
    /// needs them. Killing a dead executor does nothing.
    pub fn kill_executor(&mut self, id: usize) -> Result<()> {
        let slot = self.slots.get_mut(id).ok_or(Error::UnknownExecutor(id))?;
        if !slot.alive {
            return Ok(());
        }
        slot.alive = false;
        let _ = slot.tx.send(Request::Shutdown);
        if let Some(h) = slot.thread.take() {
            let _ = h.join();
        }
        for p in &mut self.placement {
            if p.owner == Some(id) {
                p.owner = None;
                self.stats.lost_partitions += 1;
            }
            p.replicas.remove(&id);
        }
        self.needs_rebuild.retain(|&(_, e)| e != id);
        Ok(())
    }

    /// Starts a fresh, empty executor in a dead slot.
    pub fn restart_executor(&mut self, id: usize) -> Result<()> {
        match self.slots.get(id) {
            None => Err(Error::UnknownExecutor(id)),
            Some(s) if s.alive => Ok(()),
            Some(_) => {
                self.slots[id] = self.spawn(id)?;
                Ok(())
            }
        }
    }

    /// Keeps `id` busy for the next `ticks` scheduling decisions.
    pub fn stall_executor(&mut self, id: usize, ticks: u64) -> Result<()> {
        let tick = self.tick;
        let slot = self.slots.get_mut(id).filter(|s| s.alive).ok_or(Error::UnknownExecutor(id))?;
        slot.stalled_until = tick + ticks;
        Ok(())
    }

    /// Copies every snapshot the owner of `partition` currently hosts to
    /// `executor`, which becomes a read replica. Later appends do not reach
    /// replicas.
    pub fn replicate_to(&mut self, partition: usize, executor: usize) -> Result<()> {
        if partition >= self.placement.len() {
            return Err(Error::InvalidSpec(format!("no partition {partition}")));
        }
        if !self.is_alive(executor) {
            return Err(Error::UnknownExecutor(executor));
        }
        let owner = self.placement[partition]
            .owner
            .filter(|&e| self.slots[e].alive)
            .ok_or_else(|| Error::InvalidSpec(format!("partition {partition} is lost")))?;
        if owner == executor {
            return Ok(());
        }
        self.slots[owner].tx.send(Request::Export { partition }).map_err(|_| Error::UnknownExecutor(owner))?;
        let mut snapshots = Vec::new();
        self.collect(1, |_, body| {
            if let ReplyBody::Snapshots(s) = body {
                snapshots = s;
            }
        })?;
        let bytes = snapshots.last().map_or(0, |(_, s)| s.memory_stats().data_bytes);
        self.send(executor, Request::Install { partition, snapshots }, bytes)?;
        self.placement[partition].replicas.insert(executor);
        Ok(())
    }

    /// Eagerly rebuilds `version` of a partition on its owner, assigning a new
    /// owner if it is lost.
    pub fn recover_partition(&mut self, partition: usize, version: u64) -> Result<Duration> {
        self.check_version(version)?;
        let owner = match self.placement[partition].owner.filter(|&e| self.slots[e].alive) {
            Some(e) => e,
            None => self.reassign(partition, &BTreeSet::new())?,
        };
        self.rebuild(0, partition, version, owner)?;
        let mut latency = Ok(Duration::ZERO);
        self.collect(1, |_, body| {
            if let ReplyBody::Rebuilt { result, .. } = body {
                latency = result;
            }
        })?;
        let latency = latency?;
        self.stats.recoveries.push(Recovery { partition, version, executor: owner, latency });
        Ok(latency)
    }

    // ---- scheduling ----

    fn run_stage(&mut self, tasks: &[Task]) -> Vec<Result<PlainTable>> {
        let mut results: Vec<Option<Result<PlainTable>>> = vec![None; tasks.len()];
        let mut attempts = vec![0usize; tasks.len()];
        let mut pending: Vec<usize> = (0..tasks.len()).collect();
        let max_attempts = 2 * self.slots.len() + 4;
        while !pending.is_empty() {
            let mut inflight: BTreeMap<usize, usize> = BTreeMap::new();
            let mut expected = 0;
            for &i in &pending {
                attempts[i] += 1;
                if attempts[i] > max_attempts {
                    results[i] = Some(Err(task_failed(i, "gave up after repeated rescheduling")));
                    continue;
                }
                match self.dispatch(i, &tasks[i]) {
                    Ok((e, replies)) => {
                        inflight.insert(i, e);
                        expected += replies;
                    }
                    Err(err) => results[i] = Some(Err(err)),
                }
            }
            let mut outputs: BTreeMap<usize, (usize, Result<PlainTable>)> = BTreeMap::new();
            let mut rebuild_errors: BTreeMap<usize, Error> = BTreeMap::new();
            let mut recoveries = Vec::new();
            let collected = self.collect(expected, |executor, body| match body {
                ReplyBody::Output { index, result } => {
                    outputs.insert(index, (executor, result));
                }
                ReplyBody::Rebuilt { index, result } => match result {
                    Ok(latency) => recoveries.push((index, executor, latency)),
                    Err(e) => {
                        rebuild_errors.insert(index, e);
                    }
                },
                _ => {}
            });
            if let Err(e) = collected {
                for i in inflight.keys() {
                    results[*i] = Some(Err(task_failed(*i, &e.to_string())));
                }
                break;
            }
            for (i, executor, latency) in recoveries {
                let t = &tasks[i];
                let version = t.required_version().unwrap_or(t.expected_version);
                self.stats.recoveries.push(Recovery { partition: t.partition, version, executor, latency });
            }
            pending.clear();
            for (i, (executor, result)) in outputs {
                if let Some(e) = rebuild_errors.remove(&i) {
                    results[i] = Some(Err(task_failed(i, &format!("rebuild failed: {e}"))));
                    continue;
                }
                match result {
                    Ok(t) => results[i] = Some(Ok(t)),
                    Err(Error::StaleTask { partition, .. }) => {
                        self.stats.stale_rejections += 1;
                        let pl = &mut self.placement[partition];
                        if pl.owner == Some(executor) {
                            self.needs_rebuild.insert((partition, executor));
                        } else if pl.replicas.remove(&executor) {
                            self.stats.dropped_replicas += 1;
                            let _ = self.slots[executor].tx.send(Request::Drop { partition });
                        }
                        pending.push(i);
                    }
                    Err(e) => results[i] = Some(Err(task_failed(i, &e.to_string()))),
                }
            }
        }
        results.into_iter().enumerate().map(|(i, r)| r.unwrap_or_else(|| Err(task_failed(i, "not run")))).collect()
    }

    /// Picks an executor for a task and sends it everything it needs.
    /// Returns the executor and the number of replies to expect.
    fn dispatch(&mut self, index: usize, task: &Task) -> Result<(usize, usize)> {
        let p = task.partition;
        if p >= self.placement.len() {
            return Err(task_failed(index, &format!("no partition {p}")));
        }
        self.tick += 1;
        self.stats.tasks += 1;
        let writes = matches!(task.kind, TaskKind::Insert { .. });
        let pl = &self.placement[p];
        let mut hosts: Vec<usize> = pl.owner.into_iter().filter(|&e| self.slots[e].alive).collect();
        if !writes {
            hosts.extend(pl.replicas.iter().copied().filter(|&e| self.slots[e].alive));
        }
        let mut chosen = None;
        if !hosts.is_empty() {
            let pick = hosts[self.rng.random_range(0..hosts.len())];
            let mut waited = 0;
            while self.slots[pick].stalled_until > self.tick && waited < self.cfg.locality_wait {
                self.tick += 1;
                waited += 1;
                self.stats.locality_wait_ticks += 1;
            }
            if self.slots[pick].stalled_until <= self.tick {
                chosen = Some(pick);
            }
        }
        let (executor, local) = match chosen {
            Some(e) => (e, true),
            None => (self.reassign(p, &hosts.iter().copied().collect())?, false),
        };
        if local {
            self.stats.local_tasks += 1;
        } else {
            self.stats.remote_tasks += 1;
        }
        let mut h = std::hash::DefaultHasher::new();
        (self.stats.schedule_digest, index, p, executor, local).hash(&mut h);
        self.stats.schedule_digest = h.finish();

        let mut replies = 1;
        if !local || self.needs_rebuild.remove(&(p, executor)) {
            if let Some(v) = task.required_version() {
                self.rebuild(index, p, v, executor)?;
                replies += 1;
            }
        }
        if let Some(s) = task.shuffle() {
            replies += self.deliver(s, p, executor);
        }
        self.send(executor, Request::Run { index, task: task.clone() }, 64)?;
        Ok((executor, replies))
    }

    /// Moves ownership of `p` to a live executor, preferring one that is
    /// not stalled and not in `avoid`.
    fn reassign(&mut self, p: usize, avoid: &BTreeSet<usize>) -> Result<usize> {
        let alive: Vec<usize> = (0..self.slots.len()).filter(|&e| self.slots[e].alive).collect();
        if alive.is_empty() {
            return Err(Error::NoSurvivingExecutor);
        }
        let free: Vec<usize> =
            alive.iter().copied().filter(|e| !avoid.contains(e) && self.slots[*e].stalled_until <= self.tick).collect();
        let pool = if free.is_empty() { &alive } else { &free };
        let pick = pool[self.rng.random_range(0..pool.len())];
        let pl = &mut self.placement[p];
        if let Some(old) = pl.owner.filter(|&o| o != pick) {
            if self.slots[old].alive {
                let _ = self.slots[old].tx.send(Request::Drop { partition: p });
            }
        }
        pl.owner = Some(pick);
        pl.replicas.remove(&pick);
        Ok(pick)
    }

    fn rebuild(&mut self, index: usize, partition: usize, version: u64, executor: usize) -> Result<()> {
        let log = self.log_index.clone().ok_or_else(|| Error::ReplayLog("nothing logged yet".into()))?;
        self.send(executor, Request::Rebuild { index, partition, version, log }, 64)
    }

    fn send(&mut self, executor: usize, req: Request, bytes: u64) -> Result<()> {
        self.stats.messages += 1;
        self.stats.bytes_sent += bytes;
        self.stats.network_time += self.cfg.network.cost(bytes);
        self.slots[executor].tx.send(req).map_err(|_| Error::UnknownExecutor(executor))
    }

    /// Routes rows to partitions and keeps them for delivery. Returns the
    /// per-partition counts and, for logging, the raw rows. Null keys are an
    /// error when `reject_null`, otherwise such rows are skipped.
    fn stage(
        &mut self,
        table: &PlainTable,
        schema: &Schema,
        col: usize,
        reject_null: bool,
    ) -> Result<(ShuffleReceipt, Vec<Vec<u8>>)> {
        let ty = schema.field(col).ty;
        let parts = self.cfg.partitions;
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); parts];
        for (i, row) in table.rows().enumerate() {
            match column_bytes(schema, row, col)? {
                Some(cell) => buckets[CanonicalKey::from_cell(ty, cell).route(parts)].push(i as u32),
                None if reject_null => return Err(Error::NullIndexKey),
                None => {}
            }
        }
        let rows = if reject_null { table.rows().map(<[u8]>::to_vec).collect() } else { Vec::new() };
        let source = Arc::new(schema.clone());
        let mut counts = vec![0; parts];
        let chunks = buckets
            .iter()
            .enumerate()
            .map(|(p, idx)| {
                counts[p] = idx.len() as u64;
                idx.chunks(self.cfg.envelope_rows)
                    .map(|c| {
                        let mut t = PlainTable::new(source.clone());
                        for &i in c {
                            t.push_encoded_unchecked(table.row(i as usize));
                        }
                        Arc::new(t)
                    })
                    .collect()
            })
            .collect();
        let id = self.next_shuffle;
        self.next_shuffle += 1;
        self.shuffles.insert(id, chunks);
        Ok((ShuffleReceipt { id, counts }, rows))
    }

    /// Sends partition `p`'s envelopes of a shuffle; returns acks to expect.
    fn deliver(&mut self, shuffle: u64, p: usize, executor: usize) -> usize {
        let Some(chunks) = self.shuffles.get(&shuffle).map(|s| s[p].clone()) else { return 0 };
        let mut acks = 0;
        for (seq, rows) in chunks.into_iter().enumerate() {
            let copies = if self.rng.random_bool(self.cfg.duplicate_rate) { 2 } else { 1 };
            for _ in 0..copies {
                self.stats.envelopes += 1;
                let bytes = rows.byte_size() as u64;
                let req = Request::Deliver { shuffle, partition: p, seq: seq as u32, rows: rows.clone() };
                if self.send(executor, req, bytes).is_ok() {
                    acks += 1;
                }
            }
        }
        acks
    }

    /// Waits for `n` delivery acks; returns newly staged rows per partition
    /// as reported by the receivers.
    fn collect_acks(&mut self, n: usize) -> Result<Vec<u64>> {
        let mut counts = vec![0; self.cfg.partitions];
        self.collect(n, |_, body| {
            if let ReplyBody::Ack { partition, rows, .. } = body {
                counts[partition] += rows;
            }
        })?;
        Ok(counts)
    }

    fn collect(&mut self, n: usize, mut f: impl FnMut(usize, ReplyBody)) -> Result<()> {
        for _ in 0..n {
            let reply = self
                .reply_rx
                .recv_timeout(REPLY_TIMEOUT)
                .map_err(|_| Error::ExecFailure("executors stopped responding".into()))?;
            if let ReplyBody::Ack { rows, duplicate, .. } = &reply.body {
                if *duplicate {
                    self.stats.duplicate_envelopes += 1;
                } else {
                    self.stats.delivered_rows += rows;
                }
            }
            f(reply.executor, reply.body);
        }
        Ok(())
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        for s in &mut self.slots {
            let _ = s.tx.send(Request::Shutdown);
            if let Some(h) = s.thread.take() {
                let _ = h.join();
            }
        }
    }
}

fn task_failed(task: usize, cause: &str) -> Error {
    Error::TaskFailed { task, cause: cause.to_owned() }
}

fn first_error(results: Vec<Result<PlainTable>>) -> Result<()> {
    results.into_iter().try_for_each(|r| r.map(|_| ()))
}

fn concat(schema: &Arc<Schema>, results: Vec<Result<PlainTable>>) -> Result<PlainTable> {
    let mut out = PlainTable::new(schema.clone());
    for r in results {
        out.extend(&r?)?;
    }
    Ok(out)
}
