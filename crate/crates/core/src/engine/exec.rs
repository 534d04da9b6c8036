use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::engine::join::{JoinInput, Relation};
use crate::engine::logical::{AggFunc, Predicate};
use crate::engine::physical::{PhysicalPlan, ScanSource};
use crate::error::{Error, Result};
use crate::rowstore::{decode_row, read_column, Schema, Value};
use crate::table::PlainTable;

/// Bytes moved between partitions by joins.
#[derive(Debug, Default)]
pub struct ExecMetrics {
    build_shuffle_bytes: AtomicU64,
    probe_shuffle_bytes: AtomicU64,
    partition_bytes: Mutex<Vec<u64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsSnapshot {
    pub build_shuffle_bytes: u64,
    pub probe_shuffle_bytes: u64,
    /// Bytes received by each destination partition, both sides combined.
    pub partition_bytes: Vec<u64>,
}

impl MetricsSnapshot {
    pub fn total_shuffle_bytes(&self) -> u64 {
        self.build_shuffle_bytes + self.probe_shuffle_bytes
    }
}

impl ExecMetrics {
    pub fn add_build(&self, partition: usize, bytes: u64) {
        self.build_shuffle_bytes.fetch_add(bytes, Ordering::Relaxed);
        self.add_partition(partition, bytes);
    }

    pub fn add_probe(&self, partition: usize, bytes: u64) {
        self.probe_shuffle_bytes.fetch_add(bytes, Ordering::Relaxed);
        self.add_partition(partition, bytes);
    }

    fn add_partition(&self, partition: usize, bytes: u64) {
        let mut v = self.partition_bytes.lock();
        if v.len() <= partition {
            v.resize(partition + 1, 0);
        }
        v[partition] += bytes;
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            build_shuffle_bytes: self.build_shuffle_bytes.load(Ordering::Relaxed),
            probe_shuffle_bytes: self.probe_shuffle_bytes.load(Ordering::Relaxed),
            partition_bytes: self.partition_bytes.lock().clone(),
        }
    }

    pub fn reset(&self) {
        self.build_shuffle_bytes.store(0, Ordering::Relaxed);
        self.probe_shuffle_bytes.store(0, Ordering::Relaxed);
        self.partition_bytes.lock().clear();
    }
}

/// Worker threads and counters for running physical plans.
pub struct ExecContext {
    pool: rayon::ThreadPool,
    threads: usize,
    shuffle_partitions: usize,
    metrics: ExecMetrics,
}

impl ExecContext {
    /// A context with `threads` workers; baselines shuffle into twice as
    /// many partitions.
    pub fn new(threads: usize) -> Result<Self> {
        let threads = threads.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("ixframe-exec-{i}"))
            .build()
            .map_err(|e| Error::ExecFailure(e.to_string()))?;
        Ok(ExecContext { pool, threads, shuffle_partitions: threads * 2, metrics: ExecMetrics::default() })
    }

    pub fn with_shuffle_partitions(mut self, n: usize) -> Self {
        self.shuffle_partitions = n.max(1);
        self
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn shuffle_partitions(&self) -> usize {
        self.shuffle_partitions
    }

    pub fn metrics(&self) -> &ExecMetrics {
        &self.metrics
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub fn execute(&self, plan: &PhysicalPlan) -> Result<PlainTable> {
        let out = self.eval(plan)?;
        Ok(Arc::try_unwrap(out).unwrap_or_else(|shared| (*shared).clone()))
    }

    fn eval(&self, plan: &PhysicalPlan) -> Result<Arc<PlainTable>> {
        match plan {
            PhysicalPlan::FullScan { source: ScanSource::Plain(t), .. } => Ok(t.clone()),
            PhysicalPlan::FullScan { source: ScanSource::Indexed(df), .. } => Ok(Arc::new(df.scan()?)),
            PhysicalPlan::IndexLookup { df, key, .. } => Ok(Arc::new(df.get_rows(key)?)),
            PhysicalPlan::Filter { input, col, predicate } => {
                Ok(Arc::new(filter(self.eval(input)?.as_ref(), *col, predicate)?))
            }
            PhysicalPlan::Project { input, cols, schema } => {
                Ok(Arc::new(project(self.eval(input)?.as_ref(), cols, schema)?))
            }
            PhysicalPlan::Aggregate { input, group_cols, agg, col, schema } => {
                Ok(Arc::new(aggregate(self.eval(input)?.as_ref(), group_cols, *agg, *col, schema)?))
            }
            PhysicalPlan::Join(j) => {
                let input = JoinInput {
                    left: self.relation(&j.left)?,
                    right: self.relation(&j.right)?,
                    left_col: j.left_col,
                    right_col: j.right_col,
                    build: j.build,
                    schema: j.schema.clone(),
                };
                Ok(Arc::new(j.algorithm.execute(self, &input)?))
            }
        }
    }

    fn relation(&self, plan: &PhysicalPlan) -> Result<Relation> {
        Ok(match plan {
            PhysicalPlan::FullScan { source: ScanSource::Indexed(df), .. } => Relation::Indexed(df.clone()),
            other => Relation::Table(self.eval(other)?),
        })
    }
}

impl std::fmt::Debug for ExecContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExecContext").field("threads", &self.threads).finish()
    }
}

pub(crate) fn filter(t: &PlainTable, col: usize, predicate: &Predicate) -> Result<PlainTable> {
    let mut out = PlainTable::new(t.schema().clone());
    for row in t.rows() {
        if predicate.matches(&read_column(t.schema(), row, col)?) {
            out.push_encoded_unchecked(row);
        }
    }
    Ok(out)
}

pub(crate) fn project(t: &PlainTable, cols: &[usize], schema: &Arc<Schema>) -> Result<PlainTable> {
    let mut out = PlainTable::new(schema.clone());
    for row in t.rows() {
        let values = decode_row(t.schema(), row)?;
        let picked: Vec<Value> = cols.iter().map(|&c| values[c].clone()).collect();
        out.push(&picked)?;
    }
    Ok(out)
}

enum Acc {
    Count(i64),
    SumInt(Option<i64>),
    SumFloat(Option<f64>),
    Min(Option<Value>),
    Max(Option<Value>),
}

impl Acc {
    fn new(agg: AggFunc, float: bool) -> Self {
        match agg {
            AggFunc::Count => Acc::Count(0),
            AggFunc::Sum if float => Acc::SumFloat(None),
            AggFunc::Sum => Acc::SumInt(None),
            AggFunc::Min => Acc::Min(None),
            AggFunc::Max => Acc::Max(None),
        }
    }

    fn add(&mut self, v: Option<Value>) {
        match (self, v) {
            (Acc::Count(_), Some(Value::Null)) => {}
            (Acc::Count(n), _) => *n += 1,
            (_, None | Some(Value::Null)) => {}
            (Acc::SumInt(s), Some(Value::Int32(x))) => *s = Some(s.unwrap_or(0).wrapping_add(x as i64)),
            (Acc::SumInt(s), Some(Value::Int64(x))) => *s = Some(s.unwrap_or(0).wrapping_add(x)),
            (Acc::SumFloat(s), Some(Value::Float64(x))) => *s = Some(s.unwrap_or(0.0) + x),
            (Acc::Min(m), Some(v)) => {
                if m.as_ref().is_none_or(|cur| v < *cur) {
                    *m = Some(v)
                }
            }
            (Acc::Max(m), Some(v)) => {
                if m.as_ref().is_none_or(|cur| v > *cur) {
                    *m = Some(v)
                }
            }
            _ => unreachable!("aggregate column type checked by the planner"),
        }
    }

    fn finish(self) -> Value {
        match self {
            Acc::Count(n) => Value::Int64(n),
            Acc::SumInt(s) => s.map(Value::Int64).unwrap_or(Value::Null),
            Acc::SumFloat(s) => s.map(Value::Float64).unwrap_or(Value::Null),
            Acc::Min(v) | Acc::Max(v) => v.unwrap_or(Value::Null),
        }
    }
}

/// Groups in ascending key order. Without group columns, always one row.
pub(crate) fn aggregate(
    t: &PlainTable,
    group_cols: &[usize],
    agg: AggFunc,
    col: Option<usize>,
    schema: &Arc<Schema>,
) -> Result<PlainTable> {
    let float = col.is_some_and(|c| t.schema().field(c).ty == crate::rowstore::ColumnType::Float64);
    let mut groups: BTreeMap<Vec<Value>, Acc> = BTreeMap::new();
    if group_cols.is_empty() {
        groups.insert(Vec::new(), Acc::new(agg, float));
    }
    for row in t.rows() {
        let key = group_cols.iter().map(|&c| read_column(t.schema(), row, c)).collect::<Result<Vec<_>, _>>()?;
        let v = col.map(|c| read_column(t.schema(), row, c)).transpose()?;
        groups.entry(key).or_insert_with(|| Acc::new(agg, float)).add(v);
    }
    let mut out = PlainTable::new(schema.clone());
    for (mut key, acc) in groups {
        key.push(acc.finish());
        out.push(&key)?;
    }
    Ok(out)
}
