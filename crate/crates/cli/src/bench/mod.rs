//! Benchmark suites, looked up by name.
//!
//! Every suite times an indexed path and a baseline path on the same data
//! and checks that both produce the same rows before reporting.

pub mod report;
mod suites;

use std::sync::Arc;
use std::time::{Duration, Instant};

use ixframe::dataframe::{DataFrameOptions, IndexedDataFrame};
use ixframe::datagen::{generate, GenSpec, KeyDist, PayloadCol};
use ixframe::engine::{Catalog, ExecContext, JoinRegistry, LogicalPlan, PhysicalPlan, Planner, PlannerOptions};
use ixframe::rowstore::ColumnType;
use ixframe::table::PlainTable;

use crate::config::Settings;
use crate::error::{CliError, Result};
pub use report::{BenchReport, CaseRow, Summary};

pub trait BenchSuite: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// Rough peak memory in bytes, checked against the cap before running.
    fn footprint(&self, s: &Settings) -> u64;
    fn run(&self, s: &Settings) -> Result<BenchReport>;
}

pub struct BenchRegistry {
    suites: Vec<Arc<dyn BenchSuite>>,
}

impl Default for BenchRegistry {
    fn default() -> Self {
        let mut r = BenchRegistry { suites: Vec::new() };
        r.register(Arc::new(suites::JoinScale));
        r.register(Arc::new(suites::ReadLatencyUnderAppends));
        r.register(Arc::new(suites::WriteThroughput));
        r.register(Arc::new(suites::BatchSizeSweep));
        r.register(Arc::new(suites::MemoryOverhead));
        r.register(Arc::new(suites::FaultTolerance));
        r.register(Arc::new(suites::MicrobenchOps));
        r
    }
}

impl BenchRegistry {
    pub fn register(&mut self, suite: Arc<dyn BenchSuite>) {
        self.suites.retain(|s| s.name() != suite.name());
        self.suites.push(suite);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn BenchSuite>> {
        self.suites.iter().find(|s| s.name() == name).cloned().ok_or_else(|| {
            CliError::Invalid(format!("unknown suite `{name}` (available: {})", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.suites.iter().map(|s| s.name()).collect()
    }

    pub fn suites(&self) -> &[Arc<dyn BenchSuite>] {
        &self.suites
    }

    /// Runs a suite after checking its projected footprint.
    pub fn run(&self, name: &str, s: &Settings) -> Result<BenchReport> {
        s.validate()?;
        let suite = self.get(name)?;
        OomGuard { cap_mb: s.mem_cap_mb }.check(suite.name(), suite.footprint(s))?;
        suite.run(s)
    }
}

pub struct OomGuard {
    pub cap_mb: u64,
}

impl OomGuard {
    pub fn check(&self, suite: &str, projected_bytes: u64) -> Result<()> {
        let projected_mb = projected_bytes.div_ceil(1 << 20);
        if projected_mb > self.cap_mb {
            return Err(CliError::OomGuard { suite: suite.to_owned(), projected_mb, cap_mb: self.cap_mb });
        }
        Ok(())
    }
}

/// Bytes per row of the edge table: encoded row, row offsets, batch copy
/// with backpointer and index share.
const EDGE_ROW_BYTES: u64 = 46 + 8 + 46 + 8 + 4;
/// Bytes per row of a join result between a probe row and an edge.
const JOIN_ROW_BYTES: u64 = 46 + 16 + 8;
/// Mean rows per key in generated edge tables.
pub const ROWS_PER_KEY: u64 = 20;

pub(crate) fn edge_footprint(rows: u64) -> u64 {
    rows * EDGE_ROW_BYTES
}

/// Two copies of a join result with `probe` rows on the probe side.
pub(crate) fn join_footprint(probe: u64) -> u64 {
    2 * probe * ROWS_PER_KEY * JOIN_ROW_BYTES
}

pub(crate) fn key_space(build_rows: u64) -> i64 {
    (build_rows / ROWS_PER_KEY).max(1) as i64
}

/// Edge table with a social-network shape: `src`, `dst` and a creation
/// timestamp string, `ROWS_PER_KEY` rows per source on average.
pub(crate) fn edges(rows: u64, seed: u64) -> Result<PlainTable> {
    more_edges(rows, rows, seed)
}

/// `rows` edges over the sources of `edges(build_rows, ..)`.
pub(crate) fn more_edges(build_rows: u64, rows: u64, seed: u64) -> Result<PlainTable> {
    let spec = GenSpec {
        rows,
        key_name: "src".into(),
        key_type: ColumnType::Int64,
        dist: KeyDist::Uniform { lo: 0, hi: key_space(build_rows) - 1 },
        payload: vec![
            PayloadCol::new("dst", ColumnType::Int64),
            PayloadCol { str_len: 28, ..PayloadCol::new("created", ColumnType::Utf8) },
        ],
        seed,
    };
    Ok(generate(&spec)?)
}

/// Probe table `pk, tag` with keys over the edge sources.
pub(crate) fn probe(build_rows: u64, rows: u64, seed: u64) -> Result<PlainTable> {
    let mut spec = GenSpec::key_value(rows, KeyDist::Uniform { lo: 0, hi: key_space(build_rows) - 1 }, seed);
    spec.key_name = "pk".into();
    spec.payload[0].name = "tag".into();
    Ok(generate(&spec)?)
}

pub(crate) fn index(table: &PlainTable, s: &Settings, batch_bytes: usize) -> Result<IndexedDataFrame> {
    Ok(IndexedDataFrame::create_index(table, 0, &DataFrameOptions { partitions: s.partitions, batch_bytes })?)
}

pub(crate) fn context(s: &Settings) -> Result<ExecContext> {
    Ok(ExecContext::new(s.threads)?)
}

pub(crate) fn planner_options(s: &Settings, indexed: bool) -> PlannerOptions {
    let base = if indexed { PlannerOptions::default() } else { PlannerOptions::baseline() };
    PlannerOptions { broadcast_threshold: s.broadcast_threshold, ..base }
}

/// The indexed and baseline catalogs: `edges` is indexed in the first and
/// plain in the second. Other tables are plain in both.
pub(crate) struct Catalogs {
    pub indexed: Catalog,
    pub baseline: Catalog,
}

impl Catalogs {
    pub fn new(df: &IndexedDataFrame, plain: Arc<PlainTable>, others: &[(&str, Arc<PlainTable>)]) -> Result<Self> {
        let mut indexed = Catalog::new();
        let mut baseline = Catalog::new();
        indexed.register_indexed("edges", df.clone())?;
        baseline.register_plain("edges", plain)?;
        for (name, t) in others {
            indexed.register_plain(*name, t.clone())?;
            baseline.register_plain(*name, t.clone())?;
        }
        Ok(Catalogs { indexed, baseline })
    }

    pub fn plans(&self, s: &Settings, lp: &LogicalPlan) -> Result<(PhysicalPlan, PhysicalPlan)> {
        let joins = JoinRegistry::default();
        let i = Planner::new(&self.indexed, &joins, planner_options(s, true)).plan(lp)?;
        let b = Planner::new(&self.baseline, &joins, planner_options(s, false)).plan(lp)?;
        Ok((i, b))
    }
}

/// The S-scale join: probe rows joined to edges on the source column.
pub(crate) fn join_plan() -> LogicalPlan {
    LogicalPlan::scan("probe").join(LogicalPlan::scan("edges"), "pk", "src")
}

/// Times `reps` runs. Every run must return as many rows as the first;
/// the first result is returned for a full comparison.
pub(crate) fn measure(reps: usize, mut f: impl FnMut() -> Result<PlainTable>) -> Result<(Summary, PlainTable)> {
    let mut samples = Vec::with_capacity(reps);
    let mut first: Option<PlainTable> = None;
    for _ in 0..reps {
        let t = Instant::now();
        let out = f()?;
        samples.push(t.elapsed());
        match &first {
            None => first = Some(out),
            Some(r) if r.len() != out.len() => {
                return Err(CliError::Invalid(format!(
                    "result size changed between runs: {} vs {}",
                    r.len(),
                    out.len()
                )))
            }
            Some(_) => {}
        }
    }
    Ok((Summary::of(&samples), first.expect("reps is positive")))
}

pub(crate) fn same(case: &str, a: &PlainTable, b: &PlainTable) -> Result<()> {
    if a.same_multiset(b) {
        Ok(())
    } else {
        Err(CliError::Mismatch(case.to_owned()))
    }
}

pub(crate) fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}
