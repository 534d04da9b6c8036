use std::fmt::Write as _;
use std::sync::Arc;

use crate::dataframe::IndexedDataFrame;
use crate::engine::join::JoinAlgorithm;
use crate::engine::logical::{render, AggFunc, Predicate};
use crate::rowstore::{Schema, Value};
use crate::table::PlainTable;

/// Where a full scan reads from.
#[derive(Clone)]
pub enum ScanSource {
    Plain(Arc<PlainTable>),
    Indexed(IndexedDataFrame),
}

impl ScanSource {
    pub fn schema(&self) -> &Arc<Schema> {
        match self {
            ScanSource::Plain(t) => t.schema(),
            ScanSource::Indexed(df) => df.schema(),
        }
    }

    /// Exact encoded size of every row.
    pub fn bytes(&self) -> u64 {
        match self {
            ScanSource::Plain(t) => t.byte_size() as u64,
            ScanSource::Indexed(df) => df.stats().data_bytes,
        }
    }

    pub fn rows(&self) -> u64 {
        match self {
            ScanSource::Plain(t) => t.len() as u64,
            ScanSource::Indexed(df) => df.row_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildSide {
    Left,
    Right,
}

impl BuildSide {
    pub fn name(self) -> &'static str {
        match self {
            BuildSide::Left => "left",
            BuildSide::Right => "right",
        }
    }
}

pub struct JoinExec {
    pub algorithm: Arc<dyn JoinAlgorithm>,
    pub left: Box<PhysicalPlan>,
    pub right: Box<PhysicalPlan>,
    pub left_col: usize,
    pub right_col: usize,
    /// Side kept in place; the other side is moved to it.
    pub build: BuildSide,
    /// Estimated bytes of the side that moves.
    pub probe_bytes: u64,
    pub schema: Arc<Schema>,
}

pub enum PhysicalPlan {
    FullScan {
        table: String,
        source: ScanSource,
    },
    IndexLookup {
        table: String,
        df: IndexedDataFrame,
        key: Value,
        partition: usize,
    },
    Filter {
        input: Box<PhysicalPlan>,
        col: usize,
        predicate: Predicate,
    },
    Project {
        input: Box<PhysicalPlan>,
        cols: Vec<usize>,
        schema: Arc<Schema>,
    },
    Aggregate {
        input: Box<PhysicalPlan>,
        group_cols: Vec<usize>,
        agg: AggFunc,
        col: Option<usize>,
        schema: Arc<Schema>,
    },
    Join(JoinExec),
}

impl PhysicalPlan {
    pub fn schema(&self) -> Arc<Schema> {
        match self {
            PhysicalPlan::FullScan { source, .. } => source.schema().clone(),
            PhysicalPlan::IndexLookup { df, .. } => df.schema().clone(),
            PhysicalPlan::Filter { input, .. } => input.schema(),
            PhysicalPlan::Project { schema, .. } | PhysicalPlan::Aggregate { schema, .. } => schema.clone(),
            PhysicalPlan::Join(j) => j.schema.clone(),
        }
    }

    /// Operator name as shown by [`explain`](Self::explain).
    pub fn operator(&self) -> &str {
        match self {
            PhysicalPlan::FullScan { .. } => "FullScan",
            PhysicalPlan::IndexLookup { .. } => "IndexLookup",
            PhysicalPlan::Filter { .. } => "FilterExec",
            PhysicalPlan::Project { .. } => "ProjectExec",
            PhysicalPlan::Aggregate { .. } => "AggregateExec",
            PhysicalPlan::Join(j) => j.algorithm.operator(),
        }
    }

    /// Upper bound on output bytes; exact for scans.
    pub fn estimated_bytes(&self) -> u64 {
        match self {
            PhysicalPlan::FullScan { source, .. } => source.bytes(),
            PhysicalPlan::IndexLookup { df, .. } => df.stats().data_bytes,
            PhysicalPlan::Filter { input, .. }
            | PhysicalPlan::Project { input, .. }
            | PhysicalPlan::Aggregate { input, .. } => input.estimated_bytes(),
            PhysicalPlan::Join(j) => j.left.estimated_bytes() + j.right.estimated_bytes(),
        }
    }

    /// Indented operator tree, one node per line.
    pub fn explain(&self) -> String {
        let mut out = String::new();
        self.explain_into(&mut out, 0);
        out
    }

    fn explain_into(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let name = |s: &Schema, c: usize| s.field(c).name.clone();
        match self {
            PhysicalPlan::FullScan { table, source } => {
                let _ = match source {
                    ScanSource::Plain(t) => writeln!(out, "{pad}FullScan {table} rows={}", t.len()),
                    ScanSource::Indexed(df) => writeln!(
                        out,
                        "{pad}FullScan {table} rows={} indexed_on={} version={} partitions={}",
                        df.row_count(),
                        name(df.schema(), df.index_col()),
                        df.version(),
                        df.num_partitions()
                    ),
                };
            }
            PhysicalPlan::IndexLookup { table, df, key, partition } => {
                let _ = writeln!(
                    out,
                    "{pad}IndexLookup {table} {} = {} partition={partition} version={}",
                    name(df.schema(), df.index_col()),
                    render(key),
                    df.version()
                );
            }
            PhysicalPlan::Filter { input, col, predicate } => {
                let _ = writeln!(out, "{pad}FilterExec {} {predicate}", name(&input.schema(), *col));
                input.explain_into(out, depth + 1);
            }
            PhysicalPlan::Project { input, schema, .. } => {
                let cols: Vec<&str> = schema.fields().iter().map(|f| f.name.as_str()).collect();
                let _ = writeln!(out, "{pad}ProjectExec [{}]", cols.join(", "));
                input.explain_into(out, depth + 1);
            }
            PhysicalPlan::Aggregate { input, group_cols, agg, col, .. } => {
                let s = input.schema();
                let groups: Vec<String> = group_cols.iter().map(|c| name(&s, *c)).collect();
                let arg = col.map(|c| name(&s, c)).unwrap_or_else(|| "*".into());
                let _ = writeln!(out, "{pad}AggregateExec group=[{}] {}({arg})", groups.join(", "), agg.name());
                input.explain_into(out, depth + 1);
            }
            PhysicalPlan::Join(j) => {
                let _ = writeln!(
                    out,
                    "{pad}{} {} = {} build={} probe_bytes={}",
                    j.algorithm.operator(),
                    name(&j.left.schema(), j.left_col),
                    name(&j.right.schema(), j.right_col),
                    j.build.name(),
                    j.probe_bytes
                );
                j.left.explain_into(out, depth + 1);
                j.right.explain_into(out, depth + 1);
            }
        }
    }
}

impl std::fmt::Debug for PhysicalPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.explain())
    }
}
