//! Logical plans, the index-aware planner and physical operators.

mod exec;
pub mod join;
mod logical;
mod physical;
mod planner;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use exec::{ExecContext, ExecMetrics, MetricsSnapshot};
pub use join::{JoinAlgorithm, JoinInput, JoinRegistry, Relation};
pub use logical::{AggFunc, LogicalPlan, Predicate};
pub use physical::{BuildSide, JoinExec, PhysicalPlan, ScanSource};
pub use planner::{Planner, PlannerOptions, DEFAULT_BROADCAST_THRESHOLD};

use crate::dataframe::IndexedDataFrame;
use crate::error::{Error, Result};
use crate::table::PlainTable;

#[derive(Clone)]
pub enum CatalogEntry {
    Plain(Arc<PlainTable>),
    Indexed(IndexedDataFrame),
}

/// Named tables visible to the planner.
#[derive(Clone, Default)]
pub struct Catalog {
    tables: BTreeMap<String, CatalogEntry>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_plain(&mut self, name: impl Into<String>, table: impl Into<Arc<PlainTable>>) -> Result<()> {
        self.register(name.into(), CatalogEntry::Plain(table.into()))
    }

    pub fn register_indexed(&mut self, name: impl Into<String>, df: IndexedDataFrame) -> Result<()> {
        self.register(name.into(), CatalogEntry::Indexed(df))
    }

    fn register(&mut self, name: String, entry: CatalogEntry) -> Result<()> {
        if self.tables.contains_key(&name) {
            return Err(Error::DuplicateTable(name));
        }
        self.tables.insert(name, entry);
        Ok(())
    }

    /// Replaces an existing entry, e.g. with a newer version.
    pub fn replace(&mut self, name: &str, entry: CatalogEntry) -> Result<()> {
        match self.tables.get_mut(name) {
            Some(slot) => {
                *slot = entry;
                Ok(())
            }
            None => Err(Error::UnknownTable(name.to_owned())),
        }
    }

    pub fn get(&self, name: &str) -> Result<&CatalogEntry> {
        self.tables.get(name).ok_or_else(|| Error::UnknownTable(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }
}

/// Plans and runs `lp` in one step.
pub fn run(
    catalog: &Catalog,
    joins: &JoinRegistry,
    opts: PlannerOptions,
    ctx: &ExecContext,
    lp: &LogicalPlan,
) -> Result<PlainTable> {
    let plan = Planner::new(catalog, joins, opts).plan(lp)?;
    ctx.execute(&plan)
}
