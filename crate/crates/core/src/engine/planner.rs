use std::sync::Arc;

use crate::engine::join::{JoinRegistry, INDEXED_BROADCAST, INDEXED_SHUFFLED, SHUFFLE_HASH};
use crate::engine::logical::{AggFunc, LogicalPlan, Predicate};
use crate::engine::physical::{BuildSide, JoinExec, PhysicalPlan, ScanSource};
use crate::engine::{Catalog, CatalogEntry};
use crate::error::{Error, Result};
use crate::rowstore::{ColumnType, Field, Schema};

/// Spark's default broadcast cutoff.
pub const DEFAULT_BROADCAST_THRESHOLD: u64 = 10 * 1000 * 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerOptions {
    /// Probe sides smaller than this are broadcast to every partition.
    pub broadcast_threshold: u64,
    /// With `false`, indexed tables are planned like plain ones.
    pub index_rules: bool,
    /// Join used when no index rule applies.
    pub baseline_join: String,
    /// Join used for every equi-join, bypassing the rules.
    pub force_join: Option<String>,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            broadcast_threshold: DEFAULT_BROADCAST_THRESHOLD,
            index_rules: true,
            baseline_join: SHUFFLE_HASH.to_owned(),
            force_join: None,
        }
    }
}

impl PlannerOptions {
    pub fn baseline() -> Self {
        PlannerOptions { index_rules: false, ..Default::default() }
    }
}

/// Rule-based translation of logical plans:
///
/// 1. An equi-join where one side is a scan of an indexed table joined on
///    its index column keeps that side in place as the build side (left
///    wins if both qualify). The other side is broadcast if it is smaller
///    than the threshold and shuffled otherwise.
/// 2. An equality filter on the index column of an indexed scan becomes an
///    index lookup.
/// 3. Everything else uses the baseline operators.
pub struct Planner<'a> {
    catalog: &'a Catalog,
    joins: &'a JoinRegistry,
    opts: PlannerOptions,
}

impl<'a> Planner<'a> {
    pub fn new(catalog: &'a Catalog, joins: &'a JoinRegistry, opts: PlannerOptions) -> Self {
        Planner { catalog, joins, opts }
    }

    pub fn options(&self) -> &PlannerOptions {
        &self.opts
    }

    pub fn plan(&self, lp: &LogicalPlan) -> Result<PhysicalPlan> {
        match lp {
            LogicalPlan::Scan { table } => Ok(self.scan(table)?),
            LogicalPlan::Lookup { table, key } => {
                let CatalogEntry::Indexed(df) = self.catalog.get(table)? else {
                    return Err(Error::InvalidPlan(format!("lookup on `{table}`, which has no index")));
                };
                let (_, partition) = df.route_key(key)?;
                if self.opts.index_rules {
                    return Ok(PhysicalPlan::IndexLookup {
                        table: table.clone(),
                        df: df.clone(),
                        key: key.clone(),
                        partition,
                    });
                }
                Ok(PhysicalPlan::Filter {
                    input: Box::new(self.scan(table)?),
                    col: df.index_col(),
                    predicate: Predicate::Eq { value: key.clone() },
                })
            }
            LogicalPlan::Filter { input, column, predicate } => {
                let input = self.plan(input)?;
                let schema = input.schema();
                let col = resolve(&schema, column)?;
                let ty = schema.field(col).ty;
                for v in predicate.operands() {
                    if v.column_type() != Some(ty) {
                        return Err(Error::InvalidPlan(format!("filter on `{column}` ({ty}) compares with {v:?}")));
                    }
                }
                if let (true, Predicate::Eq { value }, Some((table, df))) =
                    (self.opts.index_rules, predicate, indexed_scan(&input))
                {
                    if df.index_col() == col {
                        let (_, partition) = df.route_key(value)?;
                        return Ok(PhysicalPlan::IndexLookup {
                            table: table.to_owned(),
                            df: df.clone(),
                            key: value.clone(),
                            partition,
                        });
                    }
                }
                Ok(PhysicalPlan::Filter { input: Box::new(input), col, predicate: predicate.clone() })
            }
            LogicalPlan::Project { input, columns } => {
                let input = self.plan(input)?;
                let schema = input.schema();
                let cols = columns.iter().map(|c| resolve(&schema, c)).collect::<Result<Vec<_>>>()?;
                let fields: Vec<Field> = cols.iter().map(|&c| schema.field(c).clone()).collect();
                let out = Schema::new(fields).map_err(|e| Error::InvalidPlan(e.to_string()))?;
                Ok(PhysicalPlan::Project { input: Box::new(input), cols, schema: Arc::new(out) })
            }
            LogicalPlan::Aggregate { input, group_by, agg, column } => {
                let input = self.plan(input)?;
                let schema = input.schema();
                let group_cols = group_by.iter().map(|c| resolve(&schema, c)).collect::<Result<Vec<_>>>()?;
                let col = column.as_deref().map(|c| resolve(&schema, c)).transpose()?;
                let mut fields: Vec<Field> = group_cols.iter().map(|&c| schema.field(c).clone()).collect();
                fields.push(agg_field(*agg, col.map(|c| schema.field(c)))?);
                let out = Schema::new(fields).map_err(|e| Error::InvalidPlan(e.to_string()))?;
                Ok(PhysicalPlan::Aggregate {
                    input: Box::new(input),
                    group_cols,
                    agg: *agg,
                    col,
                    schema: Arc::new(out),
                })
            }
            LogicalPlan::EquiJoin { left, right, left_col, right_col } => {
                let left = self.plan(left)?;
                let right = self.plan(right)?;
                let (ls, rs) = (left.schema(), right.schema());
                let lc = resolve(&ls, left_col)?;
                let rc = resolve(&rs, right_col)?;
                if ls.field(lc).ty != rs.field(rc).ty {
                    return Err(Error::InvalidPlan(format!(
                        "join columns `{left_col}` ({}) and `{right_col}` ({}) differ in type",
                        ls.field(lc).ty,
                        rs.field(rc).ty
                    )));
                }
                let indexed_build = if indexed_scan(&left).is_some_and(|(_, df)| df.index_col() == lc) {
                    Some(BuildSide::Left)
                } else if indexed_scan(&right).is_some_and(|(_, df)| df.index_col() == rc) {
                    Some(BuildSide::Right)
                } else {
                    None
                };
                let size_of = |side: BuildSide| match side {
                    BuildSide::Left => right.estimated_bytes(),
                    BuildSide::Right => left.estimated_bytes(),
                };
                let (algorithm, build) = match (&self.opts.force_join, self.opts.index_rules, indexed_build) {
                    (Some(name), _, _) => {
                        let algo = self.joins.get(name)?;
                        let build = if algo.uses_index() {
                            indexed_build.ok_or_else(|| {
                                Error::InvalidPlan(format!(
                                    "`{name}` needs a scan of an indexed table joined on its index"
                                ))
                            })?
                        } else {
                            baseline_build(&left, &right)
                        };
                        (algo, build)
                    }
                    (None, true, Some(build)) => {
                        let name = if size_of(build) < self.opts.broadcast_threshold {
                            INDEXED_BROADCAST
                        } else {
                            INDEXED_SHUFFLED
                        };
                        (self.joins.get(name)?, build)
                    }
                    (None, _, _) => {
                        let algo = self.joins.get(&self.opts.baseline_join)?;
                        if algo.uses_index() {
                            return Err(Error::InvalidPlan(format!("`{}` cannot be a baseline", algo.name())));
                        }
                        (algo, baseline_build(&left, &right))
                    }
                };
                let schema = Arc::new(Schema::joined(&ls, &rs));
                Ok(PhysicalPlan::Join(JoinExec {
                    algorithm,
                    probe_bytes: size_of(build),
                    left: Box::new(left),
                    right: Box::new(right),
                    left_col: lc,
                    right_col: rc,
                    build,
                    schema,
                }))
            }
        }
    }

    fn scan(&self, table: &str) -> Result<PhysicalPlan> {
        let source = match self.catalog.get(table)? {
            CatalogEntry::Plain(t) => ScanSource::Plain(t.clone()),
            CatalogEntry::Indexed(df) => ScanSource::Indexed(df.clone()),
        };
        Ok(PhysicalPlan::FullScan { table: table.to_owned(), source })
    }
}

/// Baselines hash the smaller side; ties go right.
fn baseline_build(left: &PhysicalPlan, right: &PhysicalPlan) -> BuildSide {
    if left.estimated_bytes() < right.estimated_bytes() {
        BuildSide::Left
    } else {
        BuildSide::Right
    }
}

fn indexed_scan(p: &PhysicalPlan) -> Option<(&str, &crate::dataframe::IndexedDataFrame)> {
    match p {
        PhysicalPlan::FullScan { table, source: ScanSource::Indexed(df) } => Some((table, df)),
        _ => None,
    }
}

fn resolve(schema: &Schema, column: &str) -> Result<usize> {
    schema.column_index(column).ok_or_else(|| Error::UnresolvedColumn(column.to_owned()))
}

fn agg_field(agg: AggFunc, input: Option<&Field>) -> Result<Field> {
    let Some(f) = input else {
        return match agg {
            AggFunc::Count => Ok(Field::new("count", ColumnType::Int64)),
            _ => Err(Error::InvalidPlan(format!("{} needs a column", agg.name()))),
        };
    };
    let name = format!("{}_{}", agg.name(), f.name);
    Ok(match (agg, f.ty) {
        (AggFunc::Count, _) => Field::new(name, ColumnType::Int64),
        (AggFunc::Sum, ColumnType::Int32 | ColumnType::Int64) => Field::nullable(name, ColumnType::Int64),
        (AggFunc::Sum, ColumnType::Float64) => Field::nullable(name, ColumnType::Float64),
        (AggFunc::Sum, ColumnType::Utf8) => {
            return Err(Error::InvalidPlan(format!("cannot sum text column `{}`", f.name)))
        }
        (AggFunc::Min | AggFunc::Max, ty) => Field::nullable(name, ty),
    })
}
