//! Equi-join algorithms, each registered by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::dataframe::IndexedDataFrame;
use crate::engine::exec::ExecContext;
use crate::engine::physical::BuildSide;
use crate::error::{Error, Result};
use crate::partition::CanonicalKey;
use crate::rowstore::{column_bytes, splice_rows, ColumnType, Schema};
use crate::table::PlainTable;

/// A join input: either an indexed dataframe left in place or rows.
#[derive(Clone)]
pub enum Relation {
    Indexed(IndexedDataFrame),
    Table(Arc<PlainTable>),
}

impl Relation {
    pub fn schema(&self) -> &Arc<Schema> {
        match self {
            Relation::Indexed(df) => df.schema(),
            Relation::Table(t) => t.schema(),
        }
    }

    pub fn materialize(&self) -> Result<Arc<PlainTable>> {
        match self {
            Relation::Indexed(df) => Ok(Arc::new(df.scan()?)),
            Relation::Table(t) => Ok(t.clone()),
        }
    }
}

pub struct JoinInput {
    pub left: Relation,
    pub right: Relation,
    pub left_col: usize,
    pub right_col: usize,
    pub build: BuildSide,
    /// `left ++ right`.
    pub schema: Arc<Schema>,
}

/// One way of computing an inner equi-join. Output rows are always the
/// left row followed by the right row; null keys never match.
pub trait JoinAlgorithm: Send + Sync {
    /// Registry key, e.g. `shuffle-hash`.
    fn name(&self) -> &'static str;
    /// Operator name shown in plans.
    fn operator(&self) -> &'static str;
    /// Whether the build side must be an indexed dataframe joined on its
    /// index column.
    fn uses_index(&self) -> bool {
        false
    }
    fn execute(&self, ctx: &ExecContext, input: &JoinInput) -> Result<PlainTable>;
}

/// Join algorithms by name.
#[derive(Clone)]
pub struct JoinRegistry {
    algorithms: BTreeMap<&'static str, Arc<dyn JoinAlgorithm>>,
}

impl Default for JoinRegistry {
    fn default() -> Self {
        let mut r = JoinRegistry { algorithms: BTreeMap::new() };
        r.register(Arc::new(IndexedShuffledJoin));
        r.register(Arc::new(IndexedBroadcastJoin));
        r.register(Arc::new(ShuffleHashJoin));
        r.register(Arc::new(BroadcastHashJoin));
        r.register(Arc::new(SortMergeJoin));
        r
    }
}

impl JoinRegistry {
    pub fn empty() -> Self {
        JoinRegistry { algorithms: BTreeMap::new() }
    }

    /// Adds or replaces the algorithm under its name.
    pub fn register(&mut self, algo: Arc<dyn JoinAlgorithm>) {
        self.algorithms.insert(algo.name(), algo);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn JoinAlgorithm>> {
        self.algorithms.get(name).cloned().ok_or_else(|| Error::UnknownJoin(name.to_owned()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.algorithms.keys().copied().collect()
    }
}

pub const INDEXED_SHUFFLED: &str = "indexed-shuffled";
pub const INDEXED_BROADCAST: &str = "indexed-broadcast";
pub const SHUFFLE_HASH: &str = "shuffle-hash";
pub const BROADCAST_HASH: &str = "broadcast-hash";
pub const SORT_MERGE: &str = "sort-merge";

/// Appends `left ++ right` to `out`.
#[inline]
fn emit(out: &mut PlainTable, ls: &Schema, l: &[u8], rs: &Schema, r: &[u8]) {
    out.with_row_buffer(|buf| splice_rows(ls, l, rs, r, buf));
}

fn concat(schema: &Arc<Schema>, parts: Vec<PlainTable>) -> PlainTable {
    let total_rows = parts.iter().map(PlainTable::len).sum();
    let total_bytes = parts.iter().map(PlainTable::byte_size).sum();
    let mut out = PlainTable::with_capacity(schema.clone(), total_rows, total_bytes);
    for p in &parts {
        out.extend(p).expect("same schema");
    }
    out
}

struct IndexedSides<'a> {
    df: &'a IndexedDataFrame,
    probe: Arc<PlainTable>,
    probe_col: usize,
}

fn indexed_sides<'a>(algo: &str, input: &'a JoinInput) -> Result<IndexedSides<'a>> {
    let (build, probe, build_col, probe_col) = match input.build {
        BuildSide::Left => (&input.left, &input.right, input.left_col, input.right_col),
        BuildSide::Right => (&input.right, &input.left, input.right_col, input.left_col),
    };
    let Relation::Indexed(df) = build else {
        return Err(Error::InvalidPlan(format!("{algo} needs an indexed build side")));
    };
    if df.index_col() != build_col {
        return Err(Error::InvalidPlan(format!("{algo} must join on the index column")));
    }
    let probe = probe.materialize()?;
    if probe.schema().field(probe_col).ty != df.schema().field(build_col).ty {
        return Err(Error::InvalidPlan("join columns have different types".into()));
    }
    Ok(IndexedSides { df, probe, probe_col })
}

/// Probes partition `pid` with one probe row and emits matches in output
/// order.
#[inline]
#[allow(clippy::too_many_arguments)]
fn probe_partition(
    out: &mut PlainTable,
    df: &IndexedDataFrame,
    pid: usize,
    probe_schema: &Schema,
    row: &[u8],
    cell: &[u8],
    key: CanonicalKey,
    build: BuildSide,
) -> Result<()> {
    let bs = df.schema();
    let verify = (df.schema().field(df.index_col()).ty == ColumnType::Utf8).then_some(cell);
    df.partition(pid).for_each_match_cell(key, verify, |b| match build {
        BuildSide::Left => emit(out, bs, b, probe_schema, row),
        BuildSide::Right => emit(out, probe_schema, row, bs, b),
    })
}

/// Moves each probe row to the one partition owning its key, then probes
/// that partition's index locally.
pub struct IndexedShuffledJoin;

impl JoinAlgorithm for IndexedShuffledJoin {
    fn name(&self) -> &'static str {
        INDEXED_SHUFFLED
    }

    fn operator(&self) -> &'static str {
        "IndexedShuffledEquiJoin"
    }

    fn uses_index(&self) -> bool {
        true
    }

    fn execute(&self, ctx: &ExecContext, input: &JoinInput) -> Result<PlainTable> {
        let IndexedSides { df, probe, probe_col } = indexed_sides(self.name(), input)?;
        let ps = probe.schema();
        let ty = ps.field(probe_col).ty;
        let shuffled =
            shuffle(ctx, &probe, probe_col, df.num_partitions(), |p, bytes| ctx.metrics().add_probe(p, bytes))?;
        let parts = ctx.install(|| {
            (0..df.num_partitions())
                .into_par_iter()
                .map(|pid| {
                    let mut out = PlainTable::new(input.schema.clone());
                    for row in shuffled.rows(pid) {
                        let cell = column_bytes(ps, row, probe_col)?.expect("null keys are not shuffled");
                        let key = CanonicalKey::from_cell(ty, cell);
                        probe_partition(&mut out, df, pid, ps, row, cell, key, input.build)?;
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(concat(&input.schema, parts))
    }
}

/// Sends the whole probe side to every partition.
pub struct IndexedBroadcastJoin;

impl JoinAlgorithm for IndexedBroadcastJoin {
    fn name(&self) -> &'static str {
        INDEXED_BROADCAST
    }

    fn operator(&self) -> &'static str {
        "IndexedBroadcastEquiJoin"
    }

    fn uses_index(&self) -> bool {
        true
    }

    fn execute(&self, ctx: &ExecContext, input: &JoinInput) -> Result<PlainTable> {
        let IndexedSides { df, probe, probe_col } = indexed_sides(self.name(), input)?;
        let ps = probe.schema();
        let ty = ps.field(probe_col).ty;
        let mut keyed = Vec::with_capacity(probe.len());
        for (i, row) in probe.rows().enumerate() {
            if let Some(cell) = column_bytes(ps, row, probe_col)? {
                keyed.push((i as u32, CanonicalKey::from_cell(ty, cell)));
            }
        }
        for pid in 0..df.num_partitions() {
            ctx.metrics().add_probe(pid, probe.byte_size() as u64);
        }
        let parts = ctx.install(|| {
            (0..df.num_partitions())
                .into_par_iter()
                .map(|pid| {
                    let mut out = PlainTable::new(input.schema.clone());
                    for &(i, key) in &keyed {
                        let row = probe.row(i as usize);
                        let cell = column_bytes(ps, row, probe_col)?.expect("null keys were skipped");
                        probe_partition(&mut out, df, pid, ps, row, cell, key, input.build)?;
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(concat(&input.schema, parts))
    }
}

/// Rows of one table split by key into partitions, produced by several
/// workers. Partition `p` is the concatenation of `pieces[w][p]`.
pub(crate) struct Shuffled {
    pieces: Vec<Vec<PlainTable>>,
}

impl Shuffled {
    pub(crate) fn rows(&self, p: usize) -> impl Iterator<Item = &[u8]> + '_ {
        self.pieces.iter().flat_map(move |w| w[p].rows())
    }

    fn len(&self, p: usize) -> usize {
        self.pieces.iter().map(|w| w[p].len()).sum()
    }
}

/// Hash-partitions rows with non-null keys, copying each row once. `record`
/// is told how many bytes went to each partition.
pub(crate) fn shuffle(
    ctx: &ExecContext,
    table: &PlainTable,
    col: usize,
    partitions: usize,
    record: impl Fn(usize, u64) + Sync,
) -> Result<Shuffled> {
    let schema = table.schema();
    let ty = schema.field(col).ty;
    let n = table.len();
    let chunk = n.div_ceil(ctx.threads()).max(4096);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let pieces = ctx.install(|| {
        starts
            .par_iter()
            .map(|&start| {
                let mut parts: Vec<PlainTable> = (0..partitions).map(|_| PlainTable::new(schema.clone())).collect();
                let mut bytes = vec![0u64; partitions];
                for i in start..(start + chunk).min(n) {
                    let row = table.row(i);
                    if let Some(cell) = column_bytes(schema, row, col)? {
                        let p = CanonicalKey::from_cell(ty, cell).route(partitions);
                        parts[p].push_encoded_unchecked(row);
                        bytes[p] += row.len() as u64;
                    }
                }
                for (p, b) in bytes.into_iter().enumerate() {
                    record(p, b);
                }
                Ok(parts)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(Shuffled { pieces })
}

/// Hash table over the key cells of a row set, chained through `next`.
struct HashBuild<'a> {
    heads: FxHashMap<&'a [u8], u32>,
    next: Vec<u32>,
    rows: Vec<&'a [u8]>,
}

const END: u32 = u32::MAX;

impl<'a> HashBuild<'a> {
    fn new(schema: &Schema, col: usize, rows: impl Iterator<Item = &'a [u8]>) -> Result<Self> {
        let mut b = HashBuild { heads: FxHashMap::default(), next: Vec::new(), rows: Vec::new() };
        for row in rows {
            if let Some(cell) = column_bytes(schema, row, col)? {
                let i = b.rows.len() as u32;
                let prev = b.heads.insert(cell, i).unwrap_or(END);
                b.next.push(prev);
                b.rows.push(row);
            }
        }
        Ok(b)
    }

    #[inline]
    fn for_each(&self, cell: &[u8], mut f: impl FnMut(&[u8])) {
        let mut i = self.heads.get(cell).copied().unwrap_or(END);
        while i != END {
            f(self.rows[i as usize]);
            i = self.next[i as usize];
        }
    }
}

/// Which materialized side a baseline hashes.
fn smaller_side(l: &PlainTable, r: &PlainTable) -> BuildSide {
    if l.byte_size() < r.byte_size() {
        BuildSide::Left
    } else {
        BuildSide::Right
    }
}

#[allow(clippy::too_many_arguments)]
fn hash_probe<'a>(
    out: &mut PlainTable,
    table: &HashBuild<'_>,
    hashed: BuildSide,
    ls: &Schema,
    rs: &Schema,
    stream_schema: &Schema,
    stream_col: usize,
    stream: impl Iterator<Item = &'a [u8]>,
) -> Result<()> {
    for row in stream {
        let Some(cell) = column_bytes(stream_schema, row, stream_col)? else { continue };
        table.for_each(cell, |b| match hashed {
            BuildSide::Left => emit(out, ls, b, rs, row),
            BuildSide::Right => emit(out, ls, row, rs, b),
        });
    }
    Ok(())
}

fn check_types(l: &PlainTable, lc: usize, r: &PlainTable, rc: usize) -> Result<()> {
    if l.schema().field(lc).ty != r.schema().field(rc).ty {
        return Err(Error::InvalidPlan("join columns have different types".into()));
    }
    Ok(())
}

/// Baseline: shuffles both sides by key, then hash-joins each partition,
/// hashing the smaller relation.
/// Records shuffled bytes for a partition.
type Recorder<'a> = dyn Fn(usize, u64) + Sync + 'a;

pub struct ShuffleHashJoin;

impl JoinAlgorithm for ShuffleHashJoin {
    fn name(&self) -> &'static str {
        SHUFFLE_HASH
    }

    fn operator(&self) -> &'static str {
        "ShuffleHashJoin"
    }

    fn execute(&self, ctx: &ExecContext, input: &JoinInput) -> Result<PlainTable> {
        let l = input.left.materialize()?;
        let r = input.right.materialize()?;
        check_types(&l, input.left_col, &r, input.right_col)?;
        let hashed = smaller_side(&l, &r);
        let parts_n = ctx.shuffle_partitions();
        let m = ctx.metrics();
        let (lrec, rrec): (&Recorder<'_>, &Recorder<'_>) = match hashed {
            BuildSide::Left => (&|p, b| m.add_build(p, b), &|p, b| m.add_probe(p, b)),
            BuildSide::Right => (&|p, b| m.add_probe(p, b), &|p, b| m.add_build(p, b)),
        };
        let ls = shuffle(ctx, &l, input.left_col, parts_n, lrec)?;
        let rs = shuffle(ctx, &r, input.right_col, parts_n, rrec)?;
        let (lsch, rsch) = (l.schema(), r.schema());
        let parts = ctx.install(|| {
            (0..parts_n)
                .into_par_iter()
                .map(|p| {
                    let mut out = PlainTable::new(input.schema.clone());
                    if ls.len(p) == 0 || rs.len(p) == 0 {
                        return Ok(out);
                    }
                    match hashed {
                        BuildSide::Left => {
                            let t = HashBuild::new(lsch, input.left_col, ls.rows(p))?;
                            hash_probe(&mut out, &t, hashed, lsch, rsch, rsch, input.right_col, rs.rows(p))?;
                        }
                        BuildSide::Right => {
                            let t = HashBuild::new(rsch, input.right_col, rs.rows(p))?;
                            hash_probe(&mut out, &t, hashed, lsch, rsch, lsch, input.left_col, ls.rows(p))?;
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(concat(&input.schema, parts))
    }
}

/// Baseline: hashes the smaller side once and streams the other side in
/// parallel chunks.
pub struct BroadcastHashJoin;

impl JoinAlgorithm for BroadcastHashJoin {
    fn name(&self) -> &'static str {
        BROADCAST_HASH
    }

    fn operator(&self) -> &'static str {
        "BroadcastHashJoin"
    }

    fn execute(&self, ctx: &ExecContext, input: &JoinInput) -> Result<PlainTable> {
        let l = input.left.materialize()?;
        let r = input.right.materialize()?;
        check_types(&l, input.left_col, &r, input.right_col)?;
        let hashed = smaller_side(&l, &r);
        let (small, small_col, big, big_col) = match hashed {
            BuildSide::Left => (&l, input.left_col, &r, input.right_col),
            BuildSide::Right => (&r, input.right_col, &l, input.left_col),
        };
        let parts_n = ctx.shuffle_partitions();
        for p in 0..parts_n {
            ctx.metrics().add_build(p, small.byte_size() as u64);
        }
        let table = HashBuild::new(small.schema(), small_col, small.rows())?;
        let n = big.len();
        let chunk = n.div_ceil(parts_n).max(1);
        let parts = ctx.install(|| {
            (0..parts_n)
                .into_par_iter()
                .map(|p| {
                    let mut out = PlainTable::new(input.schema.clone());
                    let rows = (p * chunk..((p + 1) * chunk).min(n)).map(|i| big.row(i));
                    hash_probe(&mut out, &table, hashed, l.schema(), r.schema(), big.schema(), big_col, rows)?;
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(concat(&input.schema, parts))
    }
}

/// Baseline: shuffles both sides, sorts each partition by key bytes and
/// merges equal-key runs.
pub struct SortMergeJoin;

impl JoinAlgorithm for SortMergeJoin {
    fn name(&self) -> &'static str {
        SORT_MERGE
    }

    fn operator(&self) -> &'static str {
        "SortMergeJoin"
    }

    fn execute(&self, ctx: &ExecContext, input: &JoinInput) -> Result<PlainTable> {
        let l = input.left.materialize()?;
        let r = input.right.materialize()?;
        check_types(&l, input.left_col, &r, input.right_col)?;
        let parts_n = ctx.shuffle_partitions();
        let m = ctx.metrics();
        let ls = shuffle(ctx, &l, input.left_col, parts_n, |p, b| m.add_probe(p, b))?;
        let rs = shuffle(ctx, &r, input.right_col, parts_n, |p, b| m.add_build(p, b))?;
        let (lsch, rsch) = (l.schema(), r.schema());
        let parts = ctx.install(|| {
            (0..parts_n)
                .into_par_iter()
                .map(|p| {
                    let a = sorted_by_key(&ls, p, lsch, input.left_col)?;
                    let b = sorted_by_key(&rs, p, rsch, input.right_col)?;
                    let mut out = PlainTable::new(input.schema.clone());
                    let (mut i, mut j) = (0, 0);
                    while i < a.len() && j < b.len() {
                        match a[i].0.cmp(b[j].0) {
                            std::cmp::Ordering::Less => i += 1,
                            std::cmp::Ordering::Greater => j += 1,
                            std::cmp::Ordering::Equal => {
                                let key = a[i].0;
                                let i_end = i + a[i..].iter().take_while(|x| x.0 == key).count();
                                let j_end = j + b[j..].iter().take_while(|x| x.0 == key).count();
                                for x in &a[i..i_end] {
                                    for y in &b[j..j_end] {
                                        emit(&mut out, lsch, x.1, rsch, y.1);
                                    }
                                }
                                i = i_end;
                                j = j_end;
                            }
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(concat(&input.schema, parts))
    }
}

fn sorted_by_key<'a>(s: &'a Shuffled, p: usize, schema: &Schema, col: usize) -> Result<Vec<(&'a [u8], &'a [u8])>> {
    let mut v = Vec::with_capacity(s.len(p));
    for row in s.rows(p) {
        v.push((column_bytes(schema, row, col)?.expect("null keys are not shuffled"), row));
    }
    v.sort_by(|a, b| a.0.cmp(b.0));
    Ok(v)
}
