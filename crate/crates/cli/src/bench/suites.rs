use std::sync::Arc;
use std::time::{Duration, Instant};

use ixframe::cluster::{Cluster, ClusterConfig};
use ixframe::engine::{AggFunc, ExecContext, LogicalPlan, PhysicalPlan, Predicate};
use ixframe::rowstore::{Value, MAX_BATCH_BYTES};
use ixframe::table::PlainTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::report::{ms, ratio};
use super::*;

fn scaled(build_rows: u64, fraction: f64) -> u64 {
    ((build_rows as f64 * fraction).round() as u64).max(1)
}

/// Probe size of the S-scale join.
fn small_probe(s: &Settings) -> u64 {
    s.probe_rows.unwrap_or_else(|| scaled(s.build_rows, 1e-4))
}

fn run_plan(ctx: &ExecContext, plan: &PhysicalPlan) -> Result<PlainTable> {
    Ok(ctx.execute(plan)?)
}

fn speedup(baseline: &Summary, indexed: &Summary) -> String {
    ratio(secs(baseline.median), secs(indexed.median))
}

fn median(v: &[Duration]) -> Duration {
    Summary::of(v).median
}

pub struct JoinScale;

/// Probe sizes as fractions of the build side.
const JOIN_SCALES: [(&str, f64); 4] = [("S", 1e-4), ("M", 1e-3), ("L", 1e-2), ("XL", 1e-1)];

impl BenchSuite for JoinScale {
    fn name(&self) -> &'static str {
        "join-scale"
    }

    fn description(&self) -> &'static str {
        "indexed join vs shuffle-hash join at four probe sizes"
    }

    fn footprint(&self, s: &Settings) -> u64 {
        edge_footprint(s.build_rows) + join_footprint(s.probe_rows.unwrap_or_else(|| scaled(s.build_rows, 1e-1)))
    }

    fn run(&self, s: &Settings) -> Result<BenchReport> {
        let data = Arc::new(edges(s.build_rows, s.seed)?);
        let t = Instant::now();
        let df = index(&data, s, s.batch_bytes)?;
        let mut config = s.echo();
        config.push(("index_build_ms".into(), ms(t.elapsed())));
        let mut report = BenchReport::new(self.name(), config);
        let ctx = context(s)?;
        for (i, (scale, fraction)) in JOIN_SCALES.into_iter().enumerate() {
            let n = s.probe_rows.unwrap_or_else(|| scaled(s.build_rows, fraction));
            let p = Arc::new(probe(s.build_rows, n, s.seed + 1 + i as u64)?);
            let (ip, bp) = Catalogs::new(&df, data.clone(), &[("probe", p)])?.plans(s, &join_plan())?;
            let (it, iout) = measure(s.reps, || run_plan(&ctx, &ip))?;
            let (bt, bout) = measure(s.reps, || run_plan(&ctx, &bp))?;
            same(scale, &iout, &bout)?;
            let sp = if n == 0 { "n/a".into() } else { speedup(&bt, &it) };
            report.rows.push(
                CaseRow::new(scale, Some(it))
                    .with("probe_rows", n)
                    .with("result_rows", iout.len())
                    .with("operator", ip.operator())
                    .with("baseline_median_ms", ms(bt.median))
                    .with("baseline_p5_ms", ms(bt.p5))
                    .with("baseline_p95_ms", ms(bt.p95))
                    .with("speedup", sp),
            );
        }
        Ok(report)
    }
}

pub struct ReadLatencyUnderAppends;

/// Append sizes as fractions of the build side; zero is the reference.
const WRITE_SIZES: [f64; 5] = [0.0, 1e-5, 1e-4, 1e-3, 1e-2];

impl BenchSuite for ReadLatencyUnderAppends {
    fn name(&self) -> &'static str {
        "read-latency-under-appends"
    }

    fn description(&self) -> &'static str {
        "S-scale joins with an append every five joins, by append size"
    }

    fn footprint(&self, s: &Settings) -> u64 {
        let grown = s.build_rows + s.reps as u64 * scaled(s.build_rows, 1e-2);
        edge_footprint(s.build_rows) + 2 * edge_footprint(grown) + join_footprint(small_probe(s))
    }

    /// Each round appends (unless the size is zero), then runs five joins
    /// on the new version. The timed read is the append plus the first
    /// join; the other four give the steady-state latency. The baseline
    /// appends by copying its plain table and runs one join per round.
    fn run(&self, s: &Settings) -> Result<BenchReport> {
        let data = Arc::new(edges(s.build_rows, s.seed)?);
        let df = index(&data, s, s.batch_bytes)?;
        let p = Arc::new(probe(s.build_rows, small_probe(s), s.seed + 1)?);
        let ctx = context(s)?;
        let mut report = BenchReport::new(self.name(), s.echo());
        let mut reference: Option<Duration> = None;
        for (i, fraction) in WRITE_SIZES.into_iter().enumerate() {
            let w = if fraction == 0.0 { 0 } else { scaled(s.build_rows, fraction) };
            let (mut cur, mut plain) = (df.clone(), data.clone());
            let (mut first, mut steady, mut base) = (Vec::new(), Vec::new(), Vec::new());
            let mut last = None;
            for round in 0..s.reps {
                let batch = more_edges(s.build_rows, w, s.seed + 1000 * (i as u64 + 1) + round as u64)?;
                let t = Instant::now();
                if w > 0 {
                    cur = cur.append_rows(&batch)?;
                }
                let cats = Catalogs::new(&cur, plain.clone(), &[("probe", p.clone())])?;
                let (ip, _) = cats.plans(s, &join_plan())?;
                let out = run_plan(&ctx, &ip)?;
                first.push(t.elapsed());
                for _ in 0..4 {
                    let t = Instant::now();
                    run_plan(&ctx, &ip)?;
                    steady.push(t.elapsed());
                }

                let t = Instant::now();
                if w > 0 {
                    let mut grown = (*plain).clone();
                    grown.extend(&batch)?;
                    plain = Arc::new(grown);
                }
                let cats = Catalogs::new(&cur, plain.clone(), &[("probe", p.clone())])?;
                let (_, bp) = cats.plans(s, &join_plan())?;
                let bout = run_plan(&ctx, &bp)?;
                base.push(t.elapsed());
                last = Some((out, bout));
            }
            let (out, bout) = last.expect("reps is positive");
            same(&format!("append size {w}"), &out, &bout)?;
            let summary = Summary::of(&first);
            let reference = *reference.get_or_insert(summary.median);
            report.rows.push(
                CaseRow::new(format!("append {w} rows"), Some(summary))
                    .with("append_rows", w)
                    .with("steady_median_ms", ms(median(&steady)))
                    .with("slowdown", ratio(secs(summary.median), secs(reference)))
                    .with("baseline_median_ms", ms(median(&base)))
                    .with("speedup", ratio(secs(median(&base)), secs(summary.median))),
            );
        }
        Ok(report)
    }
}

pub struct WriteThroughput;

const APPEND_SIZES: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];

impl BenchSuite for WriteThroughput {
    fn name(&self) -> &'static str {
        "write-throughput"
    }

    fn description(&self) -> &'static str {
        "chained appends and index creation, by rows per write"
    }

    fn footprint(&self, s: &Settings) -> u64 {
        let grown = s.build_rows + s.reps as u64 * scaled(s.build_rows, 1e-2);
        2 * edge_footprint(grown) + edge_footprint(s.build_rows)
    }

    fn run(&self, s: &Settings) -> Result<BenchReport> {
        let data = Arc::new(edges(s.build_rows, s.seed)?);
        let df = index(&data, s, s.batch_bytes)?;
        let mut report = BenchReport::new(self.name(), s.echo());
        for (i, fraction) in APPEND_SIZES.into_iter().enumerate() {
            let w = scaled(s.build_rows, fraction);
            let (mut cur, mut plain) = (df.clone(), (*data).clone());
            let (mut append, mut create, mut base) = (Vec::new(), Vec::new(), Vec::new());
            for round in 0..s.reps {
                let batch = more_edges(s.build_rows, w, s.seed + 1000 * (i as u64 + 1) + round as u64)?;
                let t = Instant::now();
                cur = cur.append_rows(&batch)?;
                append.push(t.elapsed());

                let t = Instant::now();
                index(&batch, s, s.batch_bytes)?;
                create.push(t.elapsed());

                let t = Instant::now();
                let mut grown = plain.clone();
                grown.extend(&batch)?;
                plain = grown;
                base.push(t.elapsed());
            }
            same(&format!("{w} rows per append"), &cur.scan()?, &plain)?;
            let summary = Summary::of(&append);
            report.rows.push(
                CaseRow::new(format!("{w} rows"), Some(summary))
                    .with("rows_per_append", w)
                    .with("rows_per_s", format!("{:.0}", w as f64 / secs(summary.median).max(1e-9)))
                    .with("create_index_median_ms", ms(median(&create)))
                    .with("baseline_median_ms", ms(median(&base)))
                    .with("speedup", ratio(secs(median(&base)), secs(summary.median))),
            );
        }
        Ok(report)
    }
}

pub struct BatchSizeSweep;

const BATCH_SIZES: [(&str, usize); 5] =
    [("4KB", 4 << 10), ("64KB", 64 << 10), ("512KB", 512 << 10), ("4MB", 4 << 20), ("32MB", 32 << 20)];

impl BenchSuite for BatchSizeSweep {
    fn name(&self) -> &'static str {
        "batch-size-sweep"
    }

    fn description(&self) -> &'static str {
        "join and append speed by row batch size, normalized to 4KB batches"
    }

    fn footprint(&self, s: &Settings) -> u64 {
        let grown = s.build_rows + s.reps as u64 * scaled(s.build_rows, 1e-3);
        edge_footprint(s.build_rows) + edge_footprint(grown) + join_footprint(small_probe(s))
    }

    /// Reads are S-scale joins; writes are appends of 0.1% of the table.
    /// Normalized columns are 4KB time over this size's time, so higher
    /// is better.
    fn run(&self, s: &Settings) -> Result<BenchReport> {
        let data = Arc::new(edges(s.build_rows, s.seed)?);
        let p = Arc::new(probe(s.build_rows, small_probe(s), s.seed + 1)?);
        let ctx = context(s)?;
        let w = scaled(s.build_rows, 1e-3);
        let batches: Vec<PlainTable> =
            (0..s.reps).map(|r| more_edges(s.build_rows, w, s.seed + 2 + r as u64)).collect::<Result<_>>()?;
        let mut report = BenchReport::new(self.name(), s.echo());
        let mut reference: Option<(Duration, Duration)> = None;
        let mut expected: Option<PlainTable> = None;
        for (name, bytes) in BATCH_SIZES {
            if bytes > MAX_BATCH_BYTES {
                report.rows.push(
                    CaseRow::new(name, None)
                        .with("batch_bytes", bytes)
                        .with("create_index_ms", "n/a")
                        .with("write_median_ms", "n/a")
                        .with("read_norm", "n/a")
                        .with("write_norm", "n/a")
                        .with("note", format!("exceeds the {} byte batch limit of 22-bit offsets", MAX_BATCH_BYTES)),
                );
                continue;
            }
            let t = Instant::now();
            let df = index(&data, s, bytes)?;
            let create = t.elapsed();
            let cats = Catalogs::new(&df, data.clone(), &[("probe", p.clone())])?;
            let (ip, bp) = cats.plans(s, &join_plan())?;
            let (read, out) = measure(s.reps, || run_plan(&ctx, &ip))?;
            let expected = match &expected {
                Some(e) => e,
                None => expected.insert(run_plan(&ctx, &bp)?),
            };
            same(name, &out, expected)?;
            let mut cur = df.clone();
            let mut writes = Vec::new();
            for b in &batches {
                let t = Instant::now();
                cur = cur.append_rows(b)?;
                writes.push(t.elapsed());
            }
            let write = median(&writes);
            let (r0, w0) = *reference.get_or_insert((read.median, write));
            report.rows.push(
                CaseRow::new(name, Some(read))
                    .with("batch_bytes", bytes)
                    .with("create_index_ms", ms(create))
                    .with("write_median_ms", ms(write))
                    .with("read_norm", ratio(secs(r0), secs(read.median)))
                    .with("write_norm", ratio(secs(w0), secs(write)))
                    .with("note", ""),
            );
        }
        Ok(report)
    }
}

pub struct MemoryOverhead;

impl BenchSuite for MemoryOverhead {
    fn name(&self) -> &'static str {
        "memory-overhead"
    }

    fn description(&self) -> &'static str {
        "index bytes over row bytes, per partition and in total"
    }

    fn footprint(&self, s: &Settings) -> u64 {
        edge_footprint(s.build_rows)
    }

    /// Partition rows time single-key lookups inside that partition. The
    /// total row times dataframe lookups against a filtered full scan.
    fn run(&self, s: &Settings) -> Result<BenchReport> {
        let data = Arc::new(edges(s.build_rows, s.seed)?);
        let df = index(&data, s, s.batch_bytes)?;
        let mut report = BenchReport::new(self.name(), s.echo());
        let mb = |b: u64| format!("{:.3}", b as f64 / (1 << 20) as f64);
        let pct =
            |i: u64, d: u64| if d == 0 { "n/a".to_owned() } else { format!("{:.3}", 100.0 * i as f64 / d as f64) };
        for p in df.partitions() {
            let keys = p.keys();
            let timing = if keys.is_empty() {
                None
            } else {
                let mut samples = Vec::new();
                for i in 0..s.reps {
                    let k = keys[i * keys.len() / s.reps];
                    let t = Instant::now();
                    p.lookup(k, None)?;
                    samples.push(t.elapsed());
                }
                Some(Summary::of(&samples))
            };
            let m = p.memory_stats();
            report.rows.push(
                CaseRow::new(format!("partition {}", p.id()), timing)
                    .with("rows", p.row_count())
                    .with("keys", keys.len())
                    .with("data_mb", mb(m.data_bytes))
                    .with("index_mb", mb(m.index_bytes))
                    .with("backptr_mb", mb(m.backptr_bytes))
                    .with("overhead_pct", pct(m.index_bytes, m.data_bytes))
                    .with("baseline_median_ms", "n/a"),
            );
        }

        let ctx = context(s)?;
        let cats = Catalogs::new(&df, data.clone(), &[])?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let (mut lookups, mut scans) = (Vec::new(), Vec::new());
        for _ in 0..s.reps {
            let key = Value::Int64(rng.random_range(0..key_space(s.build_rows)));
            let t = Instant::now();
            let got = df.get_rows(&key)?;
            lookups.push(t.elapsed());
            let lp = LogicalPlan::scan("edges").filter("src", Predicate::Eq { value: key });
            let (_, bp) = cats.plans(s, &lp)?;
            let t = Instant::now();
            let expect = run_plan(&ctx, &bp)?;
            scans.push(t.elapsed());
            same("lookup", &got, &expect)?;
        }
        let st = df.stats();
        let keys: usize = df.partitions().iter().map(|p| p.key_count()).sum();
        let summary = Summary::of(&lookups);
        report.rows.push(
            CaseRow::new("total", Some(summary))
                .with("rows", st.row_count)
                .with("keys", keys)
                .with("data_mb", mb(st.data_bytes))
                .with("index_mb", mb(st.index_bytes))
                .with("backptr_mb", mb(st.backptr_bytes))
                .with("overhead_pct", pct(st.index_bytes, st.data_bytes))
                .with("baseline_median_ms", ms(median(&scans))),
        );
        Ok(report)
    }
}

pub struct FaultTolerance;

impl BenchSuite for FaultTolerance {
    fn name(&self) -> &'static str {
        "fault-tolerance"
    }

    fn description(&self) -> &'static str {
        "S-scale joins on the simulated cluster with one executor killed"
    }

    fn footprint(&self, s: &Settings) -> u64 {
        3 * edge_footprint(s.build_rows) + join_footprint(small_probe(s)) * s.queries as u64
    }

    /// Runs the query sequence on a healthy cluster, then again killing
    /// executor 1 before query `queries / 5`. Answers must match.
    fn run(&self, s: &Settings) -> Result<BenchReport> {
        if s.executors < 2 {
            return Err(CliError::Invalid("fault-tolerance needs at least 2 executors".into()));
        }
        let data = edges(s.build_rows, s.seed)?;
        let probes: Vec<PlainTable> = (0..s.queries)
            .map(|q| probe(s.build_rows, small_probe(s), s.seed + 1 + q as u64))
            .collect::<Result<_>>()?;
        let cfg = ClusterConfig {
            executors: s.executors,
            partitions: s.partitions,
            batch_bytes: s.batch_bytes,
            seed: s.seed,
            ..Default::default()
        };
        let kill_at = s.queries / 5;
        let run = |kill: bool| -> Result<(Vec<PlainTable>, Vec<Duration>, Cluster)> {
            let mut c = Cluster::start(cfg.clone())?;
            let v = c.create_index(&data, 0)?;
            let (mut out, mut lat) = (Vec::new(), Vec::new());
            for (q, p) in probes.iter().enumerate() {
                if kill && q == kill_at {
                    c.kill_executor(1)?;
                }
                let t = Instant::now();
                out.push(c.join(v, p, 0)?);
                lat.push(t.elapsed());
            }
            Ok((out, lat, c))
        };
        let (reference, ref_lat, _) = run(false)?;
        let (answers, lat, cluster) = run(true)?;
        for (q, (a, r)) in answers.iter().zip(&reference).enumerate() {
            same(&format!("query {q}"), a, r)?;
        }
        let stats = cluster.stats();
        let network = ms(stats.network_time);
        let locality = format!("{:.3}", stats.locality());
        let recovered = stats.recoveries.len();
        let mut config = s.echo();
        config.push(("kill_before_query".into(), kill_at.to_string()));
        let mut report = BenchReport::new(self.name(), config);
        let (ref_pre, ref_post) = (median(&ref_lat[..kill_at.max(1)]), median(&ref_lat[kill_at + 1..]));
        report.rows.push(
            CaseRow::new("no-failure", Some(Summary::of(&ref_lat)))
                .with("failure_query_ms", "n/a")
                .with("pre_median_ms", ms(ref_pre))
                .with("post_median_ms", ms(ref_post))
                .with("post_over_pre", ratio(secs(ref_post), secs(ref_pre)))
                .with("recovered_partitions", 0),
        );
        let (pre, post) = (median(&lat[..kill_at.max(1)]), median(&lat[kill_at + 1..]));
        report.rows.push(
            CaseRow::new("with-failure", Some(Summary::of(&lat)))
                .with("failure_query_ms", ms(lat[kill_at]))
                .with("pre_median_ms", ms(pre))
                .with("post_median_ms", ms(post))
                .with("post_over_pre", ratio(secs(post), secs(pre)))
                .with("recovered_partitions", recovered),
        );
        report.config.push(("simulated_network_ms".into(), network));
        report.config.push(("locality".into(), locality));
        Ok(report)
    }
}

pub struct MicrobenchOps;

impl BenchSuite for MicrobenchOps {
    fn name(&self) -> &'static str {
        "microbench-ops"
    }

    fn description(&self) -> &'static str {
        "join, filters, projection, aggregation and scan, indexed vs plain"
    }

    fn footprint(&self, s: &Settings) -> u64 {
        3 * edge_footprint(s.build_rows) + join_footprint(small_probe(s))
    }

    fn run(&self, s: &Settings) -> Result<BenchReport> {
        let data = Arc::new(edges(s.build_rows, s.seed)?);
        let df = index(&data, s, s.batch_bytes)?;
        let p = Arc::new(probe(s.build_rows, small_probe(s), s.seed + 1)?);
        let cats = Catalogs::new(&df, data.clone(), &[("probe", p)])?;
        let ctx = context(s)?;
        let keys = key_space(s.build_rows);
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let k = rng.random_range(0..keys);
        let ops = [
            ("join", join_plan()),
            ("eq-filter", LogicalPlan::scan("edges").filter("src", Predicate::Eq { value: Value::Int64(k) })),
            (
                "range-filter",
                LogicalPlan::scan("edges")
                    .filter("src", Predicate::Range { lo: Value::Int64(k), hi: Value::Int64(k + keys / 100) }),
            ),
            ("projection", LogicalPlan::scan("edges").project(["dst"])),
            ("aggregation", LogicalPlan::scan("edges").aggregate(["src"], AggFunc::Count, None)),
            ("scan", LogicalPlan::scan("edges")),
        ];
        let mut report = BenchReport::new(self.name(), s.echo());
        for (name, lp) in ops {
            let (ip, bp) = cats.plans(s, &lp)?;
            let (it, iout) = measure(s.reps, || run_plan(&ctx, &ip))?;
            let (bt, bout) = measure(s.reps, || run_plan(&ctx, &bp))?;
            same(name, &iout, &bout)?;
            report.rows.push(
                CaseRow::new(name, Some(it))
                    .with("operator", ip.operator())
                    .with("baseline_operator", bp.operator())
                    .with("result_rows", iout.len())
                    .with("baseline_median_ms", ms(bt.median))
                    .with("speedup", speedup(&bt, &it)),
            );
        }
        Ok(report)
    }
}
