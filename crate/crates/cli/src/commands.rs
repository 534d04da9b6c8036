use std::io::Write;
use std::path::Path;

use ixframe::cluster::{LogRecord, ReplayLog};
use ixframe::csv_io::{parse_value, read_csv, read_with_sidecar, sidecar_path, write_csv_to, write_with_sidecar};
use ixframe::dataframe::{DataFrameOptions, IndexedDataFrame};
use ixframe::datagen::{generate, GenSpec, KeyDist, PayloadCol};
use ixframe::engine::{Catalog, ExecContext, JoinRegistry, LogicalPlan, Planner, PlannerOptions};
use ixframe::rowstore::{ColumnType, Schema};
use ixframe::table::PlainTable;

use crate::bench::BenchRegistry;
use crate::cli::*;
use crate::config::{parse_size, Format, Settings};
use crate::error::{io, CliError, Result};

fn invalid(m: impl Into<String>) -> CliError {
    CliError::Invalid(m.into())
}

fn stdout() -> std::io::StdoutLock<'static> {
    std::io::stdout().lock()
}

fn print(text: &str) -> Result<()> {
    stdout().write_all(text.as_bytes()).map_err(io("<stdout>"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate_cmd(a),
        Command::Load(a) => load(a),
        Command::Index(a) => index(a),
        Command::Lookup(a) => lookup(a),
        Command::Append(a) => append(a),
        Command::Join(a) => join(a),
        Command::Bench(a) => bench(a),
        Command::Report(a) => report(a),
    }
}

/// `uniform:LO:HI`, `zipf:S:N` or `seq:START`.
pub fn parse_dist(text: &str) -> Result<KeyDist> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| invalid(format!("bad number `{s}` in --dist {text}")));
    let int = |s: &str| s.trim().parse::<i64>().map_err(|_| invalid(format!("bad integer `{s}` in --dist {text}")));
    match parts.as_slice() {
        ["uniform", lo, hi] => Ok(KeyDist::Uniform { lo: int(lo)?, hi: int(hi)? }),
        ["zipf", s, n] => Ok(KeyDist::Zipf { s: num(s)?, n: int(n)?.max(0) as u64 }),
        ["seq" | "sequential", start] => Ok(KeyDist::Sequential { start: int(start)? }),
        _ => Err(invalid(format!("bad --dist `{text}` (expected uniform:LO:HI, zipf:S:N or seq:START)"))),
    }
}

fn parse_type(text: &str) -> Result<ColumnType> {
    text.parse().map_err(|e| invalid(format!("{e}")))
}

/// `NAME:TYPE[:NULL_RATE[:STR_LEN]]`.
pub fn parse_payload(text: &str) -> Result<PayloadCol> {
    let parts: Vec<&str> = text.split(':').collect();
    if !(2..=4).contains(&parts.len()) {
        return Err(invalid(format!("bad --payload `{text}` (expected NAME:TYPE[:NULL_RATE[:STR_LEN]])")));
    }
    let mut c = PayloadCol::new(parts[0], parse_type(parts[1])?);
    if let Some(r) = parts.get(2) {
        c.null_rate = r.parse().map_err(|_| invalid(format!("bad null rate in --payload `{text}`")))?;
    }
    if let Some(l) = parts.get(3) {
        c.str_len = l.parse().map_err(|_| invalid(format!("bad string length in --payload `{text}`")))?;
    }
    Ok(c)
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io(path))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => GenSpec {
            rows: a.rows,
            key_name: a.key_name,
            key_type: parse_type(&a.key_type)?,
            dist: parse_dist(&a.dist)?,
            payload: a.payload.iter().map(|p| parse_payload(p)).collect::<Result<_>>()?,
            seed: a.seed,
        },
    };
    let t = generate(&spec)?;
    write_with_sidecar(&t, &a.out)?;
    println!("wrote {} rows to {} (schema in {})", t.len(), a.out.display(), sidecar_path(&a.out).display());
    Ok(())
}

fn read_table(path: &Path) -> Result<PlainTable> {
    if !path.exists() {
        return Err(invalid(format!("{}: no such file", path.display())));
    }
    if !sidecar_path(path).exists() {
        return Err(invalid(format!("{}: missing schema sidecar {}", path.display(), sidecar_path(path).display())));
    }
    read_with_sidecar(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn load(a: LoadArgs) -> Result<()> {
    let t = read_table(&a.table)?;
    let mut out = format!("rows={} columns={} bytes={}\n", t.len(), t.schema().len(), t.byte_size());
    for f in t.schema().fields() {
        out.push_str(&format!("  {} {}{}\n", f.name, f.ty, if f.nullable { " nullable" } else { "" }));
    }
    print(&out)?;
    write_csv_to(&t.slice(0, a.head.min(t.len())), stdout())?;
    Ok(())
}

/// A column given by name or position.
fn column(schema: &Schema, spec: &str) -> Result<usize> {
    if let Some(i) = schema.column_index(spec) {
        return Ok(i);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < schema.len() => Ok(i),
        _ => Err(invalid(format!("no column `{spec}` in {} columns", schema.len()))),
    }
}

fn index(a: IndexArgs) -> Result<()> {
    let t = read_table(&a.table)?;
    let col = column(t.schema(), &a.col)?;
    let batch_bytes = parse_size(&a.batch_bytes).map_err(invalid)?;
    let df = IndexedDataFrame::create_index(&t, col, &DataFrameOptions { partitions: a.partitions, batch_bytes })?;
    let mut log = ReplayLog::new();
    log.append(&LogRecord::CreateIndex {
        schema: (**t.schema()).clone(),
        col: col as u32,
        partitions: a.partitions as u32,
        batch_bytes: batch_bytes as u32,
    });
    log.append(&LogRecord::AppendBatch {
        version: df.version(),
        parent: None,
        rows: t.rows().map(<[u8]>::to_vec).collect(),
    });
    log.write_to(&a.log.log)?;
    let st = df.stats();
    println!(
        "indexed {} rows on `{}` into {} partitions as version {}; index overhead {:.2}%; log {}",
        t.len(),
        t.schema().field(col).name,
        a.partitions,
        df.version(),
        st.index_overhead_ratio * 100.0,
        a.log.log.display()
    );
    Ok(())
}

fn open_log(path: &Path) -> Result<ReplayLog> {
    if !path.exists() {
        return Err(invalid(format!("{}: no replay log (run `ixframe index` first)", path.display())));
    }
    Ok(ReplayLog::read_from(path)?)
}

fn rebuild(log: &ReplayLog, version: Option<u64>) -> Result<IndexedDataFrame> {
    let idx = log.index()?;
    let v = match version {
        Some(v) => v,
        None => idx.latest().ok_or_else(|| invalid("replay log holds no data"))?,
    };
    Ok(idx.rebuild(v)?)
}

fn lookup(a: LookupArgs) -> Result<()> {
    let df = rebuild(&open_log(&a.log.log)?, a.version)?;
    let field = df.schema().field(df.index_col());
    let key = parse_value(field.ty, &a.key).map_err(|e| invalid(format!("key for `{}`: {e}", field.name)))?;
    write_csv_to(&df.get_rows(&key)?, stdout())?;
    Ok(())
}

fn append(a: AppendArgs) -> Result<()> {
    let mut log = open_log(&a.log.log)?;
    let idx = log.index()?;
    let t = if sidecar_path(&a.table).exists() {
        read_table(&a.table)?
    } else {
        read_csv(&a.table, idx.schema.clone()).map_err(|e| invalid(format!("{}: {e}", a.table.display())))?
    };
    if !t.schema().same_columns(&idx.schema) {
        return Err(invalid(format!("{}: columns differ from the indexed table", a.table.display())));
    }
    let parent = match a.parent {
        Some(p) => p,
        None => idx.latest().ok_or_else(|| invalid("replay log holds no data"))?,
    };
    let version = idx.latest().unwrap_or(0) + 1;
    // Building the child checks every row before anything is logged.
    idx.rebuild(parent)?.append_rows_as(&t, version)?;
    log.append(&LogRecord::AppendBatch { version, parent: Some(parent), rows: t.rows().map(<[u8]>::to_vec).collect() });
    log.write_to(&a.log.log)?;
    println!("appended {} rows as version {version} (parent {parent})", t.len());
    Ok(())
}

fn join(a: JoinArgs) -> Result<()> {
    let df = rebuild(&open_log(&a.log.log)?, a.version)?;
    let mut catalog = Catalog::new();
    catalog.register_indexed(a.name.clone(), df.clone())?;
    let lp = match (&a.probe, &a.plan) {
        (Some(path), _) => {
            let probe = read_table(path)?;
            let on = column(probe.schema(), &a.on)?;
            let left_col = probe.schema().field(on).name.clone();
            let right_col = df.schema().field(df.index_col()).name.clone();
            catalog.register_plain("probe", probe)?;
            LogicalPlan::scan("probe").join(LogicalPlan::scan(a.name.clone()), left_col, right_col)
        }
        (None, Some(path)) => {
            for spec in &a.tables {
                let (name, file) = spec
                    .split_once('=')
                    .ok_or_else(|| invalid(format!("bad --table `{spec}` (expected NAME=PATH)")))?;
                catalog.register_plain(name, read_table(Path::new(file))?)?;
            }
            let text = std::fs::read_to_string(path).map_err(io(path))?;
            LogicalPlan::from_json(&text)?
        }
        (None, None) => return Err(invalid("either --probe or --plan is required")),
    };
    let base = if a.baseline { PlannerOptions::baseline() } else { PlannerOptions::default() };
    let threshold = parse_size(&a.broadcast_threshold).map_err(invalid)? as u64;
    let opts = PlannerOptions { broadcast_threshold: threshold, ..base };
    let joins = JoinRegistry::default();
    let plan = Planner::new(&catalog, &joins, opts).plan(&lp)?;
    if a.explain {
        eprint!("{}", plan.explain());
    }
    let mut settings = Settings { threads: a.threads, ..Default::default() };
    settings.apply_env()?;
    let out = ExecContext::new(settings.threads)?.execute(&plan)?;
    match &a.out {
        Some(path) => {
            write_with_sidecar(&out, path)?;
            println!("wrote {} rows to {} via {}", out.len(), path.display(), plan.operator());
        }
        None => write_csv_to(&out, stdout())?,
    }
    Ok(())
}

fn bench_settings(a: &BenchArgs) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &a.config {
        s.apply_file(path)?;
    }
    let flags: [(&str, Option<String>); 13] = [
        ("seed", a.seed.map(|v| v.to_string())),
        ("partitions", a.partitions.map(|v| v.to_string())),
        ("batch-bytes", a.batch_bytes.clone()),
        ("broadcast-threshold", a.broadcast_threshold.clone()),
        ("executors", a.executors.map(|v| v.to_string())),
        ("threads", a.threads.map(|v| v.to_string())),
        ("reps", a.reps.map(|v| v.to_string())),
        ("build-rows", a.build_rows.map(|v| v.to_string())),
        ("probe-rows", a.probe_rows.map(|v| v.to_string())),
        ("queries", a.queries.map(|v| v.to_string())),
        ("mem-cap-mb", a.mem_cap_mb.map(|v| v.to_string())),
        ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ("format", a.format.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            s.set(key, &v).map_err(invalid)?;
        }
    }
    s.apply_env()?;
    Ok(s)
}

fn bench(a: BenchArgs) -> Result<()> {
    let registry = BenchRegistry::default();
    if a.suite == "list" {
        let mut out = String::new();
        for s in registry.suites() {
            out.push_str(&format!("{:<28} {}\n", s.name(), s.description()));
        }
        return print(&out);
    }
    let s = bench_settings(&a)?;
    let report = registry.run(&a.suite, &s)?;
    let file_format = s.format.unwrap_or_else(|| match s.out.as_ref().and_then(|p| p.extension()) {
        Some(e) if e == "md" => Format::Md,
        _ => Format::Csv,
    });
    let render = |f: Format| match f {
        Format::Csv => report.to_csv(),
        Format::Md => report.to_markdown(),
    };
    match &s.out {
        Some(path) => {
            std::fs::write(path, render(file_format)?).map_err(io(path))?;
            print(&render(Format::Md)?)
        }
        None => print(&render(s.format.unwrap_or(Format::Md))?),
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let format: Format = a.format.parse().map_err(invalid)?;
    let mut out = String::new();
    for (i, path) in a.inputs.iter().enumerate() {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        let r = crate::bench::BenchReport::from_csv(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&match format {
            Format::Csv => r.to_csv()?,
            Format::Md => r.to_markdown()?,
        });
    }
    print(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dists_and_payloads() {
        assert_eq!(parse_dist("uniform:-5:9").unwrap(), KeyDist::Uniform { lo: -5, hi: 9 });
        assert_eq!(parse_dist("zipf:1.1:100").unwrap(), KeyDist::Zipf { s: 1.1, n: 100 });
        assert_eq!(parse_dist("seq:3").unwrap(), KeyDist::Sequential { start: 3 });
        assert!(parse_dist("normal:0:1").is_err());
        let p = parse_payload("name:utf8:0.25:12").unwrap();
        assert_eq!((p.ty, p.null_rate, p.str_len), (ColumnType::Utf8, 0.25, 12));
        assert!(parse_payload("x").is_err());
        assert!(parse_payload("x:decimal").is_err());
    }

    #[test]
    fn columns_by_name_or_position() {
        let s = Schema::new(vec![
            ixframe::rowstore::Field::new("a", ColumnType::Int64),
            ixframe::rowstore::Field::new("b", ColumnType::Utf8),
        ])
        .unwrap();
        assert_eq!(column(&s, "b").unwrap(), 1);
        assert_eq!(column(&s, "0").unwrap(), 0);
        assert!(column(&s, "2").is_err());
        assert!(column(&s, "c").is_err());
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(&cfg, "seed = 5\nreps = 11\n").unwrap();
        let a = BenchArgs {
            suite: "join-scale".into(),
            config: Some(cfg),
            seed: Some(6),
            partitions: None,
            batch_bytes: Some("64KB".into()),
            broadcast_threshold: None,
            executors: None,
            threads: None,
            reps: None,
            build_rows: None,
            probe_rows: None,
            queries: None,
            mem_cap_mb: None,
            out: None,
            format: None,
        };
        let s = bench_settings(&a).unwrap();
        assert_eq!((s.seed, s.reps, s.batch_bytes), (6, 11, 64 << 10));
    }
}
