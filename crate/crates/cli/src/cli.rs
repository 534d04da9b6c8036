use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ixframe", version, about = "Indexed dataframes: data tools, queries and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic table as CSV plus schema sidecar.
    Generate(GenerateArgs),
    /// Read a CSV table and print its shape and first rows.
    Load(LoadArgs),
    /// Index a CSV table and write the replay log.
    Index(IndexArgs),
    /// Print the rows matching a key, rebuilt from the replay log.
    Lookup(LookupArgs),
    /// Append a CSV table as a new version in the replay log.
    Append(AppendArgs),
    /// Join a probe table with the indexed table, or run a JSON plan.
    Join(JoinArgs),
    /// Run a benchmark suite (`list` shows them).
    Bench(BenchArgs),
    /// Render CSV benchmark reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub rows: u64,
    #[arg(long, default_value = "k")]
    pub key_name: String,
    #[arg(long, default_value = "int64")]
    pub key_type: String,
    /// `uniform:LO:HI`, `zipf:S:N` or `seq:START`.
    #[arg(long, default_value = "uniform:0:999")]
    pub dist: String,
    /// Payload column `NAME:TYPE[:NULL_RATE[:STR_LEN]]`; repeatable.
    #[arg(long)]
    pub payload: Vec<String>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// JSON generator spec; replaces the other options except `--out`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub head: usize,
}

#[derive(Debug, Args)]
pub struct LogArg {
    /// Replay log file.
    #[arg(long, default_value = "ixframe.log")]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Column name or position.
    #[arg(long, default_value = "0")]
    pub col: String,
    #[arg(long, default_value_t = 8)]
    pub partitions: usize,
    #[arg(long, default_value = "4MiB")]
    pub batch_bytes: String,
    #[command(flatten)]
    pub log: LogArg,
}

#[derive(Debug, Args)]
pub struct LookupArgs {
    #[arg(long)]
    pub key: String,
    /// Defaults to the newest version.
    #[arg(long)]
    pub version: Option<u64>,
    #[command(flatten)]
    pub log: LogArg,
}

#[derive(Debug, Args)]
pub struct AppendArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Defaults to the newest version.
    #[arg(long)]
    pub parent: Option<u64>,
    #[command(flatten)]
    pub log: LogArg,
}

#[derive(Debug, Args)]
pub struct JoinArgs {
    /// Probe table, joined on `--on` with the indexed column.
    #[arg(long, conflicts_with = "plan", required_unless_present = "plan")]
    pub probe: Option<PathBuf>,
    /// Probe column name or position.
    #[arg(long, default_value = "0")]
    pub on: String,
    /// JSON logical plan.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Extra plain tables for `--plan`, as `NAME=PATH`; repeatable.
    #[arg(long = "table")]
    pub tables: Vec<String>,
    /// Catalog name of the indexed table.
    #[arg(long, default_value = "indexed")]
    pub name: String,
    #[arg(long)]
    pub version: Option<u64>,
    /// Plan without the index rules.
    #[arg(long)]
    pub baseline: bool,
    /// Print the physical plan to stderr.
    #[arg(long)]
    pub explain: bool,
    #[arg(long, default_value = "10MB")]
    pub broadcast_threshold: String,
    #[arg(long, default_value_t = 4)]
    pub threads: usize,
    /// Write the result as CSV plus sidecar instead of printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub log: LogArg,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub suite: String,
    /// `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub partitions: Option<usize>,
    #[arg(long)]
    pub batch_bytes: Option<String>,
    #[arg(long)]
    pub broadcast_threshold: Option<String>,
    #[arg(long)]
    pub executors: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Repetitions per case, at least 10.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub build_rows: Option<u64>,
    /// Overrides every probe size.
    #[arg(long)]
    pub probe_rows: Option<u64>,
    /// Queries in the fault-tolerance sequence.
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub mem_cap_mb: Option<u64>,
    /// Report file; the format follows `--format` or the extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `csv` or `md`.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "md")]
    pub format: String,
}
