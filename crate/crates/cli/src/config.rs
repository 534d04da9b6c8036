//! Benchmark settings: defaults, then a `key = value` config file, then
//! command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ixframe::engine::DEFAULT_BROADCAST_THRESHOLD;
use ixframe::rowstore::DEFAULT_BATCH_BYTES;

use crate::error::{io, CliError, Result};

pub const THREADS_ENV: &str = "IXFRAME_THREADS";

/// Fewer repetitions give percentiles too noisy to compare.
pub const MIN_REPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Md,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Md),
            _ => Err(format!("unknown format `{s}` (expected csv or md)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub partitions: usize,
    pub batch_bytes: usize,
    pub broadcast_threshold: u64,
    pub executors: usize,
    pub threads: usize,
    pub reps: usize,
    pub build_rows: u64,
    /// Overrides every suite's probe sizes.
    pub probe_rows: Option<u64>,
    pub queries: usize,
    pub mem_cap_mb: u64,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 42,
            partitions: 16,
            batch_bytes: DEFAULT_BATCH_BYTES,
            broadcast_threshold: DEFAULT_BROADCAST_THRESHOLD,
            executors: 4,
            threads: 4,
            reps: MIN_REPS,
            build_rows: 10_000_000,
            probe_rows: None,
            queries: 100,
            mem_cap_mb: default_mem_cap_mb(),
            out: None,
            format: None,
        }
    }
}

/// 80% of physical memory, or 4 GB when that is unknown.
fn default_mem_cap_mb() -> u64 {
    let total_kb = std::fs::read_to_string("/proc/meminfo").ok().and_then(|s| {
        s.lines()
            .find_map(|l| l.strip_prefix("MemTotal:"))
            .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
    });
    total_kb.map_or(4096, |kb| kb / 1024 * 4 / 5)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("bad value `{value}` for {key}: {e}"))
}

/// Byte counts with an optional binary suffix: `4096`, `64KB`, `4MiB`, `1g`.
pub fn parse_size(text: &str) -> Result<usize, String> {
    let t = text.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: usize = num.parse().map_err(|_| format!("bad size `{text}`"))?;
    let mult = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => 1 << 10,
        "m" | "mb" | "mib" => 1 << 20,
        "g" | "gb" | "gib" => 1 << 30,
        _ => return Err(format!("bad size unit in `{text}`")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size `{text}` overflows"))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key.replace('_', "-").as_str() {
            "seed" => self.seed = parse(key, value)?,
            "partitions" => self.partitions = parse(key, value)?,
            "batch-bytes" => self.batch_bytes = parse_size(value)?,
            "broadcast-threshold" => self.broadcast_threshold = parse_size(value)? as u64,
            "executors" => self.executors = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "reps" => self.reps = parse(key, value)?,
            "build-rows" => self.build_rows = parse(key, value)?,
            "probe-rows" => self.probe_rows = Some(parse(key, value)?),
            "queries" => self.queries = parse(key, value)?,
            "mem-cap-mb" => self.mem_cap_mb = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => self.format = Some(value.parse()?),
            _ => return Err(format!("unknown setting `{key}`")),
        }
        Ok(())
    }

    /// Applies a config file. Lines are `key = value`; `#` starts a comment.
    /// Values may be bare or TOML-quoted.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        for (i, raw) in text.lines().enumerate() {
            let err = |message: String| CliError::Config { path: path.to_owned(), line: i + 1, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let value = unquote(value.trim());
            self.set(key.trim(), &value).map_err(err)?;
        }
        Ok(())
    }

    /// Caps `threads` by the environment variable, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(THREADS_ENV) {
            let cap: usize =
                v.trim().parse().map_err(|_| CliError::Invalid(format!("{THREADS_ENV}={v} is not a number")))?;
            self.threads = self.threads.min(cap.max(1));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Invalid(m.into()));
        if self.reps < MIN_REPS {
            return bad(&format!("--reps must be at least {MIN_REPS}"));
        }
        if self.partitions == 0 || self.executors == 0 || self.threads == 0 {
            return bad("--partitions, --executors and --threads must be positive");
        }
        if self.queries < 10 {
            return bad("--queries must be at least 10");
        }
        Ok(())
    }

    /// `(key, value)` pairs echoed at the top of reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("seed", self.seed.to_string()),
            ("partitions", self.partitions.to_string()),
            ("batch_bytes", self.batch_bytes.to_string()),
            ("broadcast_threshold", self.broadcast_threshold.to_string()),
            ("executors", self.executors.to_string()),
            ("threads", self.threads.to_string()),
            ("reps", self.reps.to_string()),
            ("build_rows", self.build_rows.to_string()),
            ("queries", self.queries.to_string()),
        ];
        if let Some(p) = self.probe_rows {
            v.push(("probe_rows", p.to_string()));
        }
        v.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }
}

fn unquote(value: &str) -> String {
    if value.starts_with('"') || value.starts_with('\'') {
        if let Ok(t) = toml::from_str::<toml::Table>(&format!("v = {value}")) {
            if let Some(toml::Value::String(s)) = t.get("v") {
                return s.clone();
            }
        }
    }
    value.to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("4096"), Ok(4096));
        assert_eq!(parse_size("64KB"), Ok(64 << 10));
        assert_eq!(parse_size("4MiB"), Ok(4 << 20));
        assert_eq!(parse_size("1g"), Ok(1 << 30));
        assert!(parse_size("4 parsecs").is_err());
        assert!(parse_size("").is_err());
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.conf");
        std::fs::write(&path, "# sizes\nseed = 7\nbatch_bytes = 64KB\nformat = \"md\"  # quoted\n\nreps=12\n").unwrap();
        let mut s = Settings::default();
        s.apply_file(&path).unwrap();
        assert_eq!((s.seed, s.batch_bytes, s.format, s.reps), (7, 64 << 10, Some(Format::Md), 12));
        s.set("seed", "9").unwrap();
        assert_eq!(s.seed, 9);

        std::fs::write(&path, "seed = 1\nflavour = mint\n").unwrap();
        let err = Settings::default().apply_file(&path).unwrap_err().to_string();
        assert!(err.ends_with("bench.conf:2: unknown setting `flavour`"), "{err}");
    }

    #[test]
    fn too_few_reps() {
        let s = Settings { reps: 3, ..Default::default() };
        assert!(s.validate().is_err());
    }
}
