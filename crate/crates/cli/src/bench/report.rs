//! Benchmark reports as CSV (with `#` comment lines for the suite and
//! config) or Markdown.

use std::fmt::Write as _;
use std::time::Duration;

use crate::error::{CliError, Result};

/// Order statistics over repeated timings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub reps: usize,
    pub mean: Duration,
    pub median: Duration,
    pub p5: Duration,
    pub p95: Duration,
}

impl Summary {
    /// Percentiles use the nearest-rank method.
    pub fn of(samples: &[Duration]) -> Summary {
        assert!(!samples.is_empty(), "no samples");
        let mut s = samples.to_vec();
        s.sort();
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Summary {
            reps: s.len(),
            mean: s.iter().sum::<Duration>() / s.len() as u32,
            median: rank(0.5),
            p5: rank(0.05),
            p95: rank(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub name: String,
    /// `None` for cases that could not run, e.g. an unsupported size.
    pub timing: Option<Summary>,
    pub extra: Vec<(String, String)>,
}

impl CaseRow {
    pub fn new(name: impl Into<String>, timing: Option<Summary>) -> Self {
        CaseRow { name: name.into(), timing, extra: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_owned(), value.to_string()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub suite: String,
    pub config: Vec<(String, String)>,
    pub rows: Vec<CaseRow>,
}

const FIXED: [&str; 6] = ["case", "reps", "mean_ms", "median_ms", "p5_ms", "p95_ms"];

pub fn ms(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64() * 1e3)
}

/// `a / b` to two decimals, or `n/a` when `b` is zero.
pub fn ratio(a: f64, b: f64) -> String {
    if b > 0.0 && a.is_finite() {
        format!("{:.2}", a / b)
    } else {
        "n/a".into()
    }
}

impl BenchReport {
    pub fn new(suite: &str, config: Vec<(String, String)>) -> Self {
        BenchReport { suite: suite.to_owned(), config, rows: Vec::new() }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
        if let Some(r) = self.rows.first() {
            h.extend(r.extra.iter().map(|(k, _)| k.clone()));
        }
        h
    }

    fn cells(&self) -> Result<Vec<Vec<String>>> {
        let header = self.header();
        self.rows
            .iter()
            .map(|r| {
                if r.extra.len() + FIXED.len() != header.len()
                    || r.extra.iter().zip(&header[FIXED.len()..]).any(|((k, _), h)| k != h)
                {
                    return Err(CliError::Invalid(format!("case {} has different columns", r.name)));
                }
                let mut c = vec![r.name.clone()];
                match &r.timing {
                    Some(t) => c.extend([t.reps.to_string(), ms(t.mean), ms(t.median), ms(t.p5), ms(t.p95)]),
                    None => c.extend(std::iter::repeat_n(String::new(), 5)),
                }
                c.extend(r.extra.iter().map(|(_, v)| v.clone()));
                Ok(c)
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut out = format!("# suite={}\n", self.suite);
        for (k, v) in &self.config {
            writeln!(out, "# {k}={v}").unwrap();
        }
        w.write_record(self.header()).map_err(csv_err)?;
        for c in self.cells()? {
            w.write_record(&c).map_err(csv_err)?;
        }
        out.push_str(&String::from_utf8(w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))?).unwrap());
        Ok(out)
    }

    pub fn to_markdown(&self) -> Result<String> {
        let mut out = format!("## {}\n\n", self.suite);
        if !self.config.is_empty() {
            let cfg: Vec<String> = self.config.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(out, "Config: {}\n", cfg.join(", ")).unwrap();
        }
        let header = self.header();
        writeln!(out, "| {} |", header.join(" | ")).unwrap();
        writeln!(out, "|{}", header.iter().map(|_| "---|").collect::<String>()).unwrap();
        for c in self.cells()? {
            let c: Vec<String> = c.iter().map(|s| s.replace('|', "\\|")).collect();
            writeln!(out, "| {} |", c.join(" | ")).unwrap();
        }
        Ok(out)
    }

    /// Reads a report written by [`to_csv`](Self::to_csv).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut report = BenchReport::default();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let (k, v) = line[1..].trim().split_once('=').ok_or_else(|| bad("malformed comment line"))?;
            if k == "suite" {
                report.suite = v.to_owned();
            } else {
                report.config.push((k.to_owned(), v.to_owned()));
            }
        }
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        if header.len() < FIXED.len() || header[..FIXED.len()] != FIXED {
            return Err(bad("not a benchmark report"));
        }
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let d = |i: usize| -> Result<Duration> {
                let v: f64 = rec[i].parse().map_err(|_| bad(&format!("bad number `{}`", &rec[i])))?;
                Ok(Duration::from_secs_f64(v / 1e3))
            };
            let timing = if rec[1].is_empty() {
                None
            } else {
                Some(Summary {
                    reps: rec[1].parse().map_err(|_| bad("bad reps"))?,
                    mean: d(2)?,
                    median: d(3)?,
                    p5: d(4)?,
                    p95: d(5)?,
                })
            };
            let extra =
                header[FIXED.len()..].iter().cloned().zip(rec.iter().skip(FIXED.len()).map(str::to_owned)).collect();
            report.rows.push(CaseRow { name: rec[0].to_owned(), timing, extra });
        }
        Ok(report)
    }
}

fn bad(m: &str) -> CliError {
    CliError::Invalid(format!("report: {m}"))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Invalid(format!("report: {e}"))
}
