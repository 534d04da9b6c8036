//! CSV files with a header row, plus a JSON schema sidecar.
//!
//! Nulls are written as `\N`. A string starting with a backslash gets one
//! extra leading backslash so it cannot be mistaken for a null. When
//! reading, an empty field in a nullable non-text column is also null.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rowstore::{ColumnType, Schema, Value};
use crate::table::PlainTable;

const NULL: &str = "\\N";

/// `data.csv` -> `data.csv.schema.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".schema.json");
    PathBuf::from(s)
}

pub fn write_schema(schema: &Schema, path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(schema).expect("schemas serialize");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_schema(path: &Path) -> Result<Schema> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Parse { line: e.line() as u64, message: format!("{}: {e}", path.display()) })
}

pub fn write_csv(table: &PlainTable, path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_csv_to(table, f)
}

pub fn write_csv_to(table: &PlainTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let schema = table.schema();
    w.write_record(schema.fields().iter().map(|f| f.name.as_str())).map_err(io)?;
    let mut fields: Vec<String> = Vec::with_capacity(schema.len());
    for i in 0..table.len() {
        fields.clear();
        fields.extend(table.values(i)?.iter().map(render));
        w.write_record(&fields).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the table and its schema sidecar.
pub fn write_with_sidecar(table: &PlainTable, path: &Path) -> Result<()> {
    write_csv(table, path)?;
    write_schema(table.schema(), &sidecar_path(path))
}

pub fn read_csv(path: &Path, schema: Arc<Schema>) -> Result<PlainTable> {
    read_csv_from(BufReader::new(File::open(path)?), schema)
}

/// Reads a table using the schema in its sidecar.
pub fn read_with_sidecar(path: &Path) -> Result<PlainTable> {
    let schema = read_schema(&sidecar_path(path))?;
    read_csv(path, Arc::new(schema))
}

pub fn read_csv_from(input: impl Read, schema: Arc<Schema>) -> Result<PlainTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(|e| csv_error(e, 1))?.clone();
    let names: Vec<&str> = schema.fields().iter().map(|f| f.name.as_str()).collect();
    if header.iter().collect::<Vec<_>>() != names {
        return Err(Error::Parse {
            line: 1,
            message: format!("header {:?} does not match columns {names:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut table = PlainTable::new(schema.clone());
    let mut record = csv::StringRecord::new();
    let mut row = Vec::with_capacity(schema.len());
    loop {
        let more = r.read_record(&mut record).map_err(|e| csv_error(e, 0))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        row.clear();
        for (field, text) in schema.fields().iter().zip(record.iter()) {
            let v = parse(field.ty, field.nullable, text)
                .map_err(|m| Error::Parse { line, message: format!("column `{}`: {m}", field.name) })?;
            row.push(v);
        }
        table.push(&row).map_err(|e| Error::Parse { line, message: e.to_string() })?;
    }
    Ok(table)
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => NULL.to_owned(),
        Value::Int32(x) => x.to_string(),
        Value::Int64(x) => x.to_string(),
        Value::Float64(x) => format!("{x:?}"),
        Value::Utf8(s) if s.starts_with('\\') => format!("\\{s}"),
        Value::Utf8(s) => s.clone(),
    }
}

/// Reads one non-null cell the way `read_csv` would.
pub fn parse_value(ty: ColumnType, text: &str) -> std::result::Result<Value, String> {
    parse(ty, false, text)
}

fn parse(ty: ColumnType, nullable: bool, text: &str) -> std::result::Result<Value, String> {
    if text == NULL || (text.is_empty() && nullable && ty != ColumnType::Utf8) {
        return if nullable { Ok(Value::Null) } else { Err("null in a non-null column".into()) };
    }
    let bad = |e: &dyn std::fmt::Display| format!("cannot read {text:?} as {ty}: {e}");
    Ok(match ty {
        ColumnType::Int32 => Value::Int32(text.trim().parse().map_err(|e| bad(&e))?),
        ColumnType::Int64 => Value::Int64(text.trim().parse().map_err(|e| bad(&e))?),
        ColumnType::Float64 => Value::Float64(text.trim().parse().map_err(|e| bad(&e))?),
        ColumnType::Utf8 => Value::Utf8(text.strip_prefix('\\').unwrap_or(text).to_owned()),
    })
}

fn csv_error(e: csv::Error, fallback: u64) -> Error {
    let line = e.position().map_or(fallback, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e.to_string()),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            Error::Parse { line, message: format!("expected {expected_len} fields, found {len}") }
        }
        kind => Error::Parse { line, message: format!("{kind:?}") },
    }
}

fn io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rowstore::Field;

    fn schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(vec![
                Field::new("k", ColumnType::Int64),
                Field::nullable("f", ColumnType::Float64),
                Field::nullable("s", ColumnType::Utf8),
                Field::new("i", ColumnType::Int32),
            ])
            .unwrap(),
        )
    }

    fn round_trip(t: &PlainTable) -> PlainTable {
        let mut buf = Vec::new();
        write_csv_to(t, &mut buf).unwrap();
        read_csv_from(&buf[..], t.schema().clone()).unwrap()
    }

    #[test]
    fn awkward_values_round_trip() {
        let rows = vec![
            vec![Value::Int64(i64::MIN), Value::Float64(-0.0), Value::Utf8(String::new()), Value::Int32(-1)],
            vec![Value::Int64(1), Value::Null, Value::Null, Value::Int32(i32::MAX)],
            vec![Value::Int64(2), Value::Float64(1e-300), Value::Utf8("a,\"b\"\nc".into()), Value::Int32(0)],
            vec![Value::Int64(3), Value::Float64(0.1 + 0.2), Value::Utf8("\\N".into()), Value::Int32(0)],
            vec![Value::Int64(4), Value::Float64(f64::INFINITY), Value::Utf8("\\\\x".into()), Value::Int32(0)],
        ];
        let t = PlainTable::from_rows(schema(), rows).unwrap();
        let back = round_trip(&t);
        assert_eq!(back, t);
        for i in 0..t.len() {
            assert_eq!(back.row(i), t.row(i));
        }
    }

    #[test]
    fn errors_name_the_line() {
        let input = "k,f,s,i\n1,2.5,x,3\n2,oops,y,4\n";
        assert_eq!(
            read_csv_from(input.as_bytes(), schema()).unwrap_err(),
            Error::Parse {
                line: 3,
                message: "column `f`: cannot read \"oops\" as float64: invalid float literal".into()
            }
        );
        let short = "k,f,s,i\n1,2.5,\"a\nb\",3\n5,1\n";
        let err = read_csv_from(short.as_bytes(), schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
        let header = "k,f,i\n";
        assert!(matches!(read_csv_from(header.as_bytes(), schema()), Err(Error::Parse { line: 1, .. })));
        let null = "k,f,s,i\n\\N,1,x,3\n";
        assert!(matches!(read_csv_from(null.as_bytes(), schema()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_numeric_field_is_null() {
        let t = read_csv_from("k,f,s,i\n1,,,3\n".as_bytes(), schema()).unwrap();
        assert_eq!(
            t.values(0).unwrap(),
            vec![Value::Int64(1), Value::Null, Value::Utf8(String::new()), Value::Int32(3)]
        );
    }

    #[test]
    fn sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = PlainTable::from_rows(schema(), vec![vec![Value::Int64(1), Value::Null, Value::Null, Value::Int32(2)]])
            .unwrap();
        write_with_sidecar(&t, &path).unwrap();
        assert!(sidecar_path(&path).ends_with("t.csv.schema.json"));
        assert_eq!(read_with_sidecar(&path).unwrap(), t);
    }
}
