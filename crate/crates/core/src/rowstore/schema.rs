use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::RowError;

/// Physical type of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Int32,
    Int64,
    Float64,
    Utf8,
}

impl ColumnType {
    /// Width in the fixed region, `None` for variable-length types.
    pub fn fixed_width(self) -> Option<usize> {
        match self {
            ColumnType::Int32 => Some(4),
            ColumnType::Int64 | ColumnType::Float64 => Some(8),
            ColumnType::Utf8 => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ColumnType::Int32 => "int32",
            ColumnType::Int64 => "int64",
            ColumnType::Float64 => "float64",
            ColumnType::Utf8 => "utf8",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ColumnType {
    type Err = RowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "int32" | "i32" => Ok(ColumnType::Int32),
            "int64" | "i64" => Ok(ColumnType::Int64),
            "float64" | "f64" | "double" => Ok(ColumnType::Float64),
            "utf8" | "string" | "str" => Ok(ColumnType::Utf8),
            other => Err(RowError::InvalidSchema(format!("unknown column type `{other}`"))),
        }
    }
}

/// A single typed cell.
///
/// Equality, hashing and ordering are total: floats compare by their bit
/// pattern (so `NaN == NaN` and `-0.0 != 0.0`), matching how index keys
/// are canonicalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Null,
    Int32(i32),
    Int64(i64),
    Float64(f64),
    Utf8(String),
}

impl Value {
    pub fn column_type(&self) -> Option<ColumnType> {
        match self {
            Value::Null => None,
            Value::Int32(_) => Some(ColumnType::Int32),
            Value::Int64(_) => Some(ColumnType::Int64),
            Value::Float64(_) => Some(ColumnType::Float64),
            Value::Utf8(_) => Some(ColumnType::Utf8),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Int32(_) => 1,
            Value::Int64(_) => 2,
            Value::Float64(_) => 3,
            Value::Utf8(_) => 4,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Int32(a), Value::Int32(b)) => a.cmp(b),
            (Value::Int64(a), Value::Int64(b)) => a.cmp(b),
            (Value::Float64(a), Value::Float64(b)) => a.total_cmp(b),
            (Value::Utf8(a), Value::Utf8(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Null => {}
            Value::Int32(v) => v.hash(state),
            Value::Int64(v) => v.hash(state),
            Value::Float64(v) => v.to_bits().hash(state),
            Value::Utf8(v) => v.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Int32(v) => write!(f, "{v}"),
            Value::Int64(v) => write!(f, "{v}"),
            Value::Float64(v) => write!(f, "{v:?}"),
            Value::Utf8(v) => f.write_str(v),
        }
    }
}

impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::Int32(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int64(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float64(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Utf8(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Utf8(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    #[serde(default)]
    pub nullable: bool,
}

impl Field {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Field { name: name.into(), ty, nullable: false }
    }

    pub fn nullable(name: impl Into<String>, ty: ColumnType) -> Self {
        Field { name: name.into(), ty, nullable: true }
    }
}

/// Byte layout derived from the field list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub bitmap_len: usize,
    pub fixed_len: usize,
    /// Per column: offset into the fixed region, or `None` for Utf8.
    pub fixed_offset: Vec<Option<usize>>,
    /// Per column: bit in the null bitmap, or `None` when not nullable.
    pub null_bit: Vec<Option<usize>>,
    /// Ordinals of Utf8 columns, in schema order.
    pub var_cols: Vec<usize>,
}

impl Layout {
    fn new(fields: &[Field]) -> Self {
        let mut fixed_len = 0;
        let mut nullable: usize = 0;
        let mut fixed_offset = Vec::with_capacity(fields.len());
        let mut null_bit = Vec::with_capacity(fields.len());
        let mut var_cols = Vec::new();
        for (i, f) in fields.iter().enumerate() {
            match f.ty.fixed_width() {
                Some(w) => {
                    fixed_offset.push(Some(fixed_len));
                    fixed_len += w;
                }
                None => {
                    fixed_offset.push(None);
                    var_cols.push(i);
                }
            }
            if f.nullable {
                null_bit.push(Some(nullable));
                nullable += 1;
            } else {
                null_bit.push(None);
            }
        }
        Layout { bitmap_len: nullable.div_ceil(8), fixed_len, fixed_offset, null_bit, var_cols }
    }

    pub fn nullable_count(&self) -> usize {
        self.null_bit.iter().flatten().count()
    }

    /// Start of the variable-length region.
    pub fn var_start(&self) -> usize {
        self.bitmap_len + self.fixed_len
    }
}

/// Ordered, uniquely-named columns plus an optional index column.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct Schema {
    fields: Vec<Field>,
    index_col: Option<usize>,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    columns: Vec<Field>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index_col: Option<usize>,
}

impl TryFrom<RawSchema> for Schema {
    type Error = RowError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        Schema::new(raw.columns)?.with_index_col(raw.index_col)
    }
}

impl From<Schema> for RawSchema {
    fn from(s: Schema) -> Self {
        RawSchema { columns: s.fields, index_col: s.index_col }
    }
}

impl PartialEq for Schema {
    fn eq(&self, other: &Self) -> bool {
        self.fields == other.fields && self.index_col == other.index_col
    }
}

impl Eq for Schema {}

impl Schema {
    pub fn new(fields: Vec<Field>) -> Result<Self, RowError> {
        let mut seen = HashSet::new();
        for f in &fields {
            if !seen.insert(f.name.as_str()) {
                return Err(RowError::InvalidSchema(format!("duplicate column name `{}`", f.name)));
            }
        }
        let layout = Layout::new(&fields);
        Ok(Schema { fields, index_col: None, layout })
    }

    pub fn with_index_col(mut self, col: Option<usize>) -> Result<Self, RowError> {
        if let Some(c) = col {
            if c >= self.fields.len() {
                return Err(RowError::InvalidSchema(format!(
                    "index column {c} out of range for {} columns",
                    self.fields.len()
                )));
            }
        }
        self.index_col = col;
        Ok(self)
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &Field {
        &self.fields[i]
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn index_col(&self) -> Option<usize> {
        self.index_col
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Same columns, regardless of which one is indexed.
    pub fn same_columns(&self, other: &Schema) -> bool {
        self.fields == other.fields
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Output schema of an equi-join: left columns then right columns.
    /// Right-side names that clash get a `_right` suffix.
    pub fn joined(left: &Schema, right: &Schema) -> Schema {
        let mut fields = left.fields.clone();
        for f in &right.fields {
            let mut name = f.name.clone();
            while fields.iter().any(|g| g.name == name) {
                name.push_str("_right");
            }
            fields.push(Field { name, ty: f.ty, nullable: f.nullable });
        }
        Schema::new(fields).expect("join renames keep names unique")
    }
}
