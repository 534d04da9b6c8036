use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rowstore::Value;

/// Comparison applied by a filter. `Range` is inclusive on both ends.
/// Nulls never satisfy a predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Eq { value: Value },
    Lt { value: Value },
    Gt { value: Value },
    Range { lo: Value, hi: Value },
}

impl Predicate {
    pub fn matches(&self, v: &Value) -> bool {
        if v.is_null() {
            return false;
        }
        match self {
            Predicate::Eq { value } => v == value,
            Predicate::Lt { value } => v < value,
            Predicate::Gt { value } => v > value,
            Predicate::Range { lo, hi } => lo <= v && v <= hi,
        }
    }

    pub(crate) fn operands(&self) -> Vec<&Value> {
        match self {
            Predicate::Eq { value } | Predicate::Lt { value } | Predicate::Gt { value } => vec![value],
            Predicate::Range { lo, hi } => vec![lo, hi],
        }
    }
}

impl std::fmt::Display for Predicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Predicate::Eq { value } => write!(f, "= {}", render(value)),
            Predicate::Lt { value } => write!(f, "< {}", render(value)),
            Predicate::Gt { value } => write!(f, "> {}", render(value)),
            Predicate::Range { lo, hi } => write!(f, "in [{}, {}]", render(lo), render(hi)),
        }
    }
}

/// Values in plan text: strings quoted, numbers bare.
pub(crate) fn render(v: &Value) -> String {
    match v {
        Value::Utf8(s) => format!("{s:?}"),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFunc {
    Count,
    Sum,
    Min,
    Max,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }
}

/// A query over catalog tables. Columns are referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogicalPlan {
    Scan {
        table: String,
    },
    Filter {
        input: Box<LogicalPlan>,
        column: String,
        predicate: Predicate,
    },
    Project {
        input: Box<LogicalPlan>,
        columns: Vec<String>,
    },
    EquiJoin {
        left: Box<LogicalPlan>,
        right: Box<LogicalPlan>,
        left_col: String,
        right_col: String,
    },
    /// `column` is required for every function except `count`.
    Aggregate {
        input: Box<LogicalPlan>,
        #[serde(default)]
        group_by: Vec<String>,
        agg: AggFunc,
        #[serde(default)]
        column: Option<String>,
    },
    /// Rows of an indexed table whose index column equals `key`.
    Lookup {
        table: String,
        key: Value,
    },
}

impl LogicalPlan {
    pub fn scan(table: impl Into<String>) -> Self {
        LogicalPlan::Scan { table: table.into() }
    }

    pub fn lookup(table: impl Into<String>, key: impl Into<Value>) -> Self {
        LogicalPlan::Lookup { table: table.into(), key: key.into() }
    }

    pub fn filter(self, column: impl Into<String>, predicate: Predicate) -> Self {
        LogicalPlan::Filter { input: Box::new(self), column: column.into(), predicate }
    }

    pub fn project<S: Into<String>>(self, columns: impl IntoIterator<Item = S>) -> Self {
        LogicalPlan::Project { input: Box::new(self), columns: columns.into_iter().map(Into::into).collect() }
    }

    pub fn join(self, right: LogicalPlan, left_col: impl Into<String>, right_col: impl Into<String>) -> Self {
        LogicalPlan::EquiJoin {
            left: Box::new(self),
            right: Box::new(right),
            left_col: left_col.into(),
            right_col: right_col.into(),
        }
    }

    pub fn aggregate<S: Into<String>>(
        self,
        group_by: impl IntoIterator<Item = S>,
        agg: AggFunc,
        column: Option<&str>,
    ) -> Self {
        LogicalPlan::Aggregate {
            input: Box::new(self),
            group_by: group_by.into_iter().map(Into::into).collect(),
            agg,
            column: column.map(str::to_owned),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidPlan(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans always serialize")
    }
}
