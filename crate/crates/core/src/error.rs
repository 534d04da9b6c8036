use thiserror::Error;

use crate::rowstore::{ColumnType, RowError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Row(#[from] RowError),
    #[error("partition {0} is frozen")]
    PartitionSealed(u32),
    #[error("index key must not be null")]
    NullIndexKey,
    #[error("schema has no columns")]
    EmptySchema,
    #[error("column {0} does not exist")]
    NoSuchColumn(usize),
    #[error("unsupported index column type {0}")]
    UnsupportedColumn(ColumnType),
    #[error("partition count must be at least 1")]
    InvalidPartitionCount,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("key type mismatch: index column is {expected}, key is {}", .found.map(|t| t.name()).unwrap_or("null"))]
    KeyTypeMismatch { expected: ColumnType, found: Option<ColumnType> },
    #[error("unresolved column `{0}`")]
    UnresolvedColumn(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("unknown join algorithm `{0}`")]
    UnknownJoin(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("execution failed: {0}")]
    ExecFailure(String),
    #[error("task {task} failed: {cause}")]
    TaskFailed { task: usize, cause: String },
    #[error("stale task for partition {partition}: expected version {expected}, replica has {found:?}")]
    StaleTask { partition: usize, expected: u64, found: Option<u64> },
    #[error("no surviving executor")]
    NoSurvivingExecutor,
    #[error("unknown executor {0}")]
    UnknownExecutor(usize),
    #[error("unknown version {0}")]
    UnknownVersion(u64),
    #[error("replay log: {0}")]
    ReplayLog(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
