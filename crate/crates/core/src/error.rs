use std::path::PathBuf;

use num_bigint::BigUint;
use thiserror::Error;

use crate::aggregate::AggOp;
use crate::query::Var;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid instance: {0}")]
    Instance(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid query: {0}")]
    Query(String),

    #[error("the attack graph is cyclic")]
    CyclicAttackGraph,

    #[error("{count} repairs exceed the cap of {cap}")]
    CapExceeded { count: BigUint, cap: u64 },

    #[error("unbound variable `{0}`")]
    Unbound(Var),

    #[error("evaluation failed: {0}")]
    Eval(String),

    #[error("{0} has no value on the empty multiset")]
    UndefinedEmpty(AggOp),

    #[error("not supported: {0}")]
    Unsupported(String),

    #[error("sql: {0}")]
    Sql(#[from] rusqlite::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
