//! Range answers for aggregation queries over instances that violate their
//! primary keys.
//!
//! The pipeline: parse a query ([`query`]), build its attack graph
//! ([`attack`]), construct a first-order rewriting with aggregates
//! ([`rewrite`]) evaluated in memory ([`logic`]) or compiled to SQL
//! ([`sql`]), and cross-check it against exhaustive repair enumeration
//! ([`oracle`], [`check`]). [`classify`] decides which rewritings exist.

pub mod aggregate;
pub mod attack;
pub mod check;
pub mod classify;
pub mod error;
pub mod logic;
pub mod oracle;
pub mod query;
pub mod rewrite;
pub mod schema;
pub mod sql;
pub mod value;

pub use aggregate::{AggOp, AggValue};
pub use error::{Error, Result};
pub use logic::RangeAnswer;
pub use query::{parse_query, AggQuery};
pub use schema::{DatabaseInstance, NumericDomain, Schema};
pub use value::{Rational, Value};
