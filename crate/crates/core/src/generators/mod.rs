//! Benchmark data and query suites: NEXMark-style entity streams, flight
//! records, the attacker's schema-subset data, and the query catalog.

mod catalog;
mod config;
mod flights;
mod io;
mod nexmark;
mod subsets;

use thiserror::Error;

pub use catalog::{catalog_query, catalog_query_with, CatalogParams, QueryId};
pub use config::{Counts, GeneratorConfig, RateProfile, ValueRanges, PRNG_NAME};
pub use flights::gen_flights;
pub use io::{read_stream, write_stream};
pub use nexmark::{gen_nexmark, NexmarkStreams};
pub use subsets::{field_types, synth_schema_subsets, FieldType, SchemaVariant};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneratorError {
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
