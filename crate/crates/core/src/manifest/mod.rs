//! The text-based operator manifest: grammar, parser, validator and describer.

pub mod canon;
mod describe;
pub mod examples;
mod model;
mod parse;
mod validate;

pub use canon::{canonicalize, digest_source, hash_source};
pub use describe::{describe, InvalidManifest, StepDescription};
pub use model::{AccessPattern, Manifest, OperatorCategory, OperatorSpec, OperatorType, ParamValue};
pub use parse::{parse, ParseError};
pub use validate::{
    bucket_bounds, validate, Diagnostic, Rule, AGGREGATE_OPERATIONS, ANONYMIZE_METHODS,
    EXTRACT_OPERATIONS, FILTER_OPERATIONS, MAP_OPERATIONS,
};
