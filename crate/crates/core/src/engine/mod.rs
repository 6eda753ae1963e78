//! Pipe-and-filter execution of manifests over JSON record streams.

pub mod dates;
mod exec;
pub mod json;
pub mod ops;
pub mod path;

pub use exec::{
    execute, guard_action, ActionRequest, DebugSink, DeliveryClient, DeliveryError, Discard,
    ExecError, ExecutionContext, PipelineResult, PipelineStats, ProviderClient, ProviderError,
    StageTrace,
};
pub use ops::{FieldScope, OpEnv, OpFailure, Stream};
pub use path::{path_get, Path};
