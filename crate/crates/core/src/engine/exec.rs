use std::collections::BTreeMap;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::json::{canonical_len, entry_count};
use super::ops::{self, FieldScope, OpEnv, OpFailure, Stream};
use crate::manifest::{validate, Diagnostic, Manifest, OperatorSpec, OperatorType};

/// An app-initiated request flowing through a Receive pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub action: String,
    #[serde(default)]
    pub body: Value,
    #[serde(default)]
    pub parameters: BTreeMap<String, Value>,
}

impl ActionRequest {
    pub fn new(action: impl Into<String>) -> Self {
        Self {
            action: action.into(),
            body: Value::Object(Default::default()),
            parameters: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: Value) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }

    pub fn to_record(&self) -> Value {
        serde_json::to_value(self).expect("action requests always serialize")
    }

    /// `None` when the record no longer has the request shape.
    pub fn from_record(record: &Value) -> Option<ActionRequest> {
        let req: ActionRequest = serde_json::from_value(record.clone()).ok()?;
        (!req.action.is_empty()).then_some(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider rejected the request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("no credentials for provider `{0}`")]
    NoCredentials(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("delivery to {destination} failed after {attempts} attempt(s): {message}")]
pub struct DeliveryError {
    pub destination: String,
    pub attempts: u32,
    pub message: String,
}

/// Data-side access to a resource provider.
pub trait ProviderClient: Send + Sync {
    fn pull(&self, resource_type: &str, query: Option<&str>) -> Result<Value, ProviderError>;
    fn write(&self, resource_type: &str, request: &ActionRequest) -> Result<Value, ProviderError>;
}

/// Outbound release of a pipeline's output. Returns a receipt id when the
/// transport issues one.
pub trait DeliveryClient: Send + Sync {
    fn post(&self, destination: &str, data: &[Value]) -> Result<Option<String>, DeliveryError>;
}

/// A delivery client that accepts everything and keeps nothing.
pub struct Discard;

impl DeliveryClient for Discard {
    fn post(&self, _: &str, _: &[Value]) -> Result<Option<String>, DeliveryError> {
        Ok(None)
    }
}

/// Streams observed at Debug operators, keyed by operator id.
pub type DebugSink = Mutex<Vec<(String, Vec<Value>)>>;

pub struct ExecutionContext<'a> {
    pub now: DateTime<Utc>,
    pub provider: &'a dyn ProviderClient,
    pub delivery: &'a dyn DeliveryClient,
    pub action_input: Option<ActionRequest>,
    pub debug_sink: Option<&'a DebugSink>,
    pub noise_seed: u64,
    /// Skip the sink's side effect (no Post, no Write).
    pub dry_run: bool,
}

impl<'a> ExecutionContext<'a> {
    pub fn new(
        now: DateTime<Utc>,
        provider: &'a dyn ProviderClient,
        delivery: &'a dyn DeliveryClient,
    ) -> Self {
        Self {
            now,
            provider,
            delivery,
            action_input: None,
            debug_sink: None,
            noise_seed: 0,
            dry_run: false,
        }
    }

    pub fn with_action(mut self, request: ActionRequest) -> Self {
        self.action_input = Some(request);
        self
    }

    pub fn with_debug(mut self, sink: &'a DebugSink) -> Self {
        self.debug_sink = Some(sink);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise_seed = seed;
        self
    }

    pub fn dry_run(mut self) -> Self {
        self.dry_run = true;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub input_count: usize,
    pub output_count: usize,
    pub input_bytes: usize,
    pub output_bytes: usize,
}

impl PipelineStats {
    pub fn entries_reduction_pct(&self) -> f64 {
        reduction(self.input_count, self.output_count)
    }

    pub fn bytes_reduction_pct(&self) -> f64 {
        reduction(self.input_bytes, self.output_bytes)
    }
}

fn reduction(input: usize, output: usize) -> f64 {
    if input == 0 {
        0.0
    } else {
        (input.saturating_sub(output)) as f64 / input as f64 * 100.0
    }
}

/// What one stage produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub operator_id: String,
    pub op_type: OperatorType,
    pub count: usize,
    pub bytes: usize,
    pub sample: Vec<Value>,
}

const SAMPLE_SIZE: usize = 3;

impl StageTrace {
    fn new(op: &OperatorSpec, stream: &[Value], count: usize) -> Self {
        Self {
            operator_id: op.id.clone(),
            op_type: op.op_type,
            count,
            bytes: stream.iter().map(canonical_len).sum(),
            sample: stream.iter().take(SAMPLE_SIZE).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub emitted: Vec<Value>,
    pub stats: PipelineStats,
    pub stages: Vec<StageTrace>,
    pub receipt: Option<String>,
    /// Raw source output, the "before" half of a preview.
    pub source_output: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("manifest is invalid ({} problem(s))", .0.len())]
    InvalidManifest(Vec<Diagnostic>),
    #[error("pipeline needs an action request but none was supplied")]
    MissingActionInput,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Delivery(#[from] DeliveryError),
    #[error("operator `{id}` failed: {cause}")]
    Operator { id: String, cause: OpFailure },
}

fn run_stage(op: &OperatorSpec, stream: Stream, env: &mut OpEnv) -> Result<Stream, ExecError> {
    ops::apply(op, stream, env).map_err(|cause| ExecError::Operator {
        id: op.id.clone(),
        cause,
    })
}

/// Runs the request through the operators between Receive and Write. `None`
/// means the request was filtered out and must not be executed.
pub fn guard_action(
    request: &ActionRequest,
    prefix: &[&OperatorSpec],
    now: DateTime<Utc>,
) -> Result<Option<ActionRequest>, ExecError> {
    let mut env = OpEnv::new(now, FieldScope::Action, ChaCha8Rng::seed_from_u64(0));
    let mut stream = vec![request.to_record()];
    for op in prefix {
        stream = run_stage(op, stream, &mut env)?;
    }
    Ok(stream.first().and_then(ActionRequest::from_record))
}

/// Executes a validated manifest once.
pub fn execute(m: &Manifest, ctx: &ExecutionContext<'_>) -> Result<PipelineResult, ExecError> {
    let diagnostics = validate(m);
    if !diagnostics.is_empty() {
        return Err(ExecError::InvalidManifest(diagnostics));
    }
    let stages: Vec<&OperatorSpec> = m
        .stages()
        .filter(|op| op.op_type != OperatorType::Inject)
        .collect();
    let mut trace = Vec::with_capacity(stages.len());
    let scope = if m.is_action_pipeline() {
        FieldScope::Action
    } else {
        FieldScope::Record
    };
    let mut env = OpEnv::new(ctx.now, scope, ChaCha8Rng::seed_from_u64(ctx.noise_seed));

    // A provider response that is a bare array streams its elements.
    let (source_output, input_count, rest): (Stream, usize, &[&OperatorSpec]) =
        match stages[0].op_type {
            OperatorType::Pull => {
                let op = stages[0];
                let resource = op.str_param("resourceType").unwrap_or_default();
                let value = ctx.provider.pull(resource, op.str_param("query"))?;
                let count = entry_count(&value);
                let stream = match value {
                    Value::Array(items) => items,
                    other => vec![other],
                };
                (stream, count, &stages[1..])
            }
            OperatorType::Receive => {
                let req = ctx
                    .action_input
                    .as_ref()
                    .ok_or(ExecError::MissingActionInput)?;
                (vec![req.to_record()], 1, &stages[1..])
            }
            _ => (Vec::new(), 0, &stages[..]),
        };
    if let Some(source) = stages.first().filter(|op| op.op_type.is_source()) {
        trace.push(StageTrace::new(source, &source_output, input_count));
    }

    let Some((sink, middle)) = rest.split_last() else {
        return Err(ExecError::InvalidManifest(Vec::new()));
    };
    let mut stream = source_output.clone();
    for op in middle {
        stream = run_stage(op, stream, &mut env)?;
        if op.op_type == OperatorType::Debug {
            record_debug(ctx, op, &stream);
        }
        trace.push(StageTrace::new(op, &stream, stream.len()));
    }

    let mut receipt = None;
    let emitted = match sink.op_type {
        OperatorType::Post => {
            if !ctx.dry_run {
                let dest = sink.str_param("destination").unwrap_or_default();
                receipt = ctx.delivery.post(dest, &stream)?;
            }
            stream
        }
        OperatorType::Write => {
            let action = sink.str_param("action").unwrap_or_default();
            let resource = sink.str_param("resourceType").unwrap_or_default();
            let mut written = Vec::new();
            for req in stream.iter().filter_map(ActionRequest::from_record) {
                if req.action != action {
                    continue;
                }
                if !ctx.dry_run {
                    ctx.provider.write(resource, &req)?;
                }
                written.push(req.to_record());
            }
            written
        }
        _ => {
            record_debug(ctx, sink, &stream);
            stream
        }
    };
    trace.push(StageTrace::new(sink, &emitted, emitted.len()));

    let stats = PipelineStats {
        input_count,
        output_count: emitted.len(),
        input_bytes: source_output.iter().map(canonical_len).sum(),
        output_bytes: emitted.iter().map(canonical_len).sum(),
    };
    Ok(PipelineResult {
        emitted,
        stats,
        stages: trace,
        receipt,
        source_output,
    })
}

fn record_debug(ctx: &ExecutionContext<'_>, op: &OperatorSpec, stream: &[Value]) {
    if let Some(sink) = ctx.debug_sink {
        sink.lock()
            .expect("debug sink poisoned")
            .push((op.id.clone(), stream.to_vec()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{examples, parse};
    use serde_json::json;

    struct Fixture {
        data: Value,
        writes: Mutex<Vec<ActionRequest>>,
    }

    impl Fixture {
        fn new(data: Value) -> Self {
            Self {
                data,
                writes: Mutex::new(Vec::new()),
            }
        }
    }

    impl ProviderClient for Fixture {
        fn pull(&self, _: &str, _: Option<&str>) -> Result<Value, ProviderError> {
            Ok(self.data.clone())
        }

        fn write(&self, _: &str, request: &ActionRequest) -> Result<Value, ProviderError> {
            self.writes.lock().unwrap().push(request.clone());
            Ok(json!({"ok": true}))
        }
    }

    #[derive(Default)]
    struct Recorder(Mutex<Vec<Vec<Value>>>);

    impl DeliveryClient for Recorder {
        fn post(&self, _: &str, data: &[Value]) -> Result<Option<String>, DeliveryError> {
            self.0.lock().unwrap().push(data.to_vec());
            Ok(Some("d-1".into()))
        }
    }

    fn now() -> DateTime<Utc> {
        "2025-06-01T12:00:00Z".parse().unwrap()
    }

    #[test]
    fn zoom_keeps_future_zoom_events() {
        let m = parse(examples::ZOOM).unwrap();
        let events: Vec<Value> = (0..10)
            .map(|i| {
                let day = if i % 2 == 0 { "2025-06-10" } else { "2025-05-10" };
                let loc = if i % 4 < 2 { "https://zoom.us/j/1" } else { "Room" };
                json!({"summary": format!("e{i}"), "location": loc, "start": {"dateTime": format!("{day}T10:00:00Z")}})
            })
            .collect();
        let provider = Fixture::new(json!({ "events": events }));
        let delivery = Recorder::default();
        let result = execute(&m, &ExecutionContext::new(now(), &provider, &delivery)).unwrap();
        let names: Vec<&str> = result.emitted.iter().map(|e| e["summary"].as_str().unwrap()).collect();
        assert_eq!(names, ["e0", "e4", "e8"]);
        assert_eq!(result.stats.input_count, 10);
        assert_eq!(result.stats.output_count, 3);
        assert_eq!(result.receipt.as_deref(), Some("d-1"));
        assert_eq!(delivery.0.lock().unwrap().len(), 1);
        assert_eq!(result.stages.len(), 5);
    }

    #[test]
    fn empty_provider_yields_nothing() {
        let m = parse("TITLE: t\nPIPELINE: P -> S\nP(type: \"Pull\", resourceType: \"x\")\nS(type: \"Post\", destination: \"d\")").unwrap();
        let provider = Fixture::new(json!([]));
        let result = execute(&m, &ExecutionContext::new(now(), &provider, &Discard)).unwrap();
        assert!(result.emitted.is_empty());
        assert_eq!(result.stats.output_count, 0);
    }

    #[test]
    fn notability_guards_writes() {
        let m = parse(examples::NOTABILITY).unwrap();
        let provider = Fixture::new(json!(null));
        let inside = ActionRequest::new("create").param("parents", json!("folderId"));
        let outside = ActionRequest::new("create").param("parents", json!("other"));
        let r = execute(&m, &ExecutionContext::new(now(), &provider, &Discard).with_action(outside)).unwrap();
        assert!(r.emitted.is_empty());
        assert!(provider.writes.lock().unwrap().is_empty());
        execute(&m, &ExecutionContext::new(now(), &provider, &Discard).with_action(inside.clone())).unwrap();
        assert_eq!(*provider.writes.lock().unwrap(), vec![inside]);
        let delete = ActionRequest::new("delete").param("parents", json!("folderId"));
        execute(&m, &ExecutionContext::new(now(), &provider, &Discard).with_action(delete)).unwrap();
        assert_eq!(provider.writes.lock().unwrap().len(), 1);
    }

    #[test]
    fn missing_action_input() {
        let m = parse(examples::NOTABILITY).unwrap();
        let provider = Fixture::new(json!(null));
        let err = execute(&m, &ExecutionContext::new(now(), &provider, &Discard)).unwrap_err();
        assert_eq!(err, ExecError::MissingActionInput);
    }

    #[test]
    fn guard_blocks_other_actions() {
        let create = OperatorSpec::new("F", OperatorType::Filter)
            .with("operation", crate::manifest::ParamValue::Str("=".into()))
            .with("field", crate::manifest::ParamValue::Str("action".into()))
            .with("targetValue", crate::manifest::ParamValue::Str("create".into()));
        for action in ["create", "read", "update", "delete"] {
            let out = guard_action(&ActionRequest::new(action), &[&create], now()).unwrap();
            assert_eq!(out.is_some(), action == "create", "{action}");
        }
    }

    #[test]
    fn dry_run_skips_side_effects_and_debug_collects() {
        let m = parse("TITLE: t\nPIPELINE: P -> D -> S\nP(type: \"Pull\", resourceType: \"x\")\nD(type: \"Debug\")\nS(type: \"Post\", destination: \"d\")").unwrap();
        let provider = Fixture::new(json!([1, 2]));
        let delivery = Recorder::default();
        let sink = DebugSink::default();
        let ctx = ExecutionContext::new(now(), &provider, &delivery).with_debug(&sink).dry_run();
        let r = execute(&m, &ctx).unwrap();
        assert_eq!(r.emitted, vec![json!(1), json!(2)]);
        assert!(delivery.0.lock().unwrap().is_empty());
        assert_eq!(sink.lock().unwrap()[0].0, "D");
    }

    #[test]
    fn invalid_manifest_rejected() {
        let m = parse("TITLE: t\nPIPELINE: L\nL(type: \"Limit\", count: 1)").unwrap();
        let provider = Fixture::new(json!(null));
        assert!(matches!(
            execute(&m, &ExecutionContext::new(now(), &provider, &Discard)),
            Err(ExecError::InvalidManifest(_))
        ));
    }

    #[test]
    fn reduction_percentages() {
        let s = PipelineStats { input_count: 500, output_count: 20, input_bytes: 10, output_bytes: 10 };
        assert_eq!(s.entries_reduction_pct(), 96.0);
        assert_eq!(s.bytes_reduction_pct(), 0.0);
        assert_eq!(PipelineStats::default().entries_reduction_pct(), 0.0);
    }
}
