//! Dry-run a manifest over a fixture and report every stage.

use chrono::{DateTime, Utc};
use hub_core::broker::pkce;
use hub_core::engine::{execute, ActionRequest, Discard, ExecError, ExecutionContext, ProviderClient, ProviderError};
use hub_core::manifest::{parse, validate, Manifest, OperatorType, ParseError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fixture::Fixture;
use crate::provider::{MockProvider, Reject, TokenRequest};
use crate::schema::SchemaError;

const SAMPLES: usize = 3;
const REDIRECT: &str = "http://127.0.0.1/debug";

#[derive(Debug, Error)]
pub enum DebugError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("manifest is invalid: {0}")]
    Invalid(String),
    #[error("manifest reads `{manifest}` but the fixture holds `{fixture}` records")]
    ProviderMismatch { manifest: String, fixture: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("fixture provider refused: {0}")]
    Provider(String),
    #[error("record {index} cannot be turned into a request")]
    NotARequest { index: usize },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDump {
    pub operator_id: String,
    pub op_type: OperatorType,
    pub count: usize,
    pub bytes: usize,
    pub sample: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugReport {
    pub title: String,
    /// Pipeline executions; one per record for request-driven manifests.
    pub runs: usize,
    pub stages: Vec<StageDump>,
}

struct LocalSource {
    provider: MockProvider,
    token: String,
}

fn refused(r: Reject) -> DebugError {
    DebugError::Provider(format!("{} {}", r.status, r.message))
}

impl LocalSource {
    fn connect(provider: MockProvider) -> Result<Self, DebugError> {
        let verifier = pkce::generate_verifier();
        let (code, _) = provider
            .authorize("debug", REDIRECT, "debug", &pkce::challenge_for(&verifier), "S256")
            .map_err(refused)?;
        let tokens = provider
            .token(&TokenRequest {
                grant_type: "authorization_code".into(),
                code: Some(code),
                code_verifier: Some(verifier),
                refresh_token: None,
                client_id: Some("debug".into()),
                redirect_uri: Some(REDIRECT.into()),
            })
            .map_err(refused)?;
        let token = tokens["access_token"].as_str().unwrap_or_default().to_string();
        Ok(Self { provider, token })
    }
}

impl ProviderClient for LocalSource {
    fn pull(&self, resource_type: &str, query: Option<&str>) -> Result<Value, ProviderError> {
        self.provider
            .pull(&self.token, resource_type, query)
            .map_err(|r| ProviderError::Rejected { status: r.status, message: r.message })
    }

    fn write(&self, resource_type: &str, request: &ActionRequest) -> Result<Value, ProviderError> {
        self.provider
            .write(&self.token, resource_type, request)
            .map_err(|r| ProviderError::Rejected { status: r.status, message: r.message })
    }
}

/// Request-shaped records pass through; any other object becomes a request
/// for the sink's action with the record's fields as parameters.
fn as_request(m: &Manifest, record: &Value) -> Option<ActionRequest> {
    if record.get("action").is_some() {
        return ActionRequest::from_record(record);
    }
    let action = m.sink()?.str_param("action")?;
    let fields = record.as_object()?;
    Some(
        fields
            .iter()
            .fold(ActionRequest::new(action), |req, (k, v)| req.param(k, v.clone())),
    )
}

fn resource_type(m: &Manifest) -> Option<&str> {
    m.stages().find_map(|op| op.str_param("resourceType"))
}

pub fn debug_manifest(text: &str, fixture: &Fixture, now: DateTime<Utc>) -> Result<DebugReport, DebugError> {
    let m = parse(text)?;
    let problems = validate(&m);
    if !problems.is_empty() {
        let joined = problems.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ");
        return Err(DebugError::Invalid(joined));
    }
    if let Some(rt) = resource_type(&m) {
        if rt != fixture.provider_id {
            return Err(DebugError::ProviderMismatch {
                manifest: rt.into(),
                fixture: fixture.provider_id.clone(),
            });
        }
    }
    let source = LocalSource::connect(MockProvider::new(fixture)?)?;
    let mut report = DebugReport {
        title: m.title.clone(),
        runs: 0,
        stages: m
            .stages()
            .map(|op| StageDump {
                operator_id: op.id.clone(),
                op_type: op.op_type,
                count: 0,
                bytes: 0,
                sample: Vec::new(),
            })
            .collect(),
    };
    if m.is_action_pipeline() {
        for (index, record) in fixture.records.iter().enumerate() {
            let request = as_request(&m, record).ok_or(DebugError::NotARequest { index })?;
            let ctx = ExecutionContext::new(now, &source, &Discard).dry_run().with_action(request);
            absorb(&mut report, &execute(&m, &ctx)?);
        }
    } else {
        let ctx = ExecutionContext::new(now, &source, &Discard).dry_run();
        absorb(&mut report, &execute(&m, &ctx)?);
    }
    Ok(report)
}

fn absorb(report: &mut DebugReport, result: &hub_core::engine::PipelineResult) {
    report.runs += 1;
    for trace in &result.stages {
        if let Some(dump) = report.stages.iter_mut().find(|d| d.operator_id == trace.operator_id) {
            dump.count += trace.count;
            dump.bytes += trace.bytes;
            let room = SAMPLES.saturating_sub(dump.sample.len());
            dump.sample.extend(trace.sample.iter().take(room).cloned());
        }
    }
}

impl DebugReport {
    pub fn render(&self) -> String {
        let mut out = format!("{} ({} run{})\n", self.title, self.runs, if self.runs == 1 { "" } else { "s" });
        for (i, s) in self.stages.iter().enumerate() {
            out.push_str(&format!(
                "[{}] {} ({}): {} records, {} bytes\n",
                i + 1,
                s.operator_id,
                s.op_type.name(),
                s.count,
                s.bytes
            ));
            for sample in &s.sample {
                out.push_str(&format!("      {sample}\n"));
            }
        }
        out
    }
}
