//! Case-study scenarios over HTTP: hub path through the SDK and the
//! service, direct path straight to the provider.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use hub_core::broker::pkce;
use hub_core::engine::ActionRequest;
use hub_core::hub::QueryStatus;
use hub_core::manifest::examples::{NOTABILITY, UBER, ZOOM};
use hub_core::manifest::AccessPattern;
use hub_sdk::{ClientConfig, HubClient};
use hub_service::{start, Parts, ServiceConfig, SESSION_HEADER};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::app::{serve_app, MockApp, DELIVERY_PATH};
use crate::fixture::{generate_fixture, Fixture, FixtureError, NOTES_FOLDER};
use crate::provider::{serve_provider, MockProvider};
use crate::schema::{schema, CALENDAR, DRIVE, FORMS, MAIL};

pub const DEFAULT_ITERATIONS: usize = 100;
const CALLBACK: &str = "http://127.0.0.1/callback";

/// Zoom with its event selection spelled out, since the providers take no fragments.
pub fn zoom_manifest() -> String {
    ZOOM.replace(
        "{...EventDetails}",
        "{ summary description location start { dateTime } end { dateTime } }",
    )
}

pub const FORMS_MANIFEST: &str = r#"TITLE: Survey
DESCRIPTION: Collect valid survey responses
PIPELINE: PullResponses -> SelectResponses -> FilterValid -> SendToSurvey

PullResponses(type: "Pull", resourceType: "google_forms",
              query: "{ responses(formId) { responseId answers valid } }")
SelectResponses(type: "Select", field: "responses")
FilterValid(type: "Filter", operation: "match", field: "valid", targetValue: "true")
SendToSurvey(type: "Post", destination: "www.survey.example")
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Zoom,
    Uber,
    Notability,
    Forms,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [Self::Zoom, Self::Uber, Self::Notability, Self::Forms];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zoom => "zoom",
            Self::Uber => "uber",
            Self::Notability => "notability",
            Self::Forms => "forms",
        }
    }

    pub fn provider_id(self) -> &'static str {
        match self {
            Self::Zoom => CALENDAR,
            Self::Uber => MAIL,
            Self::Notability => DRIVE,
            Self::Forms => FORMS,
        }
    }

    pub fn manifest(self) -> String {
        match self {
            Self::Zoom => zoom_manifest(),
            Self::Uber => UBER.to_string(),
            Self::Notability => NOTABILITY.to_string(),
            Self::Forms => FORMS_MANIFEST.to_string(),
        }
    }

    /// Fixture `(size, matching)` mirroring the evaluation dataset ratios.
    pub fn fixture_shape(self) -> (usize, usize) {
        match self {
            Self::Zoom => (97, 3),
            Self::Uber => (500, 20),
            Self::Notability => (20, 5),
            Self::Forms => (9, 5),
        }
    }

    pub fn fixture_name(self) -> String {
        let (size, _) = self.fixture_shape();
        let collection = schema(self.provider_id()).map(|s| s.collection).unwrap_or("records");
        format!("{collection}-{size}")
    }

    pub fn standard_fixture(self, seed: u64) -> Result<Fixture, FixtureError> {
        let (size, matching) = self.fixture_shape();
        generate_fixture(self.provider_id(), size, matching, seed)
    }

    /// The query the manifest's Pull sends, reused by the direct path.
    fn pull_query(self) -> Option<String> {
        let m = hub_core::manifest::parse(&self.manifest()).ok()?;
        m.source()?.str_param("query").map(str::to_string)
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown scenario `{s}` (zoom, uber, notability, forms)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hub,
    Direct,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hub" => Ok(Mode::Hub),
            "direct" => Ok(Mode::Direct),
            other => Err(format!("unknown mode `{other}` (hub, direct)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
}

/// Nearest-rank percentiles over millisecond samples.
pub fn percentiles(samples: &[f64]) -> Percentiles {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = |p: f64| {
        if s.is_empty() {
            return 0.0;
        }
        let i = ((p / 100.0 * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
        s[i]
    };
    Percentiles {
        p50: rank(50.0),
        p95: rank(95.0),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteSummary {
    pub attempted: usize,
    pub applied: usize,
    pub applied_in_folder: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioName,
    pub mode: Mode,
    pub seed: u64,
    pub iterations: usize,
    pub fixture_size: usize,
    pub delivered_count: usize,
    pub delivered: Vec<Value>,
    pub reduction_entries_pct: f64,
    pub reduction_bytes_pct: f64,
    pub e2e_latency_ms: Percentiles,
    pub direct_latency_ms: Percentiles,
    pub overhead_ratio: f64,
    pub hub_added_p50_ms: f64,
    /// Every hub-delivered record is contained in some directly fetched record.
    pub hub_within_direct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub writes: Option<WriteSummary>,
}

impl ScenarioReport {
    pub fn table(&self) -> String {
        let mut rows = vec![
            ("scenario", self.scenario.to_string()),
            ("mode", format!("{:?}", self.mode).to_lowercase()),
            ("iterations", self.iterations.to_string()),
            ("fixture records", self.fixture_size.to_string()),
            ("delivered records", self.delivered_count.to_string()),
            ("entries reduced", format!("{:.1}%", self.reduction_entries_pct)),
            ("bytes reduced", format!("{:.1}%", self.reduction_bytes_pct)),
            (
                "hub latency p50/p95",
                format!("{:.2} / {:.2} ms", self.e2e_latency_ms.p50, self.e2e_latency_ms.p95),
            ),
            (
                "direct latency p50/p95",
                format!("{:.2} / {:.2} ms", self.direct_latency_ms.p50, self.direct_latency_ms.p95),
            ),
            ("overhead ratio", format!("{:.2}x", self.overhead_ratio)),
            ("hub-added p50", format!("{:.2} ms", self.hub_added_p50_ms)),
        ];
        if let Some(w) = &self.writes {
            rows.push(("writes applied", format!("{} of {} ({} in folder)", w.applied, w.attempted, w.applied_in_folder)));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

#[derive(Debug, Error)]
#[error("scenario {scenario} failed at {stage}: {message}")]
pub struct ScenarioFailure {
    pub scenario: String,
    pub stage: String,
    pub message: String,
    pub trace: Vec<String>,
}

struct Tracer {
    scenario: ScenarioName,
    trace: Vec<String>,
}

impl Tracer {
    fn step(&mut self, s: impl Into<String>) {
        self.trace.push(s.into());
    }

    fn fail(&self, stage: &str, message: impl fmt::Display) -> ScenarioFailure {
        ScenarioFailure {
            scenario: self.scenario.to_string(),
            stage: stage.into(),
            message: message.to_string(),
            trace: self.trace.clone(),
        }
    }
}

/// Ten requests, half inside the notes folder, in seeded order.
pub fn notability_requests(seed: u64, inside: usize, outside: usize) -> Vec<ActionRequest> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<ActionRequest> = (0..inside + outside)
        .map(|i| {
            let folder = if i < inside {
                NOTES_FOLDER.to_string()
            } else {
                format!("folder-{}", r.random_range(1..50))
            };
            let mut req = ActionRequest::new("create").param("parents", json!(folder));
            req.body = json!({"name": format!("note-{i}.note"), "mimeType": "text/plain"});
            req
        })
        .collect();
    out.shuffle(&mut r);
    out
}

fn in_folder(req: &ActionRequest) -> bool {
    req.parameters.get("parents") == Some(&json!(NOTES_FOLDER))
}

/// Whether every leaf of `small` appears in `big`: objects by key, arrays
/// element-wise, strings as substrings of some string leaf.
pub fn contained(small: &Value, big: &Value) -> bool {
    match (small, big) {
        (Value::Object(s), Value::Object(b)) if s.keys().all(|k| b.contains_key(k)) => {
            s.iter().all(|(k, v)| contained(v, &b[k]))
        }
        (Value::Array(s), _) => s.iter().all(|v| contained(v, big)),
        (_, Value::Array(b)) => b.iter().any(|v| contained(small, v)),
        (Value::String(s), Value::String(b)) => b.contains(s.as_str()),
        (Value::Object(_), _) => false,
        (_, Value::Object(b)) => b.values().any(|v| contained(small, v)),
        (s, b) => s == b,
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

fn canonical_len(v: &impl Serialize) -> usize {
    serde_json::to_vec(v).map(|b| b.len()).unwrap_or(0)
}

fn reduction(input: usize, output: usize) -> f64 {
    if input == 0 {
        0.0
    } else {
        input.saturating_sub(output) as f64 / input as f64 * 100.0
    }
}

struct HubSide {
    latencies: Vec<f64>,
    delivered: Vec<Value>,
    reduction_entries: f64,
    reduction_bytes: f64,
    writes: Option<WriteSummary>,
}

struct DirectSide {
    latencies: Vec<f64>,
    records: Vec<Value>,
}

/// Runs one scenario with `iterations` timed repetitions on each path. The
/// mode picks which path's records the report lists as delivered.
pub async fn run_scenario(
    name: ScenarioName,
    fixture: &Fixture,
    mode: Mode,
    iterations: usize,
) -> Result<ScenarioReport, ScenarioFailure> {
    let mut t = Tracer {
        scenario: name,
        trace: Vec::new(),
    };
    if fixture.provider_id != name.provider_id() {
        return Err(t.fail(
            "fixture",
            format!("{} needs a {} fixture, got {}", name, name.provider_id(), fixture.provider_id),
        ));
    }
    let hub = run_hub_side(name, fixture, iterations, &mut t).await?;
    let direct = run_direct_side(name, fixture, iterations, &mut t).await?;
    let e2e = percentiles(&hub.latencies);
    let dir = percentiles(&direct.latencies);
    let hub_within_direct = hub
        .delivered
        .iter()
        .all(|d| direct.records.iter().any(|r| contained(d, r)));
    let delivered = match mode {
        Mode::Hub => hub.delivered,
        Mode::Direct => direct.records,
    };
    Ok(ScenarioReport {
        scenario: name,
        mode,
        seed: fixture.seed,
        iterations,
        fixture_size: fixture.records.len(),
        delivered_count: delivered.len(),
        delivered,
        reduction_entries_pct: hub.reduction_entries,
        reduction_bytes_pct: hub.reduction_bytes,
        e2e_latency_ms: e2e,
        direct_latency_ms: dir,
        overhead_ratio: if dir.p50 > 0.0 { e2e.p50 / dir.p50 } else { f64::INFINITY },
        hub_added_p50_ms: e2e.p50 - dir.p50,
        hub_within_direct,
        writes: hub.writes,
    })
}

fn http() -> reqwest::Client {
    reqwest::Client::builder()
        .redirect(reqwest::redirect::Policy::none())
        .build()
        .expect("http client")
}

async fn follow_authorize(http: &reqwest::Client, url: &str) -> Result<String, String> {
    let resp = http.get(url).send().await.map_err(|e| e.to_string())?;
    if resp.status() != 302 {
        let status = resp.status();
        return Err(format!("{status}: {}", resp.text().await.unwrap_or_default()));
    }
    resp.headers()
        .get("location")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .ok_or_else(|| "redirect without location".into())
}

async fn run_hub_side(
    name: ScenarioName,
    fixture: &Fixture,
    iterations: usize,
    t: &mut Tracer,
) -> Result<HubSide, ScenarioFailure> {
    let provider = Arc::new(MockProvider::new(fixture).map_err(|e| t.fail("fixture", e))?);
    let provider_server = serve_provider(provider.clone()).await.map_err(|e| t.fail("provider", e))?;
    let app = Arc::new(MockApp::new());
    let app_server = serve_app(app.clone()).await.map_err(|e| t.fail("app", e))?;
    let mut config = ServiceConfig {
        port: 0,
        auto_approve: true,
        rate_per_second: 1_000_000.0,
        ..ServiceConfig::default()
    };
    config.providers = HashMap::from([(name.provider_id().to_string(), provider_server.base_url())]);
    let parts = Parts::for_config(&config);
    let running = start(config, parts).await.map_err(|e| t.fail("hub start", e))?;
    t.step(format!("hub on {}", running.base_url()));

    let client_config = ClientConfig::with_hub(
        &format!("{name}-app"),
        &running.base_url(),
        &format!("{}{DELIVERY_PATH}", app_server.base_url()),
        CALLBACK,
    )
    .map_err(|e| t.fail("sdk config", e))?;
    let client = HubClient::new(client_config);
    let manifest = name.manifest();
    let auth = client
        .generate_auth_url(name.provider_id(), &manifest, AccessPattern::UserDriven, None)
        .map_err(|e| t.fail("auth url", e))?;
    let http = http();
    let location = follow_authorize(&http, &auth.url).await.map_err(|e| t.fail("authorize", e))?;
    let code = client
        .parse_callback(&location, &auth.state)
        .map_err(|e| t.fail("callback", e))?;
    let grant = client
        .exchange_token(&code, &auth.code_verifier)
        .await
        .map_err(|e| t.fail("token", e))?;
    app.trust(grant.hub_public_key.clone());
    t.step(format!("grant {} active", grant.grant_id));
    let mut token = grant.token.clone();

    let mut side = HubSide {
        latencies: Vec::with_capacity(iterations),
        delivered: Vec::new(),
        reduction_entries: 0.0,
        reduction_bytes: 0.0,
        writes: None,
    };

    if name == ScenarioName::Notability {
        let batch = notability_requests(fixture.seed, 5, 5);
        for req in &batch {
            let r = client
                .query(&token, &grant.manifest_id, Some(req))
                .await
                .map_err(|e| t.fail("guarded write", e))?;
            token = r.next_token;
        }
        let journal = provider.journal();
        let applied: Vec<&ActionRequest> = journal.iter().map(|e| &e.request).collect();
        side.writes = Some(WriteSummary {
            attempted: batch.len(),
            applied: applied.len(),
            applied_in_folder: applied.iter().filter(|r| in_folder(r)).count(),
        });
        side.reduction_entries = reduction(batch.len(), applied.len());
        side.reduction_bytes = reduction(
            batch.iter().map(canonical_len).sum(),
            applied.iter().map(|r| canonical_len(*r)).sum(),
        );
        side.delivered = applied.iter().map(|r| json!(r)).collect();
        t.step(format!("{} of {} writes applied", applied.len(), batch.len()));
        let probe = notability_requests(fixture.seed ^ 1, 1, 0).remove(0);
        for _ in 0..iterations {
            let start = Instant::now();
            let r = client
                .query(&token, &grant.manifest_id, Some(&probe))
                .await
                .map_err(|e| t.fail("timed write", e))?;
            side.latencies.push(ms(start));
            token = r.next_token;
        }
    } else {
        let preview: Value = http
            .get(format!("{}/manage/grants/{}/preview", running.base_url(), grant.grant_id))
            .header(SESSION_HEADER, &running.secret)
            .send()
            .await
            .map_err(|e| t.fail("preview", e))?
            .json()
            .await
            .map_err(|e| t.fail("preview", e))?;
        let n = |k: &str| preview[k].as_u64().unwrap_or(0) as usize;
        side.reduction_entries = reduction(n("input_count"), n("output_count"));
        side.reduction_bytes = reduction(n("input_bytes"), n("output_bytes"));
        t.step(format!("preview {} -> {}", n("input_count"), n("output_count")));
        for i in 0..iterations {
            let start = Instant::now();
            let r = client
                .query(&token, &grant.manifest_id, None)
                .await
                .map_err(|e| t.fail("query", e))?;
            side.latencies.push(ms(start));
            token = r.next_token;
            let id = r.delivery_id.unwrap_or_default();
            if r.status != QueryStatus::Delivered || !app.has_delivery(&id) {
                return Err(t.fail("query", format!("iteration {i}: delivery {id} not received")));
            }
        }
        side.delivered = app
            .deliveries()
            .last()
            .map(|d| match &d.envelope.data {
                Value::Array(items) => items.clone(),
                other => vec![other.clone()],
            })
            .unwrap_or_default();
    }
    running.shutdown().await;
    drop(provider_server);
    drop(app_server);
    Ok(side)
}

async fn run_direct_side(
    name: ScenarioName,
    fixture: &Fixture,
    iterations: usize,
    t: &mut Tracer,
) -> Result<DirectSide, ScenarioFailure> {
    let provider = Arc::new(MockProvider::new(fixture).map_err(|e| t.fail("fixture", e))?);
    let server = serve_provider(provider.clone()).await.map_err(|e| t.fail("provider", e))?;
    let base = server.base_url();
    let http = http();
    let verifier = pkce::generate_verifier();
    let mut url = url::Url::parse(&format!("{base}/authorize")).map_err(|e| t.fail("direct authorize", e))?;
    url.query_pairs_mut()
        .append_pair("client_id", &format!("{name}-app"))
        .append_pair("redirect_uri", CALLBACK)
        .append_pair("state", "direct")
        .append_pair("code_challenge", &pkce::challenge_for(&verifier))
        .append_pair("code_challenge_method", "S256");
    let location = follow_authorize(&http, url.as_str())
        .await
        .map_err(|e| t.fail("direct authorize", e))?;
    let code = url::Url::parse(&location)
        .ok()
        .and_then(|u| u.query_pairs().find(|(k, _)| k == "code").map(|(_, v)| v.into_owned()))
        .ok_or_else(|| t.fail("direct authorize", "no code"))?;
    let tokens: Value = http
        .post(format!("{base}/token"))
        .json(&json!({"grant_type": "authorization_code", "code": code, "code_verifier": verifier,
                      "client_id": format!("{name}-app"), "redirect_uri": CALLBACK}))
        .send()
        .await
        .map_err(|e| t.fail("direct token", e))?
        .json()
        .await
        .map_err(|e| t.fail("direct token", e))?;
    let access = tokens["access_token"].as_str().unwrap_or_default().to_string();
    let collection = schema(name.provider_id()).map_err(|e| t.fail("schema", e))?.collection;

    let mut side = DirectSide {
        latencies: Vec::with_capacity(iterations),
        records: Vec::new(),
    };
    if name == ScenarioName::Notability {
        let batch = notability_requests(fixture.seed, 5, 5);
        for i in 0..iterations {
            let req = &batch[i % batch.len()];
            let start = Instant::now();
            let resp = http
                .post(format!("{base}/write"))
                .bearer_auth(&access)
                .json(&json!({"resource_type": name.provider_id(), "request": req}))
                .send()
                .await
                .map_err(|e| t.fail("direct write", e))?;
            let _ = resp.bytes().await;
            side.latencies.push(ms(start));
        }
        side.records = batch.iter().map(|r| json!(r)).collect();
    } else {
        let query = name.pull_query();
        for _ in 0..iterations {
            let start = Instant::now();
            let body: Value = http
                .post(format!("{base}/pull"))
                .bearer_auth(&access)
                .json(&json!({"resource_type": name.provider_id(), "query": query}))
                .send()
                .await
                .map_err(|e| t.fail("direct pull", e))?
                .json()
                .await
                .map_err(|e| t.fail("direct pull", e))?;
            side.latencies.push(ms(start));
            if let Some(items) = body[collection].as_array() {
                side.records = items.clone();
            }
        }
    }
    t.step(format!("direct path fetched {} records", side.records.len()));
    Ok(side)
}
