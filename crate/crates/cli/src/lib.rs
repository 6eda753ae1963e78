//! The `hub` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use hub_core::manifest::{describe, parse, validate};
use hub_core::policy::Constraint;
use hub_service::{start, Parts, ServiceConfig, SECRET_FILE, SESSION_HEADER};
use hub_sim::scenario::{Mode, ScenarioName};
use hub_sim::{debug_manifest, run_scenario, DebugError, Fixture, FixtureError};
use serde_json::{json, Value};
use thiserror::Error;

pub const DEFAULT_HUB_URL: &str = "http://127.0.0.1:7391";

#[derive(Debug, Parser)]
#[command(name = "hub", version, about = "Local hub mediating app access to personal data")]
pub struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the hub service on 127.0.0.1.
    Serve(ServeArgs),
    /// Validate, describe or dry-run a manifest.
    #[command(subcommand)]
    Manifest(ManifestCmd),
    /// Run a case-study scenario against mock providers.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Manage grants on a running hub.
    Grants(GrantsArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Allow pending grants without asking. For tests.
    #[arg(long)]
    pub auto_approve: bool,
    /// Provider base URL as `id=url`. Repeatable.
    #[arg(long = "provider", value_name = "ID=URL")]
    pub providers: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum ManifestCmd {
    Check { file: PathBuf },
    Describe { file: PathBuf },
    /// Print every stage's record count and samples over a fixture.
    Debug {
        file: PathBuf,
        #[arg(long)]
        fixture: PathBuf,
        /// Evaluation time for NOW (RFC 3339). Defaults to the current time.
        #[arg(long)]
        now: Option<DateTime<Utc>>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCmd {
    Run {
        name: ScenarioName,
        #[arg(long, default_value = "hub")]
        mode: Mode,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = hub_sim::DEFAULT_ITERATIONS)]
        iterations: usize,
        /// Use this fixture file instead of the generated one.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct GrantsArgs {
    #[arg(long, env = "HUB_URL", default_value = DEFAULT_HUB_URL)]
    pub hub: String,
    /// Console secret. Read from the data directory when omitted.
    #[arg(long, env = "HUB_SECRET", hide_env_values = true)]
    pub secret: Option<String>,
    #[arg(long, env = "HUB_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub action: GrantsCmd,
}

#[derive(Debug, Subcommand)]
pub enum GrantsCmd {
    List,
    Show { id: String },
    /// Allow a pending grant.
    Allow {
        id: String,
        /// Preset (twice-per-week, one-time, expires-24h, business-hours) or constraint JSON.
        #[arg(long = "constraint")]
        constraints: Vec<String>,
    },
    Deny { id: String },
    Revoke { id: String },
    /// Replace a grant's constraints.
    Constrain {
        id: String,
        #[arg(long = "constraint")]
        constraints: Vec<String>,
    },
    Preview { id: String },
    Logs {
        #[arg(long)]
        grant: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

/// What a command prints: JSON under `--json`, text otherwise. A non-zero
/// `code` still prints the output.
#[derive(Debug)]
pub struct Output {
    pub json: Value,
    pub human: String,
    pub code: i32,
}

impl Output {
    fn ok(json: Value, human: String) -> Self {
        Self { json, human, code: 0 }
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Serve(args) => return serve(args, cli.json),
        Command::Manifest(cmd) => manifest(cmd),
        Command::Scenario(cmd) => scenario(cmd, cli.json),
        Command::Grants(args) => grants(args),
    };
    match result {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = if cli.json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&out.json).unwrap_or_default())
            } else {
                write!(stdout, "{}", out.human)
            };
            out.code
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({"error": e.to_string(), "exit_code": e.exit_code()}));
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn manifest(cmd: ManifestCmd) -> Result<Output, CliError> {
    match cmd {
        ManifestCmd::Check { file } => check(&read(&file)?),
        ManifestCmd::Describe { file } => {
            let m = parse(&read(&file)?).map_err(user)?;
            let steps = describe(&m).map_err(|e| {
                let detail: Vec<String> = e.diagnostics.iter().map(|d| d.to_string()).collect();
                user(format!("{e}: {}", detail.join("; ")))
            })?;
            let human = steps.iter().map(|s| format!("{}. {}\n", s.ordinal, s.text)).collect();
            Ok(Output::ok(json!(steps), human))
        }
        ManifestCmd::Debug { file, fixture, now } => {
            let text = read(&file)?;
            let fixture = Fixture::from_json(&read(&fixture)?).map_err(|e| match e {
                FixtureError::Io(_) | FixtureError::Json(_) | FixtureError::Schema(_) => user(e),
                other => internal(other),
            })?;
            let report = debug_manifest(&text, &fixture, now.unwrap_or_else(Utc::now)).map_err(|e| match e {
                DebugError::Provider(_) => internal(e),
                other => user(other),
            })?;
            Ok(Output::ok(json!(report), report.render()))
        }
    }
}

fn check(text: &str) -> Result<Output, CliError> {
    let m = match parse(text) {
        Ok(m) => m,
        Err(e) => {
            return Ok(Output {
                json: json!({"valid": false, "diagnostics": [{"rule": "syntax", "message": e.to_string()}]}),
                human: format!("error: {e}\n"),
                code: 1,
            })
        }
    };
    let diagnostics = validate(&m);
    let valid = diagnostics.is_empty();
    let human = if valid {
        format!("ok: {} ({} operators)\n", m.title, m.pipeline.len())
    } else {
        diagnostics.iter().map(|d| format!("error: {d}\n")).collect()
    };
    Ok(Output {
        json: json!({
            "valid": valid,
            "title": m.title,
            "manifest_hash": m.manifest_hash,
            "diagnostics": diagnostics,
        }),
        human,
        code: if valid { 0 } else { 1 },
    })
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(internal)
}

fn scenario(cmd: ScenarioCmd, json_only: bool) -> Result<Output, CliError> {
    let ScenarioCmd::Run {
        name,
        mode,
        seed,
        iterations,
        fixture,
    } = cmd;
    if iterations == 0 {
        return Err(user("--iterations must be at least 1"));
    }
    let fixture = match fixture {
        Some(path) => Fixture::from_json(&read(&path)?).map_err(user)?,
        None => name.standard_fixture(seed).map_err(internal)?,
    };
    let report = runtime()?
        .block_on(run_scenario(name, &fixture, mode, iterations))
        .map_err(|e| internal(format!("{e}\n  trace: {}", e.trace.join(" | "))))?;
    if !json_only {
        eprint!("{}", report.table());
    }
    let json = json!(report);
    let human = format!("{}\n", serde_json::to_string_pretty(&json).unwrap_or_default());
    Ok(Output::ok(json, human))
}

fn serve_config(args: ServeArgs) -> Result<ServiceConfig, CliError> {
    let mut config = ServiceConfig::from_env().map_err(user)?;
    if let Some(port) = args.port {
        config.port = port;
    }
    if let Some(dir) = args.data_dir {
        config.data_dir = Some(dir);
    }
    config.auto_approve |= args.auto_approve;
    for entry in &args.providers {
        config
            .providers
            .extend(hub_service::config::parse_providers(entry).map_err(user)?);
    }
    Ok(config)
}

fn serve(args: ServeArgs, json_out: bool) -> i32 {
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .try_init();
    let result = serve_config(args).and_then(|config| runtime()?.block_on(serve_until_signal(config, json_out)));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

async fn serve_until_signal(config: ServiceConfig, json_out: bool) -> Result<(), CliError> {
    let port = config.port;
    let parts = Parts::for_config(&config);
    let running = start(config, parts).await.map_err(|e| match e {
        hub_service::ServiceError::Io(io) if io.kind() == std::io::ErrorKind::AddrInUse => {
            user(format!("port {port} is already in use"))
        }
        other => internal(other),
    })?;
    let url = running.base_url();
    if json_out {
        println!("{}", json!({"url": url, "console_secret": running.secret}));
    } else {
        println!("hub listening on {url}");
        println!("console secret: {}", running.secret);
    }
    let _ = std::io::stdout().flush();
    shutdown_signal().await;
    running.shutdown().await;
    Ok(())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = match signal(SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => return std::future::pending().await,
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

/// A preset name or a constraint in its JSON form.
pub fn parse_constraint(s: &str) -> Result<Constraint, CliError> {
    match s {
        "twice-per-week" => Ok(Constraint::twice_per_week()),
        "one-time" => Ok(Constraint::one_time()),
        "expires-24h" => Ok(Constraint::expires_after_24h()),
        "business-hours" => Ok(Constraint::business_hours()),
        other => serde_json::from_str(other).map_err(|e| user(format!("bad constraint `{other}`: {e}"))),
    }
}

fn secret(args: &GrantsArgs) -> Result<String, CliError> {
    if let Some(s) = &args.secret {
        return Ok(s.clone());
    }
    let dir = args
        .data_dir
        .as_ref()
        .ok_or_else(|| user("no console secret: pass --secret or --data-dir"))?;
    let path = dir.join(SECRET_FILE);
    Ok(read(&path)?.trim().to_string())
}

struct Console {
    http: reqwest::Client,
    base: String,
    secret: String,
}

impl Console {
    async fn send(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> Result<Value, CliError> {
        let mut req = self
            .http
            .request(method, format!("{}/manage{path}", self.base.trim_end_matches('/')))
            .header(SESSION_HEADER, &self.secret);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.map_err(|e| user(format!("hub unreachable at {}: {e}", self.base)))?;
        let status = resp.status();
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        if status.is_success() {
            Ok(body)
        } else {
            let msg = format!("hub answered {status}: {}", body["message"].as_str().unwrap_or("no detail"));
            Err(if status.is_server_error() { internal(msg) } else { user(msg) })
        }
    }
}

fn grants(args: GrantsArgs) -> Result<Output, CliError> {
    let console = Console {
        http: reqwest::Client::new(),
        base: args.hub.clone(),
        secret: secret(&args)?,
    };
    let constraints = |cs: &[String]| cs.iter().map(|c| parse_constraint(c)).collect::<Result<Vec<_>, _>>();
    use reqwest::Method;
    let rt = runtime()?;
    let out = match &args.action {
        GrantsCmd::List => {
            let v = rt.block_on(console.send(Method::GET, "/grants", None))?;
            let human = grant_table(v["grants"].as_array().map(Vec::as_slice).unwrap_or_default());
            Output::ok(v, human)
        }
        GrantsCmd::Show { id } => {
            let v = rt.block_on(console.send(Method::GET, &format!("/grants/{id}"), None))?;
            let human = format!("{}\n", serde_json::to_string_pretty(&v).unwrap_or_default());
            Output::ok(v, human)
        }
        GrantsCmd::Allow { id, constraints: cs } => {
            let body = json!({"decision": "allow", "constraints": constraints(cs)?});
            let v = rt.block_on(console.send(Method::POST, &format!("/grants/{id}/decision"), Some(body)))?;
            Output::ok(v, format!("allowed {id}\n"))
        }
        GrantsCmd::Deny { id } => {
            let body = json!({"decision": "deny"});
            let v = rt.block_on(console.send(Method::POST, &format!("/grants/{id}/decision"), Some(body)))?;
            Output::ok(v, format!("denied {id}\n"))
        }
        GrantsCmd::Revoke { id } => {
            let v = rt.block_on(console.send(Method::DELETE, &format!("/grants/{id}"), None))?;
            Output::ok(v, format!("revoked {id}\n"))
        }
        GrantsCmd::Constrain { id, constraints: cs } => {
            let body = json!({"constraints": constraints(cs)?});
            let v = rt.block_on(console.send(Method::POST, &format!("/grants/{id}/constraints"), Some(body)))?;
            Output::ok(v, format!("updated constraints on {id}\n"))
        }
        GrantsCmd::Preview { id } => {
            let v = rt.block_on(console.send(Method::GET, &format!("/grants/{id}/preview"), None))?;
            let human = format!(
                "{} -> {} records, {} -> {} bytes\n",
                v["input_count"], v["output_count"], v["input_bytes"], v["output_bytes"]
            );
            Output::ok(v, human)
        }
        GrantsCmd::Logs { grant } => {
            let path = match grant {
                Some(g) => format!("/logs?grant_id={g}"),
                None => "/logs".into(),
            };
            let v = rt.block_on(console.send(Method::GET, &path, None))?;
            let human = v["entries"]
                .as_array()
                .map(Vec::as_slice)
                .unwrap_or_default()
                .iter()
                .map(|e| {
                    format!(
                        "{}  {}  {}  {}  {}  {} records\n",
                        text(&e["timestamp"]),
                        text(&e["grant_id"]),
                        text(&e["initiator"]),
                        text(&e["action_type"]),
                        text(&e["outcome"]),
                        e["records_out"]
                    )
                })
                .collect();
            Output::ok(v, human)
        }
    };
    Ok(out)
}

fn text(v: &Value) -> String {
    v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())
}

fn grant_table(grants: &[Value]) -> String {
    if grants.is_empty() {
        return "no grants\n".into();
    }
    let rows: Vec<[String; 5]> = grants
        .iter()
        .map(|g| {
            let kinds: Vec<String> = g["constraints"]
                .as_array()
                .map(Vec::as_slice)
                .unwrap_or_default()
                .iter()
                .map(|c| text(&c["kind"]))
                .collect();
            [
                text(&g["grant_id"]),
                text(&g["app_id"]),
                text(&g["provider_id"]),
                format!("{}/{}", text(&g["access_type"]), text(&g["status"])),
                kinds.join(","),
            ]
        })
        .collect();
    let header = ["GRANT", "APP", "PROVIDER", "ACCESS/STATUS", "CONSTRAINTS"].map(String::from);
    let widths: Vec<usize> = (0..5)
        .map(|i| rows.iter().chain([&header]).map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    std::iter::once(&header)
        .chain(&rows)
        .map(|r| {
            let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            format!("{}\n", cells.join("  ").trim_end())
        })
        .collect()
}
