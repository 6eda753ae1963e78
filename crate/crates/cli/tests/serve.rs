mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Stdio};
use std::sync::Arc;

use chrono::Utc;
use common::{hub, json, run};
use hub_core::broker::{pkce, FileKeyStore, Vault};
use hub_sim::scenario::ScenarioName;
use hub_sim::{serve_provider, MockProvider};
use serde_json::{json, Value};

struct Served {
    child: Child,
    url: String,
    secret: String,
}

impl Served {
    fn start(args: &[&str]) -> Served {
        let mut child = hub()
            .args(["--json", "serve", "--port", "0"])
            .args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let v: Value = serde_json::from_str(&line).unwrap_or_else(|e| panic!("{e}: {line:?}"));
        Served {
            child,
            url: v["url"].as_str().unwrap().into(),
            secret: v["console_secret"].as_str().unwrap().into(),
        }
    }

    fn port(&self) -> String {
        self.url.rsplit(':').next().unwrap().to_string()
    }

    /// SIGTERM and wait for a clean exit.
    fn stop(mut self) {
        let pid = self.child.id().to_string();
        assert!(std::process::Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
        assert_eq!(self.child.wait().unwrap().code(), Some(0));
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

fn create_grant(s: &Served, provider: &str) -> String {
    let verifier = pkce::generate_verifier();
    let input = json!({
        "client_id": "zoom-app",
        "provider_id": provider,
        "manifest_text": ScenarioName::Zoom.manifest(),
        "redirect_uri": "http://127.0.0.1/cb",
        "state": "s",
        "code_challenge": pkce::challenge_for(&verifier),
        "access_type": "user_driven",
        "schedule": null,
        "endpoint": "http://127.0.0.1:9/deliver",
    });
    let mut resp = ureq::post(format!("{}/manage/grants", s.url))
        .header("x-hub-session", &s.secret)
        .send_json(input)
        .unwrap();
    assert_eq!(resp.status(), 201);
    let v: Value = resp.body_mut().read_json().unwrap();
    assert_eq!(v["kind"], "pending");
    v["grant_id"].as_str().unwrap().to_string()
}

fn grants(dir: &Path, s: &Served, args: &[&str]) -> std::process::Output {
    let mut full = vec!["grants", "--hub", &s.url, "--data-dir", dir.to_str().unwrap()];
    full.extend_from_slice(args);
    run(&full)
}

#[test]
fn serve_manage_and_restart() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let fixture = ScenarioName::Zoom.standard_fixture(42).unwrap();
    let provider = rt.block_on(serve_provider(Arc::new(MockProvider::new(&fixture).unwrap()))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    let provider_flag = format!("google_calendar={}", provider.base_url());

    let s = Served::start(&["--data-dir", data, "--provider", &provider_flag]);
    let health: Value = ureq::get(format!("{}/health", s.url)).call().unwrap().body_mut().read_json().unwrap();
    assert_eq!(health["status"], "ok");
    let listed = ureq::get(format!("{}/manage/grants", s.url)).header("x-hub-session", &s.secret).call().unwrap();
    assert_eq!(listed.status(), 200);

    let taken = run(&["serve", "--port", &s.port()]);
    assert_eq!(taken.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&taken.stderr).contains("in use"));

    let id = create_grant(&s, "google_calendar");
    let table = String::from_utf8_lossy(&grants(dir.path(), &s, &["list"]).stdout).into_owned();
    assert!(table.contains(&id) && table.contains("user_driven/pending"), "{table}");

    let allowed = grants(dir.path(), &s, &["--json", "allow", &id, "--constraint", "twice-per-week"]);
    assert_eq!(allowed.status.code(), Some(0));
    assert!(json(&allowed)["location"].as_str().unwrap().contains("code="));
    let shown = json(&grants(dir.path(), &s, &["--json", "show", &id]));
    assert_eq!(shown["grant"]["status"], "active");
    assert_eq!(shown["grant"]["constraints"][0]["kind"], "usage_frequency");

    let changed = grants(dir.path(), &s, &["constrain", &id, "--constraint", "one-time"]);
    assert_eq!(changed.status.code(), Some(0));
    let preview = json(&grants(dir.path(), &s, &["--json", "preview", &id]));
    assert_eq!((preview["input_count"].as_u64(), preview["output_count"].as_u64()), (Some(97), Some(3)));

    assert_eq!(grants(dir.path(), &s, &["revoke", &id]).status.code(), Some(0));
    let shown = json(&grants(dir.path(), &s, &["--json", "show", &id]));
    assert_eq!(shown["grant"]["status"], "revoked");
    assert_eq!(grants(dir.path(), &s, &["show", "g_missing"]).status.code(), Some(1));
    let logs = json(&grants(dir.path(), &s, &["--json", "logs", "--grant", &id]));
    assert!(!logs["entries"].as_array().unwrap().is_empty());
    let human = String::from_utf8_lossy(&grants(dir.path(), &s, &["logs"]).stdout).into_owned();
    assert!(human.contains(&id) && human.contains("console"), "{human}");

    let wrong = run(&["grants", "--hub", &s.url, "--secret", "nope", "list"]);
    assert_eq!(wrong.status.code(), Some(1));
    let no_secret = run(&["grants", "--hub", &s.url, "list"]);
    assert_eq!(no_secret.status.code(), Some(1));

    let secret = s.secret.clone();
    s.stop();
    let mut vault = Vault::open(dir.path(), &FileKeyStore::new(dir.path().join("vault.key"))).unwrap();
    assert!(vault.load_tokens("google_calendar", Utc::now()).is_ok());

    let again = Served::start(&["--data-dir", data]);
    assert_eq!(again.secret, secret);
    again.stop();
}

#[test]
fn unreachable_hub_is_a_user_error() {
    let out = run(&["grants", "--hub", "http://127.0.0.1:9", "--secret", "x", "list"]);
    assert_eq!(out.status.code(), Some(1));
}
