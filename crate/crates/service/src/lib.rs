//! Loopback HTTP front end for the hub: OAuth-shaped app endpoints, the
//! management API used by the console, and the scheduler driver.

pub mod api;
pub mod clock;
pub mod config;
pub mod outbound;
pub mod ratelimit;

use std::net::{Ipv4Addr, SocketAddr};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::TimeDelta;
use hub_core::broker::{pkce, FileKeyStore, MemoryKeyStore, Vault, VaultError};
use hub_core::hub::{Connector, Hub, HubConfig, Transport};
use hub_core::policy::AccessLog;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use api::SESSION_HEADER;
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{ServiceConfig, DEFAULT_PORT};
pub use outbound::{HttpConnector, HttpTransport};

pub const SECRET_FILE: &str = "console.secret";
const LOG_FILE: &str = "access_log.jsonl";
const KEY_FILE: &str = "vault.key";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Vault(#[from] VaultError),
}

/// Swappable collaborators; the defaults talk HTTP and use the wall clock.
pub struct Parts {
    pub connector: Arc<dyn Connector>,
    pub transport: Arc<dyn Transport>,
    pub clock: Arc<dyn Clock>,
    pub hub_config: HubConfig,
}

impl Parts {
    pub fn for_config(config: &ServiceConfig) -> Self {
        Self {
            connector: Arc::new(HttpConnector::new(config.providers.clone())),
            transport: Arc::new(HttpTransport::new()),
            clock: Arc::new(SystemClock),
            hub_config: HubConfig {
                auto_approve: config.auto_approve,
                ..HubConfig::default()
            },
        }
    }
}

pub struct RunningHub {
    pub addr: SocketAddr,
    pub secret: String,
    pub hub: Arc<Hub>,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<()>,
    driver: JoinHandle<()>,
}

impl RunningHub {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.driver.abort();
        let _ = (&mut self.server).await;
        let _ = self.hub.sync();
    }

    /// Resolves when the server stops on its own.
    pub async fn wait(self) {
        let _ = self.server.await;
    }
}

fn load_secret(dir: Option<&Path>) -> Result<String, ServiceError> {
    let Some(dir) = dir else {
        return Ok(pkce::random_token(32));
    };
    let path = dir.join(SECRET_FILE);
    if let Ok(s) = std::fs::read_to_string(&path) {
        if !s.trim().is_empty() {
            return Ok(s.trim().to_string());
        }
    }
    let secret = pkce::random_token(32);
    std::fs::write(&path, &secret)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o600))?;
    }
    Ok(secret)
}

/// Builds the hub with a file-backed vault and log when `data_dir` is set.
pub fn build_hub(config: &ServiceConfig, parts: &Parts) -> Result<(Hub, String), ServiceError> {
    let dir = config.data_dir.as_deref();
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
    }
    let (vault, log) = match dir {
        Some(d) => (
            Vault::open(d, &FileKeyStore::new(d.join(KEY_FILE)))?,
            AccessLog::open(&d.join(LOG_FILE))?,
        ),
        None => (Vault::in_memory(&MemoryKeyStore::random())?, AccessLog::in_memory()),
    };
    let hub = Hub::new(
        parts.hub_config.clone(),
        vault,
        log,
        parts.connector.clone(),
        parts.transport.clone(),
    );
    Ok((hub, load_secret(dir)?))
}

/// Binds 127.0.0.1 and serves until shut down. Port 0 picks a free port.
pub async fn start(config: ServiceConfig, parts: Parts) -> Result<RunningHub, ServiceError> {
    let (hub, secret) = build_hub(&config, &parts)?;
    let hub = Arc::new(hub);
    let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, config.port)).await?;
    let addr = listener.local_addr()?;
    let state = api::AppState {
        hub: hub.clone(),
        clock: parts.clock.clone(),
        limiter: Arc::new(ratelimit::RateLimiter::new(config.rate_per_second, config.rate_per_second)),
        secret: Arc::new(secret.clone()),
    };
    let app = api::router(state).into_make_service_with_connect_info::<SocketAddr>();
    let (tx, rx) = oneshot::channel();
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    let driver = tokio::spawn(drive_schedule(
        hub.clone(),
        parts.clock.clone(),
        Duration::from_secs(config.tick_seconds.max(1)),
    ));
    tracing::info!(%addr, "hub listening");
    Ok(RunningHub {
        addr,
        secret,
        hub,
        shutdown: Some(tx),
        server,
        driver,
    })
}

/// Fires due scheduled grants. A gap much longer than the tick (the process
/// was suspended) is treated as an offline window and caught up once.
async fn drive_schedule(hub: Arc<Hub>, clock: Arc<dyn Clock>, every: Duration) {
    let mut last = clock.now();
    let gap = TimeDelta::from_std(every * 5).unwrap_or(TimeDelta::seconds(5));
    let mut interval = tokio::time::interval(every);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        let now = clock.now();
        let (h, from) = (hub.clone(), last);
        let _ = tokio::task::spawn_blocking(move || {
            if now - from > gap {
                h.catch_up(from, now);
            }
            h.tick(now);
        })
        .await;
        last = now;
    }
}
