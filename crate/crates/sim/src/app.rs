//! A third-party app server that accepts only verified deliveries.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::routing::post;
use axum::Router;
use hub_core::broker::Jwk;
use hub_core::hub::{DeliveryEnvelope, Transport, TransportError, SIGNATURE_HEADER};
use hub_sdk::{verify_delivery, SdkError};

use crate::provider::{serve_router, MockServer};

pub const DELIVERY_PATH: &str = "/deliver";

#[derive(Debug, Clone, PartialEq)]
pub struct StoredDelivery {
    pub envelope: DeliveryEnvelope,
    pub raw: Vec<u8>,
    pub signature: String,
}

#[derive(Default)]
struct Inner {
    keys: Vec<Jwk>,
    stored: Vec<StoredDelivery>,
    seen: HashSet<String>,
}

#[derive(Default)]
pub struct MockApp {
    inner: Mutex<Inner>,
    fail_next: AtomicUsize,
    rejected: AtomicUsize,
    attempts: AtomicUsize,
}

impl MockApp {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accept deliveries signed by this hub key.
    pub fn trust(&self, key: Jwk) {
        let mut inner = self.inner.lock().unwrap();
        if !inner.keys.contains(&key) {
            inner.keys.push(key);
        }
    }

    /// Answer the next `n` deliveries with 500.
    pub fn fail_next(&self, n: usize) {
        self.fail_next.store(n, Ordering::SeqCst);
    }

    pub fn deliveries(&self) -> Vec<StoredDelivery> {
        self.inner.lock().unwrap().stored.clone()
    }

    pub fn count(&self) -> usize {
        self.inner.lock().unwrap().stored.len()
    }

    pub fn count_for(&self, grant_id: &str) -> usize {
        self.inner
            .lock()
            .unwrap()
            .stored
            .iter()
            .filter(|d| d.envelope.grant_id == grant_id)
            .count()
    }

    pub fn has_delivery(&self, delivery_id: &str) -> bool {
        self.inner.lock().unwrap().seen.contains(delivery_id)
    }

    pub fn rejected(&self) -> usize {
        self.rejected.load(Ordering::SeqCst)
    }

    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    /// Returns the HTTP status the app answers with.
    pub fn receive(&self, headers: &HeaderMap, body: &[u8]) -> u16 {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        if self
            .fail_next
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return 500;
        }
        let keys = self.inner.lock().unwrap().keys.clone();
        let mut outcome = Err(SdkError::BadSignature);
        for key in &keys {
            outcome = verify_delivery(headers, body, key);
            if !matches!(outcome, Err(SdkError::BadSignature)) {
                break;
            }
        }
        let envelope = match outcome {
            Ok(e) => e,
            Err(SdkError::MalformedEnvelope(_)) => return 400,
            Err(_) => {
                self.rejected.fetch_add(1, Ordering::SeqCst);
                return 401;
            }
        };
        let mut inner = self.inner.lock().unwrap();
        if inner.seen.insert(envelope.delivery_id.clone()) {
            let signature = headers
                .get(SIGNATURE_HEADER)
                .and_then(|v| v.to_str().ok())
                .unwrap_or_default()
                .to_string();
            inner.stored.push(StoredDelivery {
                envelope,
                raw: body.to_vec(),
                signature,
            });
        }
        200
    }
}

/// In-process delivery straight into a [`MockApp`].
impl Transport for MockApp {
    fn send(&self, _endpoint: &str, body: &[u8], signature: &str) -> Result<(), TransportError> {
        let mut headers = HeaderMap::new();
        if let Ok(v) = HeaderValue::from_str(signature) {
            headers.insert(SIGNATURE_HEADER, v);
        }
        match self.receive(&headers, body) {
            200 => Ok(()),
            status => Err(TransportError(format!("app answered {status}"))),
        }
    }
}

async fn http_receive(State(app): State<Arc<MockApp>>, headers: HeaderMap, body: Bytes) -> StatusCode {
    StatusCode::from_u16(app.receive(&headers, &body)).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
}

pub async fn serve_app(app: Arc<MockApp>) -> std::io::Result<MockServer> {
    serve_router(Router::new().route(DELIVERY_PATH, post(http_receive)).with_state(app)).await
}
