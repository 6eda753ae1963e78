use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::TimeWindow;

/// A user-imposed limit on a grant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Constraint {
    UsageFrequency { max_uses: u32, per_seconds: u64 },
    UsageTotal { max_uses: u32 },
    ResourcePath { field: String, value: String },
    ResourceObfuscate { field: String, method: String },
    TimeExpiry { duration_seconds: u64 },
    TimeWindow(TimeWindow),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {kind} constraint: {message}")]
pub struct InvalidConstraint {
    pub kind: &'static str,
    pub message: String,
}

pub const WEEK_SECONDS: u64 = 7 * 24 * 3600;
pub const DAY_SECONDS: u64 = 24 * 3600;

impl Constraint {
    pub fn twice_per_week() -> Self {
        Constraint::UsageFrequency {
            max_uses: 2,
            per_seconds: WEEK_SECONDS,
        }
    }

    pub fn one_time() -> Self {
        Constraint::UsageTotal { max_uses: 1 }
    }

    pub fn expires_after_24h() -> Self {
        Constraint::TimeExpiry {
            duration_seconds: DAY_SECONDS,
        }
    }

    pub fn business_hours() -> Self {
        Constraint::TimeWindow(TimeWindow::parse("09:00", "17:00").expect("valid literal"))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Constraint::UsageFrequency { .. } => "usage_frequency",
            Constraint::UsageTotal { .. } => "usage_total",
            Constraint::ResourcePath { .. } => "resource_path",
            Constraint::ResourceObfuscate { .. } => "resource_obfuscate",
            Constraint::TimeExpiry { .. } => "time_expiry",
            Constraint::TimeWindow(_) => "time_window",
        }
    }

    pub fn check(&self) -> Result<(), InvalidConstraint> {
        let bad = |message: &str| {
            Err(InvalidConstraint {
                kind: self.kind(),
                message: message.into(),
            })
        };
        match self {
            Constraint::UsageFrequency { max_uses, per_seconds } => {
                if *max_uses == 0 || *per_seconds == 0 {
                    return bad("max_uses and per_seconds must be positive");
                }
            }
            Constraint::UsageTotal { max_uses } if *max_uses == 0 => {
                return bad("max_uses must be at least 1");
            }
            Constraint::TimeExpiry { duration_seconds } if *duration_seconds == 0 => {
                return bad("duration_seconds must be positive");
            }
            Constraint::ResourcePath { field, .. } | Constraint::ResourceObfuscate { field, .. }
                if crate::engine::Path::parse(field).is_none() =>
            {
                return bad("field must be a dotted path");
            }
            Constraint::ResourceObfuscate { method, .. } if method != "hash" && method != "redact" => {
                return bad("method must be hash or redact");
            }
            _ => {}
        }
        Ok(())
    }
}

/// Why a request was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    UsageFrequency,
    UsageTotal,
    TimeExpiry,
    TimeWindow,
    Revoked,
    Expired,
    Pending,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::UsageFrequency => "usage_frequency",
            DenyReason::UsageTotal => "usage_total",
            DenyReason::TimeExpiry => "time_expiry",
            DenyReason::TimeWindow => "time_window",
            DenyReason::Revoked => "revoked",
            DenyReason::Expired => "expired",
            DenyReason::Pending => "pending",
        }
    }
}

impl std::fmt::Display for DenyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Evaluates usage and time constraints. `history` holds the times of
/// delivered (or in-flight) uses. All constraints must pass.
pub fn check_constraints(
    constraints: &[Constraint],
    decided_at: DateTime<Utc>,
    now: DateTime<Utc>,
    history: &[DateTime<Utc>],
) -> Result<(), DenyReason> {
    for c in constraints {
        match c {
            Constraint::TimeExpiry { duration_seconds } => {
                if now >= decided_at + TimeDelta::seconds(*duration_seconds as i64) {
                    return Err(DenyReason::TimeExpiry);
                }
            }
            Constraint::UsageFrequency { max_uses, per_seconds } => {
                let window = TimeDelta::seconds(*per_seconds as i64);
                let recent = history.iter().filter(|t| now - **t < window).count();
                if recent >= *max_uses as usize {
                    return Err(DenyReason::UsageFrequency);
                }
            }
            Constraint::UsageTotal { max_uses } => {
                if history.len() >= *max_uses as usize {
                    return Err(DenyReason::UsageTotal);
                }
            }
            Constraint::TimeWindow(w) => {
                if !w.contains(now.time()) {
                    return Err(DenyReason::TimeWindow);
                }
            }
            Constraint::ResourcePath { .. } | Constraint::ResourceObfuscate { .. } => {}
        }
    }
    Ok(())
}
