//! Grant lifecycle, constraint enforcement, revocation and access logging.

mod constraints;
mod log;

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use constraints::{check_constraints, Constraint, DenyReason, InvalidConstraint, DAY_SECONDS, WEEK_SECONDS};
pub use log::{AccessLog, AccessLogEntry, ActionType, Initiator, LogFilter, Outcome};

use crate::manifest::{validate, Diagnostic, Manifest, OperatorSpec, OperatorType, ParamValue};
use crate::scheduler::Schedule;
use crate::manifest::AccessPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantStatus {
    Pending,
    Active,
    Revoked,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub grant_id: String,
    pub manifest_hash: String,
    pub app_id: String,
    pub provider_id: String,
    pub status: GrantStatus,
    pub constraints: Vec<Constraint>,
    pub created_at: DateTime<Utc>,
    pub decided_at: Option<DateTime<Utc>>,
    pub access_type: AccessPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl Grant {
    pub fn pending(
        grant_id: impl Into<String>,
        manifest_hash: impl Into<String>,
        app_id: impl Into<String>,
        provider_id: impl Into<String>,
        access_type: AccessPattern,
        now: DateTime<Utc>,
    ) -> Self {
        Self {
            grant_id: grant_id.into(),
            manifest_hash: manifest_hash.into(),
            app_id: app_id.into(),
            provider_id: provider_id.into(),
            status: GrantStatus::Pending,
            constraints: Vec::new(),
            created_at: now,
            decided_at: None,
            access_type,
            schedule: None,
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("unknown grant {0}")]
    UnknownGrant(String),
    #[error("grant {0} is not pending")]
    NotPending(String),
    #[error("grant {0} already exists")]
    DuplicateGrant(String),
    #[error(transparent)]
    InvalidConstraint(#[from] InvalidConstraint),
    #[error("constraints produce an invalid pipeline")]
    InvalidAugmentedManifest(Vec<Diagnostic>),
}

/// A use held between the constraint check and the delivery outcome.
#[derive(Debug, PartialEq, Eq)]
#[must_use = "a reservation must be committed or released"]
pub struct Reservation {
    pub grant_id: String,
    pub at: DateTime<Utc>,
}

#[derive(Default)]
pub struct PolicyEngine {
    grants: BTreeMap<String, Grant>,
    uses: HashMap<String, Vec<DateTime<Utc>>>,
    in_flight: HashMap<String, Vec<DateTime<Utc>>>,
    log: AccessLog,
}

impl PolicyEngine {
    pub fn new(log: AccessLog) -> Self {
        Self {
            log,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, grant: Grant) -> Result<(), PolicyError> {
        if self.grants.contains_key(&grant.grant_id) {
            return Err(PolicyError::DuplicateGrant(grant.grant_id));
        }
        self.grants.insert(grant.grant_id.clone(), grant);
        Ok(())
    }

    pub fn get(&self, grant_id: &str) -> Option<&Grant> {
        self.grants.get(grant_id)
    }

    pub fn get_mut(&mut self, grant_id: &str) -> Option<&mut Grant> {
        self.grants.get_mut(grant_id)
    }

    pub fn grants(&self) -> impl Iterator<Item = &Grant> {
        self.grants.values()
    }

    fn grant_mut(&mut self, grant_id: &str) -> Result<&mut Grant, PolicyError> {
        self.grants
            .get_mut(grant_id)
            .ok_or_else(|| PolicyError::UnknownGrant(grant_id.into()))
    }

    pub fn decide(
        &mut self,
        grant_id: &str,
        decision: Decision,
        constraints: Vec<Constraint>,
        now: DateTime<Utc>,
    ) -> Result<Grant, PolicyError> {
        for c in &constraints {
            c.check()?;
        }
        let grant = self.grant_mut(grant_id)?;
        if grant.status != GrantStatus::Pending {
            return Err(PolicyError::NotPending(grant_id.into()));
        }
        grant.decided_at = Some(now);
        match decision {
            Decision::Allow => {
                grant.status = GrantStatus::Active;
                grant.constraints = constraints;
            }
            Decision::Deny => grant.status = GrantStatus::Revoked,
        }
        Ok(grant.clone())
    }

    pub fn set_constraints(
        &mut self,
        grant_id: &str,
        constraints: Vec<Constraint>,
    ) -> Result<Grant, PolicyError> {
        for c in &constraints {
            c.check()?;
        }
        let grant = self.grant_mut(grant_id)?;
        grant.constraints = constraints;
        Ok(grant.clone())
    }

    /// Revokes an active or pending grant; revoking again is a no-op.
    pub fn revoke(&mut self, grant_id: &str, now: DateTime<Utc>) -> Result<Grant, PolicyError> {
        let grant = self.grant_mut(grant_id)?;
        if matches!(grant.status, GrantStatus::Active | GrantStatus::Pending) {
            grant.status = GrantStatus::Revoked;
            grant.decided_at.get_or_insert(now);
        }
        Ok(grant.clone())
    }

    /// Delivered uses of the grant, oldest first.
    pub fn usage(&self, grant_id: &str) -> &[DateTime<Utc>] {
        self.uses.get(grant_id).map_or(&[], Vec::as_slice)
    }

    /// Checks every constraint and, if all pass, holds one use until
    /// [`commit`](Self::commit) or [`release`](Self::release). An elapsed
    /// expiry moves the grant to `expired`.
    pub fn reserve(&mut self, grant_id: &str, now: DateTime<Utc>) -> Result<Reservation, DenyReason> {
        let Some(grant) = self.grants.get_mut(grant_id) else {
            return Err(DenyReason::Revoked);
        };
        match grant.status {
            GrantStatus::Active => {}
            GrantStatus::Pending => return Err(DenyReason::Pending),
            GrantStatus::Revoked => return Err(DenyReason::Revoked),
            GrantStatus::Expired => return Err(DenyReason::Expired),
        }
        let mut history: Vec<DateTime<Utc>> = self.uses.get(grant_id).cloned().unwrap_or_default();
        history.extend(self.in_flight.get(grant_id).into_iter().flatten().copied());
        let decided = grant.decided_at.unwrap_or(grant.created_at);
        match check_constraints(&grant.constraints, decided, now, &history) {
            Ok(()) => {
                self.in_flight.entry(grant_id.into()).or_default().push(now);
                Ok(Reservation {
                    grant_id: grant_id.into(),
                    at: now,
                })
            }
            Err(DenyReason::TimeExpiry) => {
                grant.status = GrantStatus::Expired;
                Err(DenyReason::TimeExpiry)
            }
            Err(other) => Err(other),
        }
    }

    fn take_in_flight(&mut self, r: &Reservation) {
        if let Some(list) = self.in_flight.get_mut(&r.grant_id) {
            if let Some(i) = list.iter().position(|t| *t == r.at) {
                list.remove(i);
            }
        }
    }

    /// Counts the reserved use as delivered.
    pub fn commit(&mut self, r: Reservation) {
        self.take_in_flight(&r);
        self.uses.entry(r.grant_id).or_default().push(r.at);
    }

    /// Returns the reserved use; failures do not consume quota.
    pub fn release(&mut self, r: Reservation) {
        self.take_in_flight(&r);
    }

    pub fn log(&mut self, entry: AccessLogEntry) -> std::io::Result<()> {
        self.log.append(entry)
    }

    pub fn query_logs(&self, filter: &LogFilter) -> Vec<AccessLogEntry> {
        self.log.query(filter)
    }

    pub fn sync_log(&mut self) -> std::io::Result<()> {
        self.log.sync()
    }
}

fn unique_id(m: &Manifest, base: &str) -> String {
    (1..)
        .map(|i| format!("{base}{i}"))
        .find(|id| !m.operators.contains_key(id))
        .expect("unbounded search")
}

/// Inserts the grant's resource constraints into the pipeline: path
/// restrictions become Filters right after the source (after an unnesting
/// Select that directly follows it), obfuscations become Anonymize steps
/// right before the sink.
pub fn apply_resource_constraints(grant: &Grant, m: &Manifest) -> Result<Manifest, PolicyError> {
    let mut out = m.clone();
    let mut filters = Vec::new();
    let mut masks = Vec::new();
    for c in &grant.constraints {
        match c {
            Constraint::ResourcePath { field, value } => {
                let id = unique_id(&out, "ConstraintPath");
                let op = OperatorSpec::new(&id, OperatorType::Filter)
                    .with("operation", ParamValue::Str("match".into()))
                    .with("field", ParamValue::List(vec![ParamValue::Str(field.clone())]))
                    .with("targetValue", ParamValue::Str(value.clone()));
                out.operators.insert(id.clone(), op);
                filters.push(id);
            }
            Constraint::ResourceObfuscate { field, method } => {
                let id = unique_id(&out, "ConstraintMask");
                let op = OperatorSpec::new(&id, OperatorType::Anonymize)
                    .with("method", ParamValue::Str(method.clone()))
                    .with("field", ParamValue::Str(field.clone()));
                out.operators.insert(id.clone(), op);
                masks.push(id);
            }
            _ => {}
        }
    }
    if filters.is_empty() && masks.is_empty() {
        return Ok(out);
    }

    let ops: Vec<&OperatorSpec> = m.stages().collect();
    let source = ops.iter().position(|op| op.op_type.is_source());
    let mut after = source.map_or(0, |i| i + 1);
    if let Some(next) = ops.get(after) {
        let unnests = next.op_type == OperatorType::Select
            && matches!(next.param("field"), Some(ParamValue::Str(_)));
        if unnests {
            after += 1;
        }
    }
    let sink = m.pipeline.len().saturating_sub(1);
    let mut pipeline = Vec::with_capacity(m.pipeline.len() + filters.len() + masks.len());
    for (i, id) in m.pipeline.iter().enumerate() {
        if i == after {
            pipeline.extend(filters.iter().cloned());
        }
        if i == sink {
            if after > sink {
                pipeline.extend(filters.iter().cloned());
            }
            pipeline.extend(masks.iter().cloned());
        }
        pipeline.push(id.clone());
    }
    out.pipeline = pipeline;

    let diagnostics = validate(&out);
    if diagnostics.is_empty() {
        Ok(out)
    } else {
        Err(PolicyError::InvalidAugmentedManifest(diagnostics))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{examples, parse};
    use chrono::TimeDelta;

    fn now() -> DateTime<Utc> {
        "2025-06-01T12:00:00Z".parse().unwrap()
    }

    fn engine_with(id: &str) -> PolicyEngine {
        let mut p = PolicyEngine::default();
        p.insert(Grant::pending(id, "h", "app", "gmail", AccessPattern::UserDriven, now())).unwrap();
        p
    }

    #[test]
    fn decide_transitions() {
        let mut p = engine_with("g");
        let g = p.decide("g", Decision::Allow, vec![Constraint::one_time()], now()).unwrap();
        assert_eq!(g.status, GrantStatus::Active);
        assert_eq!(g.decided_at, Some(now()));
        assert_eq!(p.decide("g", Decision::Allow, vec![], now()), Err(PolicyError::NotPending("g".into())));
        let mut p = engine_with("d");
        assert_eq!(p.decide("d", Decision::Deny, vec![], now()).unwrap().status, GrantStatus::Revoked);
        assert_eq!(p.reserve("d", now()), Err(DenyReason::Revoked));
        assert!(matches!(
            engine_with("x").decide("x", Decision::Allow, vec![Constraint::UsageTotal { max_uses: 0 }], now()),
            Err(PolicyError::InvalidConstraint(_))
        ));
    }

    #[test]
    fn reservations_prevent_double_spend() {
        let mut p = engine_with("g");
        p.decide("g", Decision::Allow, vec![Constraint::one_time()], now()).unwrap();
        let r = p.reserve("g", now()).unwrap();
        assert_eq!(p.reserve("g", now()), Err(DenyReason::UsageTotal));
        p.release(r);
        let r = p.reserve("g", now()).unwrap();
        p.commit(r);
        assert_eq!(p.reserve("g", now()), Err(DenyReason::UsageTotal));
        assert_eq!(p.usage("g").len(), 1);
    }

    #[test]
    fn expiry_flips_status() {
        let mut p = engine_with("g");
        p.decide("g", Decision::Allow, vec![Constraint::expires_after_24h()], now()).unwrap();
        assert!(p.reserve("g", now() + TimeDelta::hours(23)).is_ok());
        assert_eq!(p.reserve("g", now() + TimeDelta::seconds(86401)), Err(DenyReason::TimeExpiry));
        assert_eq!(p.get("g").unwrap().status, GrantStatus::Expired);
        assert_eq!(p.reserve("g", now() + TimeDelta::seconds(86402)), Err(DenyReason::Expired));
    }

    #[test]
    fn revoke_is_idempotent() {
        let mut p = engine_with("g");
        p.decide("g", Decision::Allow, vec![], now()).unwrap();
        let first = p.revoke("g", now()).unwrap();
        let second = p.revoke("g", now() + TimeDelta::hours(1)).unwrap();
        assert_eq!(first, second);
        assert_eq!(second.status, GrantStatus::Revoked);
        assert_eq!(p.revoke("nope", now()), Err(PolicyError::UnknownGrant("nope".into())));
    }

    #[test]
    fn resource_path_after_unnesting_select() {
        let m = parse(examples::ZOOM).unwrap();
        let mut g = Grant::pending("g", &m.manifest_hash, "app", "cal", AccessPattern::UserDriven, now());
        assert_eq!(apply_resource_constraints(&g, &m).unwrap(), m);
        g.constraints = vec![
            Constraint::ResourcePath { field: "organizer".into(), value: "me".into() },
            Constraint::ResourceObfuscate { field: "location".into(), method: "hash".into() },
        ];
        let out = apply_resource_constraints(&g, &m).unwrap();
        assert_eq!(
            out.pipeline,
            ["PullCalendarEvents", "SelectEvents", "ConstraintPath1", "FilterTime", "FilterZoom", "ConstraintMask1", "PostToZoom"]
        );
        assert_eq!(out.manifest_hash, m.manifest_hash);
    }

    #[test]
    fn resource_path_on_receive_matches_notability() {
        let src = "TITLE: N\nPIPELINE: R -> W\nR(type: \"Receive\", source: \"app\")\nW(type: \"Write\", action: \"create\", resourceType: \"google_drive\")";
        let m = parse(src).unwrap();
        let mut g = Grant::pending("g", &m.manifest_hash, "app", "drive", AccessPattern::UserDriven, now());
        g.constraints = vec![Constraint::ResourcePath { field: "parents".into(), value: "folderId".into() }];
        let out = apply_resource_constraints(&g, &m).unwrap();
        assert_eq!(out.pipeline, ["R", "ConstraintPath1", "W"]);
        let reference = parse(examples::NOTABILITY).unwrap();
        let mine = &out.operators["ConstraintPath1"];
        assert_eq!(mine.params, reference.operators["FilterPath"].params);
    }
}
