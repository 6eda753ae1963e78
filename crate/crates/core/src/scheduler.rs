//! Access-pattern enforcement and delivery timing in virtual time.
//!
//! Nothing here reads a clock: every operation takes `now`.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use chrono::{DateTime, Days, NaiveTime, TimeDelta, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::manifest::AccessPattern;

pub const DEFAULT_MIN_INTERVAL_SECONDS: u64 = 10;

/// A daily UTC time-of-day window `[start, end)`; may wrap past midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl TimeWindow {
    pub fn parse(start: &str, end: &str) -> Option<Self> {
        Some(Self {
            start: parse_hhmm(start)?,
            end: parse_hhmm(end)?,
        })
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        if self.start <= self.end {
            self.start <= t && t < self.end
        } else {
            t >= self.start || t < self.end
        }
    }

    /// `at` itself when inside the window, otherwise the next window start.
    pub fn next_open(&self, at: DateTime<Utc>) -> DateTime<Utc> {
        if self.contains(at.time()) {
            return at;
        }
        let today = at.date_naive().and_time(self.start).and_utc();
        if today > at {
            today
        } else {
            today + Days::new(1)
        }
    }
}

fn parse_hhmm(s: &str) -> Option<NaiveTime> {
    let (h, m) = s.split_once(':')?;
    if h.len() != 2 || m.len() != 2 {
        return None;
    }
    NaiveTime::from_hms_opt(h.parse().ok()?, m.parse().ok()?, 0)
}

#[derive(Serialize, Deserialize)]
struct WindowWire {
    start_utc: String,
    end_utc: String,
}

impl Serialize for TimeWindow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WindowWire {
            start_utc: self.start.format("%H:%M").to_string(),
            end_utc: self.end.format("%H:%M").to_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TimeWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = WindowWire::deserialize(d)?;
        TimeWindow::parse(&wire.start_utc, &wire.end_utc)
            .ok_or_else(|| serde::de::Error::custom("window times must be HH:MM"))
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start.format("%H:%M"), self.end.format("%H:%M"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub interval_seconds: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<TimeWindow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_due: Option<DateTime<Utc>>,
}

impl Schedule {
    pub fn every(interval_seconds: u64) -> Self {
        Self {
            interval_seconds,
            window: None,
            next_due: None,
        }
    }

    pub fn within(mut self, window: TimeWindow) -> Self {
        self.window = Some(window);
        self
    }

    /// Query-parameter form: `3600` or `3600@09:00-17:00`.
    pub fn to_param(&self) -> String {
        match &self.window {
            Some(w) => format!("{}@{w}", self.interval_seconds),
            None => self.interval_seconds.to_string(),
        }
    }

    pub fn from_param(s: &str) -> Option<Schedule> {
        let (interval, window) = match s.split_once('@') {
            Some((i, w)) => {
                let (start, end) = w.split_once('-')?;
                (i, Some(TimeWindow::parse(start, end)?))
            }
            None => (s, None),
        };
        let mut schedule = Schedule::every(interval.trim().parse().ok()?);
        schedule.window = window;
        Some(schedule)
    }

    fn interval(&self) -> TimeDelta {
        TimeDelta::seconds(self.interval_seconds as i64)
    }

    fn adjust(&self, t: DateTime<Utc>) -> DateTime<Utc> {
        match &self.window {
            Some(w) => w.next_open(t),
            None => t,
        }
    }

    /// First fire time strictly after `after`, stepping from `from`.
    fn step_past(&self, from: DateTime<Utc>, after: DateTime<Utc>) -> DateTime<Utc> {
        let mut next = from;
        while next <= after {
            next = self.adjust(next + self.interval());
        }
        next
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("scheduled access requires a schedule")]
    MissingSchedule,
    #[error("a schedule is only allowed for scheduled access")]
    UnexpectedSchedule,
    #[error("interval {got} s is below the minimum of {min} s")]
    IntervalTooShort { got: u64, min: u64 },
}

/// A schedule is required for, and only allowed with, scheduled access.
pub fn check_schedule(
    pattern: AccessPattern,
    schedule: Option<&Schedule>,
    min_interval: u64,
) -> Result<(), ScheduleError> {
    match (pattern, schedule) {
        (AccessPattern::Scheduled, None) => Err(ScheduleError::MissingSchedule),
        (AccessPattern::Scheduled, Some(s)) if s.interval_seconds < min_interval => {
            Err(ScheduleError::IntervalTooShort {
                got: s.interval_seconds,
                min: min_interval,
            })
        }
        (AccessPattern::Scheduled, Some(_)) | (_, None) => Ok(()),
        (_, Some(_)) => Err(ScheduleError::UnexpectedSchedule),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessBinding {
    pub grant_id: String,
    pub pattern: AccessPattern,
    pub schedule: Option<Schedule>,
    pub endpoint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Run the pipeline and deliver once now, then call [`Scheduler::mark_consumed`].
    RunOnce,
    Registered { next_due: DateTime<Utc> },
    AwaitQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum QueryRejection {
    #[error("grant has no access binding")]
    Unbound,
    #[error("grant uses {0} access and cannot be queried")]
    WrongPattern(AccessPattern),
}

/// Missed scheduled runs for one grant, collapsed into one delivery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatchUp {
    pub grant_id: String,
    pub missed: usize,
}

#[derive(Debug, Clone)]
struct Entry {
    binding: AccessBinding,
    consumed: bool,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    entries: BTreeMap<String, Entry>,
    min_interval: u64,
}

impl Default for Scheduler {
    fn default() -> Self {
        Self::new(DEFAULT_MIN_INTERVAL_SECONDS)
    }
}

impl Scheduler {
    pub fn new(min_interval_seconds: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            min_interval: min_interval_seconds,
        }
    }

    pub fn check(
        &self,
        pattern: AccessPattern,
        schedule: Option<&Schedule>,
    ) -> Result<(), ScheduleError> {
        check_schedule(pattern, schedule, self.min_interval)
    }

    pub fn activate(
        &mut self,
        mut binding: AccessBinding,
        now: DateTime<Utc>,
    ) -> Result<Activation, ScheduleError> {
        self.check(binding.pattern, binding.schedule.as_ref())?;
        let effect = match (&binding.pattern, binding.schedule.as_mut()) {
            (AccessPattern::InstallTime, _) => Activation::RunOnce,
            (AccessPattern::UserDriven, _) => Activation::AwaitQuery,
            (AccessPattern::Scheduled, Some(s)) => {
                let due = s.step_past(now, now);
                s.next_due = Some(due);
                Activation::Registered { next_due: due }
            }
            (AccessPattern::Scheduled, None) => unreachable!("checked above"),
        };
        self.entries.insert(
            binding.grant_id.clone(),
            Entry {
                binding,
                consumed: false,
            },
        );
        Ok(effect)
    }

    pub fn binding(&self, grant_id: &str) -> Option<&AccessBinding> {
        self.entries.get(grant_id).map(|e| &e.binding)
    }

    pub fn next_due(&self, grant_id: &str) -> Option<DateTime<Utc>> {
        self.binding(grant_id)?.schedule.as_ref()?.next_due
    }

    pub fn remove(&mut self, grant_id: &str) -> Option<AccessBinding> {
        self.entries.remove(grant_id).map(|e| e.binding)
    }

    pub fn mark_consumed(&mut self, grant_id: &str) {
        if let Some(e) = self.entries.get_mut(grant_id) {
            e.consumed = true;
        }
    }

    pub fn is_consumed(&self, grant_id: &str) -> bool {
        self.entries.get(grant_id).is_some_and(|e| e.consumed)
    }

    /// Only user-driven grants answer client queries.
    pub fn admit_query(&self, grant_id: &str) -> Result<(), QueryRejection> {
        let entry = self.entries.get(grant_id).ok_or(QueryRejection::Unbound)?;
        match entry.binding.pattern {
            AccessPattern::UserDriven => Ok(()),
            other => Err(QueryRejection::WrongPattern(other)),
        }
    }

    /// Scheduled grants due at `now`, ordered by grant id. Each returned
    /// grant's next due time moves strictly past `now`.
    pub fn tick(&mut self, now: DateTime<Utc>) -> Vec<String> {
        let mut due = Vec::new();
        for (id, entry) in &mut self.entries {
            let Some(s) = entry.binding.schedule.as_mut() else {
                continue;
            };
            let Some(next) = s.next_due else { continue };
            if next <= now {
                s.next_due = Some(s.step_past(next, now));
                due.push(id.clone());
            }
        }
        due
    }

    /// Grants that missed at least one due time while the hub was offline.
    /// Each yields one entry regardless of how many runs were missed, and its
    /// next due time is realigned past `offline_to`.
    pub fn catch_up(
        &mut self,
        offline_from: DateTime<Utc>,
        offline_to: DateTime<Utc>,
    ) -> Vec<CatchUp> {
        let mut out = Vec::new();
        for (id, entry) in &mut self.entries {
            let Some(s) = entry.binding.schedule.as_mut() else {
                continue;
            };
            let Some(mut next) = s.next_due else { continue };
            let mut missed = 0;
            while next <= offline_to {
                if next >= offline_from {
                    missed += 1;
                }
                next = s.adjust(next + s.interval());
            }
            s.next_due = Some(next);
            if missed > 0 {
                out.push(CatchUp {
                    grant_id: id.clone(),
                    missed,
                });
            }
        }
        out
    }
}

/// Attempts and backoff for outbound deliveries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base: Duration::from_secs(1),
            factor: 4,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base: Duration::ZERO,
            factor: 1,
        }
    }

    /// Wait before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base * self.factor.saturating_pow(retry.saturating_sub(1))
    }

    /// Runs `op` until it succeeds or attempts run out, calling `sleep`
    /// between tries. Returns the last error and the number of attempts.
    pub fn run<T, E>(
        &self,
        mut sleep: impl FnMut(Duration),
        mut op: impl FnMut(u32) -> Result<T, E>,
    ) -> Result<T, (E, u32)> {
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if attempt >= self.attempts.max(1) => return Err((e, attempt)),
                Err(_) => {
                    sleep(self.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}
