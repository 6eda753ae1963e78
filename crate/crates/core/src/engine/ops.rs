//! Pure semantics of the reduction and transform operators.
//!
//! Every function takes the operator spec and an input stream and returns the
//! output stream. Parameters are assumed to have passed validation; anything
//! malformed at run time surfaces as an [`OpFailure`].

use std::cmp::Ordering;
use std::collections::HashMap;

use chrono::{DateTime, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use ring::digest::{digest, SHA256};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::dates::find_dates;
use super::json::{canonical_json, number, stringify};
use super::path::{update_at, update_parents, Path};
use crate::manifest::{bucket_bounds, OperatorSpec, OperatorType, ParamValue};

pub type Stream = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpFailure {
    #[error("invalid pattern: {0}")]
    BadPattern(String),
    #[error("field `{field}` holds a non-numeric value")]
    NonNumericField { field: String },
    #[error("invalid buckets: {0}")]
    BadBucketSpec(String),
    #[error("invalid parameter `{0}`")]
    BadParam(String),
}

/// How field paths are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldScope {
    /// Paths address the record directly.
    #[default]
    Record,
    /// Records are serialized action requests; a path that does not resolve
    /// on the record is retried under its `parameters` object.
    Action,
}

/// Per-run environment shared by all operators of one pipeline execution.
pub struct OpEnv {
    pub now: DateTime<Utc>,
    pub scope: FieldScope,
    pub rng: ChaCha8Rng,
}

impl OpEnv {
    pub fn new(now: DateTime<Utc>, scope: FieldScope, rng: ChaCha8Rng) -> Self {
        Self { now, scope, rng }
    }

    fn resolve(&self, record: &Value, path: &Path) -> Option<Value> {
        path.get(record).or_else(|| match self.scope {
            FieldScope::Action => record.get("parameters").and_then(|p| path.get(p)),
            FieldScope::Record => None,
        })
    }
}

fn path_param(op: &OperatorSpec, key: &str) -> Result<Path, OpFailure> {
    op.str_param(key)
        .and_then(Path::parse)
        .ok_or_else(|| OpFailure::BadParam(key.into()))
}

fn path_list(op: &OperatorSpec, key: &str) -> Result<Vec<Path>, OpFailure> {
    let raw = op
        .param(key)
        .and_then(ParamValue::as_str_list)
        .ok_or_else(|| OpFailure::BadParam(key.into()))?;
    raw.into_iter()
        .map(|s| Path::parse(s).ok_or_else(|| OpFailure::BadParam(key.into())))
        .collect()
}

fn compile(pattern: &str) -> Result<Regex, OpFailure> {
    Regex::new(pattern).map_err(|e| OpFailure::BadPattern(e.to_string()))
}

/// Dispatches a reduction/transform/utility operator. Source and sink
/// operators are handled by the executor.
pub fn apply(op: &OperatorSpec, stream: Stream, env: &mut OpEnv) -> Result<Stream, OpFailure> {
    match op.op_type {
        OperatorType::Filter => filter(op, stream, env),
        OperatorType::Select => select(op, stream),
        OperatorType::Extract => extract(op, stream),
        OperatorType::Limit => limit(op, stream),
        OperatorType::Aggregate => aggregate(op, stream),
        OperatorType::Map => map(op, stream),
        OperatorType::Anonymize => anonymize(op, stream, env),
        OperatorType::Inject | OperatorType::Debug => Ok(stream),
        OperatorType::Pull | OperatorType::Receive | OperatorType::Post | OperatorType::Write => {
            Ok(stream)
        }
    }
}

// ---------------------------------------------------------------- Filter

enum Condition {
    Pattern(Regex),
    Literal(String),
    Compare(Ordering, bool, Target),
    NotEqual(Target),
}

enum Target {
    Now(DateTime<Utc>),
    Str(String),
    Num(f64),
}

fn parse_time(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

impl Target {
    fn order(&self, value: &Value) -> Option<Ordering> {
        match (self, value) {
            (Target::Now(now), Value::String(s)) => parse_time(s).map(|t| t.cmp(now)),
            (Target::Now(_), _) => None,
            (Target::Str(t), Value::String(s)) => match (parse_time(s), parse_time(t)) {
                (Some(a), Some(b)) => Some(a.cmp(&b)),
                _ => Some(s.as_str().cmp(t.as_str())),
            },
            (Target::Str(t), Value::Number(n)) => {
                let n = n.as_f64()?;
                match t.parse::<f64>() {
                    Ok(t) => n.partial_cmp(&t),
                    Err(_) => None,
                }
            }
            (Target::Str(t), other @ (Value::Bool(_) | Value::Null)) => {
                Some(stringify(other).as_str().cmp(t.as_str()))
            }
            (Target::Num(t), Value::Number(n)) => n.as_f64()?.partial_cmp(t),
            (Target::Num(t), Value::String(s)) => s.trim().parse::<f64>().ok()?.partial_cmp(t),
            _ => None,
        }
    }
}

impl Condition {
    fn holds(&self, value: &Value) -> bool {
        if let Value::Array(items) = value {
            return !items.is_empty() && items.iter().all(|v| self.holds(v));
        }
        match self {
            Condition::Pattern(re) => re.is_match(&stringify(value)),
            Condition::Literal(s) => stringify(value) == *s,
            Condition::Compare(wanted, or_equal, target) => match target.order(value) {
                Some(o) => o == *wanted || (*or_equal && o == Ordering::Equal),
                None => false,
            },
            Condition::NotEqual(target) => {
                matches!(target.order(value), Some(o) if o != Ordering::Equal)
            }
        }
    }
}

fn target(op: &OperatorSpec, now: DateTime<Utc>) -> Result<Target, OpFailure> {
    match op.param("targetValue") {
        Some(ParamValue::Now) => Ok(Target::Now(now)),
        Some(ParamValue::Str(s)) => Ok(Target::Str(s.clone())),
        Some(ParamValue::Num(n)) => Ok(Target::Num(*n)),
        _ => Err(OpFailure::BadParam("targetValue".into())),
    }
}

/// Keeps records whose field(s) satisfy the condition. Records where a field
/// is absent do not satisfy it; array values must satisfy it element-wise.
pub fn filter(op: &OperatorSpec, stream: Stream, env: &OpEnv) -> Result<Stream, OpFailure> {
    let fields = path_list(op, "field")?;
    let operation = op
        .str_param("operation")
        .ok_or_else(|| OpFailure::BadParam("operation".into()))?;
    let condition = match operation {
        "match" => match (op.str_param("pattern"), op.param("targetValue")) {
            (Some(p), _) => Condition::Pattern(compile(p)?),
            (None, Some(ParamValue::Str(s))) => Condition::Literal(s.clone()),
            (None, Some(ParamValue::Num(n))) => Condition::Literal(canonical_json(&number(*n))),
            _ => return Err(OpFailure::BadParam("pattern".into())),
        },
        "=" => Condition::Compare(Ordering::Equal, false, target(op, env.now)?),
        "!=" => Condition::NotEqual(target(op, env.now)?),
        ">" => Condition::Compare(Ordering::Greater, false, target(op, env.now)?),
        ">=" => Condition::Compare(Ordering::Greater, true, target(op, env.now)?),
        "<" => Condition::Compare(Ordering::Less, false, target(op, env.now)?),
        "<=" => Condition::Compare(Ordering::Less, true, target(op, env.now)?),
        _ => return Err(OpFailure::BadParam("operation".into())),
    };
    let require_all = op.str_param("requirement") == Some("all");
    let keep = |record: &Value| {
        let mut results = fields.iter().map(|f| {
            env.resolve(record, f)
                .is_some_and(|value| condition.holds(&value))
        });
        if require_all {
            results.all(|ok| ok)
        } else {
            results.any(|ok| ok)
        }
    };
    Ok(stream.into_iter().filter(|r| keep(r)).collect())
}

// ---------------------------------------------------------------- Select

/// A single path unnests an array value into one record per element; a list
/// of paths projects each record onto those paths.
pub fn select(op: &OperatorSpec, stream: Stream) -> Result<Stream, OpFailure> {
    match op.param("field") {
        Some(ParamValue::Str(_)) => {
            let path = path_param(op, "field")?;
            Ok(stream
                .iter()
                .flat_map(|record| match path.get(record) {
                    Some(Value::Array(items)) => items,
                    Some(value) => vec![value],
                    None => vec![],
                })
                .collect())
        }
        Some(ParamValue::List(_)) => {
            let paths = path_list(op, "field")?;
            let trie = Trie::from_paths(&paths);
            Ok(stream.iter().filter_map(|r| trie.project(r)).collect())
        }
        _ => Err(OpFailure::BadParam("field".into())),
    }
}

#[derive(Default)]
struct Trie {
    terminal: bool,
    children: Vec<(String, Trie)>,
}

impl Trie {
    fn from_paths(paths: &[Path]) -> Trie {
        let mut root = Trie::default();
        for path in paths {
            let mut node = &mut root;
            for seg in path.segments() {
                let idx = match node.children.iter().position(|(k, _)| k == seg) {
                    Some(i) => i,
                    None => {
                        node.children.push((seg.clone(), Trie::default()));
                        node.children.len() - 1
                    }
                };
                node = &mut node.children[idx].1;
            }
            node.terminal = true;
        }
        root
    }

    /// The parts of `value` on a selected path. Array elements that hold none
    /// of them become `null` so positions line up.
    fn project(&self, value: &Value) -> Option<Value> {
        if self.terminal {
            return Some(value.clone());
        }
        match value {
            Value::Object(map) => {
                let mut out = Map::new();
                for (key, child) in &self.children {
                    if let Some(v) = map.get(key).and_then(|v| child.project(v)) {
                        out.insert(key.clone(), v);
                    }
                }
                (!out.is_empty()).then_some(Value::Object(out))
            }
            Value::Array(items) => {
                let projected: Vec<Option<Value>> = items.iter().map(|e| self.project(e)).collect();
                if projected.iter().all(Option::is_none) {
                    None
                } else {
                    Some(Value::Array(
                        projected
                            .into_iter()
                            .map(|v| v.unwrap_or(Value::Null))
                            .collect(),
                    ))
                }
            }
            _ => None,
        }
    }
}

// ---------------------------------------------------------------- Extract

fn text_values(value: &Value) -> Vec<String> {
    match value {
        Value::Array(items) => items.iter().flat_map(text_values).collect(),
        other => vec![stringify(other)],
    }
}

/// `regex`: first capture group (or whole match) of the first matching text.
/// `date`: every date found, as a string when there is one, else an array.
/// Records without a match are dropped.
pub fn extract(op: &OperatorSpec, stream: Stream) -> Result<Stream, OpFailure> {
    let field = path_param(op, "field")?;
    match op.str_param("operation") {
        Some("regex") => {
            let re = compile(
                op.str_param("pattern")
                    .ok_or_else(|| OpFailure::BadParam("pattern".into()))?,
            )?;
            Ok(stream
                .iter()
                .filter_map(|record| {
                    let texts = text_values(&field.get(record)?);
                    texts.iter().find_map(|text| {
                        let caps = re.captures(text)?;
                        let m = caps.get(1).or_else(|| caps.get(0))?;
                        Some(Value::String(m.as_str().to_string()))
                    })
                })
                .collect())
        }
        Some("date") => Ok(stream
            .iter()
            .filter_map(|record| {
                let texts = text_values(&field.get(record)?);
                let mut found: Vec<Value> = texts
                    .iter()
                    .flat_map(|t| find_dates(t))
                    .map(Value::String)
                    .collect();
                match found.len() {
                    0 => None,
                    1 => found.pop(),
                    _ => Some(Value::Array(found)),
                }
            })
            .collect()),
        _ => Err(OpFailure::BadParam("operation".into())),
    }
}

// ---------------------------------------------------------------- Limit

pub fn limit(op: &OperatorSpec, stream: Stream) -> Result<Stream, OpFailure> {
    let count = op
        .num_param("count")
        .filter(|n| *n >= 0.0 && n.fract() == 0.0)
        .ok_or_else(|| OpFailure::BadParam("count".into()))?;
    Ok(stream.into_iter().take(count as usize).collect())
}

// ---------------------------------------------------------------- Aggregate

fn numeric(record: &Value, field: &Path) -> Result<Option<(f64, Value)>, OpFailure> {
    match field.get(record) {
        None => Ok(None),
        Some(Value::Number(n)) => Ok(n.as_f64().map(|x| (x, Value::Number(n)))),
        Some(_) => Err(OpFailure::NonNumericField {
            field: field.to_string(),
        }),
    }
}

/// `count`, `sum`, `avg`, `min` or `max` over the stream, optionally per
/// `groupKey` value (groups in first-seen order). Over an empty stream,
/// count and sum yield 0 while avg, min and max yield nothing.
pub fn aggregate(op: &OperatorSpec, stream: Stream) -> Result<Stream, OpFailure> {
    let operation = op
        .str_param("operation")
        .ok_or_else(|| OpFailure::BadParam("operation".into()))?;
    let field = match op.param("field") {
        Some(_) => Some(path_param(op, "field")?),
        None => None,
    };
    if operation != "count" && field.is_none() {
        return Err(OpFailure::BadParam("field".into()));
    }
    let reduce = |records: &[&Value]| -> Result<Option<Value>, OpFailure> {
        if operation == "count" {
            return Ok(Some(Value::from(records.len())));
        }
        let field = field.as_ref().expect("checked above");
        let mut values = Vec::new();
        for r in records {
            if let Some(v) = numeric(r, field)? {
                values.push(v);
            }
        }
        Ok(match operation {
            "sum" => Some(number(values.iter().map(|(x, _)| x).sum())),
            "avg" if values.is_empty() => None,
            "avg" => Some(number(
                values.iter().map(|(x, _)| x).sum::<f64>() / values.len() as f64,
            )),
            "min" => values
                .into_iter()
                .reduce(|a, b| if b.0 < a.0 { b } else { a })
                .map(|(_, v)| v),
            "max" => values
                .into_iter()
                .reduce(|a, b| if b.0 > a.0 { b } else { a })
                .map(|(_, v)| v),
            other => return Err(OpFailure::BadParam(format!("operation {other}"))),
        })
    };

    match op.str_param("groupKey") {
        None => {
            let records: Vec<&Value> = stream.iter().collect();
            Ok(reduce(&records)?
                .map(|value| {
                    json!({
                        "operation": operation,
                        "field": op.str_param("field"),
                        "value": value,
                    })
                })
                .into_iter()
                .collect())
        }
        Some(key) => {
            let key = Path::parse(key).ok_or_else(|| OpFailure::BadParam("groupKey".into()))?;
            let mut order: Vec<(String, Value)> = Vec::new();
            let mut groups: HashMap<String, Vec<&Value>> = HashMap::new();
            for record in &stream {
                let group = key.get(record).unwrap_or(Value::Null);
                let id = canonical_json(&group);
                groups
                    .entry(id.clone())
                    .or_insert_with(|| {
                        order.push((id, group));
                        Vec::new()
                    })
                    .push(record);
            }
            let mut out = Vec::new();
            for (id, group) in order {
                if let Some(value) = reduce(&groups[&id])? {
                    out.push(json!({"group": group, "value": value}));
                }
            }
            Ok(out)
        }
    }
}

// ---------------------------------------------------------------- Map

/// Label of the half-open bucket `[b_i, b_{i+1})` holding `x`.
pub fn bucket_label(bounds: &[i64], x: f64) -> String {
    match bounds.iter().rposition(|b| (*b as f64) <= x) {
        None => format!("<{}", bounds[0]),
        Some(i) if i + 1 == bounds.len() => format!("{}+", bounds[i]),
        Some(i) => format!("{}-{}", bounds[i], bounds[i + 1] - 1),
    }
}

/// Rewrites the field in place; other fields are untouched and records
/// lacking the field pass through unchanged.
pub fn map(op: &OperatorSpec, stream: Stream) -> Result<Stream, OpFailure> {
    let field = path_param(op, "field")?;
    let segments = field.segments();
    let operation = op
        .str_param("operation")
        .ok_or_else(|| OpFailure::BadParam("operation".into()))?;
    let mut out = Vec::with_capacity(stream.len());
    match operation {
        "bucket" => {
            let bounds = bucket_bounds(
                op.param("buckets")
                    .ok_or_else(|| OpFailure::BadBucketSpec("missing".into()))?,
            )
            .map_err(OpFailure::BadBucketSpec)?;
            for mut record in stream {
                update_at(&mut record, segments, &mut |v: &mut Value| match v.as_f64() {
                    Some(x) => {
                        *v = Value::String(bucket_label(&bounds, x));
                        Ok(())
                    }
                    None => Err(OpFailure::NonNumericField {
                        field: field.to_string(),
                    }),
                })?;
                out.push(record);
            }
        }
        "lowercase" => {
            for mut record in stream {
                update_at(&mut record, segments, &mut |v: &mut Value| {
                    if let Value::String(s) = v {
                        *s = s.to_lowercase();
                    }
                    Ok::<(), OpFailure>(())
                })?;
                out.push(record);
            }
        }
        "truncate" => {
            let length = op
                .num_param("length")
                .filter(|n| *n >= 0.0)
                .ok_or_else(|| OpFailure::BadParam("length".into()))? as usize;
            for mut record in stream {
                update_at(&mut record, segments, &mut |v: &mut Value| {
                    if let Value::String(s) = v {
                        *s = s.chars().take(length).collect();
                    }
                    Ok::<(), OpFailure>(())
                })?;
                out.push(record);
            }
        }
        "rename" => {
            let to = op
                .str_param("to")
                .ok_or_else(|| OpFailure::BadParam("to".into()))?;
            let last = segments.last().cloned().unwrap_or_default();
            for mut record in stream {
                update_parents(&mut record, segments, &mut |obj| {
                    if let Some(v) = obj.remove(&last) {
                        obj.insert(to.to_string(), v);
                    }
                });
                out.push(record);
            }
        }
        other => return Err(OpFailure::BadParam(format!("operation {other}"))),
    }
    Ok(out)
}

// ---------------------------------------------------------------- Anonymize

pub const REDACTED: &str = "[REDACTED]";

/// Lowercase hex SHA-256 of a string value's UTF-8 bytes (canonical JSON for
/// non-strings).
pub fn hash_value(value: &Value) -> String {
    let text = stringify(value);
    hex::encode(digest(&SHA256, text.as_bytes()))
}

pub fn anonymize(op: &OperatorSpec, stream: Stream, env: &mut OpEnv) -> Result<Stream, OpFailure> {
    let field = path_param(op, "field")?;
    let segments = field.segments();
    let method = op
        .str_param("method")
        .ok_or_else(|| OpFailure::BadParam("method".into()))?;
    let magnitude = op.num_param("magnitude").unwrap_or(0.0).abs();
    let mut out = Vec::with_capacity(stream.len());
    for mut record in stream {
        match method {
            "hash" => update_at(&mut record, segments, &mut |v: &mut Value| {
                *v = Value::String(hash_value(v));
                Ok::<(), OpFailure>(())
            })?,
            "redact" => update_at(&mut record, segments, &mut |v: &mut Value| {
                *v = Value::String(REDACTED.into());
                Ok::<(), OpFailure>(())
            })?,
            "noise" => {
                let rng = &mut env.rng;
                update_at(&mut record, segments, &mut |v: &mut Value| match v.as_f64() {
                    Some(x) => {
                        let delta = if magnitude > 0.0 {
                            rng.random_range(-magnitude..=magnitude)
                        } else {
                            0.0
                        };
                        *v = number(x + delta);
                        Ok(())
                    }
                    None => Err(OpFailure::NonNumericField {
                        field: field.to_string(),
                    }),
                })?
            }
            other => return Err(OpFailure::BadParam(format!("method {other}"))),
        }
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn env() -> OpEnv {
        OpEnv::new(
            "2025-06-01T12:00:00Z".parse().unwrap(),
            FieldScope::Record,
            ChaCha8Rng::seed_from_u64(7),
        )
    }

    fn s(v: &str) -> ParamValue {
        ParamValue::Str(v.into())
    }

    fn list(items: &[&str]) -> ParamValue {
        ParamValue::List(items.iter().map(|i| s(i)).collect())
    }

    fn op(t: OperatorType) -> OperatorSpec {
        OperatorSpec::new("op", t)
    }

    #[test]
    fn filter_future_events_against_now() {
        let f = op(OperatorType::Filter)
            .with("operation", s(">"))
            .with("field", s("start.dateTime"))
            .with("targetValue", ParamValue::Now);
        let stream = vec![
            json!({"start": {"dateTime": "2025-06-02T09:00:00Z"}}),
            json!({"start": {"dateTime": "2025-05-30T09:00:00Z"}}),
            json!({"start": {"dateTime": "2025-06-01T14:00:00+02:00"}}),
            json!({"summary": "no start"}),
        ];
        let out = filter(&f, stream, &env()).unwrap();
        assert_eq!(out, vec![json!({"start": {"dateTime": "2025-06-02T09:00:00Z"}})]);
        assert!(filter(&f, vec![], &env()).unwrap().is_empty());
    }

    #[test]
    fn filter_match_any_field() {
        let f = op(OperatorType::Filter)
            .with("operation", s("match"))
            .with("field", list(&["location", "description"]))
            .with("pattern", s(r"zoom\.us"))
            .with("requirement", s("any"));
        let hit = json!({"location": "Room 4", "description": "join https://zoom.us/j/1"});
        let miss = json!({"location": "zoomXus", "description": "none"});
        let out = filter(&f, vec![hit.clone(), miss], &env()).unwrap();
        assert_eq!(out, vec![hit.clone()]);

        let all = f.clone().with("requirement", s("all"));
        assert!(filter(&all, vec![hit], &env()).unwrap().is_empty());
    }

    #[test]
    fn filter_literal_match_and_action_scope() {
        let f = op(OperatorType::Filter)
            .with("operation", s("match"))
            .with("field", list(&["parents"]))
            .with("targetValue", s("folderId"));
        let request = |parents: Value| json!({"action": "create", "body": {}, "parameters": {"parents": parents}});
        let mut action_env = env();
        action_env.scope = FieldScope::Action;
        let out = filter(
            &f,
            vec![
                request(json!("folderId")),
                request(json!("other")),
                request(json!(["folderId"])),
                request(json!(["folderId", "other"])),
                request(json!("folderId-2")),
            ],
            &action_env,
        )
        .unwrap();
        assert_eq!(out, vec![request(json!("folderId")), request(json!(["folderId"]))]);
        // Without the action scope the bare `parents` path does not resolve.
        assert!(filter(&f, vec![request(json!("folderId"))], &env()).unwrap().is_empty());
    }

    #[test]
    fn filter_equality_on_booleans_and_numbers() {
        let valid = op(OperatorType::Filter)
            .with("operation", s("="))
            .with("field", s("valid"))
            .with("targetValue", s("true"));
        let out = filter(&valid, vec![json!({"valid": true}), json!({"valid": false})], &env()).unwrap();
        assert_eq!(out, vec![json!({"valid": true})]);

        let big = op(OperatorType::Filter)
            .with("operation", s(">="))
            .with("field", s("n"))
            .with("targetValue", ParamValue::Num(10.0));
        let out = filter(&big, vec![json!({"n": 9}), json!({"n": 10}), json!({"n": "11"}), json!({"n": "x"})], &env()).unwrap();
        assert_eq!(out, vec![json!({"n": 10}), json!({"n": "11"})]);
    }

    #[test]
    fn filter_bad_pattern() {
        let f = op(OperatorType::Filter)
            .with("operation", s("match"))
            .with("field", s("a"))
            .with("pattern", s("("));
        assert!(matches!(filter(&f, vec![], &env()), Err(OpFailure::BadPattern(_))));
    }

    #[test]
    fn select_unnests_and_projects() {
        let events = op(OperatorType::Select).with("field", s("events"));
        let doc = json!({"events": [{"id": 1}, {"id": 2}]});
        assert_eq!(select(&events, vec![doc]).unwrap(), vec![json!({"id": 1}), json!({"id": 2})]);
        assert!(select(&events, vec![json!({"other": 1})]).unwrap().is_empty());

        let proj = op(OperatorType::Select).with("field", list(&["summary", "start.dateTime"]));
        let event = json!({"summary": "s", "location": "l", "start": {"dateTime": "t", "timeZone": "z"}});
        assert_eq!(
            select(&proj, vec![event]).unwrap(),
            vec![json!({"summary": "s", "start": {"dateTime": "t"}})]
        );
    }

    #[test]
    fn extract_regex_and_date() {
        let re = op(OperatorType::Extract)
            .with("operation", s("regex"))
            .with("field", s("snippet"))
            .with("pattern", s(r"Flight (\w+)"));
        let out = extract(
            &re,
            vec![json!({"snippet": "Flight UA123 confirmed"}), json!({"snippet": "nothing"})],
        )
        .unwrap();
        assert_eq!(out, vec![json!("UA123")]);

        let date = op(OperatorType::Extract)
            .with("operation", s("date"))
            .with("field", s("snippet"));
        let out = extract(
            &date,
            vec![
                json!({"snippet": "departs 2025-03-14T09:30:00Z"}),
                json!({"snippet": "2025-03-14 and 2025-03-20"}),
                json!({"snippet": "no date"}),
            ],
        )
        .unwrap();
        assert_eq!(out, vec![json!("2025-03-14T09:30:00Z"), json!(["2025-03-14", "2025-03-20"])]);
    }

    #[test]
    fn limit_counts() {
        let five: Stream = (0..5).map(|i| json!(i)).collect();
        let l = |n: f64| op(OperatorType::Limit).with("count", ParamValue::Num(n));
        assert_eq!(limit(&l(3.0), five.clone()).unwrap(), five[..3].to_vec());
        assert!(limit(&l(0.0), five.clone()).unwrap().is_empty());
        assert_eq!(limit(&l(9.0), five.clone()).unwrap(), five);
    }

    #[test]
    fn aggregate_empty_conventions() {
        let agg = |o: &str| {
            op(OperatorType::Aggregate)
                .with("operation", s(o))
                .with("field", s("n"))
        };
        assert_eq!(aggregate(&agg("sum"), vec![]).unwrap()[0]["value"], json!(0));
        assert_eq!(aggregate(&agg("count"), vec![]).unwrap()[0]["value"], json!(0));
        for o in ["avg", "min", "max"] {
            assert!(aggregate(&agg(o), vec![]).unwrap().is_empty());
        }
        let nine: Stream = (0..9).map(|i| json!({"responseId": i})).collect();
        let count = op(OperatorType::Aggregate).with("operation", s("count"));
        assert_eq!(aggregate(&count, nine).unwrap()[0]["value"], json!(9));
    }

    #[test]
    fn aggregate_values_and_groups() {
        let stream = vec![
            json!({"n": 4, "status": "a"}),
            json!({"n": 1.5, "status": "b"}),
            json!({"n": 2, "status": "a"}),
        ];
        let agg = |o: &str| {
            op(OperatorType::Aggregate)
                .with("operation", s(o))
                .with("field", s("n"))
        };
        assert_eq!(aggregate(&agg("sum"), stream.clone()).unwrap()[0]["value"], json!(7.5));
        assert_eq!(aggregate(&agg("avg"), stream.clone()).unwrap()[0]["value"], json!(2.5));
        assert_eq!(aggregate(&agg("min"), stream.clone()).unwrap()[0]["value"], json!(1.5));
        assert_eq!(aggregate(&agg("max"), stream.clone()).unwrap()[0]["value"], json!(4));
        let grouped = agg("count").with("groupKey", s("status"));
        assert_eq!(
            aggregate(&grouped, stream).unwrap(),
            vec![json!({"group": "a", "value": 2}), json!({"group": "b", "value": 1})]
        );
        assert!(matches!(
            aggregate(&agg("sum"), vec![json!({"n": "x"})]),
            Err(OpFailure::NonNumericField { .. })
        ));
    }

    #[test]
    fn map_operations() {
        let bucket = op(OperatorType::Map)
            .with("operation", s("bucket"))
            .with("field", s("age"))
            .with(
                "buckets",
                ParamValue::List(vec![ParamValue::Num(18.0), ParamValue::Num(30.0), ParamValue::Num(50.0)]),
            );
        let out = map(&bucket, vec![json!({"age": 27, "name": "x"}), json!({"age": 12}), json!({"age": 70}), json!({})]).unwrap();
        assert_eq!(
            out,
            vec![json!({"age": "18-29", "name": "x"}), json!({"age": "<18"}), json!({"age": "50+"}), json!({})]
        );

        let lower = op(OperatorType::Map).with("operation", s("lowercase")).with("field", s("a"));
        assert_eq!(map(&lower, vec![json!({"a": "ABC"})]).unwrap(), vec![json!({"a": "abc"})]);

        let trunc = op(OperatorType::Map)
            .with("operation", s("truncate"))
            .with("field", s("a"))
            .with("length", ParamValue::Num(5.0));
        assert_eq!(map(&trunc, vec![json!({"a": "abcdefgh"})]).unwrap(), vec![json!({"a": "abcde"})]);

        let rename = op(OperatorType::Map)
            .with("operation", s("rename"))
            .with("field", s("x.old"))
            .with("to", s("new"));
        assert_eq!(
            map(&rename, vec![json!({"x": {"old": 1, "k": 2}})]).unwrap(),
            vec![json!({"x": {"new": 1, "k": 2}})]
        );

        let bad = bucket.clone().with("buckets", ParamValue::List(vec![ParamValue::Num(3.0), ParamValue::Num(1.0)]));
        assert!(matches!(map(&bad, vec![]), Err(OpFailure::BadBucketSpec(_))));
    }

    #[test]
    fn anonymize_methods() {
        let hash = op(OperatorType::Anonymize).with("method", s("hash")).with("field", s("email"));
        let out = anonymize(&hash, vec![json!({"email": "a@b.com"}), json!({"email": "a@b.com"})], &mut env()).unwrap();
        let digest = out[0]["email"].as_str().unwrap();
        assert_eq!(digest.len(), 64);
        assert!(digest.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        assert_eq!(out[0], out[1]);

        let redact = op(OperatorType::Anonymize).with("method", s("redact")).with("field", s("name"));
        let out = anonymize(&redact, vec![json!({"name": {"first": "A"}})], &mut env()).unwrap();
        assert_eq!(out, vec![json!({"name": REDACTED})]);

        let noise = op(OperatorType::Anonymize)
            .with("method", s("noise"))
            .with("field", s("age"))
            .with("magnitude", ParamValue::Num(2.0));
        assert!(matches!(
            anonymize(&noise, vec![json!({"age": "old"})], &mut env()),
            Err(OpFailure::NonNumericField { .. })
        ));
    }

    #[test]
    fn noise_stays_within_magnitude() {
        let noise = op(OperatorType::Anonymize)
            .with("method", s("noise"))
            .with("field", s("age"))
            .with("magnitude", ParamValue::Num(2.0));
        for seed in 0..1000 {
            let mut e = env();
            e.rng = ChaCha8Rng::seed_from_u64(seed);
            let out = anonymize(&noise, vec![json!({"age": 30})], &mut e).unwrap();
            let age = out[0]["age"].as_f64().unwrap();
            assert!((age - 30.0).abs() <= 2.0, "seed {seed}: {age}");
        }
    }
}
