//! Static checks: per-operator parameter schemas and the linear-chain shape.

use std::collections::HashSet;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::model::{AccessPattern, Manifest, OperatorSpec, OperatorType, ParamValue};
use crate::engine::path::Path;

/// The rule a diagnostic reports as violated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "param")]
pub enum Rule {
    EmptyPipeline,
    MissingSource,
    MultipleSources,
    MissingSink,
    MultipleSinks,
    MisplacedOperator,
    UnusedOperator,
    UnresolvedOperator,
    WriteWithoutReceive,
    InjectScheduleConflict,
    MissingParam(String),
    UnknownParam(String),
    BadParamType(String),
    BadParamValue(String),
    BadPattern(String),
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::MissingParam(p) => write!(f, "MissingParam({p})"),
            Rule::UnknownParam(p) => write!(f, "UnknownParam({p})"),
            Rule::BadParamType(p) => write!(f, "BadParamType({p})"),
            Rule::BadParamValue(p) => write!(f, "BadParamValue({p})"),
            Rule::BadPattern(p) => write!(f, "BadPattern({p})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub operator_id: Option<String>,
    #[serde(flatten)]
    pub rule: Rule,
    pub message: String,
}

impl Diagnostic {
    fn new(operator_id: Option<&str>, rule: Rule, message: impl Into<String>) -> Self {
        Self {
            operator_id: operator_id.map(str::to_string),
            rule,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.operator_id {
            Some(id) => write!(f, "{id}: {}: {}", self.rule, self.message),
            None => write!(f, "{}: {}", self.rule, self.message),
        }
    }
}

pub const FILTER_OPERATIONS: [&str; 7] = ["=", "!=", ">", ">=", "<", "<=", "match"];
pub const EXTRACT_OPERATIONS: [&str; 2] = ["regex", "date"];
pub const AGGREGATE_OPERATIONS: [&str; 5] = ["count", "sum", "avg", "min", "max"];
pub const MAP_OPERATIONS: [&str; 4] = ["bucket", "lowercase", "truncate", "rename"];
pub const ANONYMIZE_METHODS: [&str; 3] = ["hash", "redact", "noise"];

/// Returns every problem found; an empty list means the manifest is valid.
pub fn validate(m: &Manifest) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    check_chain(m, &mut out);
    for id in &m.pipeline {
        if let Some(op) = m.operators.get(id) {
            check_params(op, &mut out);
        }
    }
    out
}

fn check_chain(m: &Manifest, out: &mut Vec<Diagnostic>) {
    let listed: HashSet<&str> = m.pipeline.iter().map(String::as_str).collect();
    for id in m.operators.keys() {
        if !listed.contains(id.as_str()) {
            out.push(Diagnostic::new(
                Some(id),
                Rule::UnusedOperator,
                "operator is defined but not part of the pipeline",
            ));
        }
    }

    let mut stages = Vec::with_capacity(m.pipeline.len());
    for id in &m.pipeline {
        match m.operators.get(id) {
            Some(op) => stages.push(op),
            None => out.push(Diagnostic::new(
                Some(id),
                Rule::UnresolvedOperator,
                "pipeline references an undefined operator",
            )),
        }
    }
    if stages.len() != m.pipeline.len() {
        return;
    }
    if stages.is_empty() {
        out.push(Diagnostic::new(None, Rule::EmptyPipeline, "pipeline is empty"));
        return;
    }
    // A lone Debug operator is accepted as a scaffold while authoring.
    if stages.len() == 1 && stages[0].op_type == OperatorType::Debug {
        return;
    }

    let injected = stages[0].op_type == OperatorType::Inject;
    let source_index = usize::from(injected);
    for (i, op) in stages.iter().enumerate() {
        if op.op_type == OperatorType::Inject && i != 0 {
            out.push(Diagnostic::new(
                Some(&op.id),
                Rule::MisplacedOperator,
                "Inject may only start the pipeline",
            ));
        }
    }
    if injected && stages.get(1).map(|op| op.op_type) != Some(OperatorType::Pull) {
        out.push(Diagnostic::new(
            Some(&stages[0].id),
            Rule::MisplacedOperator,
            "Inject must feed a Pull operator",
        ));
    }

    let sources: Vec<(usize, &&OperatorSpec)> = stages
        .iter()
        .enumerate()
        .filter(|(_, op)| op.op_type.is_source())
        .collect();
    match sources.as_slice() {
        [] => out.push(Diagnostic::new(
            Some(&stages[0].id),
            Rule::MissingSource,
            "pipeline must start with a Pull or Receive operator",
        )),
        [(first, op), rest @ ..] => {
            if *first != source_index {
                out.push(Diagnostic::new(
                    Some(&op.id),
                    Rule::MisplacedOperator,
                    "the source operator must start the pipeline",
                ));
            }
            for (_, extra) in rest {
                out.push(Diagnostic::new(
                    Some(&extra.id),
                    Rule::MultipleSources,
                    "pipeline may have only one source operator",
                ));
            }
        }
    }

    let last = stages.len() - 1;
    let last_is_sink = stages[last].op_type.is_sink();
    if !last_is_sink {
        out.push(Diagnostic::new(
            Some(&stages[last].id),
            Rule::MissingSink,
            "pipeline must end with a Post, Write or Debug operator",
        ));
    }
    for op in &stages[..last] {
        if matches!(op.op_type, OperatorType::Post | OperatorType::Write) {
            let (rule, msg) = if last_is_sink {
                (Rule::MultipleSinks, "pipeline may have only one sink")
            } else {
                (Rule::MisplacedOperator, "network operators must end the pipeline")
            };
            out.push(Diagnostic::new(Some(&op.id), rule, msg));
        }
    }

    let receive_source = sources
        .first()
        .is_some_and(|(_, op)| op.op_type == OperatorType::Receive);
    if let Some(write) = stages.iter().find(|op| op.op_type == OperatorType::Write) {
        if !receive_source {
            out.push(Diagnostic::new(
                Some(&write.id),
                Rule::WriteWithoutReceive,
                "Write needs action requests from a Receive source",
            ));
        }
    }

    if injected {
        let inject = stages[0];
        let interval = inject.num_param("interval");
        let conflict = match (m.access_pattern, &m.schedule) {
            (Some(p), _) if p != AccessPattern::Scheduled => {
                Some(format!("Inject declares periodic runs but access type is {p}"))
            }
            (_, Some(s)) if interval.is_some_and(|i| i != s.interval_seconds as f64) => Some(
                format!(
                    "Inject interval {} differs from the authorized schedule ({} s)",
                    interval.unwrap_or_default(),
                    s.interval_seconds
                ),
            ),
            _ => None,
        };
        if let Some(msg) = conflict {
            out.push(Diagnostic::new(
                Some(&inject.id),
                Rule::InjectScheduleConflict,
                msg,
            ));
        }
    }
}

struct Schema {
    required: &'static [&'static str],
    optional: &'static [&'static str],
}

fn schema(t: OperatorType) -> Schema {
    let (required, optional): (&'static [&'static str], &'static [&'static str]) = match t {
        OperatorType::Pull => (&["resourceType"], &["query"]),
        OperatorType::Receive => (&["source"], &[]),
        OperatorType::Filter => (
            &["operation", "field"],
            &["targetValue", "pattern", "requirement"],
        ),
        OperatorType::Select => (&["field"], &[]),
        OperatorType::Extract => (&["operation", "field"], &["pattern"]),
        OperatorType::Limit => (&["count"], &[]),
        OperatorType::Aggregate => (&["operation"], &["field", "groupKey"]),
        OperatorType::Map => (&["operation", "field"], &["buckets", "length", "to"]),
        OperatorType::Anonymize => (&["method", "field"], &["dataType", "magnitude"]),
        OperatorType::Post => (&["destination"], &[]),
        OperatorType::Write => (&["action", "resourceType"], &[]),
        OperatorType::Inject => (&["interval"], &["repeatNum"]),
        OperatorType::Debug => (&[], &["label"]),
    };
    Schema { required, optional }
}

struct ParamCheck<'a> {
    op: &'a OperatorSpec,
    out: &'a mut Vec<Diagnostic>,
}

impl ParamCheck<'_> {
    fn report(&mut self, rule: Rule, msg: impl Into<String>) {
        self.out.push(Diagnostic::new(Some(&self.op.id), rule, msg));
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.op.param(key)? {
            ParamValue::Str(s) => Some(s.clone()),
            other => {
                self.report(
                    Rule::BadParamType(key.into()),
                    format!("`{key}` must be a string, found {}", other.kind()),
                );
                None
            }
        }
    }

    fn one_of(&mut self, key: &str, allowed: &[&str]) -> Option<String> {
        let value = self.string(key)?;
        if allowed.contains(&value.as_str()) {
            Some(value)
        } else {
            self.report(
                Rule::BadParamValue(key.into()),
                format!("`{key}` must be one of {allowed:?}, found \"{value}\""),
            );
            None
        }
    }

    fn integer(&mut self, key: &str, min: f64) -> Option<f64> {
        match self.op.param(key)? {
            ParamValue::Num(n) if n.fract() == 0.0 && *n >= min => Some(*n),
            ParamValue::Num(n) => {
                self.report(
                    Rule::BadParamValue(key.into()),
                    format!("`{key}` must be an integer >= {min}, found {n}"),
                );
                None
            }
            other => {
                self.report(
                    Rule::BadParamType(key.into()),
                    format!("`{key}` must be a number, found {}", other.kind()),
                );
                None
            }
        }
    }

    fn path(&mut self, key: &str, raw: &str) {
        if Path::parse(raw).is_none() {
            self.report(
                Rule::BadParamValue(key.into()),
                format!("`{raw}` is not a valid dot-separated field path"),
            );
        }
    }

    /// `field` as a single path (`allow_list = false`) or a path or list of paths.
    fn fields(&mut self, allow_list: bool) {
        match self.op.param("field") {
            None => {}
            Some(ParamValue::Str(s)) => {
                let s = s.clone();
                self.path("field", &s);
            }
            Some(ParamValue::List(items)) if allow_list => {
                if items.is_empty() {
                    self.report(Rule::BadParamValue("field".into()), "field list is empty");
                }
                let items = items.clone();
                for item in items {
                    match item {
                        ParamValue::Str(s) => self.path("field", &s),
                        other => self.report(
                            Rule::BadParamType("field".into()),
                            format!("field list entries must be strings, found {}", other.kind()),
                        ),
                    }
                }
            }
            Some(other) => {
                let expected = if allow_list {
                    "a path or list of paths"
                } else {
                    "a single path"
                };
                let found = other.kind();
                self.report(
                    Rule::BadParamType("field".into()),
                    format!("`field` must be {expected}, found {found}"),
                );
            }
        }
    }

    fn regex(&mut self, key: &str) {
        if let Some(p) = self.string(key) {
            if let Err(e) = Regex::new(&p) {
                self.report(Rule::BadPattern(key.into()), format!("invalid pattern: {e}"));
            }
        }
    }
}

fn check_params(op: &OperatorSpec, out: &mut Vec<Diagnostic>) {
    let schema = schema(op.op_type);
    let mut c = ParamCheck { op, out };
    for key in schema.required {
        if op.param(key).is_none() {
            c.report(
                Rule::MissingParam((*key).into()),
                format!("{} requires `{key}`", op.op_type),
            );
        }
    }
    for key in op.params.keys() {
        if !schema.required.contains(&key.as_str()) && !schema.optional.contains(&key.as_str()) {
            c.report(
                Rule::UnknownParam(key.clone()),
                format!("{} does not take `{key}`", op.op_type),
            );
        }
    }

    match op.op_type {
        OperatorType::Pull => {
            c.string("resourceType");
            c.string("query");
        }
        OperatorType::Receive => {
            c.string("source");
        }
        OperatorType::Filter => {
            c.fields(true);
            let operation = c.one_of("operation", &FILTER_OPERATIONS);
            let has_target = op.param("targetValue").is_some();
            let has_pattern = op.param("pattern").is_some();
            match operation.as_deref() {
                Some("match") => match (has_target, has_pattern) {
                    (false, false) => c.report(
                        Rule::MissingParam("pattern".into()),
                        "match needs `pattern` or `targetValue`",
                    ),
                    (true, true) => c.report(
                        Rule::BadParamValue("pattern".into()),
                        "give either `pattern` or `targetValue`, not both",
                    ),
                    _ => {}
                },
                Some(_) => {
                    if !has_target {
                        c.report(
                            Rule::MissingParam("targetValue".into()),
                            "comparison needs `targetValue`",
                        );
                    }
                    if has_pattern {
                        c.report(
                            Rule::BadParamValue("pattern".into()),
                            "`pattern` only applies to the match operation",
                        );
                    }
                }
                None => {}
            }
            if has_pattern {
                c.regex("pattern");
            }
            if let Some(ParamValue::List(_)) = op.param("targetValue") {
                c.report(
                    Rule::BadParamType("targetValue".into()),
                    "`targetValue` must be a string, number or NOW",
                );
            }
            if op.param("requirement").is_some() {
                c.one_of("requirement", &["any", "all"]);
            }
        }
        OperatorType::Select => c.fields(true),
        OperatorType::Extract => {
            c.fields(false);
            if c.one_of("operation", &EXTRACT_OPERATIONS).as_deref() == Some("regex") && op.param("pattern").is_none() {
                c.report(
                    Rule::MissingParam("pattern".into()),
                    "regex extraction needs `pattern`",
                );
            }
            if op.param("pattern").is_some() {
                c.regex("pattern");
            }
        }
        OperatorType::Limit => {
            c.integer("count", 0.0);
        }
        OperatorType::Aggregate => {
            c.fields(false);
            let operation = c.one_of("operation", &AGGREGATE_OPERATIONS);
            if matches!(operation.as_deref(), Some(o) if o != "count") && op.param("field").is_none()
            {
                c.report(
                    Rule::MissingParam("field".into()),
                    "numeric aggregation needs `field`",
                );
            }
            if let Some(key) = c.string("groupKey") {
                c.path("groupKey", &key);
            }
        }
        OperatorType::Map => {
            c.fields(false);
            match c.one_of("operation", &MAP_OPERATIONS).as_deref() {
                Some("bucket") => match op.param("buckets") {
                    None => c.report(Rule::MissingParam("buckets".into()), "bucket needs `buckets`"),
                    Some(value) => {
                        if let Err(msg) = bucket_bounds(value) {
                            c.report(Rule::BadParamValue("buckets".into()), msg);
                        }
                    }
                },
                Some("truncate") => {
                    if op.param("length").is_none() {
                        c.report(Rule::MissingParam("length".into()), "truncate needs `length`");
                    }
                    c.integer("length", 0.0);
                }
                Some("rename") => match c.string("to") {
                    None if op.param("to").is_none() => {
                        c.report(Rule::MissingParam("to".into()), "rename needs `to`")
                    }
                    Some(to) if to.is_empty() || to.contains('.') => c.report(
                        Rule::BadParamValue("to".into()),
                        "`to` must be a single non-empty key",
                    ),
                    _ => {}
                },
                _ => {}
            }
        }
        OperatorType::Anonymize => {
            c.fields(false);
            c.string("dataType");
            if c.one_of("method", &ANONYMIZE_METHODS).as_deref() == Some("noise") {
                match op.param("magnitude") {
                    None => c.report(
                        Rule::MissingParam("magnitude".into()),
                        "noise needs `magnitude`",
                    ),
                    Some(ParamValue::Num(m)) if *m >= 0.0 => {}
                    Some(_) => c.report(
                        Rule::BadParamValue("magnitude".into()),
                        "`magnitude` must be a non-negative number",
                    ),
                }
            }
        }
        OperatorType::Post => {
            c.string("destination");
        }
        OperatorType::Write => {
            c.string("action");
            c.string("resourceType");
        }
        OperatorType::Inject => {
            c.integer("interval", 1.0);
            c.integer("repeatNum", 1.0);
        }
        OperatorType::Debug => {
            c.string("label");
        }
    }
}

/// Bucket boundaries: a non-empty, strictly increasing list of integers.
pub fn bucket_bounds(value: &ParamValue) -> Result<Vec<i64>, String> {
    let ParamValue::List(items) = value else {
        return Err("`buckets` must be a list of integers".into());
    };
    if items.is_empty() {
        return Err("`buckets` must not be empty".into());
    }
    let mut bounds = Vec::with_capacity(items.len());
    for item in items {
        match item {
            ParamValue::Num(n) if n.fract() == 0.0 && n.abs() < 1e15 => bounds.push(*n as i64),
            _ => return Err("`buckets` entries must be integers".into()),
        }
    }
    if bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err("`buckets` must be strictly increasing".into());
    }
    Ok(bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::examples::{NOTABILITY, UBER, ZOOM};
    use crate::manifest::parse;

    fn rules(src: &str) -> Vec<Rule> {
        validate(&parse(src).unwrap())
            .into_iter()
            .map(|d| d.rule)
            .collect()
    }

    #[test]
    fn reference_manifests_are_valid() {
        for src in [ZOOM, NOTABILITY, UBER] {
            assert_eq!(validate(&parse(src).unwrap()), vec![]);
        }
    }

    #[test]
    fn two_posts_is_multiple_sinks() {
        let src = r#"TITLE: t
PIPELINE: P -> A -> B
P(type: "Pull", resourceType: "gmail")
A(type: "Post", destination: "a")
B(type: "Post", destination: "b")"#;
        assert_eq!(rules(src), vec![Rule::MultipleSinks]);
    }

    #[test]
    fn filter_without_field() {
        let src = r#"TITLE: t
PIPELINE: P -> F -> S
P(type: "Pull", resourceType: "gmail")
F(type: "Filter", operation: "=", targetValue: "x")
S(type: "Post", destination: "a")"#;
        assert_eq!(rules(src), vec![Rule::MissingParam("field".into())]);
    }

    #[test]
    fn lone_debug_is_valid() {
        assert_eq!(rules("TITLE: t\nPIPELINE: D\nD(type: \"Debug\")"), vec![]);
    }

    #[test]
    fn chain_shape_errors() {
        let no_source = r#"TITLE: t
PIPELINE: F -> S
F(type: "Limit", count: 1)
S(type: "Post", destination: "a")"#;
        assert_eq!(rules(no_source), vec![Rule::MissingSource]);

        let no_sink = r#"TITLE: t
PIPELINE: P -> F
P(type: "Pull", resourceType: "gmail")
F(type: "Limit", count: 1)"#;
        assert_eq!(rules(no_sink), vec![Rule::MissingSink]);

        let two_sources = r#"TITLE: t
PIPELINE: P -> Q -> S
P(type: "Pull", resourceType: "gmail")
Q(type: "Receive", source: "x")
S(type: "Post", destination: "a")"#;
        assert_eq!(rules(two_sources), vec![Rule::MultipleSources]);

        let unused = r#"TITLE: t
PIPELINE: P -> S
P(type: "Pull", resourceType: "gmail")
S(type: "Post", destination: "a")
X(type: "Debug")"#;
        assert_eq!(rules(unused), vec![Rule::UnusedOperator]);

        let write_after_pull = r#"TITLE: t
PIPELINE: P -> W
P(type: "Pull", resourceType: "gmail")
W(type: "Write", action: "create", resourceType: "google_drive")"#;
        assert_eq!(rules(write_after_pull), vec![Rule::WriteWithoutReceive]);
    }

    #[test]
    fn inject_feeds_pull_and_checks_binding() {
        let src = r#"TITLE: t
PIPELINE: I -> P -> S
I(type: "Inject", interval: 3600, repeatNum: 3)
P(type: "Pull", resourceType: "gmail")
S(type: "Post", destination: "a")"#;
        let mut m = parse(src).unwrap();
        assert_eq!(validate(&m), vec![]);
        m.access_pattern = Some(AccessPattern::UserDriven);
        assert_eq!(
            validate(&m).into_iter().map(|d| d.rule).collect::<Vec<_>>(),
            vec![Rule::InjectScheduleConflict]
        );

        let misplaced = r#"TITLE: t
PIPELINE: P -> I -> S
I(type: "Inject", interval: 3600)
P(type: "Pull", resourceType: "gmail")
S(type: "Post", destination: "a")"#;
        assert!(rules(misplaced).contains(&Rule::MisplacedOperator));
    }

    #[test]
    fn parameter_schemas() {
        let src = r#"TITLE: t
PIPELINE: P -> F -> E -> L -> M -> A -> S
P(type: "Pull", resourceType: "gmail", colour: "red")
F(type: "Filter", operation: "~", field: "a", targetValue: 1)
E(type: "Extract", operation: "regex", field: "a", pattern: "(")
L(type: "Limit", count: -1)
M(type: "Map", operation: "bucket", field: "age", buckets: [30, 18])
A(type: "Anonymize", method: "noise", field: "age")
S(type: "Post", destination: "a")"#;
        assert_eq!(
            rules(src),
            vec![
                Rule::UnknownParam("colour".into()),
                Rule::BadParamValue("operation".into()),
                Rule::BadPattern("pattern".into()),
                Rule::BadParamValue("count".into()),
                Rule::BadParamValue("buckets".into()),
                Rule::MissingParam("magnitude".into()),
            ]
        );
    }

    #[test]
    fn match_needs_exactly_one_of_pattern_or_target() {
        let src = r#"TITLE: t
PIPELINE: P -> F -> S
P(type: "Pull", resourceType: "gmail")
F(type: "Filter", operation: "match", field: "a")
S(type: "Post", destination: "a")"#;
        assert_eq!(rules(src), vec![Rule::MissingParam("pattern".into())]);
        let cmp_with_pattern = src.replace(
            "operation: \"match\", field: \"a\"",
            "operation: \">\", field: \"a\", pattern: \"x\"",
        );
        assert_eq!(
            rules(&cmp_with_pattern),
            vec![
                Rule::MissingParam("targetValue".into()),
                Rule::BadParamValue("pattern".into())
            ]
        );
    }
}
