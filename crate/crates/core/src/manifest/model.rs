use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scheduler::Schedule;

/// The thirteen operator verbs a manifest may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorType {
    Pull,
    Receive,
    Filter,
    Select,
    Extract,
    Limit,
    Aggregate,
    Map,
    Anonymize,
    Post,
    Write,
    Inject,
    Debug,
}

/// Operator taxonomy grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorCategory {
    Provider,
    Reduction,
    Transform,
    Network,
    Utility,
}

impl OperatorType {
    pub const ALL: [OperatorType; 13] = [
        OperatorType::Pull,
        OperatorType::Receive,
        OperatorType::Filter,
        OperatorType::Select,
        OperatorType::Extract,
        OperatorType::Limit,
        OperatorType::Aggregate,
        OperatorType::Map,
        OperatorType::Anonymize,
        OperatorType::Post,
        OperatorType::Write,
        OperatorType::Inject,
        OperatorType::Debug,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorType::Pull => "Pull",
            OperatorType::Receive => "Receive",
            OperatorType::Filter => "Filter",
            OperatorType::Select => "Select",
            OperatorType::Extract => "Extract",
            OperatorType::Limit => "Limit",
            OperatorType::Aggregate => "Aggregate",
            OperatorType::Map => "Map",
            OperatorType::Anonymize => "Anonymize",
            OperatorType::Post => "Post",
            OperatorType::Write => "Write",
            OperatorType::Inject => "Inject",
            OperatorType::Debug => "Debug",
        }
    }

    pub fn category(self) -> OperatorCategory {
        match self {
            OperatorType::Pull | OperatorType::Receive => OperatorCategory::Provider,
            OperatorType::Filter
            | OperatorType::Select
            | OperatorType::Extract
            | OperatorType::Limit => OperatorCategory::Reduction,
            OperatorType::Aggregate | OperatorType::Map | OperatorType::Anonymize => {
                OperatorCategory::Transform
            }
            OperatorType::Post | OperatorType::Write => OperatorCategory::Network,
            OperatorType::Inject | OperatorType::Debug => OperatorCategory::Utility,
        }
    }

    pub fn is_source(self) -> bool {
        matches!(self, OperatorType::Pull | OperatorType::Receive)
    }

    pub fn is_sink(self) -> bool {
        matches!(
            self,
            OperatorType::Post | OperatorType::Write | OperatorType::Debug
        )
    }
}

impl fmt::Display for OperatorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperatorType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or(())
    }
}

/// A parameter value as written in manifest text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Str(String),
    Num(f64),
    List(Vec<ParamValue>),
    /// The bare `NOW` keyword, bound to the execution timestamp.
    Now,
}

impl ParamValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            ParamValue::Num(n) => Some(*n),
            _ => None,
        }
    }

    /// Strings of a string or string-list value.
    pub fn as_str_list(&self) -> Option<Vec<&str>> {
        match self {
            ParamValue::Str(s) => Some(vec![s.as_str()]),
            ParamValue::List(items) => items.iter().map(ParamValue::as_str).collect(),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ParamValue::Str(_) => "string",
            ParamValue::Num(_) => "number",
            ParamValue::List(_) => "list",
            ParamValue::Now => "NOW",
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            ParamValue::Num(n) => write!(f, "{n}"),
            ParamValue::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
            ParamValue::Now => f.write_str("NOW"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub id: String,
    #[serde(rename = "type")]
    pub op_type: OperatorType,
    pub params: BTreeMap<String, ParamValue>,
}

impl OperatorSpec {
    pub fn new(id: impl Into<String>, op_type: OperatorType) -> Self {
        Self {
            id: id.into(),
            op_type,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn param(&self, key: &str) -> Option<&ParamValue> {
        self.params.get(key)
    }

    pub fn str_param(&self, key: &str) -> Option<&str> {
        self.param(key).and_then(ParamValue::as_str)
    }

    pub fn num_param(&self, key: &str) -> Option<f64> {
        self.param(key).and_then(ParamValue::as_num)
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(type: \"{}\"", self.id, self.op_type)?;
        for (key, value) in &self.params {
            write!(f, ", {key}: {value}")?;
        }
        f.write_str(")")
    }
}

/// When an app may receive data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessPattern {
    InstallTime,
    UserDriven,
    Scheduled,
}

impl AccessPattern {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessPattern::InstallTime => "install_time",
            AccessPattern::UserDriven => "user_driven",
            AccessPattern::Scheduled => "scheduled",
        }
    }
}

impl FromStr for AccessPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "install_time" => Ok(AccessPattern::InstallTime),
            "user_driven" => Ok(AccessPattern::UserDriven),
            "scheduled" => Ok(AccessPattern::Scheduled),
            other => Err(format!("unknown access type `{other}`")),
        }
    }
}

impl fmt::Display for AccessPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A parsed operator manifest: the unit of consent.
///
/// `access_pattern` and `schedule` are not part of the manifest text; they are
/// bound when an app requests authorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub title: String,
    pub description: String,
    pub pipeline: Vec<String>,
    pub operators: BTreeMap<String, OperatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access_pattern: Option<AccessPattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    pub manifest_hash: String,
}

impl Manifest {
    /// Operators in pipeline order. Unresolvable ids are skipped.
    pub fn stages(&self) -> impl Iterator<Item = &OperatorSpec> {
        self.pipeline.iter().filter_map(|id| self.operators.get(id))
    }

    pub fn source(&self) -> Option<&OperatorSpec> {
        self.stages().find(|op| op.op_type.is_source())
    }

    pub fn sink(&self) -> Option<&OperatorSpec> {
        self.pipeline.last().and_then(|id| self.operators.get(id))
    }

    /// Whether the pipeline is fed by app action requests rather than provider pulls.
    pub fn is_action_pipeline(&self) -> bool {
        matches!(self.source(), Some(op) if op.op_type == OperatorType::Receive)
    }

    /// Equality over title, description, pipeline and operators, ignoring the
    /// source hash and any authorization-time binding.
    pub fn same_structure(&self, other: &Manifest) -> bool {
        self.title == other.title
            && self.description == other.description
            && self.pipeline == other.pipeline
            && self.operators == other.operators
    }

    /// Serializes to manifest text. Operators are emitted in pipeline order,
    /// followed by any operators not referenced by the pipeline.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("TITLE: {}\n", self.title));
        out.push_str(&format!("DESCRIPTION: {}\n", self.description));
        out.push_str(&format!("PIPELINE: {}\n\n", self.pipeline.join(" -> ")));
        let mut seen = std::collections::BTreeSet::new();
        for id in &self.pipeline {
            if let Some(op) = self.operators.get(id) {
                if seen.insert(id.as_str()) {
                    out.push_str(&format!("{op}\n"));
                }
            }
        }
        for (id, op) in &self.operators {
            if !seen.contains(id.as_str()) {
                out.push_str(&format!("{op}\n"));
            }
        }
        out
    }
}
