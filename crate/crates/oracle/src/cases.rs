//! Operator configurations shared by the generators and the references.

/// A manifest parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Str(String),
    Num(f64),
    List(Vec<Param>),
    Now,
}

impl Param {
    pub fn str(s: impl Into<String>) -> Param {
        Param::Str(s.into())
    }

    /// Manifest source text for this value.
    pub fn to_text(&self) -> String {
        match self {
            Param::Str(s) => {
                let mut out = String::from("\"");
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        out.push('\\');
                    }
                    out.push(c);
                }
                out.push('"');
                out
            }
            Param::Num(n) => format!("{n}"),
            Param::List(items) => {
                let inner: Vec<String> = items.iter().map(Param::to_text).collect();
                format!("[{}]", inner.join(", "))
            }
            Param::Now => "NOW".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Now,
    Str(String),
    Num(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterCond {
    /// A regex made only of letters and digits, optionally `(?i)`-prefixed.
    Contains { needle: String, ignore_case: bool },
    Literal(String),
    LiteralNum(f64),
    Compare { op: String, target: Target },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapKind {
    Bucket(Vec<i64>),
    Lowercase,
    Truncate(usize),
    Rename(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Case {
    Filter {
        fields: Vec<String>,
        /// `true` when the field list was written as a list literal.
        as_list: bool,
        cond: FilterCond,
        require_all: bool,
    },
    SelectOne(String),
    SelectMany(Vec<String>),
    ExtractDate(String),
    /// `<prefix>([0-9]+)`
    ExtractNumber { field: String, prefix: String },
    Limit(u64),
    Aggregate {
        operation: String,
        field: Option<String>,
        group_key: Option<String>,
    },
    Map { field: String, kind: MapKind },
}

impl Case {
    pub fn op_type(&self) -> &'static str {
        match self {
            Case::Filter { .. } => "Filter",
            Case::SelectOne(_) | Case::SelectMany(_) => "Select",
            Case::ExtractDate(_) | Case::ExtractNumber { .. } => "Extract",
            Case::Limit(_) => "Limit",
            Case::Aggregate { .. } => "Aggregate",
            Case::Map { .. } => "Map",
        }
    }

    /// Parameters as they appear in a manifest, without `type`.
    pub fn params(&self) -> Vec<(&'static str, Param)> {
        let list = |xs: &[String]| Param::List(xs.iter().map(Param::str).collect());
        match self {
            Case::Filter { fields, as_list, cond, require_all } => {
                let field = if *as_list || fields.len() != 1 {
                    list(fields)
                } else {
                    Param::str(&fields[0])
                };
                let mut out = vec![("field", field)];
                match cond {
                    FilterCond::Contains { needle, ignore_case } => {
                        let p = if *ignore_case { format!("(?i){needle}") } else { needle.clone() };
                        out.push(("operation", Param::str("match")));
                        out.push(("pattern", Param::Str(p)));
                    }
                    FilterCond::Literal(s) => {
                        out.push(("operation", Param::str("match")));
                        out.push(("targetValue", Param::str(s)));
                    }
                    FilterCond::LiteralNum(n) => {
                        out.push(("operation", Param::str("match")));
                        out.push(("targetValue", Param::Num(*n)));
                    }
                    FilterCond::Compare { op, target } => {
                        out.push(("operation", Param::str(op)));
                        out.push((
                            "targetValue",
                            match target {
                                Target::Now => Param::Now,
                                Target::Str(s) => Param::str(s),
                                Target::Num(n) => Param::Num(*n),
                            },
                        ));
                    }
                }
                out.push(("requirement", Param::str(if *require_all { "all" } else { "any" })));
                out
            }
            Case::SelectOne(f) => vec![("field", Param::str(f))],
            Case::SelectMany(fs) => vec![("field", list(fs))],
            Case::ExtractDate(f) => vec![("operation", Param::str("date")), ("field", Param::str(f))],
            Case::ExtractNumber { field, prefix } => vec![
                ("operation", Param::str("regex")),
                ("field", Param::str(field)),
                ("pattern", Param::Str(format!("{prefix}([0-9]+)"))),
            ],
            Case::Limit(n) => vec![("count", Param::Num(*n as f64))],
            Case::Aggregate { operation, field, group_key } => {
                let mut out = vec![("operation", Param::str(operation))];
                if let Some(f) = field {
                    out.push(("field", Param::str(f)));
                }
                if let Some(g) = group_key {
                    out.push(("groupKey", Param::str(g)));
                }
                out
            }
            Case::Map { field, kind } => {
                let mut out = vec![("field", Param::str(field))];
                match kind {
                    MapKind::Bucket(bounds) => {
                        out.push(("operation", Param::str("bucket")));
                        out.push(("buckets", Param::List(bounds.iter().map(|b| Param::Num(*b as f64)).collect())));
                    }
                    MapKind::Lowercase => out.push(("operation", Param::str("lowercase"))),
                    MapKind::Truncate(n) => {
                        out.push(("operation", Param::str("truncate")));
                        out.push(("length", Param::Num(*n as f64)));
                    }
                    MapKind::Rename(to) => {
                        out.push(("operation", Param::str("rename")));
                        out.push(("to", Param::str(to)));
                    }
                }
                out
            }
        }
    }
}
