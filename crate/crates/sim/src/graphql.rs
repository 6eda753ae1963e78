//! The query subset the mock providers understand: selection sets and one
//! positional argument on top-level fields. Fragments, variables, directives,
//! aliases and named arguments are rejected.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::schema::{Kind, ProviderSchema};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("unsupported query feature: {0}")]
    Unsupported(&'static str),
    #[error("syntax error at byte {at}: {message}")]
    Syntax { at: usize, message: String },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{0}` has no sub-fields")]
    NotAnObject(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub argument: Option<String>,
    pub selection: Option<Vec<Field>>,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_whitespace() || self.src[self.pos] == b',') {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn err(&self, message: impl Into<String>) -> QueryError {
        QueryError::Syntax {
            at: self.pos,
            message: message.into(),
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), QueryError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`", c as char)))
        }
    }

    fn reject_features(&mut self) -> Result<(), QueryError> {
        match self.peek() {
            Some(b'.') => Err(QueryError::Unsupported("fragments")),
            Some(b'$') => Err(QueryError::Unsupported("variables")),
            Some(b'@') => Err(QueryError::Unsupported("directives")),
            _ => Ok(()),
        }
    }

    fn name(&mut self) -> Result<String, QueryError> {
        self.reject_features()?;
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        if start == self.pos || self.src[start].is_ascii_digit() {
            return Err(self.err("expected a name"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn argument(&mut self) -> Result<String, QueryError> {
        self.expect(b'(')?;
        self.reject_features()?;
        let value = if self.peek() == Some(b'"') {
            self.pos += 1;
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos] != b'"' {
                self.pos += 1;
            }
            if self.pos >= self.src.len() {
                return Err(self.err("unterminated string"));
            }
            let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
            self.pos += 1;
            s
        } else {
            let start = self.pos;
            while self.pos < self.src.len()
                && (self.src[self.pos].is_ascii_alphanumeric() || matches!(self.src[self.pos], b'_' | b'-' | b'.'))
            {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.err("expected an argument"));
            }
            String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
        };
        match self.peek() {
            Some(b')') => {
                self.pos += 1;
                Ok(value)
            }
            Some(b':') => Err(QueryError::Unsupported("named arguments")),
            _ => Err(QueryError::Unsupported("more than one argument")),
        }
    }

    fn selection(&mut self, top: bool) -> Result<Vec<Field>, QueryError> {
        self.expect(b'{')?;
        let mut fields = Vec::new();
        loop {
            self.reject_features()?;
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            if self.peek().is_none() {
                return Err(self.err("unclosed selection"));
            }
            let name = self.name()?;
            if self.peek() == Some(b':') {
                return Err(QueryError::Unsupported("aliases"));
            }
            let argument = match self.peek() {
                Some(b'(') if top => Some(self.argument()?),
                Some(b'(') => return Err(QueryError::Unsupported("arguments on nested fields")),
                _ => None,
            };
            self.reject_features()?;
            let selection = match self.peek() {
                Some(b'{') => Some(self.selection(false)?),
                _ => None,
            };
            fields.push(Field {
                name,
                argument,
                selection,
            });
        }
        if fields.is_empty() {
            return Err(self.err("empty selection"));
        }
        Ok(fields)
    }
}

pub fn parse_query(src: &str) -> Result<Vec<Field>, QueryError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    match p.peek() {
        Some(b'{') => {}
        Some(_) => {
            return match p.name()?.as_str() {
                "query" | "mutation" | "subscription" => Err(QueryError::Unsupported("operation definitions")),
                "fragment" => Err(QueryError::Unsupported("fragments")),
                _ => Err(p.err("expected `{`")),
            }
        }
        None => return Err(p.err("empty query")),
    }
    let fields = p.selection(true)?;
    if p.peek().is_some() {
        return Err(p.err("trailing input"));
    }
    Ok(fields)
}

fn check_selection(kind: &Kind, fields: &[Field], at: &str) -> Result<(), QueryError> {
    let members = match kind {
        Kind::Object(members) => members,
        Kind::List(inner) => return check_selection(inner, fields, at),
        _ => return Err(QueryError::NotAnObject(at.to_string())),
    };
    for f in fields {
        let path = format!("{at}.{}", f.name);
        let kind = members
            .iter()
            .find(|(n, _)| *n == f.name)
            .map(|(_, k)| k)
            .ok_or_else(|| QueryError::UnknownField(path.clone()))?;
        if let Some(sub) = &f.selection {
            check_selection(kind, sub, &path)?;
        }
    }
    Ok(())
}

fn project(value: &Value, selection: Option<&[Field]>) -> Value {
    let Some(fields) = selection else {
        return value.clone();
    };
    match value {
        Value::Array(items) => Value::Array(items.iter().map(|v| project(v, Some(fields))).collect()),
        Value::Object(map) => {
            let mut out = Map::new();
            for f in fields {
                if let Some(v) = map.get(&f.name) {
                    out.insert(f.name.clone(), project(v, f.selection.as_deref()));
                }
            }
            Value::Object(out)
        }
        other => other.clone(),
    }
}

/// Runs a parsed query over a provider's records. The only top-level field
/// is the schema's collection.
pub fn execute(schema: &ProviderSchema, fields: &[Field], records: &[Value]) -> Result<Value, QueryError> {
    let root = Kind::Object(schema.fields.clone());
    let mut out = Map::new();
    for f in fields {
        if f.name != schema.collection {
            return Err(QueryError::UnknownField(f.name.clone()));
        }
        if let Some(sub) = &f.selection {
            check_selection(&root, sub, &f.name)?;
        }
        let items = records.iter().map(|r| project(r, f.selection.as_deref())).collect();
        out.insert(f.name.clone(), Value::Array(items));
    }
    Ok(Value::Object(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{schema, CALENDAR, MAIL};
    use serde_json::json;

    #[test]
    fn projects_selected_fields() {
        let s = schema(CALENDAR).unwrap();
        let records = vec![json!({
            "summary": "a", "location": "x",
            "start": {"dateTime": "2099-01-01T00:00:00Z"}, "end": {"dateTime": "2099-01-01T01:00:00Z"}
        })];
        let q = parse_query("{ events(calendarId) { summary start { dateTime } } }").unwrap();
        assert_eq!(q[0].argument.as_deref(), Some("calendarId"));
        let out = execute(&s, &q, &records).unwrap();
        assert_eq!(out, json!({"events": [{"summary": "a", "start": {"dateTime": "2099-01-01T00:00:00Z"}}]}));
        let whole = execute(&s, &parse_query("{ events }").unwrap(), &records).unwrap();
        assert_eq!(whole["events"][0], records[0]);
    }

    #[test]
    fn selection_maps_over_lists() {
        let s = schema(MAIL).unwrap();
        let records = vec![json!({"snippet": "s", "attachments": [{"filename": "a.pdf", "size": 3}]})];
        let q = parse_query(r#"{ messages("me") { attachments { filename } } }"#).unwrap();
        assert_eq!(
            execute(&s, &q, &records).unwrap(),
            json!({"messages": [{"attachments": [{"filename": "a.pdf"}]}]})
        );
    }

    #[test]
    fn rejects_unsupported_features() {
        let cases = [
            ("{ events(calendarId) {...EventDetails} }", QueryError::Unsupported("fragments")),
            ("{ events(id: $cal) { summary } }", QueryError::Unsupported("named arguments")),
            ("{ events($cal) { summary } }", QueryError::Unsupported("variables")),
            ("{ events @skip { summary } }", QueryError::Unsupported("directives")),
            ("query Q { events }", QueryError::Unsupported("operation definitions")),
            ("{ e: events }", QueryError::Unsupported("aliases")),
            ("{ events(a, b) }", QueryError::Unsupported("more than one argument")),
            ("{ events { start(tz) { dateTime } } }", QueryError::Unsupported("arguments on nested fields")),
        ];
        for (q, want) in cases {
            assert_eq!(parse_query(q).unwrap_err(), want, "{q}");
        }
        assert!(matches!(parse_query("{ events "), Err(QueryError::Syntax { .. })));
        assert!(matches!(parse_query("{ }"), Err(QueryError::Syntax { .. })));
    }

    #[test]
    fn rejects_unknown_fields() {
        let s = schema(CALENDAR).unwrap();
        let run = |q: &str| execute(&s, &parse_query(q).unwrap(), &[]);
        assert_eq!(run("{ events { colour } }").unwrap_err(), QueryError::UnknownField("events.colour".into()));
        assert_eq!(run("{ messages }").unwrap_err(), QueryError::UnknownField("messages".into()));
        assert_eq!(run("{ events { summary { x } } }").unwrap_err(), QueryError::NotAnObject("events.summary".into()));
        assert!(run("{ events { start { dateTime } } }").is_ok());
    }
}
