//! Record shapes for the mock providers.

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Kind {
    Str,
    Num,
    Bool,
    Object(Vec<(&'static str, Kind)>),
    List(Box<Kind>),
    /// Free-form string-keyed object.
    Map,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderSchema {
    pub provider_id: &'static str,
    /// Name of the collection as it appears in queries and pull responses.
    pub collection: &'static str,
    pub fields: Vec<(&'static str, Kind)>,
}

pub const CALENDAR: &str = "google_calendar";
pub const MAIL: &str = "gmail";
pub const DRIVE: &str = "google_drive";
pub const FORMS: &str = "google_forms";

pub const PROVIDERS: [&str; 4] = [CALENDAR, MAIL, DRIVE, FORMS];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("record {index}: {message}")]
    BadRecord { index: usize, message: String },
}

fn time() -> Kind {
    Kind::Object(vec![("dateTime", Kind::Str)])
}

pub fn schema(provider_id: &str) -> Result<ProviderSchema, SchemaError> {
    let (provider_id, collection, fields) = match provider_id {
        CALENDAR => (
            CALENDAR,
            "events",
            vec![
                ("id", Kind::Str),
                ("summary", Kind::Str),
                ("description", Kind::Str),
                ("location", Kind::Str),
                ("start", time()),
                ("end", time()),
            ],
        ),
        MAIL => (
            MAIL,
            "messages",
            vec![
                ("id", Kind::Str),
                ("snippet", Kind::Str),
                ("subject", Kind::Str),
                ("from", Kind::Str),
                (
                    "attachments",
                    Kind::List(Box::new(Kind::Object(vec![
                        ("filename", Kind::Str),
                        ("mimeType", Kind::Str),
                        ("size", Kind::Num),
                    ]))),
                ),
            ],
        ),
        DRIVE => (
            DRIVE,
            "files",
            vec![
                ("id", Kind::Str),
                ("name", Kind::Str),
                ("parents", Kind::List(Box::new(Kind::Str))),
                ("mimeType", Kind::Str),
            ],
        ),
        FORMS => (
            FORMS,
            "responses",
            vec![("responseId", Kind::Str), ("answers", Kind::Map), ("valid", Kind::Bool)],
        ),
        other => return Err(SchemaError::UnknownProvider(other.into())),
    };
    Ok(ProviderSchema {
        provider_id,
        collection,
        fields,
    })
}

fn check(kind: &Kind, v: &Value, at: &str) -> Result<(), String> {
    let ok = match (kind, v) {
        (Kind::Str, Value::String(_)) | (Kind::Num, Value::Number(_)) | (Kind::Bool, Value::Bool(_)) => true,
        (Kind::Map, Value::Object(_)) => true,
        (Kind::List(inner), Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                check(inner, item, &format!("{at}[{i}]"))?;
            }
            true
        }
        (Kind::Object(fields), Value::Object(map)) => {
            check_object(fields, map, at)?;
            true
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("`{at}` has the wrong type"))
    }
}

fn check_object(
    fields: &[(&'static str, Kind)],
    map: &serde_json::Map<String, Value>,
    at: &str,
) -> Result<(), String> {
    for (key, value) in map {
        let path = if at.is_empty() { key.clone() } else { format!("{at}.{key}") };
        let kind = fields
            .iter()
            .find(|(n, _)| n == key)
            .map(|(_, k)| k)
            .ok_or_else(|| format!("unknown field `{path}`"))?;
        check(kind, value, &path)?;
    }
    Ok(())
}

impl ProviderSchema {
    /// Fields are optional; unknown fields and wrong types are errors.
    pub fn validate_record(&self, record: &Value) -> Result<(), String> {
        match record {
            Value::Object(map) => check_object(&self.fields, map, ""),
            _ => Err("record is not an object".into()),
        }
    }

    pub fn validate(&self, records: &[Value]) -> Result<(), SchemaError> {
        records.iter().enumerate().try_for_each(|(index, r)| {
            self.validate_record(r)
                .map_err(|message| SchemaError::BadRecord { index, message })
        })
    }

    pub fn field(&self, name: &str) -> Option<&Kind> {
        self.fields.iter().find(|(n, _)| *n == name).map(|(_, k)| k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn validates_shapes() {
        let cal = schema(CALENDAR).unwrap();
        assert!(cal
            .validate_record(&json!({"summary": "x", "start": {"dateTime": "2099-01-01T00:00:00Z"}}))
            .is_ok());
        assert!(cal.validate_record(&json!({"summary": 3})).is_err());
        assert!(cal.validate_record(&json!({"start": {"date": "x"}})).is_err());
        assert!(cal.validate_record(&json!({"colour": "red"})).is_err());
        let drive = schema(DRIVE).unwrap();
        assert!(drive.validate_record(&json!({"parents": ["a", "b"]})).is_ok());
        assert!(drive.validate_record(&json!({"parents": ["a", 1]})).is_err());
        let forms = schema(FORMS).unwrap();
        assert!(forms.validate_record(&json!({"answers": {"q1": "yes"}, "valid": false})).is_ok());
        assert_eq!(schema("slack").unwrap_err(), SchemaError::UnknownProvider("slack".into()));
    }
}
