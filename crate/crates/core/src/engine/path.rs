use std::fmt;

use serde_json::{Map, Value};

/// A dot-separated field address such as `start.dateTime`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    segments: Vec<String>,
}

impl Path {
    /// Returns `None` for an empty path or one with empty segments.
    pub fn parse(dotted: &str) -> Option<Path> {
        let segments: Vec<String> = dotted.split('.').map(str::to_string).collect();
        if segments.iter().any(String::is_empty) {
            return None;
        }
        Some(Path { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// Value at this path. A segment that lands on an array is applied to each
    /// element, yielding the array of the values that resolve.
    pub fn get(&self, record: &Value) -> Option<Value> {
        get_in(record, &self.segments)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.segments.join("."))
    }
}

fn get_in(value: &Value, segments: &[String]) -> Option<Value> {
    let Some((head, rest)) = segments.split_first() else {
        return Some(value.clone());
    };
    match value {
        Value::Object(map) => map.get(head).and_then(|child| get_in(child, rest)),
        Value::Array(items) => {
            let resolved: Vec<Value> = items.iter().filter_map(|e| get_in(e, segments)).collect();
            if resolved.is_empty() {
                None
            } else {
                Some(Value::Array(resolved))
            }
        }
        _ => None,
    }
}

/// Value at `path`, or absent.
pub fn path_get(record: &Value, path: &Path) -> Option<Value> {
    path.get(record)
}

/// Applies `f` to every value addressed by `segments`, descending through
/// arrays element-wise. Missing fields are skipped.
pub(crate) fn update_at<E>(
    value: &mut Value,
    segments: &[String],
    f: &mut dyn FnMut(&mut Value) -> Result<(), E>,
) -> Result<(), E> {
    let Some((head, rest)) = segments.split_first() else {
        return f(value);
    };
    match value {
        Value::Object(map) => match map.get_mut(head) {
            Some(child) => update_at(child, rest, f),
            None => Ok(()),
        },
        Value::Array(items) => {
            for item in items {
                update_at(item, segments, f)?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Applies `f` to every object that would hold the last segment of `segments`.
pub(crate) fn update_parents(
    value: &mut Value,
    segments: &[String],
    f: &mut dyn FnMut(&mut Map<String, Value>),
) {
    let Some((head, rest)) = segments.split_first() else {
        return;
    };
    match value {
        Value::Object(map) if rest.is_empty() => f(map),
        Value::Object(map) => {
            if let Some(child) = map.get_mut(head) {
                update_parents(child, rest, f);
            }
        }
        Value::Array(items) => {
            for item in items {
                update_parents(item, segments, f);
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn p(s: &str) -> Path {
        Path::parse(s).unwrap()
    }

    #[test]
    fn nested_field() {
        let r = json!({"start": {"dateTime": "2025-01-01T00:00:00Z"}});
        assert_eq!(path_get(&r, &p("start.dateTime")), Some(json!("2025-01-01T00:00:00Z")));
    }

    #[test]
    fn absent() {
        assert_eq!(path_get(&json!({}), &p("a.b")), None);
        assert_eq!(path_get(&json!({"a": 3}), &p("a.b")), None);
    }

    #[test]
    fn maps_over_arrays() {
        let r = json!({"items": [{"k": 1}, {"k": 2}]});
        assert_eq!(path_get(&r, &p("items.k")), Some(json!([1, 2])));
        let partial = json!({"items": [{"k": 1}, {"j": 2}]});
        assert_eq!(path_get(&partial, &p("items.k")), Some(json!([1])));
        assert_eq!(path_get(&json!({"items": [{"j": 2}]}), &p("items.k")), None);
    }

    #[test]
    fn rejects_malformed_paths() {
        assert!(Path::parse("").is_none());
        assert!(Path::parse("a..b").is_none());
        assert!(Path::parse(".a").is_none());
        assert_eq!(p("a.b").to_string(), "a.b");
    }
}
