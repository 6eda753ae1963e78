//! Canonical JSON and small value helpers shared by the operators.

use serde_json::Value;

/// Canonical JSON text: object keys sorted, no insignificant whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Byte length of the canonical encoding.
pub fn canonical_len(value: &Value) -> usize {
    canonical_json(value).len()
}

/// Strings as themselves, everything else as canonical JSON.
pub fn stringify(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => canonical_json(other),
    }
}

/// Number of data entries a record represents: the element count of an
/// array, the summed element counts of an object whose members are all
/// arrays (a provider response such as `{"events": [...]}`), otherwise 1.
pub fn entry_count(value: &Value) -> usize {
    match value {
        Value::Array(items) => items.len(),
        Value::Object(map) if !map.is_empty() && map.values().all(Value::is_array) => map
            .values()
            .map(|v| v.as_array().map_or(0, Vec::len))
            .sum(),
        _ => 1,
    }
}

/// JSON number for `x`, using an integer representation when `x` is integral.
pub fn number(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 9_007_199_254_740_992.0 {
        Value::from(x as i64)
    } else {
        serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
    }
}
