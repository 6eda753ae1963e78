//! Brute-force operator references over plain JSON values.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::cases::{Case, FilterCond, MapKind, Target};
use crate::dates::scan_dates;
use crate::time::{parse_timestamp, Instant};

/// The reference refused the input (the engine must fail as well).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refused(pub String);

pub fn canonical(v: &Value) -> String {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<&String, &Value> = m.iter().collect();
            let parts: Vec<String> = sorted
                .into_iter()
                .map(|(k, v)| format!("{}:{}", Value::String(k.clone()), canonical(v)))
                .collect();
            format!("{{{}}}", parts.join(","))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(canonical).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => canonical(other),
    }
}

fn int_or_float(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 9_007_199_254_740_992.0 {
        json!(x as i64)
    } else {
        serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
    }
}

fn segments(path: &str) -> Vec<&str> {
    path.split('.').collect()
}

/// Path lookup that maps over arrays and drops elements that do not resolve.
pub fn lookup(v: &Value, segs: &[&str]) -> Option<Value> {
    if segs.is_empty() {
        return Some(v.clone());
    }
    match v {
        Value::Object(m) => m.get(segs[0]).and_then(|c| lookup(c, &segs[1..])),
        Value::Array(items) => {
            let mut hits = Vec::new();
            for item in items {
                if let Some(h) = lookup(item, segs) {
                    hits.push(h);
                }
            }
            if hits.is_empty() {
                None
            } else {
                Some(Value::Array(hits))
            }
        }
        _ => None,
    }
}

pub fn run(case: &Case, stream: &[Value], now: Instant) -> Result<Vec<Value>, Refused> {
    match case {
        Case::Filter { fields, cond, require_all, .. } => Ok(filter(fields, cond, *require_all, stream, now)),
        Case::SelectOne(f) => Ok(select_one(f, stream)),
        Case::SelectMany(fs) => Ok(select_many(fs, stream)),
        Case::ExtractDate(f) => Ok(extract_dates(f, stream)),
        Case::ExtractNumber { field, prefix } => Ok(extract_number(field, prefix, stream)),
        Case::Limit(n) => Ok(stream.iter().take(*n as usize).cloned().collect()),
        Case::Aggregate { operation, field, group_key } => {
            aggregate(operation, field.as_deref(), group_key.as_deref(), stream)
        }
        Case::Map { field, kind } => map(field, kind, stream),
    }
}

// Filter

fn compare(target: &Target, v: &Value, now: Instant) -> Option<Ordering> {
    match (target, v) {
        (Target::Now, Value::String(s)) => Some(parse_timestamp(s)?.cmp(&now)),
        (Target::Str(t), Value::String(s)) => match (parse_timestamp(s), parse_timestamp(t)) {
            (Some(a), Some(b)) => Some(a.cmp(&b)),
            _ => Some(s.as_bytes().cmp(t.as_bytes())),
        },
        (Target::Str(t), Value::Number(n)) => n.as_f64()?.partial_cmp(&t.parse::<f64>().ok()?),
        (Target::Str(t), Value::Bool(_) | Value::Null) => Some(v.to_string().as_str().cmp(t)),
        (Target::Num(t), Value::Number(n)) => n.as_f64()?.partial_cmp(t),
        (Target::Num(t), Value::String(s)) => s.trim().parse::<f64>().ok()?.partial_cmp(t),
        _ => None,
    }
}

fn scalar_passes(cond: &FilterCond, v: &Value, now: Instant) -> bool {
    match cond {
        FilterCond::Contains { needle, ignore_case: false } => text_of(v).contains(needle.as_str()),
        FilterCond::Contains { needle, ignore_case: true } => {
            text_of(v).to_lowercase().contains(&needle.to_lowercase())
        }
        FilterCond::Literal(s) => text_of(v) == *s,
        FilterCond::LiteralNum(n) => text_of(v) == canonical(&int_or_float(*n)),
        FilterCond::Compare { op, target } => {
            let Some(o) = compare(target, v, now) else {
                return false;
            };
            match op.as_str() {
                "=" => o == Ordering::Equal,
                "!=" => o != Ordering::Equal,
                ">" => o == Ordering::Greater,
                ">=" => o != Ordering::Less,
                "<" => o == Ordering::Less,
                "<=" => o != Ordering::Greater,
                _ => false,
            }
        }
    }
}

fn passes(cond: &FilterCond, v: &Value, now: Instant) -> bool {
    match v {
        Value::Array(items) => {
            let mut ok = !items.is_empty();
            for item in items {
                ok = ok && passes(cond, item, now);
            }
            ok
        }
        scalar => scalar_passes(cond, scalar, now),
    }
}

fn filter(fields: &[String], cond: &FilterCond, require_all: bool, stream: &[Value], now: Instant) -> Vec<Value> {
    let mut out = Vec::new();
    for record in stream {
        let mut hits = 0;
        for f in fields {
            if lookup(record, &segments(f)).is_some_and(|v| passes(cond, &v, now)) {
                hits += 1;
            }
        }
        let keep = if require_all { hits == fields.len() } else { hits > 0 };
        if keep {
            out.push(record.clone());
        }
    }
    out
}

// Select

fn select_one(field: &str, stream: &[Value]) -> Vec<Value> {
    let mut out = Vec::new();
    for record in stream {
        match lookup(record, &segments(field)) {
            Some(Value::Array(items)) => out.extend(items),
            Some(v) => out.push(v),
            None => {}
        }
    }
    out
}

/// Projection of `v` onto one path; array slots without it become null.
fn project_one(v: &Value, segs: &[&str]) -> Option<Value> {
    if segs.is_empty() {
        return Some(v.clone());
    }
    match v {
        Value::Object(m) => {
            let inner = project_one(m.get(segs[0])?, &segs[1..])?;
            let mut o = Map::new();
            o.insert(segs[0].to_string(), inner);
            Some(Value::Object(o))
        }
        Value::Array(items) => {
            let parts: Vec<Option<Value>> = items.iter().map(|i| project_one(i, segs)).collect();
            if parts.iter().all(Option::is_none) {
                None
            } else {
                Some(Value::Array(parts.into_iter().map(|p| p.unwrap_or(Value::Null)).collect()))
            }
        }
        _ => None,
    }
}

/// Deep union of two projections of the same record.
fn merge(a: Value, b: Value) -> Value {
    match (a, b) {
        (Value::Object(mut x), Value::Object(y)) => {
            for (k, v) in y {
                let merged = match x.remove(&k) {
                    Some(old) => merge(old, v),
                    None => v,
                };
                x.insert(k, merged);
            }
            Value::Object(x)
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            Value::Array(x.into_iter().zip(y).map(|(p, q)| merge(p, q)).collect())
        }
        (Value::Null, other) => other,
        (keep, _) => keep,
    }
}

fn select_many(fields: &[String], stream: &[Value]) -> Vec<Value> {
    let mut out = Vec::new();
    for record in stream {
        // A path that is a prefix of another takes the whole subtree.
        let mut merged: Option<Value> = None;
        for f in fields {
            if let Some(p) = project_one(record, &segments(f)) {
                merged = Some(match merged {
                    Some(m) => merge(m, p),
                    None => p,
                });
            }
        }
        if let Some(m) = merged {
            out.push(m);
        }
    }
    out
}

// Extract

fn texts(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Array(items) => items.iter().for_each(|i| texts(i, out)),
        other => out.push(text_of(other)),
    }
}

fn field_texts(record: &Value, field: &str) -> Option<Vec<String>> {
    let v = lookup(record, &segments(field))?;
    let mut out = Vec::new();
    texts(&v, &mut out);
    Some(out)
}

fn extract_dates(field: &str, stream: &[Value]) -> Vec<Value> {
    let mut out = Vec::new();
    for record in stream {
        let Some(ts) = field_texts(record, field) else { continue };
        let found: Vec<Value> = ts.iter().flat_map(|t| scan_dates(t)).map(Value::String).collect();
        match found.len() {
            0 => {}
            1 => out.push(found[0].clone()),
            _ => out.push(Value::Array(found)),
        }
    }
    out
}

fn first_number_after(text: &str, prefix: &str) -> Option<String> {
    for (i, _) in text.char_indices() {
        let rest = &text[i..];
        if let Some(after) = rest.strip_prefix(prefix) {
            let digits: String = after.chars().take_while(char::is_ascii_digit).collect();
            if !digits.is_empty() {
                return Some(digits);
            }
        }
    }
    None
}

fn extract_number(field: &str, prefix: &str, stream: &[Value]) -> Vec<Value> {
    let mut out = Vec::new();
    for record in stream {
        let Some(ts) = field_texts(record, field) else { continue };
        if let Some(d) = ts.iter().find_map(|t| first_number_after(t, prefix)) {
            out.push(Value::String(d));
        }
    }
    out
}

// Aggregate

fn reduce(operation: &str, field: Option<&str>, records: &[&Value]) -> Result<Option<Value>, Refused> {
    if operation == "count" {
        return Ok(Some(json!(records.len())));
    }
    let field = field.ok_or_else(|| Refused("field".into()))?;
    let mut nums: Vec<(f64, Value)> = Vec::new();
    for r in records {
        match lookup(r, &segments(field)) {
            None => {}
            Some(Value::Number(n)) => nums.push((n.as_f64().unwrap_or(f64::NAN), Value::Number(n))),
            Some(_) => return Err(Refused(format!("non-numeric {field}"))),
        }
    }
    let mut total = 0.0;
    for (x, _) in &nums {
        total += x;
    }
    Ok(match operation {
        "sum" => Some(int_or_float(total)),
        "avg" if nums.is_empty() => None,
        "avg" => Some(int_or_float(total / nums.len() as f64)),
        "min" | "max" => {
            let mut best: Option<&(f64, Value)> = None;
            for cand in &nums {
                let better = match best {
                    None => true,
                    Some(b) if operation == "min" => cand.0 < b.0,
                    Some(b) => cand.0 > b.0,
                };
                if better {
                    best = Some(cand);
                }
            }
            best.map(|b| b.1.clone())
        }
        other => return Err(Refused(format!("operation {other}"))),
    })
}

fn aggregate(
    operation: &str,
    field: Option<&str>,
    group_key: Option<&str>,
    stream: &[Value],
) -> Result<Vec<Value>, Refused> {
    let Some(key) = group_key else {
        let all: Vec<&Value> = stream.iter().collect();
        return Ok(reduce(operation, field, &all)?
            .map(|v| json!({"operation": operation, "field": field, "value": v}))
            .into_iter()
            .collect());
    };
    let mut groups: Vec<(Value, Vec<&Value>)> = Vec::new();
    for record in stream {
        let g = lookup(record, &segments(key)).unwrap_or(Value::Null);
        match groups.iter_mut().find(|(k, _)| canonical(k) == canonical(&g)) {
            Some((_, members)) => members.push(record),
            None => groups.push((g, vec![record])),
        }
    }
    let mut out = Vec::new();
    for (g, members) in groups {
        if let Some(v) = reduce(operation, field, &members)? {
            out.push(json!({"group": g, "value": v}));
        }
    }
    Ok(out)
}

// Map

fn label(bounds: &[i64], x: f64) -> String {
    let mut slot: Option<usize> = None;
    for (i, b) in bounds.iter().enumerate() {
        if (*b as f64) <= x {
            slot = Some(i);
        }
    }
    match slot {
        None => format!("<{}", bounds[0]),
        Some(i) if i == bounds.len() - 1 => format!("{}+", bounds[i]),
        Some(i) => format!("{}-{}", bounds[i], bounds[i + 1] - 1),
    }
}

fn rewrite(v: &mut Value, segs: &[&str], f: &mut dyn FnMut(&mut Value) -> Result<(), Refused>) -> Result<(), Refused> {
    if segs.is_empty() {
        return f(v);
    }
    match v {
        Value::Object(m) => match m.get_mut(segs[0]) {
            Some(c) => rewrite(c, &segs[1..], f),
            None => Ok(()),
        },
        Value::Array(items) => items.iter_mut().try_for_each(|i| rewrite(i, segs, f)),
        _ => Ok(()),
    }
}

fn rename_in(v: &mut Value, segs: &[&str], to: &str) {
    match v {
        Value::Object(m) if segs.len() == 1 => {
            if let Some(x) = m.remove(segs[0]) {
                m.insert(to.to_string(), x);
            }
        }
        Value::Object(m) => {
            if let Some(c) = m.get_mut(segs[0]) {
                rename_in(c, &segs[1..], to);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|i| rename_in(i, segs, to)),
        _ => {}
    }
}

fn map(field: &str, kind: &MapKind, stream: &[Value]) -> Result<Vec<Value>, Refused> {
    let segs = segments(field);
    let mut out = Vec::new();
    for record in stream {
        let mut r = record.clone();
        match kind {
            MapKind::Bucket(bounds) => rewrite(&mut r, &segs, &mut |v| match v {
                Value::Number(n) => {
                    *v = Value::String(label(bounds, n.as_f64().unwrap_or(f64::NAN)));
                    Ok(())
                }
                _ => Err(Refused(format!("non-numeric {field}"))),
            })?,
            MapKind::Lowercase => rewrite(&mut r, &segs, &mut |v| {
                if let Value::String(s) = v {
                    *s = s.to_lowercase();
                }
                Ok(())
            })?,
            MapKind::Truncate(n) => rewrite(&mut r, &segs, &mut |v| {
                if let Value::String(s) = v {
                    *s = s.chars().take(*n).collect();
                }
                Ok(())
            })?,
            MapKind::Rename(to) => rename_in(&mut r, &segs, to),
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_many_merges() {
        let r = json!({"a": [{"x": 1, "y": 2}, {"z": 3}], "b": 1});
        let out = select_many(&["a.x".into(), "a.z".into()], &[r]);
        assert_eq!(out, vec![json!({"a": [{"x": 1}, {"z": 3}]})]);
    }

    #[test]
    fn buckets() {
        assert_eq!(label(&[18, 30, 50], 10.0), "<18");
        assert_eq!(label(&[18, 30, 50], 29.9), "18-29");
        assert_eq!(label(&[18, 30, 50], 50.0), "50+");
    }
}
